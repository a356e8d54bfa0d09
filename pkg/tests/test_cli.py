"""End-to-end command tests, all in process through cli.main."""

import json

import numpy as np
import pytest

from avloc import cli
from avloc.tensorio import save_tensor


def _tree_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _first_test_instance_dir(corpus_dir):
    manifest = json.loads((corpus_dir / "test" / "manifest.json").read_text())
    return corpus_dir / "test" / manifest["instances"][0]["dir"]


def test_missing_required_flag_is_usage_error():
    with pytest.raises(SystemExit) as e:
        cli.main(["gen-corpus"])
    assert e.value.code == 2


def test_unknown_variant_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as e:
        cli.main(["train", "--corpus", str(tmp_path), "--out", str(tmp_path / "x"), "--variant", "plus"])
    assert e.value.code == 2


def test_unknown_corpus_dir_is_runtime_error(tmp_path, capsys):
    rc = cli.main(["train", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "out")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_gen_corpus_is_reproducible(tmp_path, capsys):
    cfg_path = tmp_path / "corpus.json"
    cfg_path.write_text(json.dumps({"num_train": 6, "num_test": 2}))
    args = ["gen-corpus", "--config", str(cfg_path), "--seed", "12"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    out = capsys.readouterr().out
    assert "train: 6 instances" in out and "test: 2 instances" in out
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")
    resolved = json.loads((tmp_path / "a" / "resolved_config.json").read_text())
    assert resolved["seed"] == 12 and resolved["corpus"]["num_train"] == 6


def test_default_corpus_split_sizes(default_corpus):
    for split, expected in (("train", 512), ("test", 64)):
        manifest = json.loads((default_corpus["dir"] / split / "manifest.json").read_text())
        assert manifest["num_instances"] == expected
        assert manifest["split"] == split


def test_train_outputs(tiny_run_dir):
    assert (tiny_run_dir / "checkpoint" / "checkpoint.json").is_file()
    assert (tiny_run_dir / "metrics.png").is_file()
    resolved = json.loads((tiny_run_dir / "resolved_config.json").read_text())
    assert resolved["command"] == "train" and resolved["variant"] == "initial"
    from avloc.training import read_metrics_csv

    rows = read_metrics_csv(tiny_run_dir / "metrics.csv")
    assert [r.epoch for r in rows] == [1, 2]
    # the initial variant never runs the refined stage
    assert all(r.iterative_batches == 0 for r in rows)
    # a test split is present, so the per-epoch metric columns are filled
    assert all(r.ciou_at_0_5 is not None for r in rows)


def test_eval_outputs_and_determinism(tiny_corpus_dir, tiny_run_dir, tmp_path, capsys):
    base = [
        "eval",
        "--corpus", str(tiny_corpus_dir),
        "--checkpoint", str(tiny_run_dir / "checkpoint"),
    ]
    assert cli.main(base + ["--out", str(tmp_path / "e1")]) == 0
    assert "cIoU@0.5" in capsys.readouterr().out
    assert cli.main(base + ["--out", str(tmp_path / "e2")]) == 0
    assert cli.main(base + ["--out", str(tmp_path / "e4"), "--threads", "4"]) == 0

    e1 = (tmp_path / "e1" / "eval.json").read_bytes()
    assert e1 == (tmp_path / "e2" / "eval.json").read_bytes()
    assert e1 == (tmp_path / "e4" / "eval.json").read_bytes()

    curve_rows = (tmp_path / "e1" / "curve.csv").read_text().splitlines()
    assert len(curve_rows) == 21
    assert (tmp_path / "e1" / "curve.png").is_file()
    doc = json.loads((tmp_path / "e1" / "resolved_config.json").read_text())
    assert doc["command"] == "eval" and doc["checkpoint_epoch"] == 2
    names = {row["instance_id"] for row in json.loads(e1)["per_instance"]}
    assert len(names) == 8 and all(n.startswith("test-") for n in names)


def test_eval_heatmap_export(tiny_corpus_dir, tiny_run_dir, tmp_path):
    rc = cli.main(
        [
            "eval",
            "--corpus", str(tiny_corpus_dir),
            "--checkpoint", str(tiny_run_dir / "checkpoint"),
            "--out", str(tmp_path / "e"),
            "--export-heatmaps",
        ]
    )
    assert rc == 0
    manifest = json.loads((tiny_corpus_dir / "test" / "manifest.json").read_text())
    expected = {f'{ref["instance_id"]}.pgm' for ref in manifest["instances"]}
    got = {p.name for p in (tmp_path / "e" / "heatmaps").iterdir()}
    assert got == expected


def test_cli_resume_matches_uninterrupted(tiny_corpus_dir, tmp_path):
    short = tmp_path / "short.json"
    full = tmp_path / "full.json"
    short.write_text(json.dumps({"k": 8, "total_epochs": 2, "initial_epochs": 2, "seed": 41, "r": 4}))
    full.write_text(json.dumps({"k": 8, "total_epochs": 4, "initial_epochs": 2, "seed": 41, "r": 4}))

    one_shot = tmp_path / "oneshot"
    assert cli.main(["train", "--corpus", str(tiny_corpus_dir), "--config", str(full), "--out", str(one_shot)]) == 0

    resumed = tmp_path / "resumed"
    assert cli.main(["train", "--corpus", str(tiny_corpus_dir), "--config", str(short), "--out", str(resumed)]) == 0
    assert cli.main(
        ["train", "--corpus", str(tiny_corpus_dir), "--config", str(full), "--out", str(resumed), "--resume"]
    ) == 0

    assert (one_shot / "metrics.csv").read_bytes() == (resumed / "metrics.csv").read_bytes()
    a = _tree_bytes(one_shot / "checkpoint")
    b = _tree_bytes(resumed / "checkpoint")
    assert set(a) == set(b)
    for name in a:
        if name.suffix == ".avic":
            assert a[name] == b[name], name


def test_localize_on_corpus_instance(tiny_corpus_dir, tiny_run_dir, tmp_path, capsys):
    inst_dir = _first_test_instance_dir(tiny_corpus_dir)
    out = tmp_path / "heat.pgm"
    rc = cli.main(
        [
            "localize",
            "--checkpoint", str(tiny_run_dir / "checkpoint"),
            "--image", str(inst_dir / "image.avic"),
            "--audio", str(inst_dir / "audio.raw"),
            "--out", str(out),
        ]
    )
    assert rc == 0
    printed = capsys.readouterr().out
    assert "sounding patches (threshold 0.6):" in printed
    data = out.read_bytes()
    assert data.startswith(b"P5\n64 64\n255\n")
    assert len(data) == len(b"P5\n64 64\n255\n") + 64 * 64
    assert (tmp_path / "resolved_config.json").is_file()


def test_localize_constant_image_warns_and_zeroes(tiny_corpus_dir, tiny_run_dir, tmp_path, capsys):
    inst_dir = _first_test_instance_dir(tiny_corpus_dir)
    flat = tmp_path / "flat.avic"
    save_tensor(flat, np.full((64, 64, 3), 0.5), version=1)
    out = tmp_path / "heat.pgm"
    rc = cli.main(
        [
            "localize",
            "--checkpoint", str(tiny_run_dir / "checkpoint"),
            "--image", str(flat),
            "--audio", str(inst_dir / "audio.raw"),
            "--out", str(out),
        ]
    )
    assert rc == 0
    captured = capsys.readouterr()
    assert "constant response map" in captured.err
    assert "none" in captured.out
    header = b"P5\n64 64\n255\n"
    payload = out.read_bytes()[len(header):]
    assert payload == bytes(64 * 64)


def test_localize_shape_mismatch_names_both_shapes(tiny_corpus_dir, tiny_run_dir, tmp_path, capsys):
    inst_dir = _first_test_instance_dir(tiny_corpus_dir)
    small = tmp_path / "small.avic"
    save_tensor(small, np.zeros((32, 32, 3)), version=1)
    rc = cli.main(
        [
            "localize",
            "--checkpoint", str(tiny_run_dir / "checkpoint"),
            "--image", str(small),
            "--audio", str(inst_dir / "audio.raw"),
            "--out", str(tmp_path / "heat.pgm"),
        ]
    )
    assert rc == 1
    err = capsys.readouterr().err
    assert "(32, 32, 3)" in err and "(64, 64, 3)" in err


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck", "--seeds", "2"]) == 0
    out = capsys.readouterr().out
    assert "max rel error" in out and "[ok]" in out and "FAIL" not in out


def test_gradcheck_reports_injected_fault(capsys):
    assert cli.main(["gradcheck", "--seeds", "2", "--inject-fault"]) == 1
    assert "[FAIL]" in capsys.readouterr().out
