"""Operator entry point: corpus generation, training, evaluation, inference.

Every command is a pure function of its inputs, flags and seed; each one
writes a resolved_config.json next to its outputs so any artifact can be
regenerated from its own record.  Exit codes: 0 success, 1 runtime or data
error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .corpus import CorpusConfig, CorpusError, generate_corpus, load_corpus
from .dsp import DspConfig, Waveform, log_mel_spectrogram
from .encoders import EncoderConfig, audio_encode, load_checkpoint, save_checkpoint, visual_encode
from .evaluation import evaluate_corpus
from .figures import render_curve_figure, render_metrics_figure
from .gradcheck import run_gradcheck
from .localization import export_heatmap, minmax_normalize, response_map, threshold_region, upsample_bilinear
from .tensorio import load_tensor, load_waveform_raw
from .training import (
    TrainConfig,
    TrainingError,
    VARIANT_NAMES,
    ablation_variants,
    read_metrics_csv,
    train,
    write_metrics_csv,
)

__all__ = ["main"]


def _write_resolved_config(out_dir: Path, doc: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _cmd_gen_corpus(args) -> int:
    doc = _load_json(args.config) if args.config else {}
    cfg = CorpusConfig(**doc)
    out = Path(args.out)
    manifests = generate_corpus(cfg, args.seed, out)
    _write_resolved_config(out, {"command": "gen-corpus", "seed": args.seed, "corpus": asdict(cfg)})
    for split, m in manifests.items():
        print(
            f"{split}: {m.num_instances} instances, {m.w}x{m.h}x{m.channels} images, "
            f"{m.clip_seconds} s audio at {m.sample_rate} Hz, {m.num_classes} classes"
        )
    return 0


def _derive_encoder_config(manifest, renorm_pooled: bool, mel_bins: int) -> EncoderConfig:
    return EncoderConfig(
        image_w=manifest.w,
        image_h=manifest.h,
        channels=manifest.channels,
        renorm_pooled=renorm_pooled,
        mel_bins=mel_bins,
    )


def _cmd_train(args) -> int:
    from .corpus import load_manifest

    corpus_dir = Path(args.corpus)
    out = Path(args.out)
    base_cfg = TrainConfig.from_json(_load_json(args.config)) if args.config else TrainConfig()
    cfg, variant = ablation_variants(base_cfg)[args.variant]
    dsp_cfg = DspConfig()
    train_split = load_corpus(corpus_dir / "train")
    manifest = load_manifest(corpus_dir / "train")
    enc_cfg = _derive_encoder_config(manifest, cfg.renorm_pooled, dsp_cfg.mel_bins)
    test_split = None
    if (corpus_dir / "test" / "manifest.json").is_file():
        test_split = load_corpus(corpus_dir / "test")

    ckpt_dir = out / "checkpoint"
    metrics_path = out / "metrics.csv"
    resume_params = None
    resume_epoch = 0
    prior_rows = []
    if args.resume:
        resume_params, enc_cfg, dsp_cfg, resume_epoch = load_checkpoint(ckpt_dir)
        if metrics_path.is_file():
            prior_rows = read_metrics_csv(metrics_path)

    def on_epoch(row, params):
        ciou = "-" if row.ciou_at_0_5 is None else f"{row.ciou_at_0_5:.1f}"
        print(f"epoch {row.epoch}: loss {row.mean_loss:.4f}  cIoU@0.5 {ciou}")

    result = train(
        train_split,
        cfg,
        enc_cfg,
        dsp_cfg,
        variant=variant,
        test_instances=test_split,
        resume_params=resume_params,
        resume_epoch=resume_epoch,
        on_epoch=on_epoch,
    )
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt_dir, result.params, enc_cfg, dsp_cfg, result.epoch)
    if args.resume and prior_rows:
        write_metrics_csv(metrics_path, prior_rows)
        write_metrics_csv(metrics_path, result.metrics, append=True)
    else:
        write_metrics_csv(metrics_path, result.metrics)
    render_metrics_figure(prior_rows + result.metrics, out / "metrics.png")
    _write_resolved_config(
        out,
        {
            "command": "train",
            "variant": variant.name,
            "train": cfg.to_json(),
            "encoder": asdict(enc_cfg),
            "dsp": asdict(dsp_cfg),
            "corpus": str(corpus_dir),
        },
    )
    print(f"trained through epoch {result.epoch}; checkpoint at {ckpt_dir}")
    return 0


def _cmd_eval(args) -> int:
    out = Path(args.out)
    params, enc_cfg, dsp_cfg, epoch = load_checkpoint(Path(args.checkpoint))
    test_split = load_corpus(Path(args.corpus) / "test")
    heatmap_dir = out / "heatmaps" if args.export_heatmaps else None
    result = evaluate_corpus(
        params,
        test_split,
        enc_cfg,
        dsp_cfg,
        tau_pix=args.tau_pix,
        consensus=args.consensus,
        threads=args.threads,
        heatmap_dir=heatmap_dir,
    )
    out.mkdir(parents=True, exist_ok=True)
    result.write(out / "eval.json")
    result.write_curve_csv(out / "curve.csv")
    render_curve_figure(result.curve, out / "curve.png")
    _write_resolved_config(
        out,
        {
            "command": "eval",
            "checkpoint": str(args.checkpoint),
            "checkpoint_epoch": epoch,
            "corpus": str(args.corpus),
            "tau_pix": args.tau_pix,
            "consensus": args.consensus,
            "threads": args.threads,
            "export_heatmaps": bool(args.export_heatmaps),
            "encoder": asdict(enc_cfg),
            "dsp": asdict(dsp_cfg),
        },
    )
    print(f"cIoU@0.5 = {result.ciou_at['0.5']:.1f}  cIoU@0.3 = {result.ciou_at['0.3']:.1f}  AUC = {result.auc:.3f}")
    return 0


def _cmd_localize(args) -> int:
    params, enc_cfg, dsp_cfg, _ = load_checkpoint(Path(args.checkpoint))
    image = load_tensor(args.image)
    expected = (enc_cfg.image_w, enc_cfg.image_h, enc_cfg.channels)
    if image.shape != expected:
        raise ValueError(
            f"image shape {tuple(image.shape)} does not match checkpoint's configured {expected}"
        )
    samples, rate = load_waveform_raw(args.audio)
    lms = log_mel_spectrogram(Waveform(samples=samples, sample_rate=rate), dsp_cfg)
    v = visual_encode(params, image, enc_cfg)
    a = audio_encode(params, lms, enc_cfg)
    r = minmax_normalize(response_map(v, a.values.value))
    if r.degenerate:
        print("warning: constant response map; heatmap is all zero", file=sys.stderr)
    heat = upsample_bilinear(r.values, enc_cfg.image_w, enc_cfg.image_h)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_heatmap(heat, out)
    region = threshold_region(r, args.delta_v)
    if region.indices:
        listed = " ".join(str(ix) for ix in sorted(region.indices))
        print(f"sounding patches (threshold {args.delta_v}): {listed}")
    else:
        print(f"sounding patches (threshold {args.delta_v}): none")
    _write_resolved_config(
        out.parent,
        {
            "command": "localize",
            "checkpoint": str(args.checkpoint),
            "image": str(args.image),
            "audio": str(args.audio),
            "delta_v": args.delta_v,
            "out": out.name,
        },
    )
    return 0


def _cmd_gradcheck(args) -> int:
    results, all_passed = run_gradcheck(
        base_seed=args.seed, n_seeds=args.seeds, inject_fault=args.inject_fault
    )
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.component}: max rel error {r.max_rel_error:.3e} over {r.seeds} seed(s) [{status}]")
    return 0 if all_passed else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--config", help="corpus config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gen_corpus)

    p = sub.add_parser("train", help="train encoders on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--variant", choices=list(VARIANT_NAMES), default="full")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--export-heatmaps", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--tau-pix", type=float, default=0.5)
    p.add_argument("--consensus", type=int, default=1)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("localize", help="heatmap + sounding patches for one pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="image tensor file")
    p.add_argument("--audio", required=True, help="raw waveform file (JSON sidecar expected)")
    p.add_argument("--out", required=True, help="output PGM path")
    p.add_argument("--delta-v", type=float, default=0.6)
    p.set_defaults(fn=_cmd_localize)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=10, help="number of random instances per component")
    p.add_argument("--inject-fault", action="store_true", help="prove the checker catches a bad gradient")
    p.set_defaults(fn=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (CorpusError, TrainingError, FileNotFoundError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
