import numpy as np
import pytest

import avloc.autodiff as ad
from avloc.autodiff import ParamVector, Var, finite_diff_check
from avloc.dsp import DspConfig
from avloc.encoders import (
    SEGMENT_SHAPES,
    AudioEmbedding,
    EncoderConfig,
    VisualFeatureMap,
    audio_encode,
    image_patches,
    init_params,
    load_checkpoint,
    phi,
    phi_subset,
    save_checkpoint,
    take_snapshot,
    visual_encode,
)
from avloc.rng import Rng

SMALL = EncoderConfig(image_w=8, image_h=8, channels=2, grid_w=2, grid_h=2, d=3, hidden=4, mel_bins=5)


def _params(cfg=SMALL, seed=0):
    return init_params(cfg, Rng(seed))


def test_visual_shape_contract():
    cfg = EncoderConfig()
    v = visual_encode(init_params(cfg, Rng(0)), Rng(1).draw_uniform((64, 64, 3)), cfg)
    assert v.grid_values().shape == (8, 8, 16)
    assert v.features.value.shape == (64, 16)


def test_identical_patches_identical_features():
    cfg = SMALL
    patch = Rng(2).draw_uniform((4, 4, 2))
    image = np.concatenate(
        [np.concatenate([patch, patch], axis=1), np.concatenate([patch, patch], axis=1)], axis=0
    )
    v = visual_encode(_params(), image, cfg)
    rows = v.features.value
    for i in range(1, 4):
        assert np.array_equal(rows[0], rows[i])


def test_image_patch_layout_row_major():
    cfg = SMALL
    image = np.zeros((8, 8, 2))
    image[4:, :4, :] = 7.0  # patch (1, 0)
    patches = image_patches(image, cfg)
    flat = 1 * cfg.grid_h + 0
    assert np.all(patches[flat] == 7.0)
    assert all(np.all(patches[i] == 0.0) for i in range(4) if i != flat)


def test_visual_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        visual_encode(_params(), np.zeros((8, 9, 2)), SMALL)


def test_grid_must_tile_image():
    with pytest.raises(ValueError):
        EncoderConfig(image_w=10, grid_w=4)


def test_audio_embedding_unit_norm():
    for seed in range(5):
        lms = Rng(seed).draw_normal((SMALL.mel_bins, 11))
        a = audio_encode(_params(), lms, SMALL)
        assert abs(np.linalg.norm(a.values.value) - 1.0) <= 1e-9
        assert a.unit_norm


def test_audio_frame_permutation_invariance():
    lms = Rng(3).draw_normal((SMALL.mel_bins, 13))
    perm = Rng(4).shuffle(list(range(13)))
    a = audio_encode(_params(), lms, SMALL)
    b = audio_encode(_params(), lms[:, perm], SMALL)
    assert np.allclose(a.values.value, b.values.value, atol=1e-12)


def test_audio_zero_vs_tone_differ_at_init():
    from avloc.corpus import class_tone_mix
    from avloc.dsp import Waveform, log_mel_spectrogram

    cfg = EncoderConfig()
    params = init_params(cfg, Rng(0))
    dsp = DspConfig()
    silence = log_mel_spectrogram(Waveform(samples=np.zeros(8000), sample_rate=8000), dsp)
    tone = log_mel_spectrogram(
        Waveform(samples=class_tone_mix(0, 8000, 8000), sample_rate=8000), dsp
    )
    a = audio_encode(params, silence, cfg)
    b = audio_encode(params, tone, cfg)
    assert not np.allclose(a.values.value, b.values.value, atol=1e-6)


def test_audio_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        audio_encode(_params(), np.zeros((SMALL.mel_bins + 1, 7)), SMALL)


def _feature_map(rows):
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    return VisualFeatureMap(features=Var(rows), grid_w=n, grid_h=1, image_w=n, image_h=1)


def test_phi_single_patch_is_unit_vector():
    v = _feature_map([[3.0, 4.0], [0.0, 1.0]])
    out = phi_subset(v, [(0, 0)])
    assert np.allclose(out.value, [0.6, 0.8], atol=1e-12)


def test_phi_all_equal_patches_gives_unit_direction():
    u = np.array([2.0, -1.0, 2.0])
    v = _feature_map([u, u, u, u])
    assert np.allclose(phi(v).value, u / 3.0, atol=1e-12)  # |u| = 3


def test_phi_antipodal_patches_degenerate_zero():
    v = _feature_map([[1.0, 0.0], [-1.0, 0.0]])
    assert np.array_equal(phi(v).value, np.zeros(2))


def test_phi_subset_all_indices_equals_phi():
    cfg = SMALL
    v = visual_encode(_params(), Rng(5).draw_uniform((8, 8, 2)), cfg)
    all_idx = [(gx, gy) for gx in range(2) for gy in range(2)]
    assert np.array_equal(phi_subset(v, all_idx).value, phi(v).value)


def test_phi_without_renorm_is_plain_average():
    v = _feature_map([[2.0, 0.0], [0.0, 3.0]])
    out = phi(v, renorm_pooled=False)
    assert np.allclose(out.value, [0.5, 0.5], atol=1e-12)


def test_phi_empty_subset_rejected():
    v = _feature_map([[1.0, 0.0]])
    with pytest.raises(ValueError):
        phi_subset(v, [])


def test_phi_out_of_grid_index_rejected():
    v = _feature_map([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(IndexError):
        phi_subset(v, [(5, 0)])


def test_init_deterministic_and_bounded():
    cfg = SMALL
    a = init_params(cfg, Rng(7))
    b = init_params(cfg, Rng(7))
    shapes = SEGMENT_SHAPES(cfg)
    assert a.names() == list(shapes.keys())
    for name, shape in shapes.items():
        assert a[name].shape == shape
        assert np.array_equal(a[name], b[name])
        if name.endswith(("b1", "b2")):
            assert np.array_equal(a[name], np.zeros(shape))
        else:
            assert np.max(np.abs(a[name])) <= 1.0 / np.sqrt(shape[0])


def test_init_different_seeds_differ():
    a = init_params(SMALL, Rng(1))
    b = init_params(SMALL, Rng(2))
    assert not np.array_equal(a["vis_w1"], b["vis_w1"])


def test_snapshot_isolated_from_later_updates():
    params = _params()
    snap = take_snapshot(params, epoch=0)
    before = {k: v.copy() for k, v in snap.params.segments.items()}
    # in-place mutation of the live segments must not leak into the snapshot
    for arr in params.segments.values():
        arr += 1.0
    for k in before:
        assert np.array_equal(snap.params[k], before[k])
    assert snap.epoch == 0


def test_encoder_gradients_match_finite_differences():
    cfg = SMALL
    params = _params(seed=11)
    image = Rng(12).draw_uniform((8, 8, 2))
    lms = Rng(13).draw_normal((cfg.mel_bins, 6))
    probe_v = Rng(14).draw_normal((cfg.n_patches, cfg.d))
    probe_a = Rng(15).draw_normal((cfg.d,))

    def visual_loss(leaves):
        v = visual_encode(leaves, image, cfg)
        return ad.sum_all(ad.mul(v.features, probe_v))

    def audio_loss(leaves):
        a = audio_encode(leaves, lms, cfg)
        return ad.dot(a.values, Var(probe_a))

    assert finite_diff_check(visual_loss, params, tol=1e-4).passed
    assert finite_diff_check(audio_loss, params, tol=1e-4).passed


def test_checkpoint_round_trip(tmp_path):
    cfg = SMALL
    dsp = DspConfig(mel_bins=5)
    params = _params(seed=20)
    save_checkpoint(tmp_path, params, cfg, dsp, epoch=17)
    loaded, cfg2, dsp2, epoch = load_checkpoint(tmp_path)
    assert epoch == 17
    assert cfg2 == cfg
    assert dsp2 == dsp
    assert sorted(loaded.names()) == sorted(params.names())
    for name in params.names():
        assert np.array_equal(loaded[name], params[name])  # 64-bit storage, exact


def test_checkpoint_missing_index_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path)
