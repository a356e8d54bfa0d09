"""Self-verification: finite-difference checks over every differentiable path.

Builds small random batches, routes them through the production loss
builders (baseline, and the iterative objective in all four component
shapes, including the empty-positive-set fallback and a non-identity
relation matrix), plus standalone probes of each encoder, and compares
analytic gradients against central differences coordinate by coordinate.

The fault-injection component wires a deliberately wrong vector-Jacobian
product into an otherwise healthy loss; it exists to prove the checker can
actually catch a corrupted gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var, finite_diff_check
from .encoders import EncoderConfig, audio_encode, init_params, visual_encode
from .losses import Batch
from .rng import Rng
from .training import TrainConfig, _make_baseline_loss, _make_iterative_loss

__all__ = ["ComponentResult", "TINY_ENCODER", "run_gradcheck"]

_NS_GRADCHECK = 42

TINY_ENCODER = EncoderConfig(
    image_w=8, image_h=8, channels=2, grid_w=2, grid_h=2, d=4, hidden=4, mel_bins=6
)


@dataclass(frozen=True)
class ComponentResult:
    component: str
    max_rel_error: float
    passed: bool
    seeds: int


def _tiny_batch(rng: Rng, cfg: EncoderConfig, k: int = 3) -> Batch:
    images = tuple(rng.draw_uniform((cfg.image_w, cfg.image_h, cfg.channels)) for _ in range(k))
    lms = tuple(rng.draw_uniform((cfg.mel_bins, 5), low=-2.0, high=0.0) for _ in range(k))
    return Batch(images=images, lms=lms, ids=tuple(f"gc-{i}" for i in range(k)))


def _random_subsets(rng: Rng, cfg: EncoderConfig, k: int, allow_empty_first: bool):
    out = []
    for i in range(k):
        if allow_empty_first and i == 0:
            out.append(None)  # exercises the whole-image fallback
            continue
        size = rng.draw_int(1, cfg.n_patches + 1)
        out.append(tuple(sorted(rng.choose_without_replacement(cfg.n_patches, size))))
    return out


def _relation_with_offdiag(k: int) -> np.ndarray:
    y = np.eye(k, dtype=np.int64)
    y[0, 1] = y[1, 0] = 1
    return y


def _component_losses(seed: int, base_seed: int):
    """Yield (name, loss_fn, params) triples for one seed."""
    cfg = TINY_ENCODER
    rng = Rng(base_seed, _NS_GRADCHECK, seed)
    params = init_params(cfg, rng.derive(0))
    data_rng = rng.derive(1)
    batch = _tiny_batch(data_rng, cfg)
    k = batch.k
    tcfg = TrainConfig(k=k, tau=0.5, total_epochs=1, initial_epochs=1)

    yield "baseline-loss", _make_baseline_loss(batch, tcfg, cfg), params

    shapes = {
        "iterative-loss-itr": (False, False),
        "iterative-loss-intra": (True, False),
        "iterative-loss-inter": (False, True),
        "iterative-loss-full": (True, True),
    }
    for shape_no, (name, (use_intra, use_inter)) in enumerate(shapes.items()):
        shape_rng = rng.derive(2, shape_no)
        sel_pos = _random_subsets(shape_rng, cfg, k, allow_empty_first=(name == "iterative-loss-full"))
        sel_neg = _random_subsets(shape_rng, cfg, k, allow_empty_first=False) if use_intra else [None] * k
        y = _relation_with_offdiag(k) if use_inter else np.eye(k, dtype=np.int64)
        yield name, _make_iterative_loss(batch, sel_pos, sel_neg, y, tcfg, cfg), params

    probe_v = rng.derive(3).draw_normal((cfg.n_patches, cfg.d))
    probe_a = rng.derive(4).draw_normal(cfg.d)

    def visual_probe(leaves):
        v = visual_encode(leaves, batch.images[0], cfg)
        return ad.sum_all(ad.mul(v.features, Var(probe_v)))

    def audio_probe(leaves):
        a = audio_encode(leaves, batch.lms[0], cfg)
        return ad.dot(a.values, Var(probe_a))

    yield "visual-encoder", visual_probe, params
    yield "audio-encoder", audio_probe, params


def _corrupted_loss(base_seed: int):
    """A loss containing an op whose backward rule drops a factor of 2."""
    rng = Rng(base_seed, _NS_GRADCHECK, 999)
    cfg = TINY_ENCODER
    params = init_params(cfg, rng)
    image = rng.draw_uniform((cfg.image_w, cfg.image_h, cfg.channels))

    def bad_square(v: Var) -> Var:
        return Var(v.value * v.value, ((v, lambda g: g * v.value),))

    def loss_fn(leaves):
        v = visual_encode(leaves, image, cfg)
        return ad.sum_all(bad_square(v.features))

    return loss_fn, params


def run_gradcheck(base_seed: int = 0, n_seeds: int = 10, step: float = 1e-5, tol: float = 1e-4, inject_fault: bool = False):
    """Check every component over n_seeds seeds.

    Returns (results, all_passed); the injected-fault component, when
    requested, must FAIL its check to count as working, and is reported with
    passed=False so callers exit nonzero.
    """
    worst = {}
    for seed in range(n_seeds):
        for name, loss_fn, params in _component_losses(seed, base_seed):
            report = finite_diff_check(loss_fn, params, step=step, tol=tol)
            worst[name] = max(worst.get(name, 0.0), report.max_rel_error)
    results = [
        ComponentResult(component=name, max_rel_error=err, passed=err <= tol, seeds=n_seeds)
        for name, err in worst.items()
    ]
    if inject_fault:
        loss_fn, params = _corrupted_loss(base_seed)
        report = finite_diff_check(loss_fn, params, step=step, tol=tol)
        # the corrupted op must be flagged; either way the run exits nonzero
        caught = not report.passed
        results.append(
            ComponentResult(
                component="injected-fault" + ("" if caught else " (NOT caught)"),
                max_rel_error=report.max_rel_error,
                passed=False,
                seeds=1,
            )
        )
    all_passed = all(r.passed for r in results)
    return results, all_passed
