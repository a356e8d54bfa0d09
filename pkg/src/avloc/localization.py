"""Inference path: response maps, normalization, thresholding, upsampling, export.

The response map correlates each patch feature with the audio embedding;
min-max normalization and a strict threshold turn it into a sounding region,
and align-corners bilinear upsampling recovers image resolution for metric
computation and heatmap export.  All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .encoders import AudioEmbedding, VisualFeatureMap

__all__ = [
    "ResponseMap",
    "SoundingRegion",
    "response_scores",
    "response_map",
    "minmax_normalize",
    "threshold_region",
    "upsample_bilinear",
    "export_heatmap",
]


@dataclass(frozen=True)
class ResponseMap:
    values: np.ndarray  # (grid_w, grid_h)
    normalized: bool
    degenerate: bool = False


@dataclass(frozen=True)
class SoundingRegion:
    indices: frozenset  # of (gx, gy) patch coordinates
    threshold: float


def _audio_vector(a):
    if isinstance(a, AudioEmbedding):
        return a.values
    return a


def response_scores(v: VisualFeatureMap, a) -> Var:
    """Per-patch inner products <normalized patch, audio>, differentiable, flat (n_patches,)."""
    a = _audio_vector(a)
    avec = a.value if isinstance(a, Var) else np.asarray(a, dtype=np.float64)
    if avec.shape != (v.d,):
        raise ValueError(f"audio dim {avec.shape} does not match feature dim ({v.d},)")
    return ad.mv(ad.l2_normalize(v.features), a)


def response_map(v: VisualFeatureMap, a) -> ResponseMap:
    scores = response_scores(v, a)
    return ResponseMap(values=scores.value.reshape(v.grid_w, v.grid_h), normalized=False)


def minmax_normalize(r: ResponseMap) -> ResponseMap:
    values = np.asarray(r.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("response map contains non-finite entries")
    lo = values.min()
    hi = values.max()
    if hi == lo:
        # featureless response: select nothing rather than everything
        return ResponseMap(values=np.zeros_like(values), normalized=True, degenerate=True)
    return ResponseMap(values=(values - lo) / (hi - lo), normalized=True)


def threshold_region(r: ResponseMap, delta_v: float) -> SoundingRegion:
    if not r.normalized:
        raise ValueError("threshold_region expects a normalized response map")
    gx, gy = np.nonzero(r.values > delta_v)
    return SoundingRegion(
        indices=frozenset(zip(gx.tolist(), gy.tolist())),
        threshold=float(delta_v),
    )


def _axis_positions(n_src: int, n_dst: int) -> np.ndarray:
    # align-corners: first and last destination samples sit on source corners
    if n_dst == 1 or n_src == 1:
        return np.zeros(n_dst)
    return np.arange(n_dst, dtype=np.float64) * (n_src - 1) / (n_dst - 1)


def upsample_bilinear(values: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Align-corners bilinear interpolation of a (w, h) map to (target_w, target_h)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-d map, got shape {values.shape}")
    w, h = values.shape
    if target_w < w or target_h < h or target_w < 1 or target_h < 1:
        raise ValueError(f"cannot upsample {w}x{h} to {target_w}x{target_h}")
    xs = _axis_positions(w, target_w)
    ys = _axis_positions(h, target_h)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[:, None]
    fy = (ys - y0)[None, :]
    return (
        values[np.ix_(x0, y0)] * (1.0 - fx) * (1.0 - fy)
        + values[np.ix_(x1, y0)] * fx * (1.0 - fy)
        + values[np.ix_(x0, y1)] * (1.0 - fx) * fy
        + values[np.ix_(x1, y1)] * fx * fy
    )


def export_heatmap(values: np.ndarray, path) -> None:
    """Binary PGM (P5, maxval 255) of a (W, H) map with entries in [0, 1].

    Pixel bytes are round(255 * value) with halves rounded up; the payload is
    laid out PGM-style, H rows of W pixels.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-d map, got shape {values.shape}")
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("heatmap values must lie in [0, 1]")
    w, h = values.shape
    pixels = np.floor(values * 255.0 + 0.5).astype(np.uint8)
    path = Path(path)
    with path.open("wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.T.tobytes(order="C"))
