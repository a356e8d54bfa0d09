"""Compact patch-MLP encoders for images and log-mel spectrograms.

The visual encoder partitions an image into a grid of patches and pushes
each patch through one shared two-layer perceptron, giving a spatial feature
grid V; the audio encoder applies a shared per-frame perceptron to the
spectrogram, mean-pools over frames and L2-normalizes, giving a unit
embedding a.  Both run on the gradient engine, so the same code path serves
training (parameters passed as graph leaves) and inference (plain arrays).

Snapshots are frozen deep copies of the parameters, used to compute
pseudo-labels one epoch behind the live model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamVector, Var
from .dsp import DspConfig, Spectrogram
from .rng import Rng
from .tensorio import load_tensor, save_tensor

__all__ = [
    "EncoderConfig",
    "VisualFeatureMap",
    "AudioEmbedding",
    "Snapshot",
    "SEGMENT_SHAPES",
    "init_params",
    "image_patches",
    "visual_encode",
    "audio_encode",
    "phi",
    "phi_subset",
    "take_snapshot",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class EncoderConfig:
    image_w: int = 64
    image_h: int = 64
    channels: int = 3
    grid_w: int = 8
    grid_h: int = 8
    d: int = 16
    hidden: int = 32
    mel_bins: int = 64
    renorm_pooled: bool = True

    def __post_init__(self):
        if self.image_w % self.grid_w or self.image_h % self.grid_h:
            raise ValueError(
                f"grid {self.grid_w}x{self.grid_h} does not tile a "
                f"{self.image_w}x{self.image_h} image"
            )

    @property
    def patch_w(self) -> int:
        return self.image_w // self.grid_w

    @property
    def patch_h(self) -> int:
        return self.image_h // self.grid_h

    @property
    def patch_pixels(self) -> int:
        return self.patch_w * self.patch_h * self.channels

    @property
    def n_patches(self) -> int:
        return self.grid_w * self.grid_h


def SEGMENT_SHAPES(cfg: EncoderConfig) -> dict:
    return {
        "vis_w1": (cfg.patch_pixels, cfg.hidden),
        "vis_b1": (cfg.hidden,),
        "vis_w2": (cfg.hidden, cfg.d),
        "vis_b2": (cfg.d,),
        "aud_w1": (cfg.mel_bins, cfg.hidden),
        "aud_b1": (cfg.hidden,),
        "aud_w2": (cfg.hidden, cfg.d),
        "aud_b2": (cfg.d,),
    }


def init_params(cfg: EncoderConfig, rng: Rng) -> ParamVector:
    """Weights uniform in +-1/sqrt(fan_in), biases zero, fixed draw order."""
    segments = {}
    for name, shape in SEGMENT_SHAPES(cfg).items():
        if name.endswith(("b1", "b2")):
            segments[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            segments[name] = rng.draw_uniform(shape, low=-bound, high=bound)
    return ParamVector(segments)


@dataclass
class VisualFeatureMap:
    """Patch feature grid: ``features`` is a (n_patches, d) Var, row-major over (gx, gy)."""

    features: Var
    grid_w: int
    grid_h: int
    image_w: int
    image_h: int

    @property
    def d(self) -> int:
        return self.features.value.shape[1]

    def grid_values(self) -> np.ndarray:
        """Detached (grid_w, grid_h, d) array view of the features."""
        return self.features.value.reshape(self.grid_w, self.grid_h, -1)

    def flat_index(self, gx: int, gy: int) -> int:
        return gx * self.grid_h + gy


@dataclass
class AudioEmbedding:
    values: Var  # (d,)
    unit_norm: bool


def image_patches(image: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """Flatten the patch grid of an (W, H, C) image into (n_patches, patch_pixels)."""
    image = np.asarray(image, dtype=np.float64)
    expected = (cfg.image_w, cfg.image_h, cfg.channels)
    if image.shape != expected:
        raise ValueError(f"image shape {image.shape} does not match configured {expected}")
    p = image.reshape(cfg.grid_w, cfg.patch_w, cfg.grid_h, cfg.patch_h, cfg.channels)
    return p.transpose(0, 2, 1, 3, 4).reshape(cfg.n_patches, cfg.patch_pixels)


def _mlp_rows(x: np.ndarray, params, prefix: str) -> Var:
    h = ad.tanh(ad.add_rowvec(ad.matmul(Var(x), params[f"{prefix}_w1"]), params[f"{prefix}_b1"]))
    return ad.add_rowvec(ad.matmul(h, params[f"{prefix}_w2"]), params[f"{prefix}_b2"])


def visual_encode(params, image: np.ndarray, cfg: EncoderConfig) -> VisualFeatureMap:
    """Shared patch MLP over the image grid; differentiable w.r.t. params."""
    feats = _mlp_rows(image_patches(image, cfg), params, "vis")
    return VisualFeatureMap(
        features=feats,
        grid_w=cfg.grid_w,
        grid_h=cfg.grid_h,
        image_w=cfg.image_w,
        image_h=cfg.image_h,
    )


def audio_encode(params, lms, cfg: EncoderConfig) -> AudioEmbedding:
    """Shared per-frame MLP, mean-pooled over frames, unit-normalized."""
    values = lms.values if isinstance(lms, Spectrogram) else np.asarray(lms, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != cfg.mel_bins:
        raise ValueError(
            f"spectrogram shape {values.shape} does not match configured mel_bins={cfg.mel_bins}"
        )
    pooled = ad.mean_rows(_mlp_rows(values.T, params, "aud"))
    a = ad.l2_normalize(pooled)
    return AudioEmbedding(values=a, unit_norm=bool(np.linalg.norm(a.value) > 0.0))


def _flat_indices(v: VisualFeatureMap, indices) -> list:
    flat = []
    for ix in indices:
        if isinstance(ix, tuple):
            gx, gy = ix
            if not (0 <= gx < v.grid_w and 0 <= gy < v.grid_h):
                raise IndexError(f"patch index {ix} outside {v.grid_w}x{v.grid_h} grid")
            flat.append(v.flat_index(gx, gy))
        else:
            flat.append(int(ix))
    return sorted(set(flat))


def phi_subset(v: VisualFeatureMap, indices, renorm_pooled: bool = True) -> Var:
    """Pool selected patches: per-patch L2 normalization, average, then
    (configurably) renormalize the pooled vector to unit length.

    Zero patch vectors stay zero; an average that cancels to the zero vector
    is returned as zero, marking the pooled feature degenerate.
    """
    flat = _flat_indices(v, indices)
    if not flat:
        raise ValueError("phi_subset: empty patch index set")
    pooled = ad.mean_rows(ad.l2_normalize(ad.rows(v.features, flat)))
    return ad.l2_normalize(pooled) if renorm_pooled else pooled


def phi(v: VisualFeatureMap, renorm_pooled: bool = True) -> Var:
    return phi_subset(v, range(v.features.value.shape[0]), renorm_pooled)


@dataclass(frozen=True)
class Snapshot:
    """Frozen parameter copy from the end of a previous epoch."""

    params: ParamVector
    epoch: int


def take_snapshot(params: ParamVector, epoch: int) -> Snapshot:
    return Snapshot(params=params.copy(), epoch=epoch)


CHECKPOINT_INDEX = "checkpoint.json"


def save_checkpoint(out_dir, params: ParamVector, cfg: EncoderConfig, dsp_cfg: DspConfig, epoch: int) -> None:
    """Parameters as one 64-bit tensor file per segment plus a JSON index.

    Storage is 64-bit (format version 2) so that resuming from a checkpoint
    reproduces the uninterrupted parameter trajectory bit for bit.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    segments = {}
    for name, arr in params.segments.items():
        fname = f"{name}.avic"
        save_tensor(out_dir / fname, arr, version=2)
        segments[name] = {"file": fname, "shape": list(arr.shape)}
    index = {
        "format": "avloc-checkpoint",
        "version": 1,
        "epoch": epoch,
        "encoder": asdict(cfg),
        "dsp": asdict(dsp_cfg),
        "segments": segments,
    }
    (out_dir / CHECKPOINT_INDEX).write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")


def load_checkpoint(ckpt_dir):
    """Returns (params, encoder_cfg, dsp_cfg, epoch)."""
    ckpt_dir = Path(ckpt_dir)
    index_path = ckpt_dir / CHECKPOINT_INDEX
    if not index_path.is_file():
        raise FileNotFoundError(f"no checkpoint index at {index_path}")
    index = json.loads(index_path.read_text())
    if index.get("format") != "avloc-checkpoint":
        raise ValueError(f"{index_path} is not a checkpoint index")
    segments = {}
    for name, entry in index["segments"].items():
        arr = load_tensor(ckpt_dir / entry["file"])
        if list(arr.shape) != list(entry["shape"]):
            raise ValueError(
                f"segment {name}: file shape {arr.shape} does not match index {entry['shape']}"
            )
        segments[name] = arr
    cfg = EncoderConfig(**index["encoder"])
    dsp_cfg = DspConfig(**index["dsp"])
    return ParamVector(segments), cfg, dsp_cfg, int(index["epoch"])
