"""Synthetic audio-visual corpus with planted, box-annotated sounding objects.

Each instance is an image containing a few non-overlapping textured boxes
plus a waveform mixing the tones of the subset of boxes flagged as sounding;
the rest are silent distractors drawn from the same texture distribution.
Classes are separable in both modalities by construction: every class owns a
distinct texture recipe and a disjoint pair of tone frequencies, so
localization quality against the stored boxes has a knowable ground truth.

Image arrays are indexed [x, y, channel] with x in [0, W) and y in [0, H);
bounding boxes are half-open in the same coordinates.  All stored tensors
are quantized to 32-bit at creation time, so the in-memory instance equals
its on-disk round trip bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .dsp import Waveform
from .rng import Rng
from .tensorio import load_tensor, load_waveform_raw, save_tensor, save_waveform_raw

__all__ = [
    "BoundingBox",
    "SceneObject",
    "CorpusInstance",
    "CorpusConfig",
    "CorpusManifest",
    "CorpusError",
    "TextureRecipe",
    "synth_class_tone",
    "class_tone_mix",
    "synth_class_texture",
    "generate_instance",
    "generate_corpus",
    "load_corpus",
    "load_manifest",
]

# rng namespace tags: keep corpus streams disjoint from training streams
_NS_INSTANCE = {"train": 10, "test": 11}

# class c sounds as four sinusoids, one per band; bands stay disjoint across
# classes so every class owns a distinct set of spectral lines
TONE_BASE = (300.0, 620.0, 1700.0, 2700.0)
TONE_STEP = (120.0, 120.0, 130.0, 150.0)
TONE_AMP = 0.4
# texture color levels; wide separation keeps the class cue linearly salient
TEX_BASE_LO = 0.10
TEX_BASE_SPAN = 0.8
SHADE_LO = 0.35


class CorpusError(RuntimeError):
    """Corpus files missing, inconsistent, or impossible to generate."""


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel box [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def validate(self, w: int, h: int) -> None:
        if not (0 <= self.x0 < self.x1 <= w and 0 <= self.y0 < self.y1 <= h):
            raise ValueError(f"box {self} does not fit a {w}x{h} image")

    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def overlaps(self, other: "BoundingBox") -> bool:
        return not (
            self.x1 <= other.x0
            or other.x1 <= self.x0
            or self.y1 <= other.y0
            or other.y1 <= self.y0
        )

    def mask(self, w: int, h: int) -> np.ndarray:
        m = np.zeros((w, h))
        m[self.x0 : self.x1, self.y0 : self.y1] = 1.0
        return m


@dataclass(frozen=True)
class SceneObject:
    box: BoundingBox
    class_id: int
    sounding: bool


@dataclass(frozen=True)
class CorpusInstance:
    image: np.ndarray  # (W, H, C) float64, f32-exact values
    waveform: Waveform
    objects: tuple
    instance_id: str

    def sounding_boxes(self):
        return [o.box for o in self.objects if o.sounding]


@dataclass(frozen=True)
class CorpusConfig:
    w: int = 64
    h: int = 64
    channels: int = 3
    num_classes: int = 8
    n_obj_min: int = 1
    n_obj_max: int = 4
    sample_rate: int = 8000
    clip_seconds: float = 1.0
    image_noise: float = 0.10
    audio_noise: float = 0.05
    box_min_frac: float = 0.06
    box_max_frac: float = 0.14
    num_train: int = 512
    num_test: int = 64

    def __post_init__(self):
        if not (1 <= self.n_obj_min <= self.n_obj_max <= self.num_classes):
            raise ValueError("need 1 <= n_obj_min <= n_obj_max <= num_classes")
        if not (0.0 < self.box_min_frac <= self.box_max_frac < 1.0):
            raise ValueError("box area fractions must satisfy 0 < min <= max < 1")
        top = max(synth_class_tone(self.num_classes - 1))
        if top >= self.sample_rate / 2.0:
            raise ValueError(
                f"class tone {top} Hz violates the Nyquist limit at {self.sample_rate} Hz"
            )


def synth_class_tone(class_id: int):
    """The class's fixed audio recipe: one frequency per band, disjoint across classes."""
    if class_id < 0:
        raise ValueError("class_id must be non-negative")
    return tuple(base + step * class_id for base, step in zip(TONE_BASE, TONE_STEP))


def class_tone_mix(class_id: int, n_samples: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n_samples, dtype=np.float64) / sample_rate
    out = np.zeros(n_samples)
    for f in synth_class_tone(class_id):
        out += TONE_AMP * np.sin(2.0 * np.pi * f * t)
    return out


@dataclass(frozen=True)
class TextureRecipe:
    """Deterministic class pattern plus per-instance jitter.

    Rendered value at pixel (x, y), channel c:
        base[c] * (SHADE_LO + (1 - SHADE_LO) * (0.5 + 0.5 sin(2 pi (ox x + oy y) / period + phase)))
    """

    base: tuple
    ox: float
    oy: float
    period: float
    phase: float

    def render(self, box: BoundingBox) -> np.ndarray:
        xs = np.arange(box.x0, box.x1, dtype=np.float64)[:, None]
        ys = np.arange(box.y0, box.y1, dtype=np.float64)[None, :]
        wave = 0.5 + 0.5 * np.sin(2.0 * np.pi * (self.ox * xs + self.oy * ys) / self.period + self.phase)
        shade = SHADE_LO + (1.0 - SHADE_LO) * wave
        return np.clip(shade[:, :, None] * np.asarray(self.base)[None, None, :], 0.0, 1.0)


def synth_class_texture(class_id: int, rng: Rng) -> TextureRecipe:
    """Class-keyed base pattern (color + stripe orientation) with seeded jitter."""
    if class_id < 0:
        raise ValueError("class_id must be non-negative")
    base = (
        TEX_BASE_LO + TEX_BASE_SPAN * ((class_id >> 0) & 1),
        TEX_BASE_LO + TEX_BASE_SPAN * ((class_id >> 1) & 1),
        TEX_BASE_LO + TEX_BASE_SPAN * ((class_id >> 2) & 1),
    )
    angle = np.pi * (class_id % 8) / 8.0
    period = 5.0 + 2.0 * (class_id % 3) + rng.draw_uniform(low=-0.5, high=0.5)
    phase = rng.draw_uniform(low=0.0, high=2.0 * np.pi)
    return TextureRecipe(base=base, ox=float(np.cos(angle)), oy=float(np.sin(angle)), period=float(period), phase=float(phase))


def _draw_box_shape(cfg: CorpusConfig, rng: Rng):
    # redraw until the integer box area lands inside the configured fraction band
    img_area = cfg.w * cfg.h
    for _ in range(1000):
        frac = rng.draw_uniform(low=cfg.box_min_frac, high=cfg.box_max_frac)
        aspect = rng.draw_uniform(low=0.6, high=1.66)
        bw = int(round(np.sqrt(frac * img_area * aspect)))
        bh = int(round(np.sqrt(frac * img_area / aspect)))
        bw = min(max(bw, 1), cfg.w)
        bh = min(max(bh, 1), cfg.h)
        if cfg.box_min_frac <= bw * bh / img_area <= cfg.box_max_frac:
            return bw, bh
    raise CorpusError("could not draw a box shape inside the configured area band")


def _place_boxes(cfg: CorpusConfig, shapes, rng: Rng):
    """Place boxes without overlap, largest first, with bounded retries."""
    order = sorted(range(len(shapes)), key=lambda i: (-shapes[i][0] * shapes[i][1], i))
    for _ in range(50):
        placed = {}
        ok = True
        for i in order:
            bw, bh = shapes[i]
            for _ in range(100):
                x0 = rng.draw_int(0, cfg.w - bw + 1)
                y0 = rng.draw_int(0, cfg.h - bh + 1)
                cand = BoundingBox(x0, y0, x0 + bw, y0 + bh)
                if not any(cand.overlaps(b) for b in placed.values()):
                    placed[i] = cand
                    break
            else:
                ok = False
                break
        if ok:
            return [placed[i] for i in range(len(shapes))]
    raise CorpusError(f"could not place {len(shapes)} non-overlapping boxes after bounded retries")


def generate_instance(cfg: CorpusConfig, rng: Rng, instance_id: str = "instance-0") -> CorpusInstance:
    n_obj = rng.draw_int(cfg.n_obj_min, cfg.n_obj_max + 1)
    # about half the objects sound, so multi-object scenes keep silent distractors
    n_snd = (n_obj + 1) // 2
    classes = rng.choose_without_replacement(cfg.num_classes, n_obj)
    sounding_idx = set(rng.shuffle(list(range(n_obj)))[:n_snd])
    shapes = [_draw_box_shape(cfg, rng) for _ in range(n_obj)]
    boxes = _place_boxes(cfg, shapes, rng)
    textures = [synth_class_texture(c, rng) for c in classes]

    # per-instance background tint; a flat 0.5 gray would make every background
    # patch land on the same normalized feature direction and drown the objects
    tint = rng.draw_uniform((cfg.channels,), low=0.3, high=0.7)
    image = tint[None, None, :] + cfg.image_noise * rng.draw_uniform(
        (cfg.w, cfg.h, cfg.channels), low=-1.0, high=1.0
    )
    image = np.clip(image, 0.0, 1.0)
    for box, tex in zip(boxes, textures):
        image[box.x0 : box.x1, box.y0 : box.y1, :] = tex.render(box)

    n_samples = int(round(cfg.clip_seconds * cfg.sample_rate))
    samples = np.zeros(n_samples)
    for i in sorted(sounding_idx):
        samples += class_tone_mix(classes[i], n_samples, cfg.sample_rate)
    if cfg.audio_noise > 0.0:
        samples = samples + cfg.audio_noise * rng.draw_normal(n_samples)

    objects = tuple(
        SceneObject(box=boxes[i], class_id=int(classes[i]), sounding=(i in sounding_idx))
        for i in range(n_obj)
    )
    # quantize to storage precision so memory and disk agree exactly
    image = image.astype(np.float32).astype(np.float64)
    samples = samples.astype(np.float32).astype(np.float64)
    return CorpusInstance(
        image=image,
        waveform=Waveform(samples=samples, sample_rate=cfg.sample_rate),
        objects=objects,
        instance_id=instance_id,
    )


@dataclass(frozen=True)
class CorpusManifest:
    num_instances: int
    w: int
    h: int
    channels: int
    sample_rate: int
    clip_seconds: float
    num_classes: int
    seed: int
    split: str
    instances: tuple  # of {"instance_id", "dir"}

    def to_json(self) -> dict:
        return {
            "num_instances": self.num_instances,
            "W": self.w,
            "H": self.h,
            "C": self.channels,
            "sample_rate": self.sample_rate,
            "clip_seconds": self.clip_seconds,
            "num_classes": self.num_classes,
            "seed": self.seed,
            "split": self.split,
            "instances": list(self.instances),
        }

    @staticmethod
    def from_json(doc: dict) -> "CorpusManifest":
        return CorpusManifest(
            num_instances=int(doc["num_instances"]),
            w=int(doc["W"]),
            h=int(doc["H"]),
            channels=int(doc["C"]),
            sample_rate=int(doc["sample_rate"]),
            clip_seconds=float(doc["clip_seconds"]),
            num_classes=int(doc["num_classes"]),
            seed=int(doc["seed"]),
            split=str(doc["split"]),
            instances=tuple(doc["instances"]),
        )


def _write_instance(split_dir: Path, inst: CorpusInstance, subdir: str) -> None:
    d = split_dir / subdir
    d.mkdir(parents=True, exist_ok=True)
    save_tensor(d / "image.avic", inst.image, version=1)
    save_waveform_raw(d / "audio.raw", inst.waveform.samples, inst.waveform.sample_rate)
    meta = {
        "instance_id": inst.instance_id,
        "objects": [
            {"box": asdict(o.box), "class_id": o.class_id, "sounding": o.sounding}
            for o in inst.objects
        ],
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def generate_corpus(cfg: CorpusConfig, seed: int, out_dir) -> dict:
    """Write train and test splits under out_dir; returns manifests by split name."""
    out_dir = Path(out_dir)
    manifests = {}
    for split, count in (("train", cfg.num_train), ("test", cfg.num_test)):
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        refs = []
        for index in range(count):
            rng = Rng(seed, _NS_INSTANCE[split], index)
            instance_id = f"{split}-{index:05d}"
            inst = generate_instance(cfg, rng, instance_id=instance_id)
            subdir = f"{index:05d}"
            _write_instance(split_dir, inst, subdir)
            refs.append({"instance_id": instance_id, "dir": subdir})
        manifest = CorpusManifest(
            num_instances=count,
            w=cfg.w,
            h=cfg.h,
            channels=cfg.channels,
            sample_rate=cfg.sample_rate,
            clip_seconds=cfg.clip_seconds,
            num_classes=cfg.num_classes,
            seed=seed,
            split=split,
            instances=tuple(refs),
        )
        (split_dir / "manifest.json").write_text(
            json.dumps(manifest.to_json(), indent=1, sort_keys=True) + "\n"
        )
        manifests[split] = manifest
    return manifests


def load_manifest(split_dir) -> CorpusManifest:
    path = Path(split_dir) / "manifest.json"
    if not path.is_file():
        raise CorpusError(f"no manifest at {path}")
    try:
        doc = json.loads(path.read_text())
        manifest = CorpusManifest.from_json(doc)
    except (ValueError, KeyError) as e:
        raise CorpusError(f"malformed manifest {path}: {e}") from e
    if manifest.num_instances != len(manifest.instances):
        raise CorpusError(
            f"manifest {path} claims {manifest.num_instances} instances "
            f"but references {len(manifest.instances)}"
        )
    return manifest


def _load_instance(split_dir: Path, ref: dict, manifest: CorpusManifest) -> CorpusInstance:
    d = split_dir / ref["dir"]
    for name in ("image.avic", "audio.raw", "audio.json", "meta.json"):
        if not (d / name).is_file():
            raise CorpusError(f"missing corpus file {d / name}")
    image = load_tensor(d / "image.avic")
    if image.shape != (manifest.w, manifest.h, manifest.channels):
        raise CorpusError(
            f"{d}: image shape {image.shape} does not match manifest "
            f"({manifest.w}, {manifest.h}, {manifest.channels})"
        )
    samples, rate = load_waveform_raw(d / "audio.raw")
    if rate != manifest.sample_rate:
        raise CorpusError(f"{d}: sample rate {rate} does not match manifest {manifest.sample_rate}")
    meta = json.loads((d / "meta.json").read_text())
    objects = []
    for o in meta["objects"]:
        box = BoundingBox(**{k: int(v) for k, v in o["box"].items()})
        box.validate(manifest.w, manifest.h)
        class_id = int(o["class_id"])
        if class_id >= manifest.num_classes:
            raise CorpusError(f"{d}: class_id {class_id} out of range")
        objects.append(SceneObject(box=box, class_id=class_id, sounding=bool(o["sounding"])))
    if not any(o.sounding for o in objects):
        raise CorpusError(f"{d}: no sounding object recorded")
    return CorpusInstance(
        image=image,
        waveform=Waveform(samples=samples, sample_rate=rate),
        objects=tuple(objects),
        instance_id=str(meta["instance_id"]),
    )


def load_corpus(split_dir) -> list:
    """Load one split directory back into memory; exact inverse of generation."""
    split_dir = Path(split_dir)
    manifest = load_manifest(split_dir)
    return [_load_instance(split_dir, ref, manifest) for ref in manifest.instances]
