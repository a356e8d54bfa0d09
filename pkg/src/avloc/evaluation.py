"""Localization metrics: consensus ground truth, cIoU, success curve, AUC.

Ground truth for an instance is a consensus map built from its sounding
boxes; a prediction is scored by consensus intersection over union at a
pixel threshold, and corpus-level quality is the success-ratio curve over a
fixed threshold grid with its trapezoidal AUC.  A naive reference for cIoU
lives in the test suite, deliberately not here.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import DspConfig, log_mel_spectrogram
from .encoders import EncoderConfig, audio_encode, visual_encode
from .localization import export_heatmap, minmax_normalize, response_map, upsample_bilinear

__all__ = [
    "ConsensusMap",
    "EvalResult",
    "THRESHOLD_GRID",
    "consensus_map",
    "ciou",
    "success_curve",
    "prepare_eval_items",
    "evaluate_items",
    "evaluate_corpus",
    "audio_retrieval",
]

THRESHOLD_GRID = tuple(i / 20.0 for i in range(21))


@dataclass(frozen=True)
class ConsensusMap:
    g: np.ndarray  # (W, H), values in {0, 1/consensus, ..., 1}


def consensus_map(boxes, w: int, h: int, consensus: int = 1) -> ConsensusMap:
    """g = min(sum of box masks / consensus, 1), each box one annotation."""
    if consensus < 1:
        raise ValueError("consensus must be at least 1")
    acc = np.zeros((w, h))
    for box in boxes:
        box.validate(w, h)
        acc += box.mask(w, h)
    return ConsensusMap(g=np.minimum(acc / consensus, 1.0))


def ciou(pred: np.ndarray, g, tau_pix: float) -> float:
    """Consensus-weighted intersection over union at a strict pixel threshold.

    With A = {pixels where pred > tau_pix}:
        ciou = sum_{p in A} g[p] / (sum_p g[p] + #{p in A : g[p] = 0})
    An empty A against empty ground truth counts as a perfect 1.
    """
    gv = g.g if isinstance(g, ConsensusMap) else np.asarray(g, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != gv.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gv.shape}")
    active = pred > tau_pix
    intersection = float(gv[active].sum())
    false_pos = int(np.count_nonzero(active & (gv == 0.0)))
    denom = float(gv.sum()) + false_pos
    if denom == 0.0:
        return 1.0
    return intersection / denom


@dataclass(frozen=True)
class EvalResult:
    per_instance: tuple  # of (instance_id, ciou)
    curve: tuple  # of (threshold, success_ratio)
    auc: float
    ciou_at: dict  # threshold string -> percentage

    def to_json(self) -> dict:
        return {
            "per_instance": [
                {"instance_id": iid, "ciou": score} for iid, score in self.per_instance
            ],
            "curve": [
                {"threshold": t, "success_ratio": r} for t, r in self.curve
            ],
            "auc": self.auc,
            "ciou_at": dict(self.ciou_at),
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    def write_curve_csv(self, path) -> None:
        # exactly 21 rows, one per grid threshold, no header
        lines = [f"{t!r},{r!r}" for t, r in self.curve]
        Path(path).write_text("\n".join(lines) + "\n")


def success_curve(scores):
    """Success ratios over the fixed grid, their AUC, and cIoU@tau lookups.

    success(tau) is the fraction of instances scoring strictly above tau, so
    the curve is non-increasing and a perfect score still contributes 0 at
    tau = 1.  Returns (curve points, auc, ciou_at) with cIoU@tau in percent
    for tau in {0.3, 0.5}.
    """
    scores = np.asarray(list(scores), dtype=np.float64)
    if scores.size == 0:
        raise ValueError("no scores to aggregate")
    ratios = [float(np.count_nonzero(scores > t)) / scores.size for t in THRESHOLD_GRID]
    auc = 0.0
    for i in range(len(THRESHOLD_GRID) - 1):
        auc += (ratios[i] + ratios[i + 1]) / 2.0 * (THRESHOLD_GRID[i + 1] - THRESHOLD_GRID[i])
    curve = tuple(zip(THRESHOLD_GRID, ratios))
    ciou_at = {
        "0.3": float(np.count_nonzero(scores > 0.3)) / scores.size * 100.0,
        "0.5": float(np.count_nonzero(scores > 0.5)) / scores.size * 100.0,
    }
    return curve, float(auc), ciou_at


@dataclass(frozen=True)
class EvalItem:
    instance_id: str
    image: np.ndarray
    lms: np.ndarray
    gmap: np.ndarray


def prepare_eval_items(instances, enc_cfg: EncoderConfig, dsp_cfg: DspConfig, consensus: int = 1):
    """Precompute spectrograms and consensus maps for repeated evaluation."""
    items = []
    for inst in instances:
        boxes = inst.sounding_boxes()
        if not boxes:
            raise ValueError(f"instance {inst.instance_id} has no ground-truth sounding boxes")
        items.append(
            EvalItem(
                instance_id=inst.instance_id,
                image=inst.image,
                lms=log_mel_spectrogram(inst.waveform, dsp_cfg).values,
                gmap=consensus_map(boxes, enc_cfg.image_w, enc_cfg.image_h, consensus).g,
            )
        )
    return items


def _heatmap_of(params, item: EvalItem, enc_cfg: EncoderConfig) -> np.ndarray:
    v = visual_encode(params, item.image, enc_cfg)
    a = audio_encode(params, item.lms, enc_cfg)
    r = minmax_normalize(response_map(v, a.values.value))
    return upsample_bilinear(r.values, enc_cfg.image_w, enc_cfg.image_h)


def evaluate_items(params, items, enc_cfg: EncoderConfig, tau_pix: float = 0.5, threads: int = 1, heatmap_dir=None) -> EvalResult:
    """Score prepared items; results are independent of the worker count.

    Every item is evaluated in isolation and collected in input order, so
    running with 1 or N threads produces identical floats.
    """
    if heatmap_dir is not None:
        heatmap_dir = Path(heatmap_dir)
        heatmap_dir.mkdir(parents=True, exist_ok=True)

    def one(item: EvalItem) -> float:
        heat = _heatmap_of(params, item, enc_cfg)
        if heatmap_dir is not None:
            export_heatmap(heat, heatmap_dir / f"{item.instance_id}.pgm")
        return ciou(heat, item.gmap, tau_pix)

    if threads <= 1:
        scores = [one(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(one, items))
    curve, auc, ciou_at = success_curve(scores)
    return EvalResult(
        per_instance=tuple((item.instance_id, score) for item, score in zip(items, scores)),
        curve=curve,
        auc=auc,
        ciou_at=ciou_at,
    )


def evaluate_corpus(params, instances, enc_cfg: EncoderConfig, dsp_cfg: DspConfig, tau_pix: float = 0.5, consensus: int = 1, threads: int = 1, heatmap_dir=None) -> EvalResult:
    items = prepare_eval_items(instances, enc_cfg, dsp_cfg, consensus)
    return evaluate_items(params, items, enc_cfg, tau_pix=tau_pix, threads=threads, heatmap_dir=heatmap_dir)


def audio_retrieval(params, instances, query_id: str, top_n: int, enc_cfg: EncoderConfig, dsp_cfg: DspConfig):
    """Rank other instances by audio-embedding similarity to the query.

    Ties break on instance id ascending, so rankings are fully deterministic.
    """
    ids = [inst.instance_id for inst in instances]
    if query_id not in ids:
        raise KeyError(f"unknown instance id {query_id!r}")
    embeddings = {}
    for inst in instances:
        lms = log_mel_spectrogram(inst.waveform, dsp_cfg).values
        embeddings[inst.instance_id] = audio_encode(params, lms, enc_cfg).values.value
    query = embeddings[query_id]
    others = sorted(
        (iid for iid in ids if iid != query_id),
        key=lambda iid: (-float(np.dot(query, embeddings[iid])), iid),
    )
    return others[:top_n]
