"""Two-stage training schedule and the ablation variant family.

Epochs up to ``initial_epochs`` optimize the baseline contrastive loss; the
remaining epochs compute pseudo-labels from the snapshot frozen at the end
of the previous epoch and optimize the iterative loss.  Updates are plain
gradient descent, batches come from a seeded shuffle each epoch, and every
random draw derives from (seed, purpose, epoch, batch), so a run is a pure
function of its config and an interrupted run resumed from a checkpoint
reproduces the uninterrupted trajectory exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import GradientError, ParamVector, value_and_grad
from .dsp import DspConfig, log_mel_spectrogram
from .encoders import EncoderConfig, Snapshot, audio_encode, init_params, phi, phi_subset, take_snapshot, visual_encode
from .evaluation import evaluate_items, prepare_eval_items
from .losses import (
    Batch,
    compute_pseudo_labels,
    contrastive_loss,
    iterative_loss,
    relation_matrix,
    select_patch_subset,
)
from .rng import Rng

__all__ = [
    "TrainConfig",
    "VariantSpec",
    "VARIANT_NAMES",
    "ablation_variants",
    "TrainingError",
    "MetricsRow",
    "TrainResult",
    "train",
    "write_metrics_csv",
    "read_metrics_csv",
]

# rng stream tags within a training run
_NS_INIT = 0
_NS_SHUFFLE = 1
_NS_SAMPLE = 2


class TrainingError(RuntimeError):
    """Training aborted; message carries epoch/batch diagnostics."""


@dataclass(frozen=True)
class TrainConfig:
    k: int = 32
    tau: float = 0.07
    delta_v: float = 0.6
    delta_a: float = 0.6
    total_epochs: int = 30
    initial_epochs: int = 5
    learning_rate: float = 0.02
    r: int = 16
    seed: int = 0
    renorm_pooled: bool = True

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not (0 <= self.initial_epochs <= self.total_epochs):
            raise ValueError("need 0 <= initial_epochs <= total_epochs")
        if self.r < 1:
            raise ValueError("r must be at least 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        # delta_v / delta_a are deliberately NOT range-checked: values outside
        # [0,1] are degenerate but legal knobs (delta_v < 0 selects every
        # patch and empties x_neg; delta_a > 1 reduces y to the identity)
        if not (np.isfinite(self.delta_v) and np.isfinite(self.delta_a)):
            raise ValueError("thresholds must be finite")

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "tau": self.tau,
            "delta_v": self.delta_v,
            "delta_a": self.delta_a,
            "total_epochs": self.total_epochs,
            "initial_epochs": self.initial_epochs,
            "learning_rate": self.learning_rate,
            "r": self.r,
            "seed": self.seed,
            "renorm_pooled": self.renorm_pooled,
        }

    @staticmethod
    def from_json(doc: dict) -> "TrainConfig":
        allowed = set(TrainConfig().to_json().keys())
        unknown = set(doc.keys()) - allowed
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return TrainConfig(**doc)


@dataclass(frozen=True)
class VariantSpec:
    """Which refinement components are active after the initial stage."""

    name: str
    use_intra: bool  # sample v- from pseudo-non-sounding patches
    use_inter: bool  # widen the numerator with the audio relation matrix


VARIANT_NAMES = ("initial", "itr", "itr-intra", "itr-inter", "full")


def ablation_variants(cfg: TrainConfig) -> dict:
    """The five runnable configurations derived from one base config.

    'initial' never leaves the baseline stage; the other four differ only in
    which components of the refined objective are switched on.
    """
    return {
        "initial": (replace(cfg, initial_epochs=cfg.total_epochs), VariantSpec("initial", False, False)),
        "itr": (cfg, VariantSpec("itr", False, False)),
        "itr-intra": (cfg, VariantSpec("itr-intra", True, False)),
        "itr-inter": (cfg, VariantSpec("itr-inter", False, True)),
        "full": (cfg, VariantSpec("full", True, True)),
    }


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    mean_loss: float
    ciou_at_0_5: Optional[float]
    auc: Optional[float]
    baseline_batches: int
    iterative_batches: int


METRICS_HEADER = "epoch,mean_loss,ciou_at_0.5,auc,baseline_batches,iterative_batches"


def write_metrics_csv(path, rows, append: bool = False) -> None:
    lines = [] if append else [METRICS_HEADER]
    for r in rows:
        ciou = "" if r.ciou_at_0_5 is None else repr(r.ciou_at_0_5)
        auc = "" if r.auc is None else repr(r.auc)
        lines.append(f"{r.epoch},{r.mean_loss!r},{ciou},{auc},{r.baseline_batches},{r.iterative_batches}")
    mode = "a" if append else "w"
    with Path(path).open(mode) as f:
        f.write("\n".join(lines) + "\n")


def read_metrics_csv(path):
    rows = []
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"{path} is not a metrics log")
    for line in lines[1:]:
        epoch, mean_loss, ciou, auc, nb, ni = line.split(",")
        rows.append(
            MetricsRow(
                epoch=int(epoch),
                mean_loss=float(mean_loss),
                ciou_at_0_5=None if ciou == "" else float(ciou),
                auc=None if auc == "" else float(auc),
                baseline_batches=int(nb),
                iterative_batches=int(ni),
            )
        )
    return rows


@dataclass
class TrainResult:
    params: ParamVector
    metrics: list
    epoch: int


def _make_baseline_loss(batch: Batch, cfg: TrainConfig, enc_cfg: EncoderConfig):
    def loss_fn(leaves):
        feats, audio = [], []
        for image, lms in zip(batch.images, batch.lms):
            v = visual_encode(leaves, image, enc_cfg)
            feats.append(phi(v, cfg.renorm_pooled))
            audio.append(audio_encode(leaves, lms, enc_cfg).values)
        return contrastive_loss(feats, audio, cfg.tau)

    return loss_fn


def _make_iterative_loss(batch: Batch, sel_pos, sel_neg, y, cfg: TrainConfig, enc_cfg: EncoderConfig):
    def loss_fn(leaves):
        v_plus, v_minus, audio = [], [], []
        for i, (image, lms) in enumerate(zip(batch.images, batch.lms)):
            v = visual_encode(leaves, image, enc_cfg)
            if sel_pos[i] is None:
                v_plus.append(phi(v, cfg.renorm_pooled))
            else:
                v_plus.append(phi_subset(v, sel_pos[i], cfg.renorm_pooled))
            if sel_neg[i] is None:
                v_minus.append(None)
            else:
                v_minus.append(phi_subset(v, sel_neg[i], cfg.renorm_pooled))
            audio.append(audio_encode(leaves, lms, enc_cfg).values)
        return iterative_loss(v_plus, v_minus, audio, y, cfg.tau)

    return loss_fn


def train(
    train_instances,
    cfg: TrainConfig,
    enc_cfg: EncoderConfig,
    dsp_cfg: DspConfig,
    variant: VariantSpec = VariantSpec("full", True, True),
    test_instances=None,
    eval_tau_pix: float = 0.5,
    resume_params: Optional[ParamVector] = None,
    resume_epoch: int = 0,
    on_epoch=None,
) -> TrainResult:
    """Run the schedule from resume_epoch + 1 through total_epochs.

    Returns the final parameters plus one metrics row per epoch run here
    (cIoU@0.5 and AUC filled in when a test split is supplied).
    """
    if not train_instances:
        raise ValueError("empty training split")
    if resume_epoch >= cfg.total_epochs:
        raise ValueError(f"nothing to do: resume epoch {resume_epoch} >= total {cfg.total_epochs}")

    images = [inst.image for inst in train_instances]
    lms = [log_mel_spectrogram(inst.waveform, dsp_cfg).values for inst in train_instances]
    ids = [inst.instance_id for inst in train_instances]
    test_items = None
    if test_instances:
        test_items = prepare_eval_items(test_instances, enc_cfg, dsp_cfg)

    if resume_params is None:
        params = init_params(enc_cfg, Rng(cfg.seed, _NS_INIT))
    else:
        params = resume_params.copy()
    # end-of-epoch snapshots double as the pseudo-label source, so resuming
    # from a checkpoint re-freezes the loaded params as "previous epoch"
    snapshot = take_snapshot(params, resume_epoch)

    n = len(train_instances)
    rows = []
    for epoch in range(resume_epoch + 1, cfg.total_epochs + 1):
        order = Rng(cfg.seed, _NS_SHUFFLE, epoch).shuffle(list(range(n)))
        slices = [order[s : s + cfg.k] for s in range(0, n, cfg.k)]
        losses = []
        baseline_batches = 0
        iterative_batches = 0
        for bi, idxs in enumerate(slices):
            batch = Batch(
                images=tuple(images[j] for j in idxs),
                lms=tuple(lms[j] for j in idxs),
                ids=tuple(ids[j] for j in idxs),
            )
            if epoch <= cfg.initial_epochs:
                loss_fn = _make_baseline_loss(batch, cfg, enc_cfg)
                baseline_batches += 1
            else:
                labels = compute_pseudo_labels(snapshot, batch, cfg.delta_v, enc_cfg)
                x_neg = labels.x_neg if variant.use_intra else (frozenset(),) * batch.k
                if variant.use_inter:
                    y = relation_matrix(labels.a_tilde, cfg.delta_a)
                else:
                    y = np.eye(batch.k, dtype=np.int64)
                rng_b = Rng(cfg.seed, _NS_SAMPLE, epoch, bi)
                sel_pos, sel_neg = [], []
                for i in range(batch.k):
                    if labels.x_pos[i]:
                        sel_pos.append(select_patch_subset(labels.x_pos[i], cfg.r, rng_b))
                    else:
                        sel_pos.append(None)
                    if x_neg[i]:
                        sel_neg.append(select_patch_subset(x_neg[i], cfg.r, rng_b))
                    else:
                        sel_neg.append(None)
                loss_fn = _make_iterative_loss(batch, sel_pos, sel_neg, y, cfg, enc_cfg)
                iterative_batches += 1
            try:
                loss_value, g = value_and_grad(loss_fn, params)
            except GradientError as e:
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {bi} "
                    f"(instances {batch.ids}): {e}"
                ) from e
            params = params.axpy(-cfg.learning_rate, g)
            losses.append(loss_value)
        snapshot = take_snapshot(params, epoch)
        ciou_05 = auc = None
        if test_items is not None:
            result = evaluate_items(params, test_items, enc_cfg, tau_pix=eval_tau_pix)
            ciou_05 = result.ciou_at["0.5"]
            auc = result.auc
        row = MetricsRow(
            epoch=epoch,
            mean_loss=float(np.mean(losses)),
            ciou_at_0_5=ciou_05,
            auc=auc,
            baseline_batches=baseline_batches,
            iterative_batches=iterative_batches,
        )
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row, params)
    return TrainResult(params=params, metrics=rows, epoch=cfg.total_epochs)
