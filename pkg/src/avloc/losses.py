"""Contrastive objectives: the baseline loss and its iterative refinement.

The baseline loss scores each image feature against every audio embedding in
the batch and asks the matching pair to win the softmax.  The iterative loss
replaces the whole-image feature with a pooled feature over pseudo-sounding
patches (v+), adds pooled pseudo-non-sounding patches (v-) as extra
denominator terms, and widens the numerator to all batch entries whose
snapshot audio embeddings correlate (the relation matrix y).  Pseudo-labels
come from a frozen previous-epoch snapshot, computed outside the gradient
graph, so no gradient can reach the snapshot by construction.

With x_pos = all patches, x_neg empty, and y = identity, the iterative loss
reduces to the baseline term by term; the implementation preserves that
equality exactly, not just approximately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .encoders import AudioEmbedding, EncoderConfig, Snapshot, VisualFeatureMap, audio_encode, phi, phi_subset, visual_encode
from .localization import minmax_normalize, response_map
from .rng import Rng

__all__ = [
    "ABSENT",
    "Batch",
    "PseudoLabels",
    "contrastive_loss",
    "compute_pseudo_labels",
    "select_patch_subset",
    "sample_sounding_feature",
    "sample_nonsounding_feature",
    "relation_matrix",
    "iterative_loss",
]

# marker for "no non-sounding feature was sampled"; the corresponding
# denominator terms are simply dropped
ABSENT = None


@dataclass(frozen=True)
class Batch:
    """k paired instances, audio already converted to log-mel matrices."""

    images: tuple  # of (W, H, C) arrays
    lms: tuple  # of (mel_bins, frames) arrays
    ids: tuple

    def __post_init__(self):
        if not (len(self.images) == len(self.lms) == len(self.ids)):
            raise ValueError("batch fields must have equal length")

    @property
    def k(self) -> int:
        return len(self.images)


def _audio_matrix(audio) -> Var:
    vecs = []
    for a in audio:
        v = a.values if isinstance(a, AudioEmbedding) else a
        vecs.append(v if isinstance(v, Var) else Var(np.asarray(v, dtype=np.float64)))
    return ad.stack_rows(vecs)


def contrastive_loss(features, audio, tau: float) -> Var:
    """Mean softmax cross-entropy of each feature against the batch audio.

    features: k pooled visual vectors (d,); audio: k unit embeddings.
    Scores are inner products scaled by 1/tau; each row's log-partition is
    computed max-shifted, with the shift detached, so gradients stay exact.
    """
    if tau <= 0.0:
        raise ValueError("temperature must be positive")
    features = list(features)
    if not features:
        raise ValueError("empty batch")
    a_mat = _audio_matrix(audio)
    if a_mat.value.shape[0] != len(features):
        raise ValueError("feature and audio counts differ")
    terms = None
    for i, f in enumerate(features):
        scores = ad.mul(ad.mv(a_mat, f), 1.0 / tau)
        term = ad.logsumexp(scores) - ad.pick(scores, i)
        terms = term if terms is None else terms + term
    return ad.mul(terms, 1.0 / len(features))


@dataclass(frozen=True)
class PseudoLabels:
    """Per-instance patch label sets and snapshot audio embeddings.

    x_pos[i] and x_neg[i] are disjoint by construction: strict inequalities
    on both sides of the threshold leave boundary patches in neither set.
    """

    x_pos: tuple  # of frozenset[(gx, gy)]
    x_neg: tuple  # of frozenset[(gx, gy)]
    a_tilde: np.ndarray  # (k, d), unit rows
    r_tilde: tuple  # of normalized ResponseMap

    @property
    def k(self) -> int:
        return len(self.x_pos)


def compute_pseudo_labels(snapshot: Snapshot, batch: Batch, delta_v: float, cfg: EncoderConfig) -> PseudoLabels:
    """Label patches with the frozen snapshot encoders.

    Everything here is detached arithmetic on the snapshot's parameter copy;
    the returned index sets and embeddings enter the iterative loss as
    constants, so the snapshot contributes exactly zero gradient.
    """
    params = snapshot.params
    x_pos, x_neg, a_rows, maps = [], [], [], []
    for image, lms in zip(batch.images, batch.lms):
        v = visual_encode(params, image, cfg)
        a = audio_encode(params, lms, cfg)
        r = minmax_normalize(response_map(v, a.values.value))
        pos = np.nonzero(r.values > delta_v)
        neg = np.nonzero(r.values < delta_v)
        x_pos.append(frozenset(zip(pos[0].tolist(), pos[1].tolist())))
        x_neg.append(frozenset(zip(neg[0].tolist(), neg[1].tolist())))
        a_rows.append(a.values.value)
        maps.append(r)
    return PseudoLabels(
        x_pos=tuple(x_pos),
        x_neg=tuple(x_neg),
        a_tilde=np.stack(a_rows),
        r_tilde=tuple(maps),
    )


def select_patch_subset(indices, r: int, rng: Rng) -> tuple:
    """At most r distinct patch indices from the set, drawn without replacement.

    Selection happens once, outside any gradient graph, so rebuilding the
    loss for the same batch reuses identical subsets.
    """
    if r < 1:
        raise ValueError("r must be at least 1")
    ordered = sorted(indices)
    if len(ordered) <= r:
        return tuple(ordered)
    chosen = rng.choose_without_replacement(len(ordered), r)
    return tuple(ordered[c] for c in sorted(chosen))


def sample_sounding_feature(v: VisualFeatureMap, x_pos, r: int, rng: Rng, renorm_pooled: bool = True) -> Var:
    """Pooled feature over sampled pseudo-sounding patches; whole-image phi
    when the label set is empty (nothing confidently sounding yet)."""
    if not x_pos:
        return phi(v, renorm_pooled)
    return phi_subset(v, select_patch_subset(x_pos, r, rng), renorm_pooled)


def sample_nonsounding_feature(v: VisualFeatureMap, x_neg, r: int, rng: Rng, renorm_pooled: bool = True):
    """Pooled feature over sampled pseudo-non-sounding patches, or ABSENT."""
    if not x_neg:
        return ABSENT
    return phi_subset(v, select_patch_subset(x_neg, r, rng), renorm_pooled)


def relation_matrix(a_tilde: np.ndarray, delta_a: float) -> np.ndarray:
    """Binary k x k matrix: y[i][j] = 1 iff <a_i, a_j> >= delta_a.

    Inputs are unit rows, so the diagonal is mathematically 1; it is forced
    to 1 after thresholding to keep the guarantee under floating-point
    self-similarity a hair below 1.  Symmetry is asserted, not enforced: the
    underlying Gram matrix is symmetric.
    """
    a_tilde = np.asarray(a_tilde, dtype=np.float64)
    if a_tilde.ndim != 2:
        raise ValueError("expected a (k, d) matrix of audio embeddings")
    sims = a_tilde @ a_tilde.T
    y = (sims >= delta_a).astype(np.int64)
    np.fill_diagonal(y, 1)
    if not np.array_equal(y, y.T):
        raise AssertionError("relation matrix is asymmetric; audio similarities are inconsistent")
    return y


def iterative_loss(v_plus, v_minus, audio, y: np.ndarray, tau: float) -> Var:
    """Refined objective over pooled positive/negative patch features.

    For each instance i, with u_j = <v+_i, a_j>/tau and w_j = <v-_i, a_j>/tau:

        L_i = -log( sum_j y[i][j] e^{u_j} / sum_j (e^{w_j} + e^{u_j}) )

    Instances whose v- is ABSENT drop the e^{w_j} terms.  Both numerator and
    denominator are evaluated as detached-max-shifted log-sum-exps, and the
    loss is the mean of log-denominator minus log-numerator.
    """
    if tau <= 0.0:
        raise ValueError("temperature must be positive")
    v_plus = list(v_plus)
    v_minus = list(v_minus)
    k = len(v_plus)
    if k == 0:
        raise ValueError("empty batch")
    if len(v_minus) != k:
        raise ValueError("v_plus and v_minus counts differ")
    y = np.asarray(y)
    if y.shape != (k, k):
        raise ValueError(f"relation matrix shape {y.shape} does not match batch size {k}")
    if np.any(np.diag(y) != 1):
        raise ValueError("relation matrix diagonal must be all ones")
    a_mat = _audio_matrix(audio)
    terms = None
    for i in range(k):
        u = ad.mul(ad.mv(a_mat, v_plus[i]), 1.0 / tau)
        pos_idx = np.flatnonzero(y[i])
        log_num = ad.logsumexp(ad.take(u, pos_idx))
        if v_minus[i] is ABSENT:
            log_den = ad.logsumexp(u)
        else:
            w = ad.mul(ad.mv(a_mat, v_minus[i]), 1.0 / tau)
            log_den = ad.logsumexp(ad.concat1d([u, w]))
        term = log_den - log_num
        terms = term if terms is None else terms + term
    return ad.mul(terms, 1.0 / k)
