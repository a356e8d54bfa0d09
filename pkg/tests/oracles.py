"""Independent reference implementations used as oracles by the tests.

Everything here is written as plain Python double loops over scalars, on
purpose: these functions share no code with the production paths they check,
so an agreement between the two is evidence, not tautology.  Keep them slow
and obvious.
"""

import math

import numpy as np


def ciou_reference(pred, g, tau_pix):
    """Per-pixel loop evaluation of consensus IoU.

    With A = {pixels where pred > tau_pix}:
        sum of g over A / (sum of g everywhere + count of A-pixels with g=0)
    and 1.0 when both A and the ground truth are empty.
    """
    pred = np.asarray(pred, dtype=float)
    g = np.asarray(g, dtype=float)
    assert pred.shape == g.shape
    inter = 0.0
    gsum = 0.0
    false_pos = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            gsum += g[i, j]
            if pred[i, j] > tau_pix:
                inter += g[i, j]
                if g[i, j] == 0.0:
                    false_pos += 1
    denom = gsum + false_pos
    if denom == 0.0:
        return 1.0
    return inter / denom


def contrastive_loss_reference(features, audio, tau):
    """Scalar-loop softmax cross-entropy over the pairing matrix."""
    k = len(features)
    total = 0.0
    for i in range(k):
        scores = [float(np.dot(features[i], audio[j])) / tau for j in range(k)]
        denom = sum(math.exp(s) for s in scores)
        total += -math.log(math.exp(scores[i]) / denom)
    return total / k


def iterative_loss_reference(v_plus, v_minus, audio, y, tau):
    """Scalar-loop evaluation of the refined objective.

    numerator_i   = sum_j y[i][j] * exp(<v+_i, a_j> / tau)
    denominator_i = sum_j exp(<v+_i, a_j> / tau)
                  + sum_j exp(<v-_i, a_j> / tau)   (skipped when v-_i is None)
    loss = -(1/k) * sum_i log(numerator_i / denominator_i)
    """
    k = len(v_plus)
    total = 0.0
    for i in range(k):
        num = 0.0
        den = 0.0
        for j in range(k):
            u = math.exp(float(np.dot(v_plus[i], audio[j])) / tau)
            den += u
            if y[i][j]:
                num += u
        if v_minus[i] is not None:
            for j in range(k):
                den += math.exp(float(np.dot(v_minus[i], audio[j])) / tau)
        total += -math.log(num / den)
    return total / k


def auc_reference(scores):
    """Trapezoid area under the success-ratio curve, all plain loops.

    The grid is the 21 thresholds 0.00, 0.05, ..., 1.00 and success at a
    threshold counts instances scoring strictly above it.
    """
    n = len(scores)
    ratios = []
    for i in range(21):
        t = i / 20.0
        wins = 0
        for s in scores:
            if s > t:
                wins += 1
        ratios.append(wins / n)
    area = 0.0
    for i in range(20):
        width = (i + 1) / 20.0 - i / 20.0
        area += (ratios[i] + ratios[i + 1]) / 2.0 * width
    return area


def response_reference(patch_features, a):
    """Per-patch loop: normalize each patch vector, then dot with the audio."""
    out = []
    for row in patch_features:
        norm = math.sqrt(sum(float(x) * float(x) for x in row))
        if norm == 0.0:
            out.append(0.0)
        else:
            out.append(sum(float(x) / norm * float(ai) for x, ai in zip(row, a)))
    return out
