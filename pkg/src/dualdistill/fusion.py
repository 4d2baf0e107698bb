"""Adaptive fusion of two teachers' prediction streams and EMA refinement
of the fused pseudo-labels.

Uncertainty is measured two ways over a prediction matrix: individual
uncertainty (IU) is the mean per-row entropy, global uncertainty (GU) the
entropy of the row-mean distribution. Fusion weights derive from the IU
ratio; which of the two mixing rules applies is decided by comparing the
GU gap of the teachers against a threshold.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .simplex import PredictionMatrix, entropy, entropy_rows, mean_distribution

BRANCH_CLIP_DOMINANT = "clip-dominant"
BRANCH_ALPHA_WEIGHTED = "alpha-weighted"
BRANCH_FIXED = "fixed-weight"

DEFAULT_GU_THRESHOLD = 0.05

_ALPHA_EPS = 1e-12


@dataclass(frozen=True)
class FusionReport:
    """Uncertainty summary and branch decision of one fusion pass (all nats).

    fixed_weight is set only by the fixed-weight baseline, where the
    semantic-stream coefficient is pinned by hand instead of derived from
    the uncertainties.
    """

    iu_b: float
    iu_c: float
    gu_b: float
    gu_c: float
    delta_gu: float
    alpha: float
    branch: str
    threshold: float = None
    fixed_weight: float = None

    def weights(self):
        """Coefficients (on_c, on_b) actually applied to the two streams."""
        if self.branch == BRANCH_FIXED:
            return self.fixed_weight, 1.0 - self.fixed_weight
        if self.branch == BRANCH_CLIP_DOMINANT:
            return 1.0 - self.alpha / 2.0, self.alpha / 2.0
        return self.alpha, 1.0 - self.alpha

    def to_dict(self):
        return {
            "iu_b": self.iu_b,
            "iu_c": self.iu_c,
            "gu_b": self.gu_b,
            "gu_c": self.gu_c,
            "delta_gu": self.delta_gu,
            "alpha": self.alpha,
            "branch": self.branch,
            "threshold": self.threshold,
            "fixed_weight": self.fixed_weight,
        }


def individual_uncertainty(m):
    """Mean per-sample entropy of a prediction matrix, in nats."""
    if not isinstance(m, PredictionMatrix):
        m = PredictionMatrix(np.asarray(m, dtype=float))
    return float(entropy_rows(m.probs).mean())


def global_uncertainty(m):
    """Entropy of the marginal (row-mean) distribution, in nats."""
    return entropy(mean_distribution(m))


def _align(yb, yc):
    if yb.class_count != yc.class_count:
        raise InvalidInputError(
            f"class counts differ: {yb.class_count} vs {yc.class_count}"
        )
    if yb.sample_ids == yc.sample_ids:
        return yc
    if set(yb.sample_ids) != set(yc.sample_ids):
        raise InvalidInputError("prediction matrices cover different sample ids")
    index = {sid: i for i, sid in enumerate(yc.sample_ids)}
    order = [index[sid] for sid in yb.sample_ids]
    return PredictionMatrix(yc.probs[order], yb.sample_ids)


def fuse(yb, yc, threshold=DEFAULT_GU_THRESHOLD):
    """Adaptively fuse black-box-stream and semantic-stream predictions.

    With alpha = IU_c / (IU_b + IU_c) (0.5 when both teachers are fully
    confident) and delta = GU_b - GU_c:

    * delta <  threshold: row = (1 - alpha/2) * y_c + (alpha/2) * y_b, the
      clip-dominant branch (the semantic stream always gets > 1/2);
    * delta >= threshold: row = alpha * y_c + (1 - alpha) * y_b.

    Rows of yc are aligned to yb's sample-id order. Returns the fused
    matrix and a FusionReport.
    """
    if not isinstance(yb, PredictionMatrix) or not isinstance(yc, PredictionMatrix):
        raise InvalidInputError("fuse expects two PredictionMatrix arguments")
    if not np.isfinite(threshold):
        raise InvalidInputError("threshold must be finite")
    yc = _align(yb, yc)

    iu_b = individual_uncertainty(yb)
    iu_c = individual_uncertainty(yc)
    gu_b = global_uncertainty(yb)
    gu_c = global_uncertainty(yc)
    delta = gu_b - gu_c
    alpha = 0.5 if (iu_b + iu_c) < _ALPHA_EPS else iu_c / (iu_b + iu_c)

    if delta < threshold:
        branch = BRANCH_CLIP_DOMINANT
        w_c, w_b = 1.0 - alpha / 2.0, alpha / 2.0
    else:
        branch = BRANCH_ALPHA_WEIGHTED
        w_c, w_b = alpha, 1.0 - alpha

    fused = PredictionMatrix(w_c * yc.probs + w_b * yb.probs, yb.sample_ids)
    report = FusionReport(iu_b, iu_c, gu_b, gu_c, delta, alpha, branch, float(threshold))
    return fused, report


def fuse_fixed(yb, yc, weight_c):
    """Baseline fusion with a hand-pinned semantic-stream weight:
    row = weight_c * y_c + (1 - weight_c) * y_b. The report still carries
    the uncertainty statistics for comparison with the adaptive rule.
    """
    if not isinstance(yb, PredictionMatrix) or not isinstance(yc, PredictionMatrix):
        raise InvalidInputError("fuse_fixed expects two PredictionMatrix arguments")
    if not 0.0 <= weight_c <= 1.0:
        raise InvalidInputError(f"fixed weight must be in [0, 1], got {weight_c}")
    yc = _align(yb, yc)
    iu_b = individual_uncertainty(yb)
    iu_c = individual_uncertainty(yc)
    gu_b = global_uncertainty(yb)
    gu_c = global_uncertainty(yc)
    alpha = 0.5 if (iu_b + iu_c) < _ALPHA_EPS else iu_c / (iu_b + iu_c)
    fused = PredictionMatrix(weight_c * yc.probs + (1.0 - weight_c) * yb.probs, yb.sample_ids)
    report = FusionReport(
        iu_b, iu_c, gu_b, gu_c, gu_b - gu_c, alpha, BRANCH_FIXED,
        threshold=None, fixed_weight=float(weight_c),
    )
    return fused, report


@dataclass
class PseudoLabelStore:
    """The evolving fused pseudo-labels with their EMA coefficient and provenance."""

    labels: PredictionMatrix
    beta: float
    report: FusionReport
    epoch_of_last_fusion: int = 1

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidInputError(f"beta must be in [0, 1], got {self.beta}")


def ema_refine(store, yt):
    """Blend current target-model predictions into the stored pseudo-labels:
    label <- beta * label + (1 - beta) * yt, row-aligned by sample id.
    Returns the (mutated) store.
    """
    if not isinstance(yt, PredictionMatrix):
        raise InvalidInputError("ema_refine expects a PredictionMatrix")
    if yt.sample_ids != store.labels.sample_ids:
        raise InvalidInputError("target predictions are not aligned with the stored labels")
    if yt.class_count != store.labels.class_count:
        raise InvalidInputError("class counts differ")
    beta = store.beta
    store.labels = PredictionMatrix(
        beta * store.labels.probs + (1.0 - beta) * yt.probs, store.labels.sample_ids
    )
    return store


def refresh_fusion(store, yb, yc, threshold, epoch):
    """Re-run fusion (after a prompt refresh) and reset the EMA history to it."""
    fused, report = fuse(yb, yc, threshold)
    store.labels = fused
    store.report = report
    store.epoch_of_last_fusion = epoch
    return store, report
