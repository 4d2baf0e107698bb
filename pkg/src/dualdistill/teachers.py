"""Read-only prediction oracles: a synthetic stand-in for a pre-trained
black-box model, a prompted variant with a learnable per-class logit bias on
a frozen base, and a file-backed oracle for externally exported predictions.

The prompted teacher models prompt learning at desk scale: the scoring
function is frozen; only a small bias vector is updated, by gradient descent
on a consistency loss against the target model's current predictions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, MissingPredictionError
from .simplex import PredictionMatrix, softmax


def _ids_for(x, ids):
    if ids is None:
        return tuple(range(len(x)))
    return tuple(ids)


@dataclass(frozen=True)
class SyntheticBayesTeacher:
    """Gaussian-geometry scorer: logit of class c is the (scaled) negative
    squared distance to that class mean plus a fixed per-class bias.

    With means equal to the data's true class means, zero bias and
    cov_scale equal to the noise variance this is the Bayes rule for
    equal-weight isotropic classes; biased means/bias model a teacher fit
    to a shifted domain.
    """

    class_means: np.ndarray
    class_cov_scale: float
    temperature: float
    label_bias: np.ndarray

    def __post_init__(self):
        means = np.array(self.class_means, dtype=float)
        bias = np.array(self.label_bias, dtype=float)
        if means.ndim != 2:
            raise InvalidInputError(f"class means must be (C, d), got shape {means.shape}")
        if not np.all(np.isfinite(means)) or not np.all(np.isfinite(bias)):
            raise InvalidInputError("teacher parameters must be finite")
        if bias.shape != (means.shape[0],):
            raise InvalidInputError(f"label bias shape {bias.shape} != ({means.shape[0]},)")
        if not self.class_cov_scale > 0:
            raise InvalidInputError("class_cov_scale must be positive")
        if not self.temperature > 0:
            raise InvalidInputError("temperature must be positive")
        means.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "class_means", means)
        object.__setattr__(self, "label_bias", bias)
        object.__setattr__(self, "class_cov_scale", float(self.class_cov_scale))
        object.__setattr__(self, "temperature", float(self.temperature))

    @property
    def class_count(self):
        return self.class_means.shape[0]

    @property
    def feature_dim(self):
        return self.class_means.shape[1]

    def logits(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise InvalidInputError(f"batch shape {x.shape} does not match feature dim {self.feature_dim}")
        sq = ((x[:, None, :] - self.class_means[None, :, :]) ** 2).sum(axis=2)
        return -sq / (2.0 * self.class_cov_scale) + self.label_bias

    def query(self, x, ids=None):
        return PredictionMatrix(softmax(self.logits(x), self.temperature), _ids_for(x, ids))

    def copy(self):
        return self


class PromptedTeacher:
    """Frozen synthetic scorer plus a learnable per-class prompt bias.

    query adds the prompt bias to the base logits before the temperature
    softmax. prompt_step performs one plain gradient-descent update of the
    bias on the consistency loss mean(-y_target . y_teacher); the base is
    never touched.
    """

    def __init__(self, base, prompt_lr=0.01, prompt_bias=None):
        if prompt_lr < 0:
            raise InvalidInputError("prompt_lr must be non-negative")
        self.base = base
        self.prompt_lr = float(prompt_lr)
        if prompt_bias is None:
            prompt_bias = np.zeros(base.class_count)
        self.prompt_bias = np.array(prompt_bias, dtype=float)
        if self.prompt_bias.shape != (base.class_count,):
            raise InvalidInputError(
                f"prompt bias shape {self.prompt_bias.shape} != ({base.class_count},)"
            )
        if not np.all(np.isfinite(self.prompt_bias)):
            raise InvalidInputError("prompt bias must be finite")

    @property
    def class_count(self):
        return self.base.class_count

    def logits(self, x):
        return self.base.logits(x) + self.prompt_bias

    def query(self, x, ids=None):
        return PredictionMatrix(softmax(self.logits(x), self.base.temperature), _ids_for(x, ids))

    def consistency_loss_and_grad(self, x, target_rows):
        """Consistency loss mean(-y_t . y_c) and its exact gradient on the prompt bias."""
        target_rows = np.asarray(target_rows, dtype=float)
        if target_rows.ndim != 2 or target_rows.shape[1] != self.class_count:
            raise InvalidInputError(
                f"target predictions shape {target_rows.shape} does not match class count {self.class_count}"
            )
        s = softmax(self.logits(x), self.base.temperature)
        if s.shape[0] != target_rows.shape[0]:
            raise InvalidInputError("target predictions and batch sizes differ")
        loss = float(np.mean(-np.sum(target_rows * s, axis=1)))
        inner = np.sum(target_rows * s, axis=1, keepdims=True)
        grad = -np.mean(s * (target_rows - inner), axis=0) / self.base.temperature
        return loss, grad

    def prompt_step(self, x, target):
        """One gradient step on the prompt bias; returns the pre-update loss."""
        rows = target.probs if isinstance(target, PredictionMatrix) else target
        loss, grad = self.consistency_loss_and_grad(x, rows)
        self.prompt_bias = self.prompt_bias - self.prompt_lr * grad
        return loss

    def copy(self):
        return PromptedTeacher(self.base, self.prompt_lr, self.prompt_bias.copy())


class FilePredictions:
    """Oracle answering queries from a fixed id -> row table (features ignored)."""

    def __init__(self, matrix):
        if not isinstance(matrix, PredictionMatrix):
            raise InvalidInputError("FilePredictions wants a PredictionMatrix")
        self._matrix = matrix
        self._by_id = {sid: i for i, sid in enumerate(matrix.sample_ids)}

    @property
    def class_count(self):
        return self._matrix.class_count

    @property
    def sample_ids(self):
        return self._matrix.sample_ids

    def query(self, x, ids=None):
        if ids is None:
            raise InvalidInputError("a file-backed oracle needs explicit sample ids")
        ids = tuple(ids)
        rows = np.empty((len(ids), self.class_count))
        for k, sid in enumerate(ids):
            i = self._by_id.get(sid)
            if i is None:
                raise MissingPredictionError(f"no stored prediction for sample id {sid!r}")
            rows[k] = self._matrix.probs[i]
        return PredictionMatrix(rows, ids)

    def copy(self):
        return self


def load_file_teacher(path, expected_classes=None):
    """File-backed oracle from a prediction-matrix CSV (see dualdistill.fileio)."""
    from .fileio import read_prediction_matrix

    return FilePredictions(read_prediction_matrix(path, expected_classes=expected_classes))
