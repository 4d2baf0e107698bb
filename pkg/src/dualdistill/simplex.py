"""Probability-simplex primitives: entropy, divergences, softmax, cosine geometry.

All functions are pure, operate on float64 numpy arrays, and use the natural
logarithm, so entropies and divergences are measured in nats. Zero entries
follow the 0*ln(0) = 0 convention. KL divergence clamps both arguments to
>= 1e-12 and renormalizes so one-hot inputs never produce infinities.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

PROB_ATOL = 1e-9
KL_CLAMP = 1e-12
NORM_EPS = 1e-12


def _as_prob_vector(p):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise InvalidInputError(f"expected a 1-D probability vector, got shape {p.shape}")
    if p.size < 2:
        raise InvalidInputError("probability vectors need at least 2 classes")
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("probability vector has non-finite entries")
    if np.any(p < -PROB_ATOL) or np.any(p > 1.0 + PROB_ATOL):
        raise InvalidInputError("probability entries must lie in [0, 1]")
    s = p.sum()
    if abs(s - 1.0) > PROB_ATOL:
        raise InvalidInputError(f"probability entries sum to {s!r}, not 1")
    return p


@dataclass(frozen=True)
class PredictionMatrix:
    """Per-sample soft predictions: one row on the C-simplex per sample id.

    Rows are validated on construction and stored read-only, so every
    PredictionMatrix in circulation satisfies the simplex invariants.
    """

    probs: np.ndarray
    sample_ids: tuple = field(default=None)

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2:
            raise InvalidInputError(f"expected an (n, C) matrix, got shape {probs.shape}")
        n, c = probs.shape
        if n == 0:
            raise InvalidInputError("prediction matrix has no rows")
        if c < 2:
            raise InvalidInputError("prediction matrix needs at least 2 classes")
        if not np.all(np.isfinite(probs)):
            raise InvalidInputError("prediction matrix has non-finite entries")
        if np.any(probs < -PROB_ATOL) or np.any(probs > 1.0 + PROB_ATOL):
            raise InvalidInputError("prediction entries must lie in [0, 1]")
        sums = probs.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > PROB_ATOL)
        if bad.size:
            raise InvalidInputError(f"row {bad[0]} sums to {sums[bad[0]]!r}, not 1")
        ids = self.sample_ids
        if ids is None:
            ids = tuple(range(n))
        else:
            ids = tuple(ids)
        if len(ids) != n:
            raise InvalidInputError(f"{len(ids)} sample ids for {n} rows")
        if len(set(ids)) != n:
            raise InvalidInputError("sample ids are not unique")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "sample_ids", ids)

    @property
    def n_samples(self):
        return self.probs.shape[0]

    @property
    def class_count(self):
        return self.probs.shape[1]

    def row(self, sample_id):
        try:
            i = self.sample_ids.index(sample_id)
        except ValueError:
            raise InvalidInputError(f"unknown sample id {sample_id!r}") from None
        return self.probs[i]


def entropy(p):
    """Shannon entropy -sum(p * ln p) in nats; 0*ln(0) counts as 0.

    Result lies in [0, ln C]; ln C is attained exactly at the uniform vector.
    """
    p = _as_prob_vector(p)
    mask = p > 0
    return float(-np.sum(p[mask] * np.log(p[mask])))


def entropy_rows(probs):
    """Row-wise entropy of an (n, C) array of simplex rows, without validation."""
    probs = np.asarray(probs, dtype=float)
    logs = np.where(probs > 0, np.log(np.where(probs > 0, probs, 1.0)), 0.0)
    return -np.sum(probs * logs, axis=1)


def mean_distribution(m):
    """Arithmetic mean of the rows of a PredictionMatrix: the marginal distribution."""
    if not isinstance(m, PredictionMatrix):
        m = PredictionMatrix(np.asarray(m, dtype=float))
    return m.probs.mean(axis=0)


def _clamp_renorm(p):
    q = np.maximum(p, KL_CLAMP)
    return q / q.sum()


def kl_div(p, q):
    """KL divergence sum(p * ln(p/q)) in nats, after clamping both arguments.

    Both distributions are clamped elementwise to >= 1e-12 and renormalized,
    so one-hot inputs give finite values. Asymmetric; >= 0 with equality iff
    the clamped distributions coincide.
    """
    p = _as_prob_vector(p)
    q = _as_prob_vector(q)
    if p.shape != q.shape:
        raise InvalidInputError(f"dimension mismatch: {p.shape} vs {q.shape}")
    pc = _clamp_renorm(p)
    qc = _clamp_renorm(q)
    return float(np.sum(pc * np.log(pc / qc)))


def js_div(p, q):
    """Jensen-Shannon divergence 0.5*KL(p||m) + 0.5*KL(q||m), m = (p+q)/2.

    Symmetric and bounded by ln 2.
    """
    p = _as_prob_vector(p)
    q = _as_prob_vector(q)
    if p.shape != q.shape:
        raise InvalidInputError(f"dimension mismatch: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    return 0.5 * kl_div(p, m) + 0.5 * kl_div(q, m)


def cosine(u, v):
    """Cosine similarity u.v / (|u||v|); returns 0 if either norm is < 1e-12."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.shape != v.shape:
        raise InvalidInputError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise InvalidInputError("cosine arguments must be finite")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < NORM_EPS or nv < NORM_EPS:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def softmax(z, temperature=1.0):
    """Numerically stable softmax of z / temperature; always a valid simplex vector."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax logits must be finite")
    if not temperature > 0:
        raise InvalidInputError(f"temperature must be positive, got {temperature}")
    a = z / temperature
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)
