"""Reproducible two-domain Gaussian benchmarks with controllable covariate
shift, plus a Monte-Carlo Bayes-accuracy oracle.

Classes are isotropic Gaussians. The target geometry is a rigid motion of
the source geometry: means are scaled, rotated in the plane of the first
two feature dimensions, and translated. A teacher fit to the source
geometry therefore places its decision boundaries wrong on the target in a
controlled way.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .teachers import PromptedTeacher, SyntheticBayesTeacher

BAYES_ORACLE_SEED = 321321
BAYES_ORACLE_DRAWS = 1_000_000


@dataclass(frozen=True)
class DomainSpec:
    """One domain: per-class means, class weights on the simplex, isotropic noise."""

    class_means: np.ndarray
    class_weights: np.ndarray
    noise_scale: float

    def __post_init__(self):
        means = np.array(self.class_means, dtype=float)
        weights = np.array(self.class_weights, dtype=float)
        if means.ndim != 2 or means.shape[0] < 2:
            raise InvalidInputError(f"class means must be (C>=2, d), got {means.shape}")
        if not np.all(np.isfinite(means)):
            raise InvalidInputError("class means must be finite")
        if weights.shape != (means.shape[0],):
            raise InvalidInputError("class weights do not match the number of classes")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise InvalidInputError("class weights must lie on the simplex")
        if not self.noise_scale >= 0:
            raise InvalidInputError("noise_scale must be non-negative")
        means.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "class_means", means)
        object.__setattr__(self, "class_weights", weights)
        object.__setattr__(self, "noise_scale", float(self.noise_scale))

    @property
    def class_count(self):
        return self.class_means.shape[0]

    @property
    def dim(self):
        return self.class_means.shape[1]


def rotate_first_plane(points, angle):
    """Rotate points by angle (radians) in the plane of dimensions 0 and 1."""
    points = np.asarray(points, dtype=float)
    out = points.copy()
    c, s = math.cos(angle), math.sin(angle)
    out[..., 0] = c * points[..., 0] - s * points[..., 1]
    out[..., 1] = s * points[..., 0] + c * points[..., 1]
    return out


@dataclass(frozen=True)
class DomainPair:
    """Source domain plus the rigid motion producing the target domain."""

    source: DomainSpec
    angle: float
    translation: np.ndarray
    scale: float
    n_target: int
    seed: int
    n_source: int = 0

    def __post_init__(self):
        translation = np.array(self.translation, dtype=float)
        if translation.shape != (self.source.dim,):
            raise InvalidInputError("translation does not match the feature dimension")
        if not self.scale > 0:
            raise InvalidInputError("scale must be positive")
        if self.n_target < 1:
            raise InvalidInputError("n_target must be >= 1")
        translation.setflags(write=False)
        object.__setattr__(self, "translation", translation)

    @property
    def target(self):
        means = self.scale * rotate_first_plane(self.source.class_means, self.angle) + self.translation
        return DomainSpec(means, self.source.class_weights, self.source.noise_scale)


@dataclass(frozen=True)
class TargetDataset:
    """Unlabeled-by-contract target samples; ground truth rides along for
    evaluation and golden files only."""

    features: np.ndarray
    sample_ids: tuple
    labels: np.ndarray = None

    def __post_init__(self):
        features = np.array(self.features, dtype=float)
        if features.ndim != 2:
            raise InvalidInputError(f"features must be (n, d), got {features.shape}")
        if not np.all(np.isfinite(features)):
            raise InvalidInputError("features must be finite")
        ids = tuple(self.sample_ids)
        if len(ids) != features.shape[0]:
            raise InvalidInputError("sample ids do not match the number of rows")
        if len(set(ids)) != len(ids):
            raise InvalidInputError("sample ids are not unique")
        labels = self.labels
        if labels is not None:
            labels = np.array(labels, dtype=int)
            if labels.shape != (features.shape[0],):
                raise InvalidInputError("labels do not match the number of rows")
        features.setflags(write=False)
        if labels is not None:
            labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


def make_ids(n):
    return tuple(f"s{i:05d}" for i in range(n))


def generate(pair):
    """Draw the target dataset of a DomainPair; deterministic per pair.seed."""
    spec = pair.target
    rng = np.random.default_rng(pair.seed)
    labels = rng.choice(spec.class_count, size=pair.n_target, p=spec.class_weights)
    noise = rng.standard_normal((pair.n_target, spec.dim))
    features = spec.class_means[labels] + spec.noise_scale * noise
    return TargetDataset(features, make_ids(pair.n_target), labels)


def bayes_rule(spec, x):
    """Bayes-optimal labels under an isotropic equal-covariance DomainSpec.

    A zero noise scale degenerates to the nearest-mean rule (the sigma -> 0
    limit), with priors breaking exact distance ties.
    """
    x = np.asarray(x, dtype=float)
    sq = ((x[:, None, :] - spec.class_means[None, :, :]) ** 2).sum(axis=2)
    sigma = max(spec.noise_scale, 1e-150)
    with np.errstate(divide="ignore"):
        scores = np.log(spec.class_weights)[None, :] - sq / (2.0 * sigma**2)
    return scores.argmax(axis=1)


def bayes_accuracy(spec, n_draws=BAYES_ORACLE_DRAWS, seed=BAYES_ORACLE_SEED):
    """Monte-Carlo estimate of the Bayes classifier's accuracy under spec.

    Uses its own fixed random stream, independent of any pipeline RNG.
    """
    rng = np.random.default_rng(seed)
    labels = rng.choice(spec.class_count, size=n_draws, p=spec.class_weights)
    x = spec.class_means[labels] + spec.noise_scale * rng.standard_normal((n_draws, spec.dim))
    return float(np.mean(bayes_rule(spec, x) == labels))


def teacher_accuracy(teacher, dataset):
    """Argmax accuracy of any prediction oracle on a labeled dataset."""
    if dataset.labels is None:
        raise InvalidInputError("teacher_accuracy needs ground-truth labels")
    preds = teacher.query(dataset.features, dataset.sample_ids)
    return float(np.mean(preds.probs.argmax(axis=1) == dataset.labels))


# -- default benchmark -------------------------------------------------------

DEFAULT_DIM = 8
DEFAULT_CLASSES = 4
DEFAULT_N_TARGET = 2000
DEFAULT_NOISE = 0.95
DEFAULT_RADIUS = 2.0
DEFAULT_ANGLE = 0.45
DEFAULT_BLACKBOX_BIAS = 4.0
DEFAULT_BLACKBOX_TEMPERATURE = 1.0
DEFAULT_SEMANTIC_TEMPERATURE = 4.0
DEFAULT_SEMANTIC_MEAN_JITTER = 0.65


def default_source_spec(dim=DEFAULT_DIM, classes=DEFAULT_CLASSES, radius=DEFAULT_RADIUS,
                        noise=DEFAULT_NOISE):
    """Class means on a circle in the first feature plane, uniform weights."""
    means = np.zeros((classes, dim))
    for c in range(classes):
        phi = 2.0 * math.pi * c / classes
        means[c, 0] = radius * math.cos(phi)
        means[c, 1] = radius * math.sin(phi)
    weights = np.full(classes, 1.0 / classes)
    return DomainSpec(means, weights, noise)


def default_domain_pair(seed=0, dim=DEFAULT_DIM, classes=DEFAULT_CLASSES,
                        n_target=DEFAULT_N_TARGET, angle=DEFAULT_ANGLE,
                        noise=DEFAULT_NOISE, radius=DEFAULT_RADIUS):
    source = default_source_spec(dim=dim, classes=classes, radius=radius, noise=noise)
    translation = np.zeros(dim)
    translation[2] = 0.4
    return DomainPair(source=source, angle=angle, translation=translation,
                      scale=1.0, n_target=n_target, seed=seed)


def default_blackbox_teacher(pair):
    """Teacher fit to the source geometry: misplaced boundaries on the target,
    sharp predictions, one class pushed by a fixed logit bias."""
    source = pair.source
    bias = np.zeros(source.class_count)
    bias[0] = DEFAULT_BLACKBOX_BIAS
    return SyntheticBayesTeacher(
        class_means=source.class_means,
        class_cov_scale=max(source.noise_scale, 1e-6) ** 2,
        temperature=DEFAULT_BLACKBOX_TEMPERATURE,
        label_bias=bias,
    )


def default_semantic_teacher(pair, prompt_lr=0.01):
    """Smoothed, roughly target-aware teacher: jittered target means, high
    temperature, learnable prompt bias starting at zero."""
    target = pair.target
    rng = np.random.default_rng(pair.seed + 7919)
    jitter = DEFAULT_SEMANTIC_MEAN_JITTER * rng.standard_normal(target.class_means.shape)
    base = SyntheticBayesTeacher(
        class_means=target.class_means + jitter,
        class_cov_scale=max(target.noise_scale, 1e-6) ** 2,
        temperature=DEFAULT_SEMANTIC_TEMPERATURE,
        label_bias=np.zeros(target.class_count),
    )
    return PromptedTeacher(base, prompt_lr=prompt_lr)


def default_benchmark(seed=0, prompt_lr=0.01):
    """The standard desk-scale benchmark: (pair, dataset, teacher_b, teacher_c)."""
    pair = default_domain_pair(seed=seed)
    dataset = generate(pair)
    return pair, dataset, default_blackbox_teacher(pair), default_semantic_teacher(pair, prompt_lr)
