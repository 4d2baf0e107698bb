"""The full two-stage adaptation procedure.

Stage One distills the fused dual-teacher pseudo-labels into the target
network under subnetwork rectification: per epoch, mini-batch SGD on
(kd + mix - im) + (epsilon*od + zeta*wg), then an EMA refinement of the
stored pseudo-labels with the model's full-set predictions; every
prompt_period epochs the semantic teacher's prompt is refreshed against the
current model and (by default) the fusion is re-run on the refreshed
stream. Stage Two switches to prototype-based self-training: per epoch,
class prototypes are rebuilt from the model's own features and soft
predictions, every sample is relabeled by its nearest prototype under
cosine distance, and the model is trained on the cross entropy against
those labels.
"""

import logging
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import losses
from .errors import (
    ConfigError,
    DegenerateStateError,
    InvalidInputError,
    TrainingDivergenceError,
    UnsupportedEvaluationError,
)
from .fusion import (
    PseudoLabelStore,
    ema_refine,
    fuse,
    fuse_fixed,
    global_uncertainty,
)
from .network import (
    LayerLayout,
    SgdState,
    SubnetworkMask,
    forward_pass,
    init_weights,
    sgd_step,
)
from .simplex import PredictionMatrix
from .duals import softmax_rows

logger = logging.getLogger("dualdistill")

FUSION_SCHEDULES = ("on-prompt-refresh", "every-epoch")
PROTOTYPE_MODES = ("soft", "hard")

EMPTY_COUNT_EPS = 1e-12


@dataclass(frozen=True)
class PipelineConfig:
    """All knobs of the two-stage run; defaults follow the reference training recipe."""

    total_epochs: int = 35
    stage_one_epochs: int = 25
    batch_size: int = 64
    epsilon: float = 0.6
    zeta: float = 0.3
    beta: float = 0.9
    gamma: float = 0.84
    gu_threshold: float = 0.05
    fixed_fusion_weight: float = None
    prompt_period: int = 5
    prompt_steps: int = 50
    prompt_lr: float = 0.01
    lr0: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-3
    hidden_sizes: tuple = (64, 32)
    activation: str = "relu"
    seed: int = 0
    fusion_schedule: str = "on-prompt-refresh"
    wg_form: str = "cosine"
    prototype_mode: str = "soft"
    use_kd: bool = True
    use_mix: bool = True
    use_im: bool = True
    use_sr: bool = True
    use_self: bool = True

    def __post_init__(self):
        if not 0 < self.stage_one_epochs < self.total_epochs:
            raise ConfigError(
                f"need 0 < stage_one_epochs < total_epochs, got {self.stage_one_epochs}/{self.total_epochs}"
            )
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if not (np.isfinite(self.epsilon) and np.isfinite(self.zeta) and np.isfinite(self.gu_threshold)):
            raise ConfigError("epsilon, zeta and gu_threshold must be finite")
        if self.fixed_fusion_weight is not None and not 0.0 <= self.fixed_fusion_weight <= 1.0:
            raise ConfigError("fixed_fusion_weight must be in [0, 1] when set")
        if self.prompt_period < 1:
            raise ConfigError("prompt_period must be >= 1")
        if self.prompt_steps < 0:
            raise ConfigError("prompt_steps must be >= 0")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.fusion_schedule not in FUSION_SCHEDULES:
            raise ConfigError(f"fusion_schedule must be one of {FUSION_SCHEDULES}")
        if self.wg_form not in losses.WG_FORMS:
            raise ConfigError(f"wg_form must be one of {losses.WG_FORMS}")
        if self.prototype_mode not in PROTOTYPE_MODES:
            raise ConfigError(f"prototype_mode must be one of {PROTOTYPE_MODES}")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "hidden_sizes" in kwargs:
            kwargs["hidden_sizes"] = tuple(kwargs["hidden_sizes"])
        return cls(**kwargs)


@dataclass
class MetricsRecord:
    """One line of the metrics stream: per-epoch losses and diagnostics."""

    epoch: int
    stage: int
    losses: losses.LossBreakdown
    fusion: object = None
    target_accuracy: float = None
    gu_of_target: float = None

    def to_dict(self):
        return {
            "epoch": self.epoch,
            "stage": self.stage,
            "losses": self.losses.to_dict(),
            "fusion": self.fusion.to_dict() if self.fusion is not None else None,
            "target_accuracy": self.target_accuracy,
            "gu_of_target": self.gu_of_target,
        }


@dataclass(frozen=True)
class PrototypeSet:
    """Per-class feature centroids weighted by predicted class probability."""

    mu: np.ndarray
    soft_counts: np.ndarray

    @property
    def empty(self):
        return self.soft_counts < EMPTY_COUNT_EPS


def compute_prototypes(features, predictions, mode="soft"):
    """Class centroids mu_c = sum_i p_ic q_i / sum_i p_ic.

    In soft mode the sums run over every sample; in hard mode only over
    samples whose argmax is c. Classes whose denominator vanishes are
    flagged empty.
    """
    if mode not in PROTOTYPE_MODES:
        raise InvalidInputError(f"unknown prototype mode {mode!r}")
    rows = predictions.probs if isinstance(predictions, PredictionMatrix) else np.asarray(predictions, dtype=float)
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or rows.ndim != 2 or features.shape[0] != rows.shape[0]:
        raise InvalidInputError("features and predictions are not aligned")
    weights = rows
    if mode == "hard":
        assign = rows.argmax(axis=1)
        weights = np.where(np.eye(rows.shape[1], dtype=bool)[assign], rows, 0.0)
    counts = weights.sum(axis=0)
    if np.all(counts < EMPTY_COUNT_EPS):
        raise DegenerateStateError("every prototype class is empty")
    safe = np.where(counts < EMPTY_COUNT_EPS, 1.0, counts)
    mu = (weights.T @ features) / safe[:, None]
    return PrototypeSet(mu=mu, soft_counts=counts)


def assign_nearest_prototype(features, protos):
    """Label each feature with the class of its nearest non-empty prototype
    under cosine distance 1 - cos(q, mu_c); ties break to the lowest class
    index. Zero-norm features fall to the tie-break rule with a logged warning.
    """
    features = np.asarray(features, dtype=float)
    usable = ~protos.empty
    if not np.any(usable):
        raise DegenerateStateError("no non-empty prototype to assign against")
    mu = protos.mu
    f_norm = np.linalg.norm(features, axis=1)
    m_norm = np.linalg.norm(mu, axis=1)
    denom = np.outer(f_norm, m_norm)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom < 1e-12, 0.0, (features @ mu.T) / np.where(denom < 1e-12, 1.0, denom))
    dist = 1.0 - cos
    dist[:, ~usable] = np.inf
    if np.any(f_norm < 1e-12):
        logger.warning("%d zero-norm features assigned by tie-break", int(np.sum(f_norm < 1e-12)))
    return dist.argmin(axis=1)


def evaluate(layout, theta, dataset):
    """Fraction of samples whose argmax prediction matches the ground truth."""
    if dataset.labels is None:
        raise UnsupportedEvaluationError("dataset has no ground-truth labels")
    logits, _, _ = forward_pass(layout, theta, dataset.features)
    return float(np.mean(logits.argmax(axis=1) == dataset.labels))


def _batches(n, batch_size, order):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _mean_breakdown(parts):
    agg = losses.LossBreakdown()
    for name in ("kd", "mix", "im", "dt", "od", "wg", "sr", "cm", "self_ce", "total"):
        vals = [getattr(p, name) for p in parts if getattr(p, name) is not None]
        if vals:
            setattr(agg, name, float(np.mean(vals)))
    return agg


def _model_predictions(layout, theta, dataset):
    logits, features, _ = forward_pass(layout, theta, dataset.features)
    return PredictionMatrix(softmax_rows(logits), dataset.sample_ids), features


def _check_finite(bd, epoch, batch_index):
    for name, value in bd.to_dict().items():
        if name == "total" or value is None:
            continue
        if not math.isfinite(value):
            raise TrainingDivergenceError(
                f"non-finite loss at epoch {epoch}, batch {batch_index}, component {name}"
            )


def build_layout(cfg, input_dim, class_count):
    return LayerLayout((input_dim, *cfg.hidden_sizes, class_count), cfg.activation)


def _fuse_streams(cfg, yb, yc):
    if cfg.fixed_fusion_weight is not None:
        return fuse_fixed(yb, yc, cfg.fixed_fusion_weight)
    return fuse(yb, yc, cfg.gu_threshold)


def _refresh_fusion(cfg, store, yb, yc, epoch):
    fused, report = _fuse_streams(cfg, yb, yc)
    store.labels = fused
    store.report = report
    store.epoch_of_last_fusion = epoch
    return store, report


@dataclass
class RunResult:
    layout: LayerLayout
    theta: np.ndarray
    theta_stage_one: np.ndarray
    records: list
    store: PseudoLabelStore
    teacher_c: object
    initial_fused: PredictionMatrix


def run_stage_one(cfg, dataset, teacher_b, teacher_c, layout=None, theta=None):
    """Stage One: dual-teacher distillation with subnetwork rectification.

    Returns (theta, teacher_c, store, records, layout, initial_fused). The
    semantic teacher is copied before any prompt update, so callers can
    reuse their teacher objects across runs.
    """
    n = dataset.n_samples
    class_count = teacher_b.class_count
    if teacher_c.class_count != class_count:
        raise InvalidInputError("the two teachers disagree on the class count")
    if layout is None:
        layout = build_layout(cfg, dataset.dim, class_count)
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, shuffle_ss, mix_ss = ss.spawn(3)
    if theta is None:
        theta = init_weights(layout, init_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    mix_rng = np.random.default_rng(mix_ss)

    teacher_c = teacher_c.copy()
    mask = SubnetworkMask(layout, cfg.gamma)

    x = dataset.features
    ids = dataset.sample_ids
    yb = teacher_b.query(x, ids)
    yc = teacher_c.query(x, ids)
    fused, report = _fuse_streams(cfg, yb, yc)
    initial_fused = fused
    store = PseudoLabelStore(labels=fused, beta=cfg.beta, report=report, epoch_of_last_fusion=1)

    n_batches = math.ceil(n / cfg.batch_size)
    opt = SgdState(
        lr0=cfg.lr0,
        total_steps=cfg.stage_one_epochs * n_batches,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )

    records = []
    for epoch in range(1, cfg.stage_one_epochs + 1):
        fusion_event = report if epoch == 1 else None
        if cfg.fusion_schedule == "every-epoch" and epoch > 1:
            store, fusion_event = _refresh_fusion(
                cfg, store, yb, teacher_c.query(x, ids), epoch
            )
        order = shuffle_rng.permutation(n)
        parts = []
        for k, idx in enumerate(_batches(n, cfg.batch_size, order)):
            pairing, lam = (None, None)
            if cfg.use_mix:
                pairing, lam = losses.draw_mixup_randomness(mix_rng, len(idx))
            bd, grad = losses.stage_one_batch(
                layout,
                theta,
                mask,
                x[idx],
                store.labels.probs[idx],
                epsilon=cfg.epsilon,
                zeta=cfg.zeta,
                pairing=pairing,
                lam=lam,
                use_kd=cfg.use_kd,
                use_mix=cfg.use_mix and len(idx) >= 2,
                use_im=cfg.use_im,
                use_sr=cfg.use_sr,
                wg_form=cfg.wg_form,
            )
            _check_finite(bd, epoch, k)
            theta = sgd_step(opt, theta, grad, context=f"stage 1 epoch {epoch} batch {k}")
            parts.append(bd)

        yt, _ = _model_predictions(layout, theta, dataset)
        store = ema_refine(store, yt)

        if epoch % cfg.prompt_period == 0 and hasattr(teacher_c, "prompt_step"):
            cm_last = None
            for _ in range(cfg.prompt_steps):
                cm_last = teacher_c.prompt_step(x, yt)
            if parts and cm_last is not None:
                parts[-1].cm = cm_last
            if cfg.fusion_schedule == "on-prompt-refresh":
                store, fusion_event = _refresh_fusion(
                    cfg, store, yb, teacher_c.query(x, ids), epoch
                )

        record = MetricsRecord(
            epoch=epoch,
            stage=1,
            losses=_mean_breakdown(parts),
            fusion=fusion_event,
            target_accuracy=evaluate(layout, theta, dataset) if dataset.labels is not None else None,
            gu_of_target=global_uncertainty(yt),
        )
        records.append(record)

    return theta, teacher_c, store, records, layout, initial_fused


def run_stage_two(cfg, dataset, layout, theta):
    """Stage Two: prototype-based self-training. Returns (theta, records)."""
    n = dataset.n_samples
    ss = np.random.SeedSequence((cfg.seed, 2))
    shuffle_rng = np.random.default_rng(ss)
    n_batches = math.ceil(n / cfg.batch_size)
    epochs = cfg.total_epochs - cfg.stage_one_epochs
    opt = SgdState(
        lr0=cfg.lr0,
        total_steps=max(epochs * n_batches, 1),
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )
    x = dataset.features
    records = []
    for epoch in range(cfg.stage_one_epochs + 1, cfg.total_epochs + 1):
        yt, features = _model_predictions(layout, theta, dataset)
        protos = compute_prototypes(features, yt, mode=cfg.prototype_mode)
        labels_bar = assign_nearest_prototype(features, protos)
        parts = []
        if cfg.use_self:
            order = shuffle_rng.permutation(n)
            for k, idx in enumerate(_batches(n, cfg.batch_size, order)):
                value, grad = losses.ce_loss(layout, theta, x[idx], labels_bar[idx])
                bd = losses.LossBreakdown(self_ce=float(value), total=float(value))
                _check_finite(bd, epoch, k)
                theta = sgd_step(opt, theta, grad, context=f"stage 2 epoch {epoch} batch {k}")
                parts.append(bd)
        yt_end, _ = _model_predictions(layout, theta, dataset)
        records.append(
            MetricsRecord(
                epoch=epoch,
                stage=2,
                losses=_mean_breakdown(parts),
                fusion=None,
                target_accuracy=evaluate(layout, theta, dataset) if dataset.labels is not None else None,
                gu_of_target=global_uncertainty(yt_end),
            )
        )
    return theta, records


def run(cfg, dataset, teacher_b, teacher_c, stage_one_only=False):
    """Both stages end to end; returns a RunResult."""
    theta, teacher_c, store, records, layout, initial_fused = run_stage_one(
        cfg, dataset, teacher_b, teacher_c
    )
    theta_stage_one = theta.copy()
    if not stage_one_only:
        theta, records_two = run_stage_two(cfg, dataset, layout, theta)
        records = records + records_two
    return RunResult(
        layout=layout,
        theta=theta,
        theta_stage_one=theta_stage_one,
        records=records,
        store=store,
        teacher_c=teacher_c,
        initial_fused=initial_fused,
    )


ABLATABLE = ("kd", "mix", "im", "sr", "self")


def run_ablation_grid(cfg, dataset, teacher_b, teacher_c, switches=None, param=None, values=None):
    """One full run per configuration, shared seed; returns a list of row dicts.

    Either pass switches (loss names to disable one at a time, always
    preceded by the untouched configuration) or a config field name and the
    values to sweep it over.
    """
    variants = []
    if switches is not None:
        variants.append(("full", cfg))
        for name in switches:
            if name not in ABLATABLE:
                raise InvalidInputError(f"unknown ablation switch {name!r}")
            variants.append((f"no-{name}", replace(cfg, **{f"use_{name}": False})))
    elif param is not None:
        if values is None or len(values) == 0:
            raise InvalidInputError("a parameter sweep needs at least one value")
        for v in values:
            if isinstance(v, float) and not np.isfinite(v):
                raise InvalidInputError("sweep values must be finite")
            variants.append((f"{param}={v}", replace(cfg, **{param: v})))
    else:
        raise InvalidInputError("pass either switches or (param, values)")

    rows = []
    for label, variant in variants:
        result = run(variant, dataset, teacher_b, teacher_c)
        final = result.records[-1]
        stage_one_final = result.records[variant.stage_one_epochs - 1]
        rows.append(
            {
                "label": label,
                "target_accuracy": final.target_accuracy,
                "stage_one_accuracy": stage_one_final.target_accuracy,
                "gu_of_target": final.gu_of_target,
                "losses": final.losses.to_dict(),
                "stage_one_losses": stage_one_final.losses.to_dict(),
            }
        )
    return rows
