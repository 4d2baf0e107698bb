"""Trainable dense target network: feature extractor plus linear classifier.

Parameters live in one flat float64 vector (per layer: weight matrix then
bias, contiguous). The forward and backward passes are written against the
dual-aware helpers in :mod:`dualdistill.duals`, so the same code produces
plain gradients on arrays and exact Hessian-vector products when the
parameter vector is seeded as a Dual (forward-over-reverse).

A subnetwork is a structural slice of the same parameters: each hidden
layer keeps its first ceil(gamma * width) units (rows of its weight matrix
and the matching columns of the next layer). Input and output widths are
never masked, so the subnetwork's forward pass is well defined and its
gradients land in coordinates shared with the full network.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import duals as dm
from .errors import InvalidInputError, TrainingDivergenceError

ACTIVATIONS = ("relu", "tanh")

CHECKPOINT_MAGIC = "dualdistill-weights"


@dataclass(frozen=True)
class LayerLayout:
    """Widths [d, h1, ..., hL, C] and one activation name per hidden layer."""

    sizes: tuple
    activations: tuple

    def __init__(self, sizes, activations="relu"):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 3:
            raise InvalidInputError("layout needs at least one hidden layer")
        if any(s < 1 for s in sizes):
            raise InvalidInputError(f"all layer widths must be >= 1, got {sizes}")
        n_hidden = len(sizes) - 2
        if isinstance(activations, str):
            activations = (activations,) * n_hidden
        activations = tuple(activations)
        if len(activations) != n_hidden:
            raise InvalidInputError(f"{len(activations)} activations for {n_hidden} hidden layers")
        for a in activations:
            if a not in ACTIVATIONS:
                raise InvalidInputError(f"unknown activation {a!r}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "activations", activations)

    @property
    def input_dim(self):
        return self.sizes[0]

    @property
    def class_count(self):
        return self.sizes[-1]

    @property
    def feature_dim(self):
        return self.sizes[-2]

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    @property
    def param_count(self):
        return sum(o * i + o for i, o in zip(self.sizes[:-1], self.sizes[1:]))

    def layer_shapes(self):
        return [(o, i) for i, o in zip(self.sizes[:-1], self.sizes[1:])]


@dataclass(frozen=True)
class SubnetworkMask:
    """Per-boundary kept widths for the gamma-subnetwork; inputs and outputs stay full."""

    gamma: float
    kept: tuple

    def __init__(self, layout, gamma):
        if not 0.0 < gamma <= 1.0:
            raise InvalidInputError(f"gamma must be in (0, 1], got {gamma}")
        kept = [layout.input_dim]
        for h in layout.sizes[1:-1]:
            kept.append(int(math.ceil(gamma * h)))
        kept.append(layout.class_count)
        object.__setattr__(self, "gamma", float(gamma))
        object.__setattr__(self, "kept", tuple(kept))


def full_widths(layout):
    return tuple(layout.sizes)


def init_weights(layout, seed):
    """Fan-in-scaled uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    parts = []
    for out, inp in layout.layer_shapes():
        bound = 1.0 / math.sqrt(inp)
        parts.append(rng.uniform(-bound, bound, size=out * inp))
        parts.append(np.zeros(out))
    return np.concatenate(parts)


def unpack(layout, theta):
    """Per-layer (W, b) views/slices of the flat parameter vector (Dual-aware)."""
    if dm.value(theta).shape != (layout.param_count,):
        raise InvalidInputError(
            f"parameter vector has length {dm.value(theta).shape}, expected ({layout.param_count},)"
        )
    params = []
    off = 0
    for out, inp in layout.layer_shapes():
        w = theta[off : off + out * inp].reshape(out, inp)
        off += out * inp
        b = theta[off : off + out]
        off += out
        params.append((w, b))
    return params


def _activate(name, z):
    if name == "relu":
        return dm.relu(z)
    return dm.tanh(z)


def forward_pass(layout, theta, x, kept=None):
    """Batch forward through the (possibly masked) network.

    Returns (logits, features, cache); cache holds the per-layer inputs and
    pre-activations needed by backward_pass. x is (n, d); kept is a tuple of
    per-boundary widths (defaults to the full widths).
    """
    if kept is None:
        kept = full_widths(layout)
    xv = dm.value(x)
    if xv.ndim != 2 or xv.shape[1] != layout.input_dim:
        raise InvalidInputError(f"batch shape {xv.shape} does not match input dim {layout.input_dim}")
    if not np.all(np.isfinite(xv)):
        raise InvalidInputError("batch has non-finite entries")
    params = unpack(layout, theta)
    a = x
    acts = [a]
    zs = []
    n_layers = layout.n_layers
    for l, (w, b) in enumerate(params):
        w_s = w[: kept[l + 1], : kept[l]]
        b_s = b[: kept[l + 1]]
        z = a @ w_s.T + b_s
        zs.append(z)
        if l < n_layers - 1:
            a = _activate(layout.activations[l], z)
            acts.append(a)
    logits = zs[-1]
    features = acts[-1]
    return logits, features, (acts, zs, kept)


def backward_pass(layout, theta, cache, dlogits):
    """Exact gradient of a scalar loss w.r.t. theta given its gradient on the logits.

    Coordinates outside the cached mask's kept ranges are zero. Works on
    Duals, in which case the returned gradient carries an exact tangent.
    """
    acts, zs, kept = cache
    params = unpack(layout, theta)
    shapes = layout.layer_shapes()
    n_layers = layout.n_layers
    grads = [None] * n_layers
    dz = dlogits
    for l in reversed(range(n_layers)):
        w, _ = params[l]
        out, inp = shapes[l]
        w_s = w[: kept[l + 1], : kept[l]]
        dw_s = dz.T @ acts[l]
        db_s = dm.asum(dz, axis=0)
        grads[l] = (
            dm.embed_block(dw_s, (out, inp), kept[l + 1], kept[l]).ravel(),
            dm.embed_vector(db_s, out, kept[l + 1]),
        )
        if l > 0:
            da = dz @ w_s
            if layout.activations[l - 1] == "relu":
                dz = da * (dm.value(zs[l - 1]) > 0).astype(float)
            else:
                t = acts[l]  # tanh output of layer l-1
                dz = da * (1.0 - t * t)
    flat_parts = []
    for gw, gb in grads:
        flat_parts.append(gw)
        flat_parts.append(gb)
    return dm.concat(flat_parts)


def forward_full(layout, theta, x):
    """Logits and features of the full network; accepts one sample or a batch."""
    x = np.asarray(x, dtype=float) if not isinstance(x, dm.Dual) else x
    single = dm.value(x).ndim == 1
    xb = x.reshape(1, -1) if single else x
    logits, features, _ = forward_pass(layout, theta, xb)
    if single:
        return logits[0], features[0]
    return logits, features


def forward_sub(layout, theta, mask, x):
    """Logits and features of the gamma-subnetwork; same contract as forward_full."""
    x = np.asarray(x, dtype=float) if not isinstance(x, dm.Dual) else x
    single = dm.value(x).ndim == 1
    xb = x.reshape(1, -1) if single else x
    logits, features, _ = forward_pass(layout, theta, xb, kept=mask.kept)
    if single:
        return logits[0], features[0]
    return logits, features


def hvp(layout, theta, v, grad_fn):
    """Exact Hessian-vector product via forward-over-reverse differentiation.

    grad_fn maps a parameter vector to the exact gradient of a scalar loss
    and must be written with the dual-aware ops in dualdistill.duals (every
    gradient function in this package qualifies). Seeding theta with tangent
    v and reading the gradient's tangent yields H @ v with no finite
    differences involved.
    """
    theta = np.asarray(theta, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape != theta.shape:
        raise InvalidInputError(f"direction shape {v.shape} != parameter shape {theta.shape}")
    g = grad_fn(dm.Dual(theta, v))
    return dm.tangent(g)


@dataclass
class SgdState:
    """Momentum SGD with decoupled-style weight decay added to the gradient.

    The effective step size decays as lr0 * (1 + 10 p)^(-0.75) with p the
    fraction of total steps already completed.
    """

    lr0: float
    total_steps: int
    momentum: float = 0.9
    weight_decay: float = 1e-3
    steps_done: int = 0
    velocity: np.ndarray = None

    def __post_init__(self):
        if self.lr0 <= 0:
            raise InvalidInputError(f"lr0 must be positive, got {self.lr0}")
        if self.total_steps < 1:
            raise InvalidInputError("total_steps must be >= 1")

    def learning_rate(self):
        p = min(self.steps_done / self.total_steps, 1.0)
        return self.lr0 * (1.0 + 10.0 * p) ** (-0.75)


def sgd_step(state, theta, grad, context=""):
    """One momentum-SGD update; returns the new parameter vector.

    Raises TrainingDivergenceError on non-finite gradients, naming the
    caller-supplied context in the diagnostic.
    """
    grad = np.asarray(grad, dtype=float)
    if grad.shape != theta.shape:
        raise InvalidInputError(f"gradient shape {grad.shape} != parameter shape {theta.shape}")
    if not np.all(np.isfinite(grad)):
        raise TrainingDivergenceError(f"non-finite gradient{': ' + context if context else ''}")
    if state.velocity is None:
        state.velocity = np.zeros_like(theta)
    lr = state.learning_rate()
    state.velocity = state.momentum * state.velocity + grad + state.weight_decay * theta
    state.steps_done += 1
    return theta - lr * state.velocity


def save_checkpoint(path, layout, theta):
    """Plain-text header line then the raw little-endian float64 parameters."""
    header = "{} sizes={} activations={}\n".format(
        CHECKPOINT_MAGIC,
        ",".join(str(s) for s in layout.sizes),
        ",".join(layout.activations),
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.asarray(theta, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        raw = fh.read()
    fields = header.split()
    if len(fields) != 3 or fields[0] != CHECKPOINT_MAGIC:
        raise InvalidInputError(f"not a weight checkpoint: {path}")
    sizes = tuple(int(s) for s in fields[1].removeprefix("sizes=").split(","))
    activations = tuple(fields[2].removeprefix("activations=").split(","))
    layout = LayerLayout(sizes, activations)
    theta = np.frombuffer(raw, dtype="<f8").astype(float)
    if theta.shape != (layout.param_count,):
        raise InvalidInputError(
            f"checkpoint holds {theta.size} parameters, layout expects {layout.param_count}"
        )
    return layout, theta
