"""Forward-mode dual numbers over numpy arrays.

A Dual carries a value and a tangent of the same shape. Running a numpy
computation on Duals propagates directional derivatives exactly, so running
a hand-written *gradient* computation on Duals yields an exact
Hessian-vector product (forward-over-reverse differentiation).

Only the operations needed by the network and loss code are implemented.
Generic numeric code in this package is written against these helpers so it
runs unchanged on plain arrays (fast path) and on Duals (tangent path).
"""

import numpy as np


class Dual:
    __slots__ = ("val", "dot")

    # make numpy defer to our __radd__ etc. instead of building object arrays
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, val, dot=None):
        self.val = np.asarray(val, dtype=float)
        if dot is None:
            self.dot = np.zeros_like(self.val)
        else:
            self.dot = np.asarray(dot, dtype=float)
            if self.dot.shape != self.val.shape:
                raise ValueError(f"tangent shape {self.dot.shape} != value shape {self.val.shape}")

    # -- structure ---------------------------------------------------------
    @property
    def shape(self):
        return self.val.shape

    @property
    def T(self):
        return Dual(self.val.T, self.dot.T)

    def reshape(self, *shape):
        return Dual(self.val.reshape(*shape), self.dot.reshape(*shape))

    def ravel(self):
        return Dual(self.val.ravel(), self.dot.ravel())

    def __getitem__(self, idx):
        return Dual(self.val[idx], self.dot[idx])

    def __repr__(self):
        return f"Dual(val={self.val!r}, dot={self.dot!r})"

    # -- arithmetic --------------------------------------------------------
    def __neg__(self):
        return Dual(-self.val, -self.dot)

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.dot + other.dot)
        val = self.val + other
        dot = self.dot if val.shape == self.dot.shape else np.broadcast_to(self.dot, val.shape).copy()
        return Dual(val, dot)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.dot - other.dot)
        val = self.val - other
        dot = self.dot if val.shape == self.dot.shape else np.broadcast_to(self.dot, val.shape).copy()
        return Dual(val, dot)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.dot * other.val + self.val * other.dot)
        return Dual(self.val * other, self.dot * other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(self.val * inv, self.dot * inv - self.val * other.dot * inv * inv)
        return Dual(self.val / other, self.dot / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        return Dual(other * inv, -other * self.dot * inv * inv)

    def __matmul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val @ other.val, self.dot @ other.val + self.val @ other.dot)
        return Dual(self.val @ other, self.dot @ other)

    def __rmatmul__(self, other):
        return Dual(other @ self.val, other @ self.dot)

    def __pow__(self, k):
        if isinstance(k, Dual):
            raise TypeError("dual exponents are not supported")
        return Dual(self.val**k, k * self.val ** (k - 1) * self.dot)


# -- type-generic helpers: accept Dual or ndarray --------------------------


def value(x):
    """Underlying numeric value of x (detach for Duals)."""
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def tangent(x):
    """Tangent of x; zeros for plain arrays."""
    if isinstance(x, Dual):
        return x.dot
    return np.zeros_like(np.asarray(x, dtype=float))


def exp(x):
    if isinstance(x, Dual):
        e = np.exp(x.val)
        return Dual(e, e * x.dot)
    return np.exp(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(np.log(x.val), x.dot / x.val)
    return np.log(x)


def tanh(x):
    if isinstance(x, Dual):
        t = np.tanh(x.val)
        return Dual(t, (1.0 - t * t) * x.dot)
    return np.tanh(x)


def relu(x):
    # subgradient 0 at the kink, for both value and tangent paths
    if isinstance(x, Dual):
        mask = x.val > 0
        return Dual(np.where(mask, x.val, 0.0), np.where(mask, x.dot, 0.0))
    return np.maximum(x, 0.0)


def clamp_min(x, floor):
    """max(x, floor) with subgradient 0 in the clamped region."""
    if isinstance(x, Dual):
        mask = x.val > floor
        return Dual(np.where(mask, x.val, floor), np.where(mask, x.dot, 0.0))
    return np.maximum(x, floor)


def asum(x, axis=None, keepdims=False):
    if isinstance(x, Dual):
        return Dual(x.val.sum(axis=axis, keepdims=keepdims), x.dot.sum(axis=axis, keepdims=keepdims))
    return np.asarray(x).sum(axis=axis, keepdims=keepdims)


def amean(x, axis=None, keepdims=False):
    if isinstance(x, Dual):
        return Dual(x.val.mean(axis=axis, keepdims=keepdims), x.dot.mean(axis=axis, keepdims=keepdims))
    return np.asarray(x).mean(axis=axis, keepdims=keepdims)


def concat(parts):
    if any(isinstance(p, Dual) for p in parts):
        vals = np.concatenate([value(p) for p in parts])
        dots = np.concatenate([tangent(p) for p in parts])
        return Dual(vals, dots)
    return np.concatenate(parts)


def zeros_like_flat(n, template):
    """Flat zero vector matching the (Dual or ndarray) flavor of template."""
    if isinstance(template, Dual):
        return Dual(np.zeros(n), np.zeros(n))
    return np.zeros(n)


def embed_block(block, full_shape, rows, cols):
    """Place block into the top-left rows x cols corner of a zero matrix."""
    if isinstance(block, Dual):
        v = np.zeros(full_shape)
        d = np.zeros(full_shape)
        v[:rows, :cols] = block.val
        d[:rows, :cols] = block.dot
        return Dual(v, d)
    out = np.zeros(full_shape)
    out[:rows, :cols] = block
    return out


def embed_vector(vec, full_len, count):
    """Place vec into the first count slots of a zero vector."""
    if isinstance(vec, Dual):
        v = np.zeros(full_len)
        d = np.zeros(full_len)
        v[:count] = vec.val
        d[:count] = vec.dot
        return Dual(v, d)
    out = np.zeros(full_len)
    out[:count] = vec
    return out


def softmax_rows(logits):
    """Row-wise stable softmax of an (n, C) logit array; Dual-aware.

    The row max is subtracted as a detached constant: softmax is invariant
    to it, so detaching changes neither values nor derivatives.
    """
    shift = value(logits).max(axis=1, keepdims=True)
    e = exp(logits - shift)
    return e / asum(e, axis=1, keepdims=True)
