"""Dense float64 kernels with hand-written backward rules.

Arrays are plain ``numpy.ndarray`` objects of dtype float64.  Every op works
on the last axis (or last two for products) and broadcasts over any leading
batch axes, so the same code serves a single (text, video) pair and a padded
block of B x B pairs.

Backward functions recompute what they need from the forward inputs instead
of holding on to a tape; they return gradients with the shapes of the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import erf

from .errors import DegenerateInputError, DimensionError

LN_EPS = 1e-5

_SQRT_HALF = math.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_inner(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")


def matmul(a, b) -> np.ndarray:
    """Matrix product with a fixed ascending-index accumulation order.

    ``out[i, j] = ((0 + a[i,0] b[0,j]) + a[i,1] b[1,j]) + ...`` exactly as a
    naive triple loop would compute it, so results are bit-reproducible and
    independent of the BLAS build.  Leading axes broadcast.
    """
    a = as_f64(a)
    b = as_f64(b)
    _check_inner(a, b)
    shape = np.broadcast_shapes(a.shape[:-2], b.shape[:-2]) + (a.shape[-2], b.shape[-1])
    out = np.zeros(shape)
    for p in range(a.shape[-1]):
        out += a[..., :, p : p + 1] * b[..., p : p + 1, :]
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Undo broadcasting by summing ``g`` down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul_backward(dy, a, b) -> tuple[np.ndarray, np.ndarray]:
    dy = as_f64(dy)
    a = as_f64(a)
    b = as_f64(b)
    da = dy @ np.swapaxes(b, -1, -2)
    db = np.swapaxes(a, -1, -2) @ dy
    return _sum_to_shape(da, a.shape), _sum_to_shape(db, b.shape)


# -- linear ---------------------------------------------------------------


def linear(x, w, b=None) -> np.ndarray:
    """Row-vector affine map ``x @ w + b`` over the last axis of ``x``."""
    x = as_f64(x)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    y = x @ w
    if b is not None:
        y = y + b
    return y


def linear_backward(dy, x, w, bias: bool = True):
    """Return ``(dx, dw, db)``; ``db`` is None when the map has no bias."""
    dy = as_f64(dy)
    x = as_f64(x)
    dx = dy @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0) if bias else None
    return dx, dw, db


# -- layer norm -----------------------------------------------------------


@dataclass
class LayerNormParams:
    gain: np.ndarray
    bias: np.ndarray
    eps: float = LN_EPS

    def __post_init__(self):
        self.gain = as_f64(self.gain)
        self.bias = as_f64(self.bias)
        if not self.eps > 0:
            raise ValueError("layer norm epsilon must be positive")
        if self.gain.shape != self.bias.shape or self.gain.ndim != 1:
            raise DimensionError("layer norm gain and bias must be vectors of equal length")

    @classmethod
    def identity(cls, dim: int, eps: float = LN_EPS) -> "LayerNormParams":
        return cls(np.ones(dim), np.zeros(dim), eps)

    @property
    def dim(self) -> int:
        return self.gain.shape[0]


def _ln_stats(x: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    return xc, rstd


def layer_norm(x, p: LayerNormParams) -> np.ndarray:
    """Per-row standardisation (biased variance) followed by gain and bias."""
    x = as_f64(x)
    if x.shape[-1] != p.dim:
        raise DimensionError(f"layer_norm: last dim {x.shape[-1]} != {p.dim}")
    xc, rstd = _ln_stats(x, p.eps)
    return xc * rstd * p.gain + p.bias


def layer_norm_backward(dy, x, p: LayerNormParams):
    """Return ``(dx, dgain, dbias)``."""
    dy = as_f64(dy)
    x = as_f64(x)
    xc, rstd = _ln_stats(x, p.eps)
    xhat = xc * rstd
    c = x.shape[-1]
    dbias = dy.reshape(-1, c).sum(axis=0)
    dgain = (dy * xhat).reshape(-1, c).sum(axis=0)
    dxhat = dy * p.gain
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


# -- softmax / max --------------------------------------------------------


def softmax(x, mask=None) -> np.ndarray:
    """Max-shifted softmax over the last axis.

    ``mask`` (bool, broadcastable to ``x``) marks valid entries; masked
    entries get probability 0.  Every row needs at least one valid entry.
    """
    x = as_f64(x)
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dy, y) -> np.ndarray:
    """Gradient w.r.t. the logits given the softmax output ``y``."""
    dy = as_f64(dy)
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


def row_max(x, mask=None) -> tuple[np.ndarray, np.ndarray]:
    """Row maxima over the last axis and their argmax (lowest index on ties)."""
    x = as_f64(x)
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    idx = np.argmax(x, axis=-1)
    return np.take_along_axis(x, idx[..., None], axis=-1)[..., 0], idx


def row_max_backward(dy, idx, n: int) -> np.ndarray:
    """Route ``dy`` to the selected column only (subgradient of max)."""
    dy = as_f64(dy)
    dx = np.zeros(dy.shape + (n,))
    np.put_along_axis(dx, idx[..., None], dy[..., None], axis=-1)
    return dx


# -- feed-forward ---------------------------------------------------------


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _SQRT_HALF))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x * _SQRT_HALF)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    return (x > 0).astype(np.float64)


_ACTIVATIONS = {"gelu": (gelu, gelu_grad), "relu": (relu, relu_grad)}


@dataclass
class FeedForwardParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation: str = "gelu"

    def __post_init__(self):
        self.w1, self.b1, self.w2, self.b2 = map(as_f64, (self.w1, self.b1, self.w2, self.b2))
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        c, h = self.w1.shape
        if h < 1 or self.b1.shape != (h,) or self.w2.shape != (h, c) or self.b2.shape != (c,):
            raise DimensionError("inconsistent feed-forward parameter shapes")

    @property
    def dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]


def feed_forward(x, p: FeedForwardParams) -> np.ndarray:
    act, _ = _ACTIVATIONS[p.activation]
    return linear(act(linear(x, p.w1, p.b1)), p.w2, p.b2)


def feed_forward_backward(dy, x, p: FeedForwardParams):
    """Return ``(dx, grads)`` with grads keyed ``w1, b1, w2, b2``."""
    act, act_grad = _ACTIVATIONS[p.activation]
    h = linear(x, p.w1, p.b1)
    g = act(h)
    dg, dw2, db2 = linear_backward(dy, g, p.w2)
    dh = dg * act_grad(h)
    dx, dw1, db1 = linear_backward(dh, x, p.w1)
    return dx, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


# -- cosine ---------------------------------------------------------------


def _norms(a, b, what: str = "cosine"):
    na = np.sqrt((a * a).sum(axis=-1))
    nb = np.sqrt((b * b).sum(axis=-1))
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateInputError(f"{what}: zero-norm input")
    return na, nb


def cosine(a, b) -> np.ndarray:
    """Cosine similarity over the last axis; scalar for vector inputs."""
    a = as_f64(a)
    b = as_f64(b)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"cosine: widths differ {a.shape} vs {b.shape}")
    na, nb = _norms(a, b)
    s = (a * b).sum(axis=-1) / (na * nb)
    return np.clip(s, -1.0, 1.0)


def cosine_backward(ds, a, b) -> tuple[np.ndarray, np.ndarray]:
    a = as_f64(a)
    b = as_f64(b)
    ds = as_f64(ds)[..., None]
    na, nb = _norms(a, b)
    na = na[..., None]
    nb = nb[..., None]
    s = (a * b).sum(axis=-1, keepdims=True) / (na * nb)
    da = ds * (b / (na * nb) - s * a / (na * na))
    db = ds * (a / (na * nb) - s * b / (nb * nb))
    return _sum_to_shape(da, a.shape), _sum_to_shape(db, b.shape)


def dot(a, b) -> np.ndarray:
    return (as_f64(a) * as_f64(b)).sum(axis=-1)


def dot_backward(ds, a, b):
    ds = as_f64(ds)[..., None]
    return _sum_to_shape(ds * b, np.shape(a)), _sum_to_shape(ds * a, np.shape(b))
