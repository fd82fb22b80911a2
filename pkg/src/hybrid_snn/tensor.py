"""Dense tensor primitives: forward passes and their vector-Jacobian products.

Tensors are plain C-contiguous :class:`numpy.ndarray` objects. The working
precision is a process-wide switch: float32 for training and simulation,
float64 for gradient checks (see :func:`precision`).

No op takes a bias. Pooling is average pooling with stride equal to the
kernel and no padding.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, InputError, NumericError, ShapeError

_DTYPE = np.dtype(np.float32)


def get_dtype() -> np.dtype:
    return _DTYPE


def set_precision(bits: int) -> None:
    """Set the working precision to 32 or 64 bits."""
    global _DTYPE
    if bits == 32:
        _DTYPE = np.dtype(np.float32)
    elif bits == 64:
        _DTYPE = np.dtype(np.float64)
    else:
        raise ConfigError(f"precision must be 32 or 64 bits, got {bits}")


@contextlib.contextmanager
def precision(bits: int):
    """Temporarily switch the working precision."""
    previous = 64 if _DTYPE == np.float64 else 32
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(previous)


def asarray(x) -> np.ndarray:
    """Convert to a contiguous array of the working dtype."""
    return np.ascontiguousarray(x, dtype=_DTYPE)


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        bad = int(np.count_nonzero(~np.isfinite(x)))
        raise NumericError(f"{bad} non-finite value(s) in {where}")
    return x


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    in_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigError(f"invalid convolution geometry {self}")
        if self.out_channels < 1 or self.in_channels < 1:
            raise ConfigError(f"channel counts must be positive: {self}")

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        """Output spatial extent; raises unless the stride divides exactly."""
        out = []
        for extent in (h, w):
            span = extent + 2 * self.padding - self.kernel
            if span < 0 or span % self.stride:
                raise ConfigError(
                    f"convolution {self} does not tile input extent {extent} exactly")
            out.append(span // self.stride + 1)
        return out[0], out[1]

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)


# -- linear ------------------------------------------------------------------

def linear_fwd(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``y[b, i] = sum_j W[i, j] x[b, j]``."""
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {W.shape}")
    return check_finite(x @ W.T, "linear output")


def linear_vjp(x: np.ndarray, W: np.ndarray, g_out: np.ndarray):
    """Return ``(g_x, g_W)``."""
    expected = (x.shape[0], W.shape[0])
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {W.shape}")
    if g_out.shape != expected:
        raise ShapeError(f"linear: cotangent {g_out.shape} != output shape {expected}")
    return g_out @ W, g_out.T @ x


# -- convolution -------------------------------------------------------------

def _conv_check(x: np.ndarray, spec: ConvSpec, W: np.ndarray):
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"conv2d: input {x.shape} does not match {spec}")
    if W.shape != spec.weight_shape:
        raise ShapeError(f"conv2d: weight {W.shape} != expected {spec.weight_shape}")
    return spec.output_hw(x.shape[2], x.shape[3])


def conv2d_fwd(x: np.ndarray, spec: ConvSpec, W: np.ndarray) -> np.ndarray:
    """Cross-correlation with zero padding, NCHW layout."""
    ho, wo = _conv_check(x, spec, W)
    cols = _kernels.im2col(x, spec.kernel, spec.stride, spec.padding)
    out = W.reshape(spec.out_channels, -1) @ cols
    out = out.reshape(spec.out_channels, x.shape[0], ho, wo).transpose(1, 0, 2, 3)
    return check_finite(np.ascontiguousarray(out), "conv2d output")


def conv2d_vjp(x: np.ndarray, spec: ConvSpec, W: np.ndarray, g_out: np.ndarray,
               need_input_grad: bool = True):
    """Return ``(g_x, g_W)``; ``g_x`` is None when ``need_input_grad`` is false."""
    ho, wo = _conv_check(x, spec, W)
    expected = (x.shape[0], spec.out_channels, ho, wo)
    if g_out.shape != expected:
        raise ShapeError(f"conv2d: cotangent {g_out.shape} != output shape {expected}")
    g2 = np.ascontiguousarray(g_out.transpose(1, 0, 2, 3)).reshape(spec.out_channels, -1)
    cols = _kernels.im2col(x, spec.kernel, spec.stride, spec.padding)
    g_W = (g2 @ cols.T).reshape(spec.weight_shape)
    if not need_input_grad:
        return None, g_W
    g_cols = W.reshape(spec.out_channels, -1).T @ g2
    g_x = _kernels.col2im(g_cols, x.shape, spec.kernel, spec.stride, spec.padding)
    return g_x, g_W


# -- pooling -----------------------------------------------------------------

def _pool_shape(shape, k):
    if k < 1:
        raise ConfigError(f"pool kernel must be >= 1, got {k}")
    if len(shape) != 4:
        raise ShapeError(f"avgpool expects NCHW input, got shape {shape}")
    n, c, h, w = shape
    if h % k or w % k:
        raise ConfigError(f"avgpool kernel {k} does not divide spatial extent {h}x{w}")
    return n, c, h // k, w // k


def avgpool_fwd(x: np.ndarray, k: int) -> np.ndarray:
    _pool_shape(x.shape, k)
    return _kernels.avgpool(x, k)


def avgpool_vjp(g_out: np.ndarray, k: int) -> np.ndarray:
    if k < 1:
        raise ConfigError(f"pool kernel must be >= 1, got {k}")
    if g_out.ndim != 4:
        raise ShapeError(f"avgpool expects an NCHW cotangent, got shape {g_out.shape}")
    return _kernels.avgpool_backward(g_out, k)


# -- activations and loss ----------------------------------------------------

def relu_fwd(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, x.dtype.type(0))


def relu_vjp(x: np.ndarray, g_out: np.ndarray) -> np.ndarray:
    if x.shape != g_out.shape:
        raise ShapeError(f"relu: cotangent {g_out.shape} != input {x.shape}")
    return np.where(x > 0, g_out, g_out.dtype.type(0))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, target):
    """Mean cross-entropy over the batch and its gradient ``(p - y) / batch``."""
    logits = np.asarray(logits)
    target = np.asarray(target, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"logits must be [batch, N>=2], got {logits.shape}")
    if target.shape != (logits.shape[0],):
        raise ShapeError(f"targets {target.shape} do not match batch {logits.shape[0]}")
    n_cls = logits.shape[1]
    if target.size and (target.min() < 0 or target.max() >= n_cls):
        raise InputError(f"target class outside [0, {n_cls})")
    check_finite(logits, "logits")
    batch = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(batch)
    loss = float(np.mean(log_norm - z[rows, target]))
    p = np.exp(z - log_norm[:, None])
    g = p
    g[rows, target] -= 1
    g /= batch
    return loss, g
