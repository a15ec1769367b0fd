"""Dense linear-algebra and signal primitives.

Everything here works on float64 numpy arrays. Convolutions are "same"
length, stride 1, zero padded, with odd kernel sizes; they are computed as
cross-correlations (``out[i] = sum_j k[j] * xpad[i + j]``), which is the
convention of every deep learning framework.

Multi-channel convolution weights are stored as a 2-D matrix of shape
``(P * in_channels, out_channels)``; row ``i * P + p`` holds tap ``p`` of
input channel ``i``. With one input channel this is exactly
``T = [t_1 ... t_M]`` with one filter per column.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import SingularTransformError

#: singular values at or below this are treated as exact rank loss
SV_TOL = 1e-12
#: floor applied to singular values by the non-strict (training) log-det
SV_CLAMP = 1e-8

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


class Activation(str, enum.Enum):
    IDENTITY = "identity"
    NONNEG_PROX = "relu"
    SELU = "selu"


@dataclass(frozen=True)
class ConvSpec:
    """Shape of one 1-D convolution layer (stride 1, length preserving)."""

    in_channels: int
    out_channels: int
    kernel_size: int

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def stride(self) -> int:
        return 1

    @property
    def padding(self) -> int:
        return self.kernel_size // 2

    @property
    def weight_shape(self) -> tuple[int, int]:
        return (self.kernel_size * self.in_channels, self.out_channels)


# --------------------------------------------------------------------------
# convolution


def conv1d(kernel, signal, padding=None):
    """Zero-padded, length-preserving 1-D cross-correlation of one signal."""
    k = np.asarray(kernel, dtype=np.float64).ravel()
    s = np.asarray(signal, dtype=np.float64).ravel()
    P = k.size
    if P % 2 == 0:
        raise ValueError(f"kernel length must be odd, got {P}")
    if padding is None:
        padding = P // 2
    if padding != P // 2:
        raise ValueError(f"padding must be {P // 2} for kernel length {P}, got {padding}")
    if P > s.size + 2 * padding:
        raise ValueError(f"kernel length {P} exceeds padded signal length {s.size + 2 * padding}")
    padded = np.pad(s, padding)
    return sliding_window_view(padded, P) @ k


def _im2col(x, P):
    """(K, Cin, D) -> (K*D, Cin*P) patch matrix for a same-length convolution."""
    K, Cin, D = x.shape
    pad = P // 2
    xpad = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xpad, P, axis=2)  # (K, Cin, D, P)
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(K * D, Cin * P)


def conv_forward(x, W, kernel_size):
    """Multi-channel convolution.

    Parameters
    ----------
    x : ndarray, shape (K, Cin, D)
    W : ndarray, shape (Cin * kernel_size, M)
    kernel_size : int

    Returns
    -------
    out : ndarray, shape (K, M, D)
    cols : ndarray
        Patch matrix, reused by :func:`conv_backward`.
    """
    K, Cin, D = x.shape
    if W.shape[0] != Cin * kernel_size:
        raise ValueError(
            f"weight has {W.shape[0]} rows, expected {Cin} * {kernel_size} = {Cin * kernel_size}"
        )
    if kernel_size > D + 2 * (kernel_size // 2):
        raise ValueError("kernel longer than padded input")
    cols = _im2col(x, kernel_size)
    out = (cols @ W).reshape(K, D, W.shape[1]).transpose(0, 2, 1)
    return out, cols


def conv_backward(dout, cols, W, x_shape, kernel_size):
    """Backpropagate through :func:`conv_forward`; returns ``(dx, dW)``."""
    K, Cin, D = x_shape
    M = W.shape[1]
    P = kernel_size
    pad = P // 2
    d2 = dout.transpose(0, 2, 1).reshape(K * D, M)
    dW = cols.T @ d2
    dcols = (d2 @ W.T).reshape(K, D, Cin, P)
    dxpad = np.zeros((K, Cin, D + 2 * pad))
    for p in range(P):
        dxpad[:, :, p : p + D] += dcols[:, :, :, p].transpose(0, 2, 1)
    return dxpad[:, :, pad : pad + D], dW


def conv_bank(T, S):
    """Apply every filter (column of ``T``) to every sample (row of ``S``).

    Row ``k`` of the result is ``[t_1 * s_k | ... | t_M * s_k]``.
    """
    T = np.asarray(T, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if T.ndim != 2 or S.ndim != 2:
        raise ValueError("conv_bank expects 2-D filter and sample matrices")
    P, M = T.shape
    if P % 2 == 0:
        raise ValueError(f"filter length must be odd, got {P}")
    K, D = S.shape
    out, _ = conv_forward(S[:, None, :], T, P)
    return out.reshape(K, M * D)


# --------------------------------------------------------------------------
# pooling


def maxpool1d(x):
    """Max-pool a vector with kernel 2, stride 2; a trailing odd element is dropped."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("maxpool1d needs at least 2 elements")
    out, _ = maxpool_forward(x[None, None, :])
    return out[0, 0]


def maxpool_forward(x):
    """Pool the last axis of an array of shape (K, M, D); returns (out, argmax)."""
    D2 = x.shape[-1] // 2
    if D2 < 1:
        raise ValueError("pooling input shorter than 2")
    pairs = x[..., : 2 * D2].reshape(*x.shape[:-1], D2, 2)
    idx = np.argmax(pairs, axis=-1)
    return np.take_along_axis(pairs, idx[..., None], axis=-1)[..., 0], idx


def maxpool_backward(dout, idx, in_len):
    D2 = dout.shape[-1]
    dpairs = np.zeros((*dout.shape, 2))
    np.put_along_axis(dpairs, idx[..., None], dout[..., None], axis=-1)
    dx = np.zeros((*dout.shape[:-1], in_len))
    dx[..., : 2 * D2] = dpairs.reshape(*dout.shape[:-1], 2 * D2)
    return dx


# --------------------------------------------------------------------------
# log-det regularizer


def _singular_values(T, strict, where):
    s = np.linalg.svd(np.asarray(T, dtype=np.float64), compute_uv=False)
    if strict and (s.size == 0 or s.min() <= SV_TOL):
        raise SingularTransformError(s.min() if s.size else 0.0, SV_TOL, where)
    return s


def logdet_rect(T, strict=True, where=None):
    """Sum of the logs of all ``min(rows, cols)`` singular values of ``T``.

    With ``strict=True`` a singular value ``<= SV_TOL`` raises
    :class:`SingularTransformError`; otherwise singular values are floored at
    ``SV_CLAMP`` so the value stays finite.
    """
    s = _singular_values(T, strict, where)
    if not strict:
        s = np.maximum(s, SV_CLAMP)
    return float(np.sum(np.log(s)))


def logdet_grad(T, strict=True, where=None):
    """Gradient of :func:`logdet_rect`: ``U diag(1/s) V^T`` (transposed pseudo-inverse)."""
    T = np.asarray(T, dtype=np.float64)
    U, s, Vt = np.linalg.svd(T, full_matrices=False)
    if strict and (s.size == 0 or s.min() <= SV_TOL):
        raise SingularTransformError(s.min() if s.size else 0.0, SV_TOL, where)
    inv = 1.0 / np.maximum(s, SV_CLAMP)
    return (U * inv) @ Vt


def frobenius_sq(T):
    T = np.asarray(T, dtype=np.float64)
    return float(np.sum(T * T))


# --------------------------------------------------------------------------
# activations


def nonneg_prox(x):
    """Proximity operator of the non-negative orthant indicator, i.e. ReLU."""
    return np.maximum(x, 0.0)


def activate(kind, x):
    kind = Activation(kind)
    x = np.asarray(x, dtype=np.float64)
    if kind is Activation.IDENTITY:
        return x.copy()
    if kind is Activation.NONNEG_PROX:
        return nonneg_prox(x)
    return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def activation_grad(kind, x):
    """Element-wise derivative of :func:`activate` at ``x`` (ReLU'(0) := 0)."""
    kind = Activation(kind)
    x = np.asarray(x, dtype=np.float64)
    if kind is Activation.IDENTITY:
        return np.ones_like(x)
    if kind is Activation.NONNEG_PROX:
        return (x > 0).astype(np.float64)
    return SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))
