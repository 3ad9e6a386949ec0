"""Dense-matrix and image-batch kernels.

All arrays are float64 and batch-major: a batch of feature vectors is an
``(batch, features)`` array and a batch of images is ``(batch, channels,
height, width)``. Weight matrices multiply from the right, ``Z = X @ W + b``,
so a weight matrix has ``fan_in`` rows.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from archgrow.errors import InvalidArgumentError, NumericError, ShapeError

KERNEL = 3


class Activation(str, Enum):
    RELU = "relu"
    SOFTMAX = "softmax"
    LINEAR = "linear"


class InitScheme(str, Enum):
    RANDOM = "random"
    ZERO = "zero"
    IDENTITY = "identity"


def quasi_identity_index(rows: int, cols: int) -> np.ndarray:
    """Source index for each output position of a rows -> cols resize.

    ``x[..., quasi_identity_index(r, c)]`` equals ``x @ quasi_identity(r, c)``.
    """
    if rows < 1 or cols < 1:
        raise InvalidArgumentError(f"quasi-identity needs positive sizes, got {rows}x{cols}")
    return (np.arange(cols, dtype=np.int64) * rows) // cols


def quasi_identity(rows: int, cols: int) -> np.ndarray:
    """0/1 matrix that resizes a length-``rows`` vector to length ``cols``.

    Entry ``[i, j]`` is 1 exactly when ``i == floor(j * rows / cols)``, so
    upsizing replicates entries and downsizing keeps every k-th one. Square
    sizes give the identity.
    """
    idx = quasi_identity_index(rows, cols)
    q = np.zeros((rows, cols))
    q[idx, np.arange(cols)] = 1.0
    return q


def project(x: np.ndarray, width: int) -> np.ndarray:
    """Resize the feature axis of a ``(batch, n)`` array to ``width``."""
    n = x.shape[1]
    if n == width:
        return x
    return x[:, quasi_identity_index(n, width)]


def project_back(grad: np.ndarray, width: int) -> np.ndarray:
    """Transpose of :func:`project`: scatter-add ``grad`` back onto ``width`` features."""
    n = grad.shape[1]
    if n == width:
        return grad
    idx = quasi_identity_index(width, n)
    if width > n:
        # downsizing forward: indices are distinct, every other source gets zero
        out = np.zeros((grad.shape[0], width))
        out[:, idx] = grad
        return out
    # upsizing forward: idx is sorted and hits every source, so sum contiguous runs
    starts = np.searchsorted(idx, np.arange(width))
    return np.add.reduceat(grad, starts, axis=1)


def _check_finite(z):
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite values entering activation")


def apply_activation(kind: Activation | str, z: np.ndarray) -> np.ndarray:
    """Apply an activation. Softmax normalizes each sample (each row)."""
    kind = Activation(kind)
    _check_finite(z)
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.SOFTMAX:
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    return z.copy()


def activation_grad(kind: Activation | str, z: np.ndarray, grad_a: np.ndarray) -> np.ndarray:
    """Chain ``grad_a`` through the activation at pre-activation ``z``.

    ReLU passes the gradient where ``z >= 0``: a zero-initialized layer sits
    exactly at ``z == 0`` and must still receive a gradient. Softmax is only
    ever differentiated jointly with cross-entropy, see ``propagation``.
    """
    kind = Activation(kind)
    if kind is Activation.RELU:
        return grad_a * (z >= 0.0)
    if kind is Activation.LINEAR:
        return grad_a
    raise InvalidArgumentError("softmax gradient is fused with the cross-entropy loss")


def init_weights(scheme: InitScheme | str, rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Initial ``(rows, cols)`` weight matrix; ``rows`` is the fan-in."""
    scheme = InitScheme(scheme)
    if rows < 1 or cols < 1:
        raise InvalidArgumentError(f"weight matrix needs positive sizes, got {rows}x{cols}")
    if scheme is InitScheme.ZERO:
        return np.zeros((rows, cols))
    if scheme is InitScheme.IDENTITY:
        if rows != cols:
            raise InvalidArgumentError(f"identity init needs a square matrix, got {rows}x{cols}")
        return np.eye(rows)
    return rng.normal(0.0, np.sqrt(2.0 / rows), size=(rows, cols))


# -- convolution lowered to matrix products ---------------------------------


def im2col(x: np.ndarray) -> np.ndarray:
    """3x3, stride 1, zero "same" padding patches of a ``(B, C, H, W)`` batch.

    Returns ``(B * H * W, C * 9)``; row order is (b, h, w), column order is
    (c, kh, kw), matching a ``(C * 9, C_out)`` kernel matrix.
    """
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-D image batch, got shape {x.shape}")
    b, c, h, w = x.shape
    pad = KERNEL // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))  # B,C,H,W,kh,kw
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * KERNEL * KERNEL)


def col2im(cols: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    """Adjoint of :func:`im2col`: sum patch gradients back into image positions."""
    b, c, h, w = shape
    pad = KERNEL // 2
    patches = cols.reshape(b, h, w, c, KERNEL, KERNEL)
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for kh in range(KERNEL):
        for kw in range(KERNEL):
            out[:, :, kh:kh + h, kw:kw + w] += patches[:, :, :, :, kh, kw].transpose(0, 3, 1, 2)
    return out[:, :, pad:pad + h, pad:pad + w]


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Same-padded 3x3 convolution. Returns ``(z, cols)``; ``cols`` feeds the backward pass."""
    b, _, h, w = x.shape
    cols = im2col(x)
    if cols.shape[1] != kernel.shape[0]:
        raise ShapeError(f"kernel expects {kernel.shape[0] // 9} channels, got {x.shape[1]}")
    z = cols @ kernel + bias
    return z.reshape(b, h, w, -1).transpose(0, 3, 1, 2), cols


def conv2d_backward(grad_z: np.ndarray, cols: np.ndarray, kernel: np.ndarray,
                    in_shape: tuple[int, int, int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients ``(d_input, d_kernel, d_bias)`` of :func:`conv2d`."""
    c_out = grad_z.shape[1]
    gz = grad_z.transpose(0, 2, 3, 1).reshape(-1, c_out)
    d_kernel = cols.T @ gz
    d_bias = gz.sum(axis=0)
    d_input = col2im(gz @ kernel.T, in_shape)
    return d_input, d_kernel, d_bias
