"""Forward and backward passes for the layer primitives.

Tensors are float64 numpy arrays in channels-last layout: images are
``(N, H, W, C)`` and convolution weights ``(K, K, Cin, Cout)``.

Forward matrix products go through :func:`matmul_rows`, which always hands
BLAS blocks of the same height. OpenBLAS picks different kernels for
different operand shapes, so a row's result could otherwise depend on which
other rows happened to share its batch; with fixed-height blocks a sample's
output is bit-identical however a raster is batched or tiled.
"""

from __future__ import annotations

import numpy as np

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805
PROB_FLOOR = 1e-12
ROW_BLOCK = 256

__all__ = [
    "matmul_rows",
    "conv2d_forward",
    "conv2d_backward",
    "dense_forward",
    "dense_backward",
    "relu",
    "relu_grad",
    "selu",
    "selu_grad",
    "softmax",
    "cross_entropy",
    "cross_entropy_softmax_grad",
    "dropout",
    "dropout_grad",
    "maxpool2d_forward",
    "maxpool2d_backward",
]


def matmul_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` computed in zero-padded blocks of exactly ``ROW_BLOCK`` rows."""
    n = a.shape[0]
    out = np.empty((n, b.shape[1]), dtype=np.result_type(a, b))
    block = np.zeros((ROW_BLOCK, a.shape[1]), dtype=a.dtype)
    for start in range(0, n, ROW_BLOCK):
        stop = min(start + ROW_BLOCK, n)
        block[: stop - start] = a[start:stop]
        if stop - start < ROW_BLOCK:
            block[stop - start :] = 0.0
        out[start:stop] = (block @ b)[: stop - start]
    return out


def _as_batch(x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected (N, H, W, C) or (H, W, C) input, got shape {x.shape}")
    return x, False


def _check_conv(x: np.ndarray, w: np.ndarray, b=None) -> int:
    if w.ndim != 4 or w.shape[0] != w.shape[1]:
        raise ValueError(f"weights must be (K, K, Cin, Cout), got {w.shape}")
    k = w.shape[0]
    if k % 2 == 0:
        raise ValueError("kernel size must be odd")
    if x.shape[3] != w.shape[2]:
        raise ValueError(f"input has {x.shape[3]} channels, weights expect {w.shape[2]}")
    if x.shape[1] < k or x.shape[2] < k:
        raise ValueError(f"input {x.shape[1]}x{x.shape[2]} smaller than kernel {k}")
    if b is not None and np.shape(b) != (w.shape[3],):
        raise ValueError(f"bias must have shape ({w.shape[3]},)")
    return k


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    n, h, w, c = x.shape
    ho, wo = h - k + 1, w - k + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    # (N, Ho, Wo, C, K, K) -> (N, Ho, Wo, K, K, C) so columns follow the (m, n, c) weight order
    return windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)


def conv2d_forward(x, w, b):
    """Valid cross-correlation: ``y[i,j,o] = sum_{m,n,c} w[m,n,c,o] x[i+m,j+n,c] + b[o]``."""
    xb, single = _as_batch(x)
    k = _check_conv(xb, w, b)
    n, h, wd, _ = xb.shape
    ho, wo = h - k + 1, wd - k + 1
    cols = _im2col(xb, k)
    y = matmul_rows(cols, w.reshape(-1, w.shape[3])) + b
    y = y.reshape(n, ho, wo, w.shape[3])
    return y[0] if single else y


def conv2d_backward(grad_out, x, w):
    """Gradients of :func:`conv2d_forward` w.r.t. input, weights and bias."""
    xb, single = _as_batch(x)
    k = _check_conv(xb, w)
    g = np.asarray(grad_out, dtype=np.float64)
    if single:
        g = g[None]
    n, h, wd, c = xb.shape
    ho, wo = h - k + 1, wd - k + 1
    cout = w.shape[3]
    if g.shape != (n, ho, wo, cout):
        raise ValueError(f"grad_out shape {g.shape} does not match forward output {(n, ho, wo, cout)}")
    g2 = g.reshape(-1, cout)
    cols = _im2col(xb, k)
    grad_w = (cols.T @ g2).reshape(w.shape)
    grad_b = g2.sum(axis=0)
    gcols = (g2 @ w.reshape(-1, cout).T).reshape(n, ho, wo, k, k, c)
    grad_x = np.zeros_like(xb)
    for m in range(k):
        for q in range(k):
            grad_x[:, m : m + ho, q : q + wo, :] += gcols[:, :, :, m, q, :]
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def dense_forward(x, w, b):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match weights {w.shape}")
    return matmul_rows(x.reshape(-1, w.shape[0]), w).reshape(*x.shape[:-1], w.shape[1]) + b


def dense_backward(grad_out, x, w):
    g = np.asarray(grad_out, dtype=np.float64).reshape(-1, w.shape[1])
    x2 = np.asarray(x, dtype=np.float64).reshape(-1, w.shape[0])
    grad_x = (g @ w.T).reshape(np.shape(x))
    return grad_x, x2.T @ g, g.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x, grad_out):
    return grad_out * (x > 0)


def selu(x):
    x = np.asarray(x, dtype=np.float64)
    neg = SELU_ALPHA * np.expm1(np.minimum(x, 0.0))
    return SELU_SCALE * np.where(x > 0, x, neg)


def selu_grad(x, grad_out):
    slope = np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))
    return grad_out * SELU_SCALE * slope


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_one_hot(target, shape):
    target = np.asarray(target, dtype=np.float64)
    if target.shape != shape:
        raise ValueError(f"target shape {target.shape} does not match {shape}")
    if not (np.isin(target, (0.0, 1.0)).all() and (target.sum(axis=-1) == 1).all()):
        raise ValueError("target must be one-hot")
    return target


def cross_entropy(probs, target) -> float:
    """Mean categorical cross-entropy; probabilities are floored at 1e-12 before the log."""
    probs = np.asarray(probs, dtype=np.float64)
    target = _check_one_hot(target, probs.shape)
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    return float(-(target * logp).sum(axis=-1).mean())


def cross_entropy_softmax_grad(logits, target):
    """Gradient of ``cross_entropy(softmax(logits), target)`` w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    target = _check_one_hot(target, logits.shape)
    n = logits.shape[0] if logits.ndim > 1 else 1
    return (softmax(logits) - target) / n


def dropout(x, rate: float, mode: str = "train", rng=None):
    """Inverted dropout. Returns ``(output, mask)``; the mask already carries the 1/(1-rate) scale."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x, None
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = rng.random(np.shape(x)) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def dropout_grad(grad_out, mask):
    return grad_out if mask is None else grad_out * mask


def maxpool2d_forward(x, size: int = 2):
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped.

    Returns ``(output, argmax)`` where ``argmax`` indexes the winner inside each window.
    """
    xb, single = _as_batch(x)
    n, h, w, c = xb.shape
    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise ValueError(f"input {h}x{w} smaller than pool size {size}")
    win = xb[:, : ho * size, : wo * size, :].reshape(n, ho, size, wo, size, c)
    win = win.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, size * size)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return (out[0] if single else out), (arg[0] if single else arg)


def maxpool2d_backward(grad_out, argmax, input_shape, size: int = 2):
    single = len(input_shape) == 3
    g = np.asarray(grad_out, dtype=np.float64)
    arg = np.asarray(argmax)
    if single:
        g, arg = g[None], arg[None]
        input_shape = (1,) + tuple(input_shape)
    n, h, w, c = input_shape
    ho, wo = h // size, w // size
    win = np.zeros((n, ho, wo, c, size * size))
    np.put_along_axis(win, arg[..., None], g[..., None], axis=-1)
    win = win.reshape(n, ho, wo, c, size, size).transpose(0, 1, 4, 2, 5, 3)
    grad_x = np.zeros((n, h, w, c))
    grad_x[:, : ho * size, : wo * size, :] = win.reshape(n, ho * size, wo * size, c)
    return grad_x[0] if single else grad_x
