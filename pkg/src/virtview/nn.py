"""Minimal float64 neural-network building blocks with explicit backprop.

Everything here is plain numpy: batched conv2d via im2col, ReLU, linear,
global average pooling, softmax, the smooth-L1 loss, and Adam.  Each
forward returns a cache consumed by the matching backward; gradients are
exact and are cross-checked against central finite differences in the test
suite.
"""

from __future__ import annotations

import numpy as np

_IDX_CACHE: dict = {}


def _conv_indices(c: int, h: int, w: int, kh: int, kw: int, stride: int, pad: int):
    key = (c, h, w, kh, kw, stride, pad)
    hit = _IDX_CACHE.get(key)
    if hit is not None:
        return hit
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    ci = np.repeat(np.arange(c), kh * kw).reshape(-1, 1)
    i0 = np.tile(np.repeat(np.arange(kh), kw), c).reshape(-1, 1)
    j0 = np.tile(np.arange(kw), kh * c).reshape(-1, 1)
    i1 = stride * np.repeat(np.arange(ho), wo).reshape(1, -1)
    j1 = stride * np.tile(np.arange(wo), ho).reshape(1, -1)
    out = (ho, wo, ci, i0 + i1, j0 + j1)
    _IDX_CACHE[key] = out
    return out


def conv2d_forward(x, w, b, stride=1, pad=0):
    """x: (N, C, H, W), w: (F, C, kh, kw), b: (F,) -> y: (N, F, Ho, Wo)."""
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    ho, wo, ci, ii, jj = _conv_indices(c, h, wd, kh, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = xp[:, ci, ii, jj]
    w_flat = w.reshape(f, -1)
    y = np.matmul(w_flat, cols) + b.reshape(1, f, 1)
    cache = (x.shape, cols, w, stride, pad)
    return y.reshape(n, f, ho, wo), cache


def conv2d_backward(dy, cache):
    x_shape, cols, w, stride, pad = cache
    n, c, h, wd = x_shape
    f, _, kh, kw = w.shape
    _, _, ci, ii, jj = _conv_indices(c, h, wd, kh, kw, stride, pad)
    dy_flat = dy.reshape(n, f, -1)
    db = dy_flat.sum(axis=(0, 2))
    # tensordot keeps this a single GEMM instead of an (N, F, C*kh*kw)
    # outer-product intermediate.
    dw = np.tensordot(dy_flat, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    dcols = np.matmul(w.reshape(f, -1).T, dy_flat)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    np.add.at(dxp, (np.arange(n)[:, None, None], ci, ii, jj), dcols)
    dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
    return dx, dw, db


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def global_avg_pool_forward(x):
    """(N, C, H, W) -> (N, C)."""
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(dy, x_shape):
    n, c, h, w = x_shape
    return np.broadcast_to(dy[:, :, None, None], x_shape) / (h * w)


def linear_forward(x, w, b):
    """x: (N, D), w: (D, F), b: (F,)."""
    return x @ w + b, x


def linear_backward(dy, x, w):
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def softmax(z, axis=-1):
    zs = z - z.max(axis=axis, keepdims=True)
    e = np.exp(zs)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(ds, s, axis=-1):
    """Gradient through ``s = softmax(z)`` given dL/ds."""
    inner = (ds * s).sum(axis=axis, keepdims=True)
    return s * (ds - inner)


def smooth_l1(x):
    """Elementwise smooth-L1 with switch point 1.0."""
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def smooth_l1_grad(x):
    return np.where(np.abs(x) < 1.0, x, np.sign(x))


def smooth_l1_norm_loss(pred, gt):
    """Sum of smooth-L1 over row-wise Euclidean error norms, plus gradient.

    Rows are vectors (last axis); leading axes are batch/joint dims.  In
    the quadratic branch the gradient is simply the error vector, so there
    is no singularity at zero error.
    """
    diff = pred - gt
    r = np.linalg.norm(diff, axis=-1)
    loss = float(smooth_l1(r).sum())
    scale = np.where(r < 1.0, 1.0, 1.0 / np.maximum(r, 1e-300))
    return loss, diff * scale[..., None]


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Adam:
    """Adam over a dict of named parameter arrays (updates in place)."""

    def __init__(self, params: dict, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict, lr=None):
        if lr is None:
            lr = self.lr
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            self.params[k] -= lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def decayed_lr(base_lr: float, decay: float, epoch: int) -> float:
    """Per-epoch exponential schedule: lr * decay**epoch."""
    return base_lr * decay**epoch
