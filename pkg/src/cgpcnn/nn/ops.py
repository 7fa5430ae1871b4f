"""Forward/backward primitives on NHWC arrays ``(batch, rows, cols, channels)``.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from cgpcnn.errors import LabelOutOfRange, ShapeMismatch

BN_EPS = 1e-5
BN_DECAY = 0.9


def _check4(x, name="input"):
    if x.ndim != 4:
        raise ShapeMismatch(f"{name} must be 4-D (batch, rows, cols, channels), got {x.shape}")


def flush_subnormal(a):
    """Zero subnormal entries in place; BLAS slows down by orders of magnitude on them."""
    a[np.abs(a) < np.finfo(a.dtype).tiny] = 0
    return a


# -- convolution ------------------------------------------------------------

def _im2col(x, k):
    """``(B, M, N, C)`` -> ``(B*M*N, k*k*C)`` patches of the ``(k-1)/2``-padded input."""
    bsz, m, n, c = x.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = sliding_window_view(xp, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
    return cols.reshape(bsz * m * n, k * k * c)


def conv2d_forward(x, w, b):
    """Stride-1 convolution with ``(k-1)/2`` zero padding; ``w`` is ``(k, k, C, C')``."""
    _check4(x)
    k, k2, c, c_out = w.shape
    if k != k2 or k % 2 == 0:
        raise ShapeMismatch(f"kernel must be square and odd, got {w.shape[:2]}")
    if x.shape[3] != c:
        raise ShapeMismatch(f"input has {x.shape[3]} channels, kernel expects {c}")
    if b.shape != (c_out,):
        raise ShapeMismatch(f"bias shape {b.shape} does not match {c_out} output channels")
    bsz, m, n, _ = x.shape
    cols = _im2col(x, k)
    out = cols @ w.reshape(k * k * c, c_out) + b
    return out.reshape(bsz, m, n, c_out), (x.shape, cols, w)


def conv2d_backward(dout, cache, need_dx=True):
    """Returns ``(dx, dw, db)``; ``dx`` is None when ``need_dx`` is false."""
    x_shape, cols, w = cache
    k, _, c, c_out = w.shape
    d2 = dout.reshape(-1, c_out)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    # input gradient is a correlation of dout with the spatially flipped kernel
    w_flip = w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * c_out, c)
    dx = _im2col(dout, k) @ w_flip
    return dx.reshape(x_shape), dw, db


# -- batch normalisation ----------------------------------------------------

def _channel_sum(a):
    """Sum over batch and spatial axes; a matrix-vector product beats ``sum(axis=(0, 1, 2))``."""
    a2 = a.reshape(-1, a.shape[-1])
    return np.ones(a2.shape[0], dtype=a.dtype) @ a2


def batch_norm_forward(x, gamma, beta, running_mean, running_var, train=True, eps=BN_EPS, decay=BN_DECAY):
    """Per-channel batch norm. In train mode the running statistics are updated in place."""
    _check4(x)
    c = x.shape[3]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"gamma/beta must have shape ({c},)")
    if train:
        n = x.size // c
        mean = _channel_sum(x) / n
        centered = x - mean
        var = _channel_sum(centered * centered) / n
        running_mean *= decay
        running_mean += (1 - decay) * mean
        running_var *= decay
        running_var += (1 - decay) * var
    else:
        centered = x - running_mean
        var = running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * inv_std
    out = gamma * xhat + beta
    return out, (xhat, inv_std, gamma, train)


def batch_norm_backward(dout, cache):
    xhat, inv_std, gamma, train = cache
    dgamma = _channel_sum(dout * xhat)
    dbeta = _channel_sum(dout)
    dxhat = dout * gamma
    if not train:
        return dxhat * inv_std, dgamma, dbeta
    n = dout.size // dout.shape[-1]
    dx = (inv_std / n) * (n * dxhat - _channel_sum(dxhat) - xhat * _channel_sum(dxhat * xhat))
    return dx, dgamma, dbeta


# -- elementwise and structural ops -----------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def max_pool_forward(x, window=(2, 2), stride=(2, 2)):
    """Max pooling without padding; trailing rows/cols that do not fill a window are dropped."""
    _check4(x)
    (wr, wc), (sr, sc) = window, stride
    bsz, m, n, c = x.shape
    mo, no = (m - wr) // sr + 1, (n - wc) // sc + 1
    if mo < 1 or no < 1:
        raise ShapeMismatch(f"pooling window {window} does not fit a {m}x{n} map")
    if (wr, wc) == (sr, sc):
        blocks = x[:, :mo * wr, :no * wc, :].reshape(bsz, mo, wr, no, wc, c)
        blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(bsz, mo, no, c, wr * wc)
    else:
        win = sliding_window_view(x, (wr, wc), axis=(1, 2))[:, ::sr, ::sc][:, :mo, :no]
        blocks = win.reshape(bsz, mo, no, c, wr * wc)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx, (wr, wc), (sr, sc))


def max_pool_backward(dout, cache):
    x_shape, idx, (wr, wc), (sr, sc) = cache
    bsz, m, n, c = x_shape
    mo, no = idx.shape[1], idx.shape[2]
    dx = np.zeros(x_shape, dtype=dout.dtype)
    if (wr, wc) == (sr, sc):
        d = np.zeros((bsz, mo, no, c, wr * wc), dtype=dout.dtype)
        np.put_along_axis(d, idx[..., None], dout[..., None], axis=-1)
        d = d.reshape(bsz, mo, no, c, wr, wc).transpose(0, 1, 4, 2, 5, 3)
        dx[:, :mo * wr, :no * wc, :] = d.reshape(bsz, mo * wr, no * wc, c)
        return dx
    r = np.arange(mo)[:, None, None] * sr + idx // wc
    q = np.arange(no)[None, :, None] * sc + idx % wc
    bi = np.arange(bsz)[:, None, None, None]
    ci = np.arange(c)[None, None, None, :]
    np.add.at(dx, (bi, r, q, ci), dout)
    return dx


def avg_pool_forward(x):
    _check4(x)
    bsz, m, n, c = x.shape
    mo, no = m // 2, n // 2
    if mo < 1 or no < 1:
        raise ShapeMismatch(f"2x2 pooling does not fit a {m}x{n} map")
    out = x[:, :2 * mo, :2 * no, :].reshape(bsz, mo, 2, no, 2, c).mean(axis=(2, 4))
    return out, x.shape


def avg_pool_backward(dout, x_shape):
    bsz, mo, no, c = dout.shape
    dx = np.zeros(x_shape, dtype=dout.dtype)
    spread = np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2) * 0.25
    dx[:, :2 * mo, :2 * no, :] = spread
    return dx


def channel_concat_forward(a, b):
    if a.shape[:3] != b.shape[:3]:
        raise ShapeMismatch(f"cannot concatenate {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=3), a.shape[3]


def channel_concat_backward(dout, c_first):
    return dout[..., :c_first], dout[..., c_first:]


def fit_channels(x, c):
    """Zero-pad (or truncate) the channel axis to ``c`` channels."""
    have = x.shape[3]
    if have == c:
        return x
    if have > c:
        return x[..., :c]
    return np.pad(x, ((0, 0), (0, 0), (0, 0), (0, c - have)))


def padded_sum_forward(a, b):
    """Elementwise sum after zero-padding the input with fewer channels."""
    if a.shape[:3] != b.shape[:3]:
        raise ShapeMismatch(f"cannot add {a.shape} and {b.shape}")
    c = max(a.shape[3], b.shape[3])
    return fit_channels(a, c) + fit_channels(b, c), (a.shape[3], b.shape[3])


def padded_sum_backward(dout, cache):
    ca, cb = cache
    return dout[..., :ca], dout[..., :cb]


# -- dense head and loss ----------------------------------------------------

def dense_forward(x, w, b):
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"dense layer expects {w.shape[0]} inputs, got {flat.shape[1]}")
    return flat @ w + b, (x.shape, flat, w)


def dense_backward(dout, cache):
    x_shape, flat, w = cache
    return (dout @ w.T).reshape(x_shape), flat.T @ dout, dout.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    bsz, k = logits.shape
    if labels.shape != (bsz,) or labels.min() < 0 or labels.max() >= k:
        raise LabelOutOfRange(f"labels must be {bsz} integers in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(bsz)
    loss = float(np.mean(log_z - z[rows, labels]))
    grad = np.exp(z - log_z[:, None])
    grad[rows, labels] -= 1
    grad /= bsz
    return loss, flush_subnormal(grad)
