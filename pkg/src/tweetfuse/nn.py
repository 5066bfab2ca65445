"""Array-level building blocks with explicit forward/backward passes.

Every forward returns (output, cache); the matching backward consumes the
cache and upstream gradient. Layout conventions: images are NHWC, token
batches are (batch, time), gate order in recurrent cells is
input/forget/candidate/output.
"""

from __future__ import annotations

import numpy as np


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int,
                   dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def dense_forward(x, w, b):
    return x @ w + b, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db


def _windows3x3(xp: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """(B, out_h, out_w, 3, 3, C) sliding view over a padded NHWC array."""
    b, _, _, c = xp.shape
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, out_h, out_w, 3, 3, c),
        strides=(s0, s1, s2, s1, s2, s3),
        writeable=False,
    )


def conv3x3_forward(x, w, b):
    """3x3 convolution, stride 1, same padding. x: (B,H,W,Cin), w: (3,3,Cin,Cout)."""
    _, h, wd, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = _windows3x3(xp, h, wd)
    y = np.tensordot(win, w, axes=([3, 4, 5], [0, 1, 2])) + b
    return y, (xp, w, x.shape)


def conv3x3_backward(dy, cache):
    xp, w, xshape = cache
    _, h, wd, _ = xshape
    win = _windows3x3(xp, h, wd)
    db = dy.sum(axis=(0, 1, 2))
    dw = np.tensordot(win, dy, axes=([0, 1, 2], [0, 1, 2]))
    # Input gradient is the full correlation of dy with the flipped kernel.
    dyp = np.pad(dy, ((0, 0), (1, 1), (1, 1), (0, 0)))
    dwin = _windows3x3(dyp, h, wd)
    wflip = w[::-1, ::-1]
    dx = np.tensordot(dwin, wflip, axes=([3, 4, 5], [0, 1, 3]))
    return dx, dw, db


def maxpool2_forward(x):
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""
    b, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    xc = x[:, :h2 * 2, :w2 * 2, :]
    xr = (xc.reshape(b, h2, 2, w2, 2, c)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(b, h2, w2, c, 4))
    idx = xr.argmax(axis=-1)  # first max wins on ties
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2_backward(dy, cache):
    idx, xshape = cache
    b, h, w, c = xshape
    h2, w2 = h // 2, w // 2
    dxr = np.zeros((b, h2, w2, c, 4), dtype=dy.dtype)
    np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=-1)
    dx = np.zeros(xshape, dtype=dy.dtype)
    dx[:, :h2 * 2, :w2 * 2, :] = (dxr.reshape(b, h2, w2, c, 2, 2)
                                     .transpose(0, 1, 4, 2, 5, 3)
                                     .reshape(b, h2 * 2, w2 * 2, c))
    return dx


def embedding_forward(table, ids):
    return table[ids], ids


def embedding_backward(dy, ids, vocab_size):
    dtable = np.zeros((vocab_size, dy.shape[-1]), dtype=dy.dtype)
    np.add.at(dtable, ids.reshape(-1), dy.reshape(-1, dy.shape[-1]))
    return dtable


def lstm_forward(x, lengths, wx, wh, b, reverse=False):
    """Masked LSTM pass over a padded batch, returning the final hidden state.

    x: (B, T, E) embedded inputs; lengths: (B,) valid prefix per example.
    State only advances while t < length, so padding positions beyond a
    sequence's length can never change the output. The reverse pass walks
    positions from high to low, yielding the backward-direction encoding.
    """
    bsz, _, _ = x.shape
    hid = wh.shape[0]
    dtype = wx.dtype
    h = np.zeros((bsz, hid), dtype=dtype)
    c = np.zeros((bsz, hid), dtype=dtype)
    tmax = int(lengths.max()) if bsz else 0
    order = range(tmax - 1, -1, -1) if reverse else range(tmax)
    steps = []
    for t in order:
        m = (lengths > t).astype(dtype)[:, None]
        z = x[:, t] @ wx + h @ wh + b
        i = sigmoid(z[:, :hid])
        f = sigmoid(z[:, hid:2 * hid])
        g = np.tanh(z[:, 2 * hid:3 * hid])
        o = sigmoid(z[:, 3 * hid:])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        steps.append((t, h, c, i, f, g, o, c_new, m))
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
    return h, (x, wx, wh, steps)


def lstm_backward(dh_final, cache):
    x, wx, wh, steps = cache
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(wx.shape[1], dtype=wx.dtype)
    dx = np.zeros_like(x)
    dh = dh_final
    dc = np.zeros_like(dh_final)
    for t, h_prev, c_prev, i, f, g, o, c_new, m in reversed(steps):
        dh_new = m * dh
        dh_skip = (1.0 - m) * dh
        dc_new = m * dc
        dc_skip = (1.0 - m) * dc
        tanh_c = np.tanh(c_new)
        do = dh_new * tanh_c
        dc_new = dc_new + dh_new * o * (1.0 - tanh_c * tanh_c)
        di = dc_new * g
        df = dc_new * c_prev
        dg = dc_new * i
        dc = dc_new * f + dc_skip
        dz = np.concatenate(
            [di * i * (1.0 - i),
             df * f * (1.0 - f),
             dg * (1.0 - g * g),
             do * o * (1.0 - o)],
            axis=1,
        )
        dwx += x[:, t].T @ dz
        dwh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[:, t] += dz @ wx.T
        dh = dz @ wh.T + dh_skip
    return dx, dwx, dwh, db
