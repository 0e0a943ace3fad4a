"""Pure numpy / pure Python versions of the compiled kernels."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_MASK64 = (1 << 64) - 1


def im2col(xp, kh, kw, stride, oh, ow):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    # (n, c, oh, ow, kh, kw) -> (n, oh, ow, c, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, oh, ow, c * kh * kw)


def col2im(cols, c, hp, wp, kh, kw, stride):
    n, oh, ow = cols.shape[:3]
    blocks = cols.reshape(n, oh, ow, c, kh, kw)
    out = np.zeros((n, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += (
                blocks[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


def entropy_map(q, h, w, win, table):
    windows = sliding_window_view(q, (win, win)).reshape(h * w, win * win)
    counts = np.zeros((h * w, 256), dtype=np.int64)
    np.add.at(counts, (np.arange(h * w)[:, None], windows.astype(np.int64)), 1)
    terms = np.asarray(table)[counts]
    acc = np.zeros(h * w)
    for b in range(256):
        acc = acc + terms[:, b]
    return acc.reshape(h, w)


def _rotl(v, k):
    return ((v << k) | (v >> (64 - k))) & _MASK64


def xoshiro_fill(state, count):
    s0, s1, s2, s3 = (int(v) for v in state)
    out = np.empty(count, dtype=np.uint64)
    for k in range(count):
        out[k] = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[:] = np.array([s0, s1, s2, s3], dtype=np.uint64)
    return out
