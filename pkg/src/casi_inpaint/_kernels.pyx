# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Each function mirrors one in ``_fallback`` and must
produce bit-identical output (same accumulation order)."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, uint8_t

cnp.import_array()


def im2col(const double[:, :, :, ::1] xp, int kh, int kw, int stride, int oh, int ow):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t ckk = c * kh * kw
    out = np.empty((n, oh, ow, ckk), dtype=np.float64)
    cdef double[:, :, :, ::1] cols = out
    cdef Py_ssize_t b, y, x, ch, i, j, k, r0, c0
    with nogil:
        for b in range(n):
            for y in range(oh):
                r0 = y * stride
                for x in range(ow):
                    c0 = x * stride
                    k = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                cols[b, y, x, k] = xp[b, ch, r0 + i, c0 + j]
                                k += 1
    return out


def col2im(const double[:, :, :, ::1] cols, int c, int hp, int wp, int kh, int kw, int stride):
    cdef Py_ssize_t n = cols.shape[0], oh = cols.shape[1], ow = cols.shape[2]
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] xp = out
    cdef Py_ssize_t b, y, x, ch, i, j, base
    # (i, j) outermost per channel: every output cell accumulates its terms in
    # lexicographic kernel order, matching the slice-add fallback.
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        base = (ch * kh + i) * kw + j
                        for y in range(oh):
                            for x in range(ow):
                                xp[b, ch, y * stride + i, x * stride + j] += cols[b, y, x, base]
    return out


def entropy_map(const uint8_t[:, ::1] q, int h, int w, int win, const double[::1] table):
    out = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] res = out
    cdef long[256] hist
    cdef Py_ssize_t y, x, i, j, b
    cdef double acc
    with nogil:
        for y in range(h):
            for b in range(256):
                hist[b] = 0
            for i in range(win):
                for j in range(win):
                    hist[q[y + i, j]] += 1
            for x in range(w):
                if x > 0:
                    for i in range(win):
                        hist[q[y + i, x - 1]] -= 1
                        hist[q[y + i, x + win - 1]] += 1
                acc = 0.0
                for b in range(256):
                    acc = acc + table[hist[b]]
                res[y, x] = acc
    return out


cdef inline uint64_t rotl(uint64_t v, int k) nogil:
    return (v << k) | (v >> (64 - k))


def xoshiro_fill(uint64_t[::1] state, Py_ssize_t count):
    out = np.empty(count, dtype=np.uint64)
    cdef uint64_t[::1] res = out
    cdef uint64_t s0 = state[0], s1 = state[1], s2 = state[2], s3 = state[3], t
    cdef Py_ssize_t k
    with nogil:
        for k in range(count):
            res[k] = rotl(s1 * 5, 7) * 9
            t = s1 << 17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return out
