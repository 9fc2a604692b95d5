# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Every function here has a twin in ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t

cnp.import_array()


cdef inline uint64_t _rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


cdef inline uint64_t _next(uint64_t* s) nogil:
    cdef uint64_t result = _rotl(s[1] * 5, 7) * 9
    cdef uint64_t t = s[1] << 17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


def xoshiro_fill_u64(cnp.uint64_t[::1] state, Py_ssize_t n):
    """Draw ``n`` raw outputs; ``state`` (4 words) is advanced in place."""
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
    cdef uint64_t s[4]
    cdef Py_ssize_t i
    for i in range(4):
        s[i] = state[i]
    with nogil:
        for i in range(n):
            out[i] = _next(s)
    for i in range(4):
        state[i] = s[i]
    return out


def xoshiro_fill_double(cnp.uint64_t[::1] state, Py_ssize_t n):
    """Uniform doubles in [0, 1) from the top 53 bits of each draw."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef uint64_t s[4]
    cdef Py_ssize_t i
    for i in range(4):
        s[i] = state[i]
    with nogil:
        for i in range(n):
            out[i] = (_next(s) >> 11) * (1.0 / 9007199254740992.0)
    for i in range(4):
        state[i] = s[i]
    return out


def im2col(cnp.float32_t[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    """(B, C, H, W) -> (B, C*kh*kw, OH*OW) with zero padding."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t OH = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t OW = (W + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t K = C * kh * kw, P = OH * OW
    cdef cnp.ndarray[cnp.float32_t, ndim=3] out = np.zeros((B, K, P), dtype=np.float32)
    cdef float* dst = <float*> out.data
    cdef const float* src
    cdef float* drow
    cdef Py_ssize_t b, c, i, j, oy, ox, iy, ix, ox_lo, ox_hi
    if B == 0 or C == 0:
        return out
    with nogil:
        for b in range(B):
            for c in range(C):
                src = &x[b, c, 0, 0]
                for i in range(kh):
                    for j in range(kw):
                        drow = dst + ((b * C + c) * kh * kw + i * kw + j) * P
                        # ox range whose source column lands inside [0, W)
                        ox_lo = 0
                        while ox_lo < OW and ox_lo * stride + j - pad < 0:
                            ox_lo += 1
                        ox_hi = OW
                        while ox_hi > ox_lo and (ox_hi - 1) * stride + j - pad >= W:
                            ox_hi -= 1
                        for oy in range(OH):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= H:
                                continue
                            for ox in range(ox_lo, ox_hi):
                                ix = ox * stride + j - pad
                                drow[oy * OW + ox] = src[iy * W + ix]
    return out


def col2im(cnp.float32_t[:, :, ::1] cols, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
           int kh, int kw, int stride, int pad):
    """Adjoint of ``im2col``: scatter-add columns back to (B, C, H, W)."""
    cdef Py_ssize_t B = cols.shape[0]
    cdef Py_ssize_t OH = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t OW = (W + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t P = OH * OW
    cdef cnp.ndarray[cnp.float32_t, ndim=4] out = np.zeros((B, C, H, W), dtype=np.float32)
    cdef float* dst0 = <float*> out.data
    cdef float* dst
    cdef const float* srow
    cdef Py_ssize_t b, c, i, j, oy, ox, iy, ix, ox_lo, ox_hi
    if B == 0 or C == 0:
        return out
    with nogil:
        for b in range(B):
            for c in range(C):
                dst = dst0 + (b * C + c) * H * W
                for i in range(kh):
                    for j in range(kw):
                        srow = &cols[b, (c * kh + i) * kw + j, 0]
                        ox_lo = 0
                        while ox_lo < OW and ox_lo * stride + j - pad < 0:
                            ox_lo += 1
                        ox_hi = OW
                        while ox_hi > ox_lo and (ox_hi - 1) * stride + j - pad >= W:
                            ox_hi -= 1
                        for oy in range(OH):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= H:
                                continue
                            for ox in range(ox_lo, ox_hi):
                                ix = ox * stride + j - pad
                                dst[iy * W + ix] += srow[oy * OW + ox]
    return out


def maxpool_forward(cnp.float32_t[:, :, :, ::1] x, int k, int stride):
    """Window maxima and flat argmax (first index in row-major scan wins ties)."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t OH = (H - k) // stride + 1
    cdef Py_ssize_t OW = (W - k) // stride + 1
    cdef cnp.ndarray[cnp.float32_t, ndim=4] out = np.empty((B, C, OH, OW), dtype=np.float32)
    cdef cnp.ndarray[cnp.int64_t, ndim=4] arg = np.empty((B, C, OH, OW), dtype=np.int64)
    cdef cnp.float32_t[:, :, :, ::1] o = out
    cdef cnp.int64_t[:, :, :, ::1] a = arg
    cdef Py_ssize_t b, c, oy, ox, i, j, best_idx
    cdef float best, v
    with nogil:
        for b in range(B):
            for c in range(C):
                for oy in range(OH):
                    for ox in range(OW):
                        best = x[b, c, oy * stride, ox * stride]
                        best_idx = (oy * stride) * W + ox * stride
                        for i in range(k):
                            for j in range(k):
                                v = x[b, c, oy * stride + i, ox * stride + j]
                                if v > best:
                                    best = v
                                    best_idx = (oy * stride + i) * W + ox * stride + j
                        o[b, c, oy, ox] = best
                        a[b, c, oy, ox] = best_idx
    return out, arg


def maxpool_backward(cnp.float32_t[:, :, :, ::1] grad, cnp.int64_t[:, :, :, ::1] arg,
                     Py_ssize_t H, Py_ssize_t W):
    cdef Py_ssize_t B = grad.shape[0], C = grad.shape[1], OH = grad.shape[2], OW = grad.shape[3]
    cdef cnp.ndarray[cnp.float32_t, ndim=4] out = np.zeros((B, C, H, W), dtype=np.float32)
    cdef cnp.float32_t[:, :, :, ::1] o = out
    cdef Py_ssize_t b, c, oy, ox, idx
    with nogil:
        for b in range(B):
            for c in range(C):
                for oy in range(OH):
                    for ox in range(OW):
                        idx = arg[b, c, oy, ox]
                        o[b, c, idx // W, idx % W] += grad[b, c, oy, ox]
    return out
