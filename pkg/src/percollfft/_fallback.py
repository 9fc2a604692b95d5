"""Pure-Python/numpy twins of the compiled kernels in ``_kernels.pyx``.

Outputs are bit-identical to the compiled versions; only speed differs.
Unlike the compiled kernels these also accept float64 input.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_MASK = (1 << 64) - 1


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


def _draw(state, n):
    s0, s1, s2, s3 = (int(v) for v in state)
    out = [0] * n
    for i in range(n):
        out[i] = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[:] = np.array([s0, s1, s2, s3], dtype=np.uint64)
    return out


def xoshiro_fill_u64(state, n):
    return np.array(_draw(state, n), dtype=np.uint64)


def xoshiro_fill_double(state, n):
    return np.array([(v >> 11) * (1.0 / 9007199254740992.0) for v in _draw(state, n)],
                    dtype=np.float64)


def _out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    B, C, H, W = x.shape
    oh, ow = _out_size(H, kh, stride, pad), _out_size(W, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    # win: (B, C, OH, OW, kh, kw) -> (B, C, kh, kw, OH, OW)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(B, C * kh * kw, oh * ow)
    return np.ascontiguousarray(cols)


def col2im(cols, C, H, W, kh, kw, stride, pad):
    B = cols.shape[0]
    oh, ow = _out_size(H, kh, stride, pad), _out_size(W, kw, stride, pad)
    out = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    c6 = cols.reshape(B, C, kh, kw, oh, ow)
    # Scatter order matches the compiled loop: (i, j) outer, (oy, ox) inner.
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += c6[:, :, i, j]
    return np.ascontiguousarray(out[:, :, pad:pad + H, pad:pad + W])


def maxpool_forward(x, k, stride):
    B, C, H, W = x.shape
    oh, ow = (H - k) // stride + 1, (W - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    flat = win.reshape(B, C, oh, ow, k * k)
    local = flat.argmax(axis=-1)  # first maximum wins
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(local, k)
    rows = np.arange(oh)[:, None] * stride + di
    cols = np.arange(ow)[None, :] * stride + dj
    return np.ascontiguousarray(out), (rows * W + cols).astype(np.int64)


def maxpool_backward(grad, arg, H, W):
    B, C = grad.shape[:2]
    out = np.zeros((B, C, H * W), dtype=grad.dtype)
    g = grad.reshape(B, C, -1)
    a = arg.reshape(B, C, -1)
    for b in range(B):
        for c in range(C):
            np.add.at(out[b, c], a[b, c], g[b, c])
    return out.reshape(B, C, H, W)
