"""Backend selection for the hot loops.

The compiled extension is used when it was built and ``PERCOLLFFT_PURE`` is
unset; otherwise everything runs through the numpy fallback. Float64 inputs
(gradient oracles) always take the fallback path.
"""

import os

import numpy as np

from . import _fallback

try:
    if os.environ.get("PERCOLLFFT_PURE"):
        raise ImportError("pure backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def _pick(x):
    if _compiled is not None and x.dtype == np.float32:
        return _compiled
    return _fallback


def xoshiro_fill_u64(state, n):
    impl = _compiled or _fallback
    return impl.xoshiro_fill_u64(state, n)


def xoshiro_fill_double(state, n):
    impl = _compiled or _fallback
    return impl.xoshiro_fill_double(state, n)


def im2col(x, kh, kw, stride, pad):
    x = np.ascontiguousarray(x)
    return _pick(x).im2col(x, kh, kw, stride, pad)


def col2im(cols, shape, kh, kw, stride, pad):
    cols = np.ascontiguousarray(cols)
    _, C, H, W = shape
    return _pick(cols).col2im(cols, C, H, W, kh, kw, stride, pad)


def maxpool_forward(x, k, stride):
    x = np.ascontiguousarray(x)
    return _pick(x).maxpool_forward(x, k, stride)


def maxpool_backward(grad, arg, shape):
    grad = np.ascontiguousarray(grad)
    return _pick(grad).maxpool_backward(grad, np.ascontiguousarray(arg), shape[2], shape[3])
