"""Differentiable layers, loss, initialisation and SGD with momentum."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError, ParameterError
from .rng import Xoshiro256
from .tensor import Tensor, as_tensor, make_result, reshape


def _batched(x, ndim):
    """Lift an unbatched input to a batch of one; returns (tensor, squeeze?)."""
    if x.ndim == ndim - 1:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != ndim:
        raise DimensionError(f"expected {ndim - 1}-D or {ndim}-D input, got shape {x.shape}")
    return x, False


def _unbatch(out, squeeze):
    return reshape(out, out.shape[1:]) if squeeze else out


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """2-D cross-correlation of (C_in, H, W) or (B, C_in, H, W) input."""
    x, w = as_tensor(x), as_tensor(weight)
    x, squeeze = _batched(x, 4)
    B, C, H, W = x.shape
    if w.ndim != 4 or w.shape[1] != C:
        raise DimensionError(f"kernel shape {w.shape} does not fit input channels {C}")
    if stride < 1 or pad < 0:
        raise ParameterError(f"invalid stride={stride} pad={pad}")
    F, _, kh, kw = w.shape
    if kh > H + 2 * pad or kw > W + 2 * pad:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {H}x{W} (pad {pad})")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (F,):
            raise DimensionError(f"bias shape {bias.shape} != ({F},)")
    oh = (H + 2 * pad - kh) // stride + 1
    ow = (W + 2 * pad - kw) // stride + 1
    cols = kernels.im2col(x.data, kh, kw, stride, pad)          # (B, K, P)
    wmat = w.data.reshape(F, -1)                                  # (F, K)
    out = np.matmul(wmat, cols)                                   # (B, F, P)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(B, F, oh, ow)

    def backward(g):
        g2 = g.reshape(B, F, oh * ow)
        if w.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            w._accumulate(gw.reshape(w.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2)
            x._accumulate(kernels.col2im(gcols, x.shape, kh, kw, stride, pad))

    parents = (x, w) if bias is None else (x, w, bias)
    return _unbatch(make_result(out, parents, backward, "conv2d"), squeeze)


def max_pool2d(x, kernel, stride=None):
    """Window maximum; gradient goes to the first maximal element (row-major)."""
    x = as_tensor(x)
    x, squeeze = _batched(x, 4)
    stride = stride or kernel
    if kernel > x.shape[2] or kernel > x.shape[3]:
        raise DimensionError(f"pool window {kernel} larger than input {x.shape[2:]}")
    out, arg = kernels.maxpool_forward(x.data, kernel, stride)

    def backward(g):
        x._accumulate(kernels.maxpool_backward(g, arg, x.shape))

    return _unbatch(make_result(out, (x,), backward, "max_pool2d"), squeeze)


def adaptive_bins(size, out):
    """Start/end indices of adaptive-average bins."""
    return [((i * size) // out, -((-(i + 1) * size) // out)) for i in range(out)]


def _pool_matrix(size, out, dtype):
    m = np.zeros((out, size), dtype=dtype)
    for i, (lo, hi) in enumerate(adaptive_bins(size, out)):
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool2d(x, output_size):
    """Average each input bin onto a fixed (oh, ow) grid."""
    x = as_tensor(x)
    x, squeeze = _batched(x, 4)
    oh, ow = (output_size, output_size) if isinstance(output_size, int) else output_size
    H, W = x.shape[2:]
    if oh < 1 or ow < 1:
        raise DimensionError(f"adaptive pool target must be >= 1, got {(oh, ow)}")
    if oh > H or ow > W:
        raise DimensionError(f"adaptive pool target {(oh, ow)} exceeds input {(H, W)}")
    ph = _pool_matrix(H, oh, x.dtype)
    pw = _pool_matrix(W, ow, x.dtype)
    out = np.matmul(np.matmul(ph, x.data), pw.T)

    def backward(g):
        x._accumulate(np.matmul(np.matmul(ph.T, g), pw))

    return _unbatch(make_result(out, (x,), backward, "adaptive_avg_pool2d"), squeeze)


def linear(x, weight, bias=None):
    """Affine map ``x @ W.T + b`` for (d_in,) or (B, d_in) input."""
    x, w = as_tensor(x), as_tensor(weight)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise DimensionError(f"linear: input width {x.shape[-1]} vs weight {w.shape}")
    out = x.data @ w.data.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (w.shape[0],):
            raise DimensionError(f"bias shape {bias.shape} != ({w.shape[0]},)")
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, w.shape[0])
        x2 = x.data.reshape(-1, w.shape[1])
        if w.requires_grad:
            w._accumulate(g2.T @ x2)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            x._accumulate((g2 @ w.data).reshape(x.shape))

    parents = (x, w) if bias is None else (x, w, bias)
    return make_result(out, parents, backward, "linear")


def standardize(x, eps=1e-4):
    """Per-sample zero mean, unit variance over the last three axes.

    ``eps`` is added to the variance so near-flat inputs stay finite.
    """
    x = as_tensor(x)
    axes = (-3, -2, -1)
    mu = x.data.mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(x.data.var(axis=axes, keepdims=True) + eps)
    y = ((x.data - mu) * inv).astype(x.dtype)

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gy = (g * y).mean(axis=axes, keepdims=True)
        x._accumulate(((g - gm - y * gy) * inv).astype(x.dtype))

    return make_result(y, (x,), backward, "standardize")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return make_result(np.where(mask, x.data, 0).astype(x.dtype), (x,), backward, "relu")


def dropout(x, rate, train=True, seed=0):
    """Inverted dropout. ``seed`` may be an int or a :class:`Xoshiro256`."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    rng = seed if isinstance(seed, Xoshiro256) else Xoshiro256(seed)
    keep = rng.random_array(x.size).reshape(x.shape) >= rate
    scale = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)

    def backward(g):
        x._accumulate(g * scale)

    return make_result(x.data * scale, (x,), backward, "dropout")


def cross_entropy_with_grad(logits, label):
    """Loss and d(loss)/d(logits) for one sample, max-shifted for stability."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.shape[-1]:
        raise ParameterError(f"label {label} outside [0, {z.shape[-1]})")
    z = z - z.max()
    log_norm = math.log(np.exp(z).sum())
    p = np.exp(z - log_norm)
    grad = p.copy()
    grad[label] -= 1.0
    return log_norm - z[label], grad


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over a batch; (K,) logits with a scalar label also work."""
    logits = as_tensor(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    z = logits.data.reshape(-1, logits.shape[-1])
    K = z.shape[1]
    if len(labels) != z.shape[0]:
        raise DimensionError(f"{len(labels)} labels for {z.shape[0]} logit rows")
    if np.any(labels < 0) or np.any(labels >= K):
        raise ParameterError(f"labels must lie in [0, {K})")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - log_norm
    rows = np.arange(len(labels))
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        d *= g / len(labels)
        logits._accumulate(d.reshape(logits.shape).astype(logits.dtype))

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward,
                       "softmax_cross_entropy")


def bilinear_resize(img, out_h, out_w):
    """Resize a (..., H, W) array with half-pixel-centre bilinear sampling."""
    img = np.asarray(img)
    H, W = img.shape[-2:]

    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = pos - lo
        m = np.zeros((n_out, n_in))
        np.add.at(m, (np.arange(n_out), lo), 1 - frac)
        np.add.at(m, (np.arange(n_out), hi), frac)
        return m

    mh = axis_weights(H, out_h)
    mw = axis_weights(W, out_w)
    return np.matmul(np.matmul(mh, img), mw.T).astype(img.dtype)


# --- layers -----------------------------------------------------------------

def init_uniform(rng, shape, fan_in, dtype=np.float32, gain=6.0):
    """Uniform in +-sqrt(gain / fan_in); the default suits layers feeding a ReLU."""
    bound = math.sqrt(gain / fan_in)
    n = int(np.prod(shape))
    return ((rng.random_array(n) * 2.0 - 1.0) * bound).reshape(shape).astype(dtype)


class Conv2d:
    def __init__(self, c_in, c_out, kernel, stride=1, pad=0, rng=None, dtype=np.float32):
        rng = rng or Xoshiro256(0)
        fan_in = c_in * kernel * kernel
        self.weight = Tensor(init_uniform(rng, (c_out, c_in, kernel, kernel), fan_in, dtype),
                             requires_grad=True, name="weight")
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True, name="bias")
        self.stride, self.pad = stride, pad

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, shape):
        c, h, w = shape
        k = self.weight.shape[2]
        return (self.weight.shape[0], (h + 2 * self.pad - k) // self.stride + 1,
                (w + 2 * self.pad - k) // self.stride + 1)

    def __call__(self, x, train=False, rng=None):
        return conv2d(x, self.weight, self.bias, self.stride, self.pad)


class Linear:
    def __init__(self, d_in, d_out, rng=None, dtype=np.float32, gain=6.0):
        rng = rng or Xoshiro256(0)
        self.weight = Tensor(init_uniform(rng, (d_out, d_in), d_in, dtype, gain),
                             requires_grad=True, name="weight")
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True, name="bias")

    @property
    def in_features(self):
        return self.weight.shape[1]

    @property
    def out_features(self):
        return self.weight.shape[0]

    def params(self):
        return [self.weight, self.bias]

    def __call__(self, x, train=False, rng=None):
        return linear(x, self.weight, self.bias)


class ReLU:
    def params(self):
        return []

    def out_shape(self, shape):
        return shape

    def __call__(self, x, train=False, rng=None):
        return relu(x)


class MaxPool2d:
    def __init__(self, kernel, stride=None):
        self.kernel, self.stride = kernel, stride or kernel

    def params(self):
        return []

    def out_shape(self, shape):
        c, h, w = shape
        return (c, (h - self.kernel) // self.stride + 1, (w - self.kernel) // self.stride + 1)

    def __call__(self, x, train=False, rng=None):
        return max_pool2d(x, self.kernel, self.stride)


class AdaptiveAvgPool2d:
    def __init__(self, output_size):
        self.output_size = output_size

    def params(self):
        return []

    def out_shape(self, shape):
        return (shape[0],) + tuple(self.output_size)

    def __call__(self, x, train=False, rng=None):
        return adaptive_avg_pool2d(x, self.output_size)


class Dropout:
    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def params(self):
        return []

    def __call__(self, x, train=False, rng=None):
        return dropout(x, self.rate, train, rng if rng is not None else 0)


# --- optimiser --------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float
    momentum: float
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr < 0:
            raise ParameterError(f"learning rate must be non-negative, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must lie in [0, 1), got {self.momentum}")


def sgd_momentum_step(params, grads, state):
    """Classical momentum: v <- mu*v + g, p <- p - lr*v. Updates in place."""
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise DimensionError("params, grads and velocity lists differ in length")
    for p, g, v in zip(params, grads, state.velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise DimensionError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= state.momentum
        v += g
        p -= p.dtype.type(state.lr) * v
    return params, state


class SGD:
    """SGD with momentum over Tensor parameters; missing grads count as zero."""

    def __init__(self, params, lr, momentum=0.0):
        self.params = list(params)
        self.state = OptimizerState(lr, momentum, [np.zeros_like(p.data) for p in self.params])

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        sgd_momentum_step([p.data for p in self.params], grads, self.state)
