"""Finite-difference gradient checking for autograd graphs."""

import numpy as np

from percollfft.tensor import Tensor, mul, tsum

from oracles import finite_difference, rel_err


def gradcheck(build, arrays, dtype=np.float32, eps=1e-6):
    """Analytic grads (in ``dtype``) vs float64 central differences.

    ``build`` maps one Tensor per array to a scalar Tensor. Returns the worst
    relative error over all inputs.
    """
    tensors = [Tensor(a.astype(dtype), requires_grad=True) for a in arrays]
    build(*tensors).backward()
    work = [a.astype(np.float64) for a in arrays]
    numeric = finite_difference(lambda: float(build(*[Tensor(a) for a in work]).data), work, eps)
    return max(rel_err(t.grad, g) for t, g in zip(tensors, numeric))


def weighted_sum(out, weights):
    """Scalar probe ``sum(out * weights)`` so every output element gets a distinct gradient."""
    return tsum(mul(out, Tensor(weights.astype(out.dtype))))
