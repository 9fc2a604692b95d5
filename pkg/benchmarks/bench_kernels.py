"""Compiled kernels vs the numpy fallback.

Times each hot kernel on shapes taken from the tiny backbone (batch 8 at
96x24) and from the first alexnet-style layer, then one full SGD step of the
tiny model under each backend (the fallback run happens in a subprocess with
PERCOLLFFT_PURE=1, the same switch users have).

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from percollfft import _fallback, kernels

# (name, input shape, kernel, stride, pad)
CONV_CASES = [
    ("tiny conv1", (8, 3, 96, 24), 3, 1, 1),
    ("tiny conv2", (8, 16, 48, 12), 3, 1, 1),
    ("tiny conv3", (8, 32, 24, 6), 3, 1, 1),
    ("alexnet conv1", (2, 3, 224, 224), 11, 4, 2),
]
POOL_CASES = [
    ("tiny pool1", (8, 16, 96, 24), 2, 2),
    ("alexnet pool1", (2, 64, 55, 55), 3, 2),
]

STEP_SNIPPET = """
import time, numpy as np
from percollfft import kernels, nn
from percollfft.models import ModelConfig, build_model
from percollfft.tensor import Tensor
from percollfft.rng import Xoshiro256
m = build_model(ModelConfig(fusion="late"), seed=0)
rng = np.random.default_rng(0)
x = rng.random((8, 3, 96, 24)).astype(np.float32)
h = rng.random((8, 300)).astype(np.float32)
y = np.arange(8) % 4
def step():
    for p in m.parameters():
        p.grad = None
    nn.softmax_cross_entropy(m.forward(x, h, train=True, rng=Xoshiro256(1)), y).backward()
step()
t = time.perf_counter()
for _ in range({n}):
    step()
print(kernels.BACKEND, (time.perf_counter() - t) / {n} * 1e3)
"""


def best_ms(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def kernel_rows(repeat):
    compiled = kernels._compiled
    rng = np.random.default_rng(0)
    rows = []
    for name, shape, k, stride, pad in CONV_CASES:
        x = rng.standard_normal(shape).astype(np.float32)
        cols = compiled.im2col(x, k, k, stride, pad)
        assert cols.tobytes() == _fallback.im2col(x, k, k, stride, pad).tobytes()
        rows.append((f"im2col {name}",
                     best_ms(lambda: compiled.im2col(x, k, k, stride, pad), repeat),
                     best_ms(lambda: _fallback.im2col(x, k, k, stride, pad), repeat)))
        _, C, H, W = shape
        rows.append((f"col2im {name}",
                     best_ms(lambda: compiled.col2im(cols, C, H, W, k, k, stride, pad), repeat),
                     best_ms(lambda: _fallback.col2im(cols, C, H, W, k, k, stride, pad), repeat)))
    for name, shape, k, stride in POOL_CASES:
        x = rng.standard_normal(shape).astype(np.float32)
        out, arg = compiled.maxpool_forward(x, k, stride)
        g = rng.standard_normal(out.shape).astype(np.float32)
        rows.append((f"maxpool fwd {name}",
                     best_ms(lambda: compiled.maxpool_forward(x, k, stride), repeat),
                     best_ms(lambda: _fallback.maxpool_forward(x, k, stride), repeat)))
        rows.append((f"maxpool bwd {name}",
                     best_ms(lambda: compiled.maxpool_backward(g, arg, *shape[2:]), repeat),
                     best_ms(lambda: _fallback.maxpool_backward(g, arg, *shape[2:]), repeat)))
    state = np.array([1, 2, 3, 4], dtype=np.uint64)
    rows.append(("xoshiro 1e5 doubles",
                 best_ms(lambda: compiled.xoshiro_fill_double(state, 100_000), repeat),
                 best_ms(lambda: _fallback.xoshiro_fill_double(state, 100_000), max(1, repeat // 5))))
    return rows


def train_step_ms(pure, n):
    env = dict(os.environ)
    env.pop("PERCOLLFFT_PURE", None)
    if pure:
        env["PERCOLLFFT_PURE"] = "1"
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(n=n)], env=env,
                         capture_output=True, text=True, check=True).stdout.split()
    return out[0], float(out[1])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20, help="timing repeats per kernel")
    parser.add_argument("--steps", type=int, default=5, help="SGD steps per backend")
    args = parser.parse_args(argv)
    if kernels._compiled is None:
        sys.exit("compiled extension not available; build with pip install -e .")

    print(f"{'kernel':32s} {'compiled ms':>12s} {'fallback ms':>12s} {'speed-up':>9s}")
    for name, c, f in kernel_rows(args.repeat):
        print(f"{name:32s} {c:12.3f} {f:12.3f} {f / c:8.1f}x")
    print()
    results = dict(train_step_ms(pure, args.steps) for pure in (False, True))
    c, f = results["compiled"], results["python"]
    print(f"{'tiny late-fusion SGD step, batch 8':32s} {c:12.1f} {f:12.1f} {f / c:8.1f}x")


if __name__ == "__main__":
    main()
