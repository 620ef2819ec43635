"""Time the hot kernels under the numba and pure-numpy backends.

    python3 benchmarks/bench_kernels.py            # both backends, side by side
    python3 benchmarks/bench_kernels.py --single   # current backend only, JSON out

Each backend runs in its own interpreter because the switch
(SPECRECON_DISABLE_NUMBA) is read at import time.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def run_single(repeat):
    from specrecon import kernels
    from specrecon.model import ModelConfig, backward, forward, init_params, l2_loss
    from specrecon.tensor import conv2d_valid_backward, conv2d_valid_forward

    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 32, 32, 32)).astype(np.float32)
    w = rng.standard_normal((32, 32, 3, 3)).astype(np.float32)
    b = np.zeros(32, np.float32)
    g = rng.standard_normal((8, 32, 30, 30)).astype(np.float32)
    col = np.empty((32 * 9, 8 * 900), np.float32)
    a = np.full(32, 0.25, np.float32)
    small = x[:2, :8, :16, :16].copy()
    small_w = w[:8, :8].copy()

    params = init_params(ModelConfig(), seed=0)
    patch = rng.uniform(0, 1, (16, 3, 36, 36)).astype(np.float32)
    label = rng.uniform(0, 1, (16, 31, 20, 20)).astype(np.float32)

    def train_step():
        out, cache = forward(params, patch, return_cache=True)
        _, grad = l2_loss(out, label)
        backward(params, patch, grad, cache=cache)

    cases = {
        "im2col 3x3 (8,32,32,32)": lambda: kernels.im2col(x, 3, 3, col),
        "col2im 3x3 (8,32,32,32)": lambda: kernels.col2im(col, 3, 3, np.zeros_like(x)),
        "prelu fwd": lambda: kernels.prelu_fwd(x, a, np.empty_like(x)),
        "prelu bwd": lambda: kernels.prelu_bwd(x, a, x, np.empty_like(x), np.zeros(32, np.float32)),
        "conv fwd gemm": lambda: conv2d_valid_forward(x, w, b),
        "conv bwd gemm": lambda: conv2d_valid_backward(x, w, g),
        "conv fwd direct (2,8,16,16)": lambda: conv2d_valid_forward(small, small_w, b[:8], method="direct"),
        "conv fwd gemm (2,8,16,16)": lambda: conv2d_valid_forward(small, small_w, b[:8]),
        "model fwd+bwd batch 16": train_step,
    }
    return {"backend": kernels.BACKEND, "seconds": {k: best_of(f, repeat) for k, f in cases.items()}}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--single", action="store_true")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    if args.single:
        print(json.dumps(run_single(args.repeat)))
        return

    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, SPECRECON_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, __file__, "--single", "--repeat", str(args.repeat)],
                             env=env, capture_output=True, text=True, check=True).stdout
        r = json.loads(out.strip().splitlines()[-1])
        results[r["backend"]] = r["seconds"]

    names = list(next(iter(results.values())))
    backends = list(results)
    print(f"{'case':<30}" + "".join(f"{b:>12}" for b in backends) + f"{'numpy/numba':>13}")
    for n in names:
        row = [results[b][n] for b in backends]
        ratio = row[-1] / row[0] if len(row) == 2 and row[0] > 0 else float("nan")
        print(f"{n:<30}" + "".join(f"{t * 1e3:>10.2f}ms" for t in row) + f"{ratio:>8.2f}x")


if __name__ == "__main__":
    main()
