"""Compare the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 2000] [--skip-e2e]

Per-kernel timings use episode-sized inputs (5-way 5-shot, d_model 32,
4 heads).  The end-to-end section trains a few epochs in a fresh
interpreter per backend, selected with PROTOGEN_DISABLE_JIT, so the import
time flag is exercised exactly as users would set it.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from protogen import kernels


def episode_inputs(n=5, k=5, d=32, d_k=8, queries=75, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n * k, d))
    q = rng.normal(size=(n * k, d_k))
    scores = kernels.NUMPY_KERNELS["block_scores"](q, q, k)
    p = kernels.NUMPY_KERNELS["softmax_rows"](scores)
    y, xhat, inv_std = kernels.NUMPY_KERNELS["layer_norm_rows"](x, np.ones(d), np.zeros(d), 1e-5)
    protos = rng.normal(size=(n, d))
    qs = rng.normal(size=(queries, d))
    w = rng.normal(size=(d, d_k))
    return {
        "matmul": (x, w),
        "softmax_rows": (scores,),
        "softmax_rows_backward": (p, rng.normal(size=p.shape)),
        "layer_norm_rows": (x, np.ones(d), np.zeros(d), 1e-5),
        "layer_norm_rows_backward": (rng.normal(size=x.shape), xhat, inv_std, np.ones(d)),
        "block_scores": (q, q, k),
        "block_attend": (p, q, k),
        "block_transpose": (p, k),
        "group_mean": (x, k),
        "sq_dists": (qs, protos),
        "nearest": (qs, protos),
    }


def bench_kernels(repeat):
    if not kernels.NUMBA_KERNELS:
        print("numba unavailable or disabled; kernel comparison skipped")
        return
    inputs = episode_inputs()
    print(f"{'kernel':26s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for name, args in inputs.items():
        np_fn, nb_fn = kernels.NUMPY_KERNELS[name], kernels.NUMBA_KERNELS[name]
        nb_fn(*args)  # compile
        t_np = min(timeit.repeat(lambda: np_fn(*args), number=repeat, repeat=3)) / repeat * 1e6
        t_nb = min(timeit.repeat(lambda: nb_fn(*args), number=repeat, repeat=3)) / repeat * 1e6
        print(f"{name:26s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:7.2f}x")


E2E = """
import time
from protogen import *
from protogen import kernels
ds = generate_synthetic(SyntheticSpec(30, 32, 100, within_std=1.5, outlier_fraction=0.3,
                                      outlier_shift=6.0, seed=1, mean_rank=8))
tr, va = split_classes(ds, [20, 10])
cfg = TrainConfig(epochs=1, episodes_per_epoch=10, attention=AttentionConfig.default(32), val_episodes=5)
table = compute_global_prototypes(tr)
train(tr, va, table, cfg)  # warm-up, includes jit compile or cache load
cfg = TrainConfig(epochs=3, episodes_per_epoch=100, attention=AttentionConfig.default(32), val_episodes=50)
t = time.perf_counter()
train(tr, va, table, cfg)
print(kernels.BACKEND, time.perf_counter() - t)
"""


def bench_end_to_end():
    print("\nend-to-end: 3 epochs x 100 episodes, 5-way 5-shot, d_model 32")
    for flag in ("0", "1"):
        env = dict(os.environ, PROTOGEN_DISABLE_JIT=flag)
        out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
        backend, seconds = out.stdout.split()
        print(f"  {backend:6s} {float(seconds):7.2f} s  ({300 / float(seconds):.0f} episodes/s)")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args(argv)
    print(f"active backend: {kernels.BACKEND}\n")
    bench_kernels(args.repeat)
    if not args.skip_e2e:
        bench_end_to_end()


if __name__ == "__main__":
    main()
