"""Compare the compiled and numpy label-wise attention kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one row per problem size with the best-of-``repeat`` wall time of a
forward plus backward pass for each available backend.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from lwrobust import kernels

SIZES = [  # (batch, labels, vocab, embed, key, tokens)
    (16, 8, 200, 16, 16, 16),
    (64, 20, 500, 16, 16, 16),
    (64, 60, 500, 32, 32, 32),
    (128, 100, 1000, 32, 32, 64),
]


def make_inputs(B, L, V, e, k, T, seed=0):
    rng = np.random.default_rng(seed)
    weights = [rng.standard_normal(s) * 0.3 for s in ((V, e), (e, k), (e, k), (L, k), (L, k))]
    lengths = rng.integers(T // 2, T + 1, B)
    tokens = np.zeros((B, T), dtype=np.int64)
    for i, n in enumerate(lengths):
        tokens[i, :n] = rng.integers(0, V, n)
    return weights, tokens, lengths, rng.standard_normal((B, L))


def step(kern, weights, tokens, lengths, g):
    _, attn = kern.lwan_forward(*weights, tokens, lengths)
    kern.lwan_backward(*weights, tokens, lengths, attn, g)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    names = sorted(kernels.BACKENDS)
    print(f"backends: {', '.join(names)} (default {kernels.BACKEND})")
    print(f"{'B':>4} {'L':>4} {'V':>5} {'e':>3} {'k':>3} {'T':>3}  " + "  ".join(f"{n:>10}" for n in names) +
          ("   speedup" if len(names) > 1 else ""))
    for size in SIZES:
        weights, tokens, lengths, g = make_inputs(*size)
        times = {}
        for name in names:
            kern = kernels.get_backend(name)
            number = 3
            best = min(timeit.repeat(lambda: step(kern, weights, tokens, lengths, g), number=number,
                                     repeat=args.repeat)) / number
            times[name] = best
        row = " ".join(f"{v:>4}" if i < 3 else f"{v:>3}" for i, v in enumerate(size))
        cells = "  ".join(f"{times[n] * 1e3:>8.2f}ms" for n in names)
        extra = f"   {times['python'] / times['compiled']:>6.2f}x" if "compiled" in times else ""
        print(f"{row}  {cells}{extra}")


if __name__ == "__main__":
    main()
