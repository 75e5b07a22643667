"""Compiled kernels vs the numpy fallback: agreement and wall time.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from sgan import _fallback
from sgan.domains import GridDomainSpec, encode, enumerate_valid_states

try:
    from sgan import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def cases(rng):
    spec = GridDomainSpec("2d", 5, (0.25,) * 4, "image")
    table = np.stack([encode(spec, s) for s in enumerate_valid_states(spec)])
    raw = table[rng.integers(len(table), size=2000)] + rng.normal(0, 0.05, (2000, table.shape[1]))
    yield "nearest_state maxabs (2000 x 25 states, V=400)", lambda m: m.nearest_state(raw, table, 0)
    yield "nearest_state l2", lambda m: m.nearest_state(raw, table, 1)
    yield "hit_count (K=2000, T=2000, 2e4 trials)", lambda m: m.hit_count(2000, 1000, 2000, 20_000, 7)

    n = 1_000_000
    base = [rng.normal(size=n), rng.normal(size=n), rng.normal(size=n), rng.random(n)]

    def adam(m):
        p, g, mm, v = (a.copy() for a in base)
        m.adam_update(p, g, mm, v, 0.0, 0.9, 1e-4, 1.0 / np.sqrt(0.1), 1e-8)
        return p, mm, v
    yield "adam_update (1e6 parameters)", adam


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b) or np.allclose(a, b, rtol=0, atol=1e-12)
    return a == b


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
    print(f"{'kernel':48s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}  agree")
    for name, fn in cases(rng):
        t_py, out_py = best_of(lambda: fn(_fallback), args.repeat)
        if _kernels is None:
            print(f"{name:48s} {t_py:10.4f} {'-':>10s} {'-':>8s}  -")
            continue
        t_cy, out_cy = best_of(lambda: fn(_kernels), args.repeat)
        print(f"{name:48s} {t_py:10.4f} {t_cy:10.4f} {t_py / t_cy:7.1f}x  {same(out_py, out_cy)}")


if __name__ == "__main__":
    main()
