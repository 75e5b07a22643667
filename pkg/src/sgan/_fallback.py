"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_CHUNK_ELEMS = 1 << 22


def splitmix64(seed: int, counters: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + (counters.astype(np.uint64) + np.uint64(1)) * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def nearest_state(raw, states, metric: int):
    raw = np.ascontiguousarray(raw, dtype=np.float64)
    states = np.ascontiguousarray(states, dtype=np.float64)
    M, D = raw.shape
    S = states.shape[0]
    idx = np.empty(M, dtype=np.int64)
    dev = np.empty(M, dtype=np.float64)
    step = max(1, _CHUNK_ELEMS // max(1, S * D))
    for lo in range(0, M, step):
        diff = raw[lo:lo + step, None, :] - states[None, :, :]
        if metric == 0:
            cost = np.abs(diff).max(axis=2)
        else:
            cost = np.einsum("msd,msd->ms", diff, diff)
        i = np.argmin(cost, axis=1)
        idx[lo:lo + step] = i
        best = cost[np.arange(len(i)), i]
        dev[lo:lo + step] = best if metric == 0 else np.sqrt(best)
    return idx, dev


def hit_count(n_cells: int, target: int, T: int, trials: int, seed: int) -> int:
    hits = 0
    per = max(1, _CHUNK_ELEMS // max(1, T))
    for lo in range(0, trials, per):
        hi = min(trials, lo + per)
        counters = np.arange(lo * T, hi * T, dtype=np.uint64)
        u = (splitmix64(seed, counters) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        cells = np.minimum(np.floor(u * n_cells).astype(np.int64), n_cells - 1)
        hits += int(np.any((cells == target).reshape(hi - lo, T), axis=1).sum())
    return hits


def adam_update(p, g, m, v, beta1, beta2, step, inv_sqrt_bc2, eps):
    # same operation order as the compiled kernel
    m *= beta1
    m += (1.0 - beta1) * g
    tmp = g * g
    tmp *= 1.0 - beta2
    v *= beta2
    v += tmp
    np.sqrt(v, out=tmp)
    tmp *= inv_sqrt_bc2
    tmp += eps
    np.divide(m, tmp, out=tmp)
    tmp *= step
    p -= tmp
