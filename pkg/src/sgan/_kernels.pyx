# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Must agree with sgan._fallback bit for bit on
nearest_state (maxabs) and hit_count."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, floor
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t splitmix64(uint64_t seed, uint64_t counter) nogil:
    cdef uint64_t z = seed + (counter + 1) * GOLDEN
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def nearest_state(const double[:, ::1] raw, const double[:, ::1] states, int metric):
    cdef Py_ssize_t M = raw.shape[0], S = states.shape[0], D = raw.shape[1]
    if states.shape[1] != D:
        raise ValueError("raw and states differ in dimension")
    idx_arr = np.empty(M, dtype=np.int64)
    dev_arr = np.empty(M, dtype=np.float64)
    cdef int64_t[::1] idx = idx_arr
    cdef double[::1] dev = dev_arr
    cdef Py_ssize_t m, s, k
    cdef double best, acc, a
    cdef int64_t besti
    with nogil:
        for m in range(M):
            best = 1e308
            besti = 0
            for s in range(S):
                acc = 0.0
                if metric == 0:
                    for k in range(D):
                        a = fabs(raw[m, k] - states[s, k])
                        if a > acc:
                            acc = a
                            if acc >= best:
                                break
                else:
                    for k in range(D):
                        a = raw[m, k] - states[s, k]
                        acc += a * a
                        if acc >= best:
                            break
                if acc < best:
                    best = acc
                    besti = s
            idx[m] = besti
            dev[m] = best if metric == 0 else sqrt(best)
    return idx_arr, dev_arr


def hit_count(int64_t n_cells, int64_t target, int64_t T, int64_t trials, uint64_t seed):
    """Trials in which at least one of T uniform draws over n_cells hits target."""
    cdef int64_t i, t, cell, hits = 0
    cdef uint64_t c
    cdef double u
    with nogil:
        for i in range(trials):
            for t in range(T):
                c = <uint64_t>(i * T + t)
                u = <double>(splitmix64(seed, c) >> 11) * (1.0 / 9007199254740992.0)
                cell = <int64_t>floor(u * n_cells)
                if cell >= n_cells:
                    cell = n_cells - 1
                if cell == target:
                    hits += 1
                    break
    return hits


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double beta1, double beta2, double step, double inv_sqrt_bc2, double eps):
    """Fused in-place Adam update over flat arrays."""
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi, mi, vi, d
    cdef double c1 = 1.0 - beta1, c2 = 1.0 - beta2
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = m[i] * beta1 + c1 * gi
            vi = v[i] * beta2 + (gi * gi) * c2
            m[i] = mi
            v[i] = vi
            d = sqrt(vi) * inv_sqrt_bc2 + eps
            p[i] = p[i] - (mi / d) * step
