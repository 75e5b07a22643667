"""L1 distance to the true successor distribution and sample validity."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .domains import (VALIDITY_THRESHOLD, GridDomainSpec, GridState, encode,
                      enumerate_valid_states, structural_nearest, true_next_distribution)

DEFAULT_SAMPLES = 10_000
DEFAULT_SAMPLES_RANDOM_BG = 1_000


def l1_distance(a: dict, b: dict) -> float:
    keys = set(a) | set(b)
    return float(sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys))


@lru_cache(maxsize=32)
def _state_table(spec: GridDomainSpec):
    states = enumerate_valid_states(spec)
    return states, np.stack([encode(spec, s) for s in states])


def snap_batch(spec: GridDomainSpec, raw, metric="maxabs", threshold=VALIDITY_THRESHOLD):
    """Nearest valid state (or None) for each row of ``raw``, plus deviations."""
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    if raw.shape[1] != spec.dim:
        raise ValueError(f"expected encoded dimension {spec.dim}, got {raw.shape[1]}")
    if spec.enumerable:
        states, table = _state_table(spec)
        idx, dev = kernels.nearest_state(raw, table, metric)
        found = [states[i] for i in idx]
    else:
        idx, fences, dev = structural_nearest(spec, raw, metric)
        found = [GridState((int(i) // spec.cols, int(i) % spec.cols), tuple(bool(x) for x in f))
                 for i, f in zip(idx, fences)]
    return [s if d < threshold else None for s, d in zip(found, dev)], dev


def snap(spec: GridDomainSpec, raw, metric="maxabs", threshold=VALIDITY_THRESHOLD):
    """Canonical state for one raw vector, or None if it is invalid."""
    states, _ = snap_batch(spec, np.asarray(raw)[None], metric, threshold)
    return states[0]


@dataclass
class EmpiricalResult:
    distribution: dict
    validity: float
    samples_used: int
    invalid_resample_count: int


def empirical_distribution(sampler, spec: GridDomainSpec, xbar, n_samples: int, rng,
                           max_resamples: int | None = None, metric="maxabs") -> EmpiricalResult:
    """Sample ``sampler(xbar, count, rng)`` and snap outputs to states.

    Validity is the valid fraction of the first ``n_samples`` draws. Invalid
    draws are then replaced by fresh ones until ``n_samples`` valid samples
    are collected or ``max_resamples`` total draws (default 10x) are spent.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    budget = 10 * n_samples if max_resamples is None else max_resamples
    snapped, _ = snap_batch(spec, sampler(xbar, n_samples, rng), metric)
    valid = [s for s in snapped if s is not None]
    validity = len(valid) / n_samples
    drawn, resampled = n_samples, 0
    while len(valid) < n_samples and drawn < budget:
        want = min(n_samples - len(valid), budget - drawn)
        more, _ = snap_batch(spec, sampler(xbar, want, rng), metric)
        drawn += want
        resampled += want
        valid.extend(s for s in more if s is not None)
    counts: dict = {}
    for s in valid:
        counts[s] = counts.get(s, 0) + 1
    total = len(valid)
    dist = {k: c / total for k, c in counts.items()} if total else {}
    return EmpiricalResult(dist, validity, total, resampled)


@dataclass
class EvalReport:
    l1: float
    validity: float
    rows: list = field(default_factory=list)

    @property
    def samples_used(self):
        return sum(r["samples_used"] for r in self.rows)

    @property
    def invalid_resample_count(self):
        return sum(r["invalid_resample_count"] for r in self.rows)


def evaluate_model(model, spec: GridDomainSpec, states, n_samples: int, rng, metric="maxabs") -> EvalReport:
    """Mean L1 and validity over ``states``.

    Query-type models (``predict_distribution``) are scored directly; an
    unseen state scores L1 = 2. Generative models (``sample``) go through
    :func:`empirical_distribution`; no valid sample at all also scores 2.
    """
    states = list(states)
    if not states:
        raise ValueError("need at least one start state")
    rows = []
    streams = rng.spawn(len(states))
    for s, r in zip(states, streams):
        truth = true_next_distribution(spec, s)
        x = encode(spec, s)
        if hasattr(model, "predict_distribution"):
            pred = model.predict_distribution(x)
            l1 = 2.0 if pred is None else l1_distance(pred, truth)
            rows.append({"state": s.key(), "l1": l1, "validity": 1.0,
                         "samples_used": 0, "invalid_resample_count": 0})
            continue
        res = empirical_distribution(model.sample, spec, x, n_samples, r, metric=metric)
        l1 = l1_distance(res.distribution, truth) if res.samples_used else 2.0
        rows.append({"state": s.key(), "l1": l1, "validity": res.validity,
                     "samples_used": res.samples_used,
                     "invalid_resample_count": res.invalid_resample_count})
    return EvalReport(float(np.mean([r["l1"] for r in rows])),
                      float(np.mean([r["validity"] for r in rows])), rows)
