import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sgan import evaluation as ev
from sgan.domains import GridDomainSpec, GridState, encode, state_1d, true_next_distribution
from sgan.learners import TabularModel, tabular_fit
from sgan.domains import generate_dataset

HALL = GridDomainSpec("1d", 5, (1 / 3, 2 / 3))


def test_l1_examples():
    assert ev.l1_distance({"a": 1.0}, {"b": 1.0}) == 2.0
    assert ev.l1_distance({"a": 0.5, "b": 0.5}, {"a": 0.5, "b": 0.5}) == 0.0
    assert ev.l1_distance({"a": 0.25, "b": 0.75}, {"a": 0.5, "b": 0.5}) == pytest.approx(0.5)


dists = st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda w: sum(w) > 1e-3)


def _norm(w):
    s = sum(w)
    return {i: x / s for i, x in enumerate(w)}


@given(dists, dists, dists)
def test_l1_metric_axioms(a, b, c):
    a, b, c = _norm(a), _norm(b), _norm(c)
    assert ev.l1_distance(a, a) == 0
    assert ev.l1_distance(a, b) == pytest.approx(ev.l1_distance(b, a))
    assert 0 <= ev.l1_distance(a, b) <= 2 + 1e-12
    assert ev.l1_distance(a, c) <= ev.l1_distance(a, b) + ev.l1_distance(b, c) + 1e-12


def test_snap_threshold():
    v = encode(HALL, state_1d(2))
    assert ev.snap(HALL, v + 0.05) == state_1d(2)
    assert ev.snap(HALL, v + 0.1) is None
    states, dev = ev.snap_batch(HALL, np.stack([v, v * 0.5]))
    assert states[0] == state_1d(2) and states[1] is None and dev[1] == pytest.approx(0.5)


def test_snap_random_background_uses_structure(rng):
    spec = GridDomainSpec("2d_random_background", 5, (0.25,) * 4)
    s = GridState((2, 2), tuple(bool(x) for x in rng.random(25) < 0.2)[:12] + (False,) + (False,) * 12)
    assert ev.snap(spec, encode(spec, s) + 0.03) == s


def exact_sampler(spec):
    """Samples from the true successor distribution (an ideal generator)."""
    def sample(xbar, count, rng):
        s = ev.snap(spec, xbar)
        dist = true_next_distribution(spec, s)
        keys = list(dist)
        pick = rng.choice(len(keys), size=count, p=[dist[k] for k in keys])
        return np.stack([encode(spec, keys[i]) for i in pick])
    return sample


def test_empirical_distribution_of_ideal_sampler(rng):
    res = ev.empirical_distribution(exact_sampler(HALL), HALL, encode(HALL, state_1d(2)), 20_000, rng)
    assert res.validity == 1.0 and res.invalid_resample_count == 0
    p = res.distribution[state_1d(3)]
    assert abs(p - 2 / 3) < 3 * np.sqrt(2 / 9 / 20_000)


def test_resampling_and_validity(rng):
    def half_bad(xbar, count, rng):
        out = np.tile(encode(HALL, state_1d(1)), (count, 1))
        out[rng.random(count) < 0.5] = 0.5
        return out
    res = ev.empirical_distribution(half_bad, HALL, encode(HALL, state_1d(2)), 1000, rng)
    assert 0.45 < res.validity < 0.55
    assert res.samples_used == 1000 and res.invalid_resample_count > 0


def test_no_valid_samples_gives_l1_two(rng):
    class Garbage:
        def sample(self, xbar, count, rng):
            return np.full((count, 5), 0.5)
    rep = ev.evaluate_model(Garbage(), HALL, [state_1d(2)], 50, rng)
    assert rep.l1 == 2.0 and rep.validity == 0.0
    assert rep.rows[0]["samples_used"] == 0


def test_evaluate_ideal_sampler_and_tabular(rng):
    class Ideal:
        sample = staticmethod(exact_sampler(HALL))
    rep = ev.evaluate_model(Ideal(), HALL, [state_1d(i) for i in range(5)], 5000, rng)
    assert rep.validity == 1.0 and rep.l1 < 0.05
    tab = tabular_fit(generate_dataset(HALL, 100_000, rng))
    rep = ev.evaluate_model(tab, HALL, [state_1d(i) for i in range(5)], 10, rng)
    assert rep.l1 < 0.01 and rep.validity == 1.0
    empty = TabularModel(HALL)
    assert ev.evaluate_model(empty, HALL, [state_1d(0)], 10, rng).l1 == 2.0


def test_evaluation_is_reproducible():
    class Ideal:
        sample = staticmethod(exact_sampler(HALL))
    a = ev.evaluate_model(Ideal(), HALL, [state_1d(1), state_1d(3)], 500, np.random.default_rng(5))
    b = ev.evaluate_model(Ideal(), HALL, [state_1d(1), state_1d(3)], 500, np.random.default_rng(5))
    assert a.l1 == b.l1 and a.rows == b.rows
