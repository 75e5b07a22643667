import itertools
from fractions import Fraction

import numpy as np
import pytest

from sgan import domains as dm
from sgan.domains import GridDomainSpec, GridState

STEP = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1), "L": (0, -1), "R": (0, 1)}


def brute_force(spec, s):
    """Independent successor oracle: walk each named direction by hand."""
    names = "LR" if spec.kind == "1d" else "NESW"
    rows = 1 if spec.kind == "1d" else spec.size
    out = {}
    for name, p in zip(names, spec.dynamics):
        p = Fraction(p).limit_denominator(10**6)
        if p == 0:
            continue
        r, c = s.pos[0] + STEP[name][0], s.pos[1] + STEP[name][1]
        ok = 0 <= r < rows and 0 <= c < spec.size
        if ok and spec.kind == "2d_obstacle" and (r, c) == (spec.size // 2, spec.size // 2):
            ok = False
        if ok and s.fences is not None and s.fences[r * spec.size + c]:
            ok = False
        key = GridState((r, c), s.fences) if ok else s
        out[key] = out.get(key, 0) + p
    return out


ENUMERABLE = [
    GridDomainSpec("1d", 5, (1 / 3, 2 / 3)),
    GridDomainSpec("1d", 10, (0.5, 0.5)),
    GridDomainSpec("2d", 5, (0.25,) * 4),
    GridDomainSpec("2d", 5, dm.RUSSELL_NORVIG),
    GridDomainSpec("2d_obstacle", 5, (0.25,) * 4),
    GridDomainSpec("2d_obstacle", 5, dm.RUSSELL_NORVIG, "image"),
    GridDomainSpec("2d", 4, (0.25,) * 4, "image"),
]


@pytest.mark.parametrize("spec", ENUMERABLE, ids=lambda s: s.label())
def test_true_distribution_matches_brute_force(spec):
    for s in dm.enumerate_valid_states(spec):
        exact = dm.true_next_distribution_exact(spec, s)
        assert exact == brute_force(spec, s)
        assert sum(exact.values()) == 1


def test_paper_hallway_examples():
    spec = GridDomainSpec("1d", 5, (1 / 3, 2 / 3))
    d = dm.true_next_distribution(spec, dm.state_1d(2))
    assert d == pytest.approx({dm.state_1d(1): 1 / 3, dm.state_1d(3): 2 / 3})
    d = dm.true_next_distribution(spec, dm.state_1d(4))
    assert d == pytest.approx({dm.state_1d(3): 1 / 3, dm.state_1d(4): 2 / 3})


def test_russell_norvig_corner():
    spec = GridDomainSpec("2d", 5, dm.RUSSELL_NORVIG)
    d = dm.true_next_distribution_exact(spec, GridState((0, 0)))
    # north blocked (0.8 stays), east 0.1 moves, west blocked 0.1 stays
    assert d == {GridState((0, 0)): Fraction(9, 10), GridState((0, 1)): Fraction(1, 10)}


def test_random_background_brute_force(rng):
    spec = GridDomainSpec("2d_random_background", 5, dm.RUSSELL_NORVIG)
    for _ in range(200):
        s = dm.random_state(spec, rng)
        assert dm.true_next_distribution_exact(spec, s) == brute_force(spec, s)


def test_invalid_states_rejected():
    spec = GridDomainSpec("2d_obstacle", 5, (0.25,) * 4)
    with pytest.raises(dm.InvalidStateError):
        dm.true_next_distribution(spec, GridState((2, 2)))
    with pytest.raises(dm.InvalidStateError):
        dm.encode(spec, GridState((5, 0)))
    with pytest.raises(ValueError):
        GridDomainSpec("2d", 5, (0.5, 0.5, 0.5, 0.5))


def test_dimensions():
    assert GridDomainSpec("1d", 5, (0.5, 0.5)).dim == 5
    assert GridDomainSpec("2d", 5, (0.25,) * 4, "image").dim == 400
    assert GridDomainSpec("2d_random_background", 5, (0.25,) * 4, "image").dim == 800


@pytest.mark.parametrize("spec", ENUMERABLE, ids=lambda s: s.label())
def test_encode_decode_round_trip(spec):
    for s in dm.enumerate_valid_states(spec):
        v = dm.encode(spec, s)
        assert dm.decode(spec, v) == s
        assert dm.decode(spec, v + 0.09) == s
        assert dm.decode(spec, v + 0.11) is None


def test_obstacle_pixel_value():
    spec = GridDomainSpec("2d_obstacle", 5, (0.25,) * 4)
    v = dm.encode(spec, GridState((0, 0))).reshape(5, 5)
    assert v[2, 2] == 0.5 and v[0, 0] == 1.0 and v.sum() == 1.5


def test_image_blocks_are_constant():
    spec = GridDomainSpec("2d", 3, (0.25,) * 4, "image")
    img = dm.encode(spec, GridState((1, 2))).reshape(12, 12)
    assert img[4:8, 8:12].min() == 1.0 and img.sum() == 16


def _brute_nearest(spec, raw, metric):
    best, best_s = np.inf, None
    for fences in itertools.product([False, True], repeat=spec.n_cells):
        for s in dm.enumerate_valid_states(spec, background=fences):
            diff = raw - dm.encode(spec, s)
            d = np.abs(diff).max() if metric == "maxabs" else np.sqrt(diff @ diff)
            if d < best - 1e-12:
                best, best_s = d, s
    return best_s, best


@pytest.mark.parametrize("metric", ["maxabs", "l2"])
def test_structural_snap_matches_enumeration(rng, metric):
    spec = GridDomainSpec("2d_random_background", 2, (0.25,) * 4)
    for _ in range(15):
        s = dm.random_state(spec, rng)
        raw = dm.encode(spec, s) + rng.normal(0, 0.25, spec.dim)
        idx, fences, dev = dm.structural_nearest(spec, raw[None], metric)
        _, want = _brute_nearest(spec, raw, metric)
        assert dev[0] == pytest.approx(want, abs=1e-12)


def test_decode_random_background(rng):
    spec = GridDomainSpec("2d_random_background", 5, (0.25,) * 4, "image")
    for _ in range(50):
        s = dm.random_state(spec, rng)
        assert dm.decode(spec, dm.encode(spec, s) + rng.uniform(-0.05, 0.05, spec.dim)) == s


def test_state_space_guard():
    spec = GridDomainSpec("2d_random_background", 5, (0.25,) * 4)
    with pytest.raises(dm.StateSpaceTooLarge):
        dm.enumerate_valid_states(spec)
    assert len(dm.enumerate_valid_states(spec, background=(False,) * 25)) == 25


def test_transition_pair_count():
    assert dm.count_transition_pairs(GridDomainSpec("1d", 5, (1 / 3, 2 / 3))) == 5 * 2
    small = GridDomainSpec("2d_random_background", 2, (0.25,) * 4)
    brute = sum(len(dm.true_next_distribution(small, s))
                for f in itertools.product([False, True], repeat=4)
                for s in dm.enumerate_valid_states(small, background=f))
    assert dm.count_transition_pairs(small) == brute


def test_dataset_frequencies_within_three_standard_errors(rng):
    spec = GridDomainSpec("1d", 5, (1 / 3, 2 / 3))
    ds = dm.generate_dataset(spec, 20_000, rng)
    starts = ds.xbar.argmax(axis=1)
    ends = ds.xr.argmax(axis=1)
    mid = starts == 2
    n = mid.sum()
    p_hat = np.mean(ends[mid] == 3)
    assert abs(p_hat - 2 / 3) < 3 * np.sqrt(2 / 9 / n)
    assert set(np.unique(ends[starts == 0])) == {0, 1}


def test_dataset_round_trip_and_corruption(tmp_path, rng):
    from sgan.fileformat import IntegrityError
    spec = GridDomainSpec("2d_obstacle", 5, dm.RUSSELL_NORVIG)
    ds = dm.generate_dataset(spec, 50, rng, seed=3)
    path = tmp_path / "d.sgd"
    dm.save_dataset(path, ds)
    back = dm.load_dataset(path)
    assert back.spec == spec and back.seed == 3
    np.testing.assert_array_equal(back.xbar, ds.xbar)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(IntegrityError):
        dm.load_dataset(path)


def test_default_dataset_size():
    assert dm.default_dataset_size(GridDomainSpec("1d", 5, (0.5, 0.5))) == 1000
