"""Grid environments with exact successor distributions.

Kinds
-----
``1d``                    1 x n hallway, dynamics (left, right)
``2d``                    n x n grid, dynamics (north, east, south, west)
``2d_obstacle``           as ``2d`` plus one impassable cell at (n//2, n//2)
``2d_random_background``  as ``2d`` with a random fence layout per state

A move that would leave the grid, or enter an obstacle/fence cell, leaves the
agent in place. Probabilities are handled as exact fractions internally.

Encodings are flat float64 vectors. ``vector`` uses one value per cell,
``image`` tiles each cell into a block_size x block_size patch. The agent is
1.0, obstacle cells are 0.5. Random-background states use two planes, fence
plane first, then agent plane.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .fileformat import DATASET_MAGIC, read_container, write_container

KINDS = ("1d", "2d", "2d_obstacle", "2d_random_background")
REPRESENTATIONS = ("vector", "image")
VALIDITY_THRESHOLD = 0.1
STATE_CAP = 2 ** 20

UNIFORM_2D = (0.25, 0.25, 0.25, 0.25)
RUSSELL_NORVIG = (0.8, 0.1, 0.0, 0.1)
HALLWAY = (1 / 3, 2 / 3)

_MOVES_1D = ((0, -1), (0, 1))
_MOVES_2D = ((-1, 0), (0, 1), (1, 0), (0, -1))  # N, E, S, W


class InvalidStateError(ValueError):
    pass


class StateSpaceTooLarge(RuntimeError):
    pass


def _exact(p) -> Fraction:
    if isinstance(p, Fraction):
        return p
    # 1/3 typed as 0.333... should mean 1/3
    return Fraction(p).limit_denominator(10 ** 6)


@dataclass(frozen=True)
class GridDomainSpec:
    kind: str
    size: int
    dynamics: tuple
    representation: str = "vector"
    block_size: int = 4
    fence_prob: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.size < 2:
            raise ValueError("size must be >= 2")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        want = 2 if self.kind == "1d" else 4
        if len(self.dynamics) != want:
            raise ValueError(f"{self.kind} needs {want} dynamics probabilities")
        probs = [_exact(p) for p in self.dynamics]
        if any(p < 0 for p in probs) or sum(probs) != 1:
            raise ValueError(f"dynamics {self.dynamics} must be nonnegative and sum to 1")
        if not 0.0 <= self.fence_prob < 1.0:
            raise ValueError("fence_prob must be in [0, 1)")
        object.__setattr__(self, "dynamics", tuple(float(p) for p in self.dynamics))

    @property
    def rows(self) -> int:
        return 1 if self.kind == "1d" else self.size

    @property
    def cols(self) -> int:
        return self.size

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def channels(self) -> int:
        return 2 if self.kind == "2d_random_background" else 1

    @property
    def pixels_per_cell(self) -> int:
        return self.block_size ** 2 if self.representation == "image" else 1

    @property
    def dim(self) -> int:
        return self.channels * self.n_cells * self.pixels_per_cell

    @property
    def is_image(self) -> bool:
        return self.representation == "image"

    @property
    def enumerable(self) -> bool:
        return self.kind != "2d_random_background"

    @property
    def is_complex(self) -> bool:
        return self.kind in ("2d_obstacle", "2d_random_background")

    @property
    def obstacle(self) -> Optional[tuple]:
        if self.kind == "2d_obstacle":
            return (self.size // 2, self.size // 2)
        return None

    @property
    def moves(self):
        return _MOVES_1D if self.kind == "1d" else _MOVES_2D

    def exact_dynamics(self) -> list[Fraction]:
        return [_exact(p) for p in self.dynamics]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dynamics"] = list(self.dynamics)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridDomainSpec":
        d = dict(d)
        d["dynamics"] = tuple(d["dynamics"])
        return cls(**d)

    def label(self) -> str:
        dyn = ":".join(f"{p:.4g}" for p in self.dynamics)
        return f"{self.kind}/{self.representation}/{self.size}/{dyn}"


@dataclass(frozen=True, order=True)
class GridState:
    """Agent cell (row, col) plus, for random backgrounds, the fence mask."""

    pos: tuple
    fences: Optional[tuple] = None

    def key(self) -> str:
        s = "r{}c{}".format(*self.pos)
        if self.fences is not None:
            s += ":" + "".join("1" if f else "0" for f in self.fences)
        return s

    def __str__(self):
        return self.key()

    @classmethod
    def from_key(cls, key: str) -> "GridState":
        cell, _, mask = key.partition(":")
        r, c = cell[1:].split("c")
        fences = tuple(ch == "1" for ch in mask) if mask else None
        return cls((int(r), int(c)), fences)


def state_1d(i: int) -> GridState:
    return GridState((0, int(i)))


def blocked(spec: GridDomainSpec, s: GridState, r: int, c: int) -> bool:
    if not (0 <= r < spec.rows and 0 <= c < spec.cols):
        return True
    if spec.obstacle == (r, c):
        return True
    if s.fences is not None and s.fences[r * spec.cols + c]:
        return True
    return False


def validate_state(spec: GridDomainSpec, s: GridState) -> None:
    if not isinstance(s, GridState) or len(s.pos) != 2:
        raise InvalidStateError(f"not a grid state: {s!r}")
    if spec.kind == "2d_random_background":
        if s.fences is None or len(s.fences) != spec.n_cells:
            raise InvalidStateError("random-background state needs a full fence mask")
    elif s.fences is not None:
        raise InvalidStateError(f"{spec.kind} states carry no fence mask")
    if blocked(spec, s, *s.pos):
        raise InvalidStateError(f"agent at {s.pos} is off-grid or on an impassable cell")


def true_next_distribution_exact(spec: GridDomainSpec, s: GridState) -> dict:
    validate_state(spec, s)
    out: dict = {}
    r, c = s.pos
    for (dr, dc), p in zip(spec.moves, spec.exact_dynamics()):
        if p == 0:
            continue
        nr, nc = r + dr, c + dc
        nxt = s if blocked(spec, s, nr, nc) else GridState((nr, nc), s.fences)
        out[nxt] = out.get(nxt, Fraction(0)) + p
    return out


def true_next_distribution(spec: GridDomainSpec, s: GridState) -> dict:
    """Exact successor distribution of ``s`` as {GridState: probability}."""
    return {k: float(v) for k, v in true_next_distribution_exact(spec, s).items()}


# -- encoding -------------------------------------------------------------------

def _planes(spec: GridDomainSpec, s: GridState) -> np.ndarray:
    agent = np.zeros((spec.rows, spec.cols))
    agent[s.pos] = 1.0
    if spec.obstacle is not None:
        agent[spec.obstacle] = 0.5
    if spec.channels == 1:
        return agent[None]
    fence = np.array(s.fences, dtype=np.float64).reshape(spec.rows, spec.cols)
    return np.stack([fence, agent])


def _tile(spec: GridDomainSpec, planes: np.ndarray) -> np.ndarray:
    if spec.is_image:
        b = spec.block_size
        planes = np.kron(planes, np.ones((1, b, b)))
    return planes.reshape(-1)


def encode(spec: GridDomainSpec, s: GridState) -> np.ndarray:
    validate_state(spec, s)
    return _tile(spec, _planes(spec, s))


def cell_blocks(spec: GridDomainSpec, v: np.ndarray) -> np.ndarray:
    """Reshape encoded vectors [..., dim] to [..., channels, cells, pixels_per_cell]."""
    v = np.asarray(v, dtype=np.float64)
    lead = v.shape[:-1]
    if v.shape[-1] != spec.dim:
        raise ValueError(f"expected encoded dimension {spec.dim}, got {v.shape[-1]}")
    b = spec.block_size if spec.is_image else 1
    x = v.reshape(lead + (spec.channels, spec.rows, b, spec.cols, b))
    nd = len(lead)
    x = np.moveaxis(x, nd + 3, nd + 2)  # [..., ch, rows, cols, b, b]
    return x.reshape(lead + (spec.channels, spec.n_cells, b * b))


def structural_nearest(spec: GridDomainSpec, raw: np.ndarray, metric: str = "maxabs"):
    """Nearest valid state for each row of ``raw`` without enumerating states.

    Returns (cell index of agent, fence masks [M, cells] bool or None, deviation).
    Exact for both metrics because the deviation decomposes over cells.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    blk = cell_blocks(spec, raw)  # [M, ch, cells, ppc]
    M, cells = raw.shape[0], spec.n_cells
    if metric == "maxabs":
        def cost(x, target):
            return np.max(np.abs(x - target), axis=-1)
        combine_many = np.max
        combine = np.maximum
    elif metric == "l2":
        def cost(x, target):
            return np.sum((x - target) ** 2, axis=-1)
        combine_many = np.sum
        combine = np.add
    else:
        raise ValueError(f"unknown metric {metric!r}")

    agent = blk[:, -1]
    on = cost(agent, 1.0)   # [M, cells] cost of agent here
    off = cost(agent, 0.0)  # cost of empty cell
    fence_mask = None
    if spec.obstacle is not None:
        oc = spec.obstacle[0] * spec.cols + spec.obstacle[1]
        off = off.copy()
        off[:, oc] = cost(agent[:, oc], 0.5)
        on = on.copy()
        on[:, oc] = np.inf
    if spec.channels == 2:
        fplane = blk[:, 0]
        f0, f1 = cost(fplane, 0.0), cost(fplane, 1.0)
        best_f = np.minimum(f0, f1)
        fence_mask = f1 < f0
    # the agent's own cell is forced fence-free (f0 term below)
    if metric == "maxabs":
        # max over other cells of off-cost: use top-2 trick
        order = np.argsort(-off, axis=1, kind="stable")
        top1 = np.take_along_axis(off, order[:, :1], 1)[:, 0]
        top2 = np.take_along_axis(off, order[:, 1:2], 1)[:, 0] if cells > 1 else np.zeros(M)
        others = np.where(np.arange(cells)[None, :] == order[:, :1], top2[:, None], top1[:, None])
        total = combine(on, others)
        if spec.channels == 2:
            bf = best_f
            o1 = np.argsort(-bf, axis=1, kind="stable")
            b1 = np.take_along_axis(bf, o1[:, :1], 1)[:, 0]
            b2 = np.take_along_axis(bf, o1[:, 1:2], 1)[:, 0]
            fothers = np.where(np.arange(cells)[None, :] == o1[:, :1], b2[:, None], b1[:, None])
            total = combine(total, combine(fothers, f0))
    else:
        others = off.sum(axis=1, keepdims=True) - off
        total = on + others
        if spec.channels == 2:
            total = total + (best_f.sum(axis=1, keepdims=True) - best_f) + f0
    idx = np.argmin(total, axis=1)
    dev = total[np.arange(M), idx]
    if metric == "l2":
        dev = np.sqrt(dev)
    if fence_mask is not None:
        fence_mask = fence_mask.copy()
        fence_mask[np.arange(M), idx] = False
    return idx, fence_mask, dev


def decode(spec: GridDomainSpec, v, threshold: float = VALIDITY_THRESHOLD):
    """Inverse of :func:`encode`; ``None`` when ``v`` is not within ``threshold``
    (max-abs) of any valid state."""
    idx, fences, dev = structural_nearest(spec, np.asarray(v)[None])
    if not dev[0] < threshold:
        return None
    i = int(idx[0])
    pos = (i // spec.cols, i % spec.cols)
    f = tuple(bool(x) for x in fences[0]) if fences is not None else None
    return GridState(pos, f)


# -- state spaces ---------------------------------------------------------------

def enumerate_valid_states(spec: GridDomainSpec, background=None, cap: int = STATE_CAP) -> list:
    """All valid states (for random backgrounds: all agent positions on ``background``)."""
    if spec.kind == "2d_random_background":
        if background is None:
            estimate = sum(math.comb(spec.n_cells, f) * (spec.n_cells - f) for f in range(spec.n_cells))
            raise StateSpaceTooLarge(
                f"random-background space has {estimate} states; pass a fixed background")
        background = tuple(bool(b) for b in background)
        if len(background) != spec.n_cells:
            raise ValueError("background must have one entry per cell")
    else:
        background = None
    count = spec.n_cells
    if count > cap:
        raise StateSpaceTooLarge(f"{count} states exceed the cap of {cap}")
    out = []
    for r in range(spec.rows):
        for c in range(spec.cols):
            s = GridState((r, c), background)
            if not blocked(spec, s, r, c):
                out.append(s)
    return out


def count_transition_pairs(spec: GridDomainSpec) -> int:
    """Exact number of (state, successor) pairs with positive probability."""
    probs = spec.exact_dynamics()
    live = [m for m, p in zip(spec.moves, probs) if p > 0]
    if spec.enumerable:
        return sum(len(true_next_distribution_exact(spec, s)) for s in enumerate_valid_states(spec))
    n, cells = spec.size, spec.n_cells
    total = 0
    for r in range(n):
        for c in range(n):
            targets = [(r + dr, c + dc) for dr, dc in live]
            inside = sorted({t for t in targets if 0 <= t[0] < n and 0 <= t[1] < n})
            k = len(inside)
            free = cells - 1 - k
            for bits in itertools.product((False, True), repeat=k):
                fenced = {t for t, b in zip(inside, bits) if b}
                dests = set()
                for t in targets:
                    in_grid = 0 <= t[0] < n and 0 <= t[1] < n
                    dests.add(t if in_grid and t not in fenced else (r, c))
                total += len(dests) * 2 ** free
    return total


def random_background(spec: GridDomainSpec, rng) -> tuple:
    return tuple(bool(b) for b in rng.random(spec.n_cells) < spec.fence_prob)


def random_state(spec: GridDomainSpec, rng, agent_pos=None) -> GridState:
    if spec.enumerable:
        states = enumerate_valid_states(spec)
        return states[int(rng.integers(len(states)))]
    while True:
        bg = list(random_background(spec, rng))
        if agent_pos is not None:
            bg[agent_pos[0] * spec.cols + agent_pos[1]] = False
            return GridState(tuple(agent_pos), tuple(bg))
        free = [i for i, f in enumerate(bg) if not f]
        if free:
            i = free[int(rng.integers(len(free)))]
            return GridState((i // spec.cols, i % spec.cols), tuple(bg))


def heuristic_delta(spec: GridDomainSpec) -> float:
    """||s_d - s_s|| / 3: background-only state vs. the same state with an agent."""
    return math.sqrt(spec.pixels_per_cell) / 3.0


# -- sampling and datasets ----------------------------------------------------------

@dataclass
class TransitionPair:
    xbar: np.ndarray
    xr: np.ndarray


def _draw(dist: dict, rng):
    keys = list(dist)
    cdf = np.cumsum([dist[k] for k in keys])
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return keys[min(i, len(keys) - 1)]


def sample_transition(spec: GridDomainSpec, s: GridState, rng) -> TransitionPair:
    nxt = _draw(true_next_distribution(spec, s), rng)
    return TransitionPair(encode(spec, s), encode(spec, nxt))


@dataclass
class Dataset:
    spec: GridDomainSpec
    xbar: np.ndarray
    xr: np.ndarray
    seed: Optional[int] = None

    def __len__(self):
        return self.xbar.shape[0]

    def pairs(self):
        for a, b in zip(self.xbar, self.xr):
            yield TransitionPair(a, b)


def default_dataset_size(spec: GridDomainSpec, fraction: float = 1e-6, minimum: int = 1000) -> int:
    return max(minimum, math.ceil(fraction * count_transition_pairs(spec)))


def generate_dataset(spec: GridDomainSpec, count: int, rng, seed=None) -> Dataset:
    """``count`` i.i.d. pairs; start states uniform over valid states (and over
    fence layouts for random backgrounds)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    V = spec.dim
    xbar = np.empty((count, V))
    xr = np.empty((count, V))
    if spec.enumerable:
        states = enumerate_valid_states(spec)
        enc = np.stack([encode(spec, s) for s in states])
        index = {s: i for i, s in enumerate(states)}
        succ, cdfs = [], []
        for s in states:
            d = true_next_distribution(spec, s)
            succ.append(np.array([index[k] for k in d]))
            cdfs.append(np.cumsum(list(d.values())))
        starts = rng.integers(len(states), size=count)
        u = rng.random(count)
        for j in range(count):
            i = starts[j]
            k = min(int(np.searchsorted(cdfs[i], u[j] * cdfs[i][-1], side="right")), len(succ[i]) - 1)
            xbar[j] = enc[i]
            xr[j] = enc[succ[i][k]]
    else:
        for j in range(count):
            s = random_state(spec, rng)
            pair = sample_transition(spec, s, rng)
            xbar[j], xr[j] = pair.xbar, pair.xr
    return Dataset(spec, xbar, xr, seed)


def save_dataset(path, ds: Dataset) -> None:
    meta = {"kind": "dataset", "spec": ds.spec.to_dict(), "seed": ds.seed,
            "count": len(ds), "dim": ds.spec.dim}
    write_container(path, DATASET_MAGIC, meta, {"xbar": ds.xbar, "xr": ds.xr})


def load_dataset(path) -> Dataset:
    header, arrays = read_container(path, DATASET_MAGIC)
    spec = GridDomainSpec.from_dict(header["spec"])
    return Dataset(spec, arrays["xbar"], arrays["xr"], header.get("seed"))
