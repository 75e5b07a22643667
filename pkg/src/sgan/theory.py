"""Numerical checks of the SGAN theory in one dimension.

Densities live on [0, 1] as piecewise-constant functions over a uniform grid
(1000 bins by default, midpoint quadrature). The module covers

* the interpolation-hit probability, by Monte Carlo (``hit_probability_simulate``)
* the closed-form optimal SGAN discriminator and its tail-difference gradient
* a trained-vs-oracle comparison of the discriminator gradient field
* the 1D Earth Mover's distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels, nn
from .learners import interpolation_counts, sgan_interpolation, sgan_loss

DEFAULT_BINS = 1000


class GridMismatchError(ValueError):
    pass


# -- densities ------------------------------------------------------------------

@dataclass(frozen=True)
class Density1D:
    """Piecewise-constant density on [0, 1]; ``pdf[i]`` is the value on bin i."""
    pdf: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pdf, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("pdf must be a non-empty 1D array")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("density must be finite and nonnegative")
        total = p.sum() / p.size
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"density integrates to {total!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "pdf", p)

    @property
    def bins(self):
        return self.pdf.size

    @property
    def width(self):
        return 1.0 / self.pdf.size

    @property
    def edges(self):
        return np.linspace(0.0, 1.0, self.bins + 1)

    @property
    def midpoints(self):
        return (np.arange(self.bins) + 0.5) / self.bins

    @property
    def masses(self):
        return self.pdf / self.bins

    def cdf(self, x):
        """CDF at ``x`` (piecewise linear through the bin edges)."""
        F = np.concatenate([[0.0], np.cumsum(self.masses)])
        F[-1] = 1.0
        return np.interp(np.clip(x, 0.0, 1.0), self.edges, F)

    def tail(self, x):
        """Mass above ``x``, i.e. the integral of the density over [x, 1]."""
        return 1.0 - self.cdf(x)

    def sample(self, rng, size):
        i = rng.choice(self.bins, size=size, p=self.masses / self.masses.sum())
        return (i + rng.random(size)) / self.bins

    def refine(self, factor: int) -> "Density1D":
        return Density1D(np.repeat(self.pdf, int(factor)))

    # constructors
    @classmethod
    def from_masses(cls, masses) -> "Density1D":
        m = np.asarray(masses, dtype=np.float64)
        m = m / m.sum()
        pdf = m * m.size
        # absorb rounding so the integral is 1 to machine precision
        pdf *= m.size / pdf.sum()
        return cls(pdf)

    @classmethod
    def uniform(cls, bins=DEFAULT_BINS) -> "Density1D":
        return cls(np.ones(bins))

    @classmethod
    def point_mass(cls, a: float, bins=DEFAULT_BINS) -> "Density1D":
        """All mass in the single bin containing ``a``."""
        m = np.zeros(bins)
        m[min(int(a * bins), bins - 1)] = 1.0
        return cls.from_masses(m)

    @classmethod
    def bumps(cls, centers, width=0.02, weights=None, bins=DEFAULT_BINS) -> "Density1D":
        """Mixture of uniform bumps of the given width around ``centers``."""
        x = (np.arange(bins) + 0.5) / bins
        weights = np.ones(len(centers)) if weights is None else np.asarray(weights, float)
        m = np.zeros(bins)
        for c, w in zip(centers, weights):
            inside = np.abs(x - c) <= width / 2
            if not inside.any():
                inside[min(int(c * bins), bins - 1)] = True
            m[inside] += w / inside.sum()
        return cls.from_masses(m)


def _same_grid(*densities):
    n = densities[0].bins
    for d in densities[1:]:
        if d.bins != n:
            raise GridMismatchError(f"densities have {n} and {d.bins} bins")


# -- interpolation-hit probability ---------------------------------------------

@dataclass(frozen=True)
class DiscretizationParams:
    eps: float
    z: int
    d: float

    def __post_init__(self):
        if not (isinstance(self.z, (int, np.integer)) and self.z >= 1):
            raise ValueError("z must be a positive integer")
        if not self.eps > 0 or not self.d > 0:
            raise ValueError("eps and d must be positive")
        k = self.d / self.eps
        if abs(k - round(k)) > 1e-6 * max(1.0, k):
            raise ValueError("d must be a positive multiple of eps")

    @property
    def delta(self):
        return self.z * self.eps

    @property
    def cells(self):
        return int(round(self.d / self.eps))

    @property
    def draws(self):
        # same rounding as the training code, without the T cap
        return int(interpolation_counts([self.d], self.delta, t_max=None)[0])


def hit_probability_simulate(params: DiscretizationParams, trials: int, seed: int = 0, target=None) -> float:
    """Fraction of trials in which one of T uniform draws over the d/eps cells
    between x_r and x_g lands in ``target`` (default: a middle cell).

    A target outside the interval is never hit, so the estimate is exactly 0.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    K = params.cells
    target = K // 2 if target is None else int(target)
    if not 0 <= target < K:
        return 0.0
    return kernels.hit_count(K, target, params.draws, trials, seed) / trials


def hit_probability_limit(z) -> float:
    return 1.0 - math.exp(-1.0 / z)


def hit_probability_constancy_check(z: int, d_values, eps_rule=lambda d: d / 2000, trials=100_000, seed=0) -> float:
    """Largest pairwise gap between hit probabilities at different distances."""
    est = [hit_probability_simulate(DiscretizationParams(eps_rule(d), z, d), trials, seed=seed + i)
           for i, d in enumerate(d_values)]
    return float(max(est) - min(est)) if est else 0.0


# -- optimal discriminator ------------------------------------------------------

@dataclass
class OptimalDiscriminator:
    x: np.ndarray       # bin midpoints
    value: np.ndarray   # D(x), with D(0) = 0
    grad: np.ndarray    # tail_r(x) - tail_g(x)
    p_r: Density1D = field(repr=False)
    p_g: Density1D = field(repr=False)

    def grad_at(self, x):
        return self.p_r.tail(x) - self.p_g.tail(x)

    def __call__(self, x):
        return np.interp(x, np.concatenate([[0.0], self.x]), np.concatenate([[0.0], self.value]))


def optimal_discriminator(p_r: Density1D, p_g: Density1D) -> OptimalDiscriminator:
    """D(x) = int_0^x (int_s^1 P_r - int_s^1 P_g) ds by cumulative summation."""
    _same_grid(p_r, p_g)
    x = p_r.midpoints
    grad = p_r.tail(x) - p_g.tail(x)
    h = p_r.width
    value = h * (np.cumsum(grad) - 0.5 * grad)
    return OptimalDiscriminator(x, value, grad, p_r, p_g)


# -- Earth Mover's distance ----------------------------------------------------

def emd_1d(p_r: Density1D, p_g: Density1D) -> float:
    """Integral of |CDF_r - CDF_g| over [0, 1], exact for piecewise-constant densities."""
    _same_grid(p_r, p_g)
    e = p_r.edges
    diff = p_r.cdf(e) - p_g.cdf(e)
    u, v = diff[:-1], diff[1:]
    h = p_r.width
    same = u * v >= 0
    au, av = np.abs(u), np.abs(v)
    denom = np.where(same, 1.0, au + av)
    per_bin = np.where(same, 0.5 * h * (au + av), 0.5 * h * (u * u + v * v) / denom)
    return float(per_bin.sum())


# -- trained gradient field vs the oracle -------------------------------------

@dataclass
class FieldCheckConfig:
    hidden: int = 64
    batch: int = 64
    delta: float = 0.05
    lr: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.9
    eval_points: int = 200


@dataclass
class FieldCheckResult:
    correlation: float
    c: float
    c_raw: float
    mean_abs_grad: float
    sign_agreement: float
    x: np.ndarray = field(repr=False)
    grad_trained: np.ndarray = field(repr=False)
    grad_oracle: np.ndarray = field(repr=False)
    losses: list = field(default_factory=list, repr=False)
    failed: bool = False
    message: str = ""

    def __iter__(self):
        return iter((self.correlation, self.c))

    def triples(self):
        return np.column_stack([self.x, self.grad_trained, self.grad_oracle])


def _mlp_params(hidden, rng):
    return nn._build([("h1", 1, hidden), ("h2", hidden, hidden), ("out", hidden, 1)], rng)


def _mlp(p, x):
    h = ad.tanh(ad.matmul(x, p["h1.W"]) + p["h1.b"])
    h = ad.tanh(ad.matmul(h, p["h2.W"]) + p["h2.b"])
    return ad.matmul(h, p["out.W"]) + p["out.b"]


def _mlp_grad(params, x):
    g = ad.Graph()
    p = {k: g.leaf(v) for k, v in params.items()}
    xt = g.leaf(x[:, None])
    (gx,) = ad.backward(ad.tsum(_mlp(p, xt)), [xt])
    return gx.data[:, 0]


def _fit(trained, reference):
    ref_norm = float(reference @ reference)
    c_raw = float(trained @ reference) / ref_norm if ref_norm > 0 else 0.0
    if trained.std() > 0 and reference.std() > 0:
        corr = float(np.corrcoef(trained, reference)[0, 1])
    else:
        corr = float("nan")
    return corr, c_raw


def theorem1_field_check(p_r: Density1D, p_g: Density1D, train_budget: int = 20_000, seed: int = 0,
                         config: FieldCheckConfig | None = None, reference=None,
                         log_every: int = 0) -> FieldCheckResult:
    """Train a 1D discriminator on the SGAN loss alone and compare its gradient
    field with the oracle tail difference.

    Returns the Pearson correlation and the least-squares scale c >= 0 of the
    trained field against the oracle. When the oracle field is identically zero
    (P_r = P_g) pass ``reference`` (another density pair's oracle field) to
    measure how much of that direction the null run picks up.
    """
    _same_grid(p_r, p_g)
    cfg = config or FieldCheckConfig()
    rng = np.random.default_rng(seed)
    params = _mlp_params(cfg.hidden, rng)
    adam = nn.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    oracle = optimal_discriminator(p_r, p_g)
    x = (np.arange(cfg.eval_points) + 0.5) / cfg.eval_points
    ref = oracle.grad_at(x) if reference is None else np.asarray(reference, dtype=np.float64)
    losses, failed, message = [], False, ""
    names = list(params)
    for step in range(train_budget):
        xr = p_r.sample(rng, cfg.batch)[:, None]
        xg = p_g.sample(rng, cfg.batch)[:, None]
        batch = sgan_interpolation(xr, xg, cfg.delta, rng, t_max=None, batch_size=cfg.batch)
        if batch.pair.size == 0:
            continue
        g = ad.Graph()
        th = {k: g.leaf(v) for k, v in params.items()}
        loss = sgan_loss(lambda xt: _mlp(th, xt), g, batch)
        value = loss.item()
        if not math.isfinite(value):
            failed, message = True, f"loss became {value} at step {step}"
            break
        grads = ad.backward(loss, [th[k] for k in names])
        try:
            nn.adam_step(adam, params, {k: gr.data for k, gr in zip(names, grads)})
        except ad.NonFiniteError as exc:
            failed, message = True, str(exc)
            break
        if log_every and step % log_every == 0:
            losses.append((step, value))
    trained = _mlp_grad(params, x)
    if failed or not np.all(np.isfinite(trained)):
        nan = float("nan")
        return FieldCheckResult(nan, nan, nan, nan, nan, x, trained, ref, losses, True,
                                message or "non-finite gradient field")
    corr, c_raw = _fit(trained, ref)
    positive = ref > 1e-12
    sign = float(np.mean(trained[positive] > 0)) if positive.any() else float("nan")
    return FieldCheckResult(corr, max(0.0, c_raw), c_raw, float(np.mean(np.abs(trained))), sign,
                            x, trained, ref, losses)
