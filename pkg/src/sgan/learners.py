"""Transition-model learners: tabular counts, a deterministic least-squares
network, GP-WGAN, and SGAN.

All deep learners share the generator/discriminator layout from :mod:`sgan.nn`
and the Adam settings (lr 1e-4, beta1 0, beta2 0.9). One training iteration
is ``critic_iters`` discriminator updates followed by one generator update,
each on a fresh batch drawn uniformly with replacement.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from . import nn
from .domains import Dataset, GridDomainSpec, decode, heuristic_delta

KINDS = ("tabular", "deterministic", "gpwgan", "sgan")
T_MAX = 64
MIN_PAIR_DISTANCE = 1e-9
# guards ceil() against d/delta landing a hair above an integer (0.9/0.3)
_CEIL_SLACK = 1e-9


@dataclass
class TrainConfig:
    critic_iters: int = 5
    batch_size: int = 32
    delta: Optional[float] = None          # None: 0.3 vector / 1.0 image
    delta_rule: str = "fixed"              # or "heuristic": ||s_d - s_s|| / 3
    gp_lambda: float = 10.0
    rho: float = 1.0
    noise_retention: Optional[bool] = None  # None: on for complex domains only
    iterations: int = 2000
    noise_dim: int = nn.NOISE_DIM
    hidden: int = nn.HIDDEN
    t_max: int = T_MAX
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for name in ("critic_iters", "batch_size", "iterations", "noise_dim", "hidden", "t_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be > 0")
        if self.gp_lambda < 0 or self.rho < 0 or not self.lr > 0:
            raise ValueError("gp_lambda and rho must be >= 0, lr > 0")
        if self.delta_rule not in ("fixed", "heuristic"):
            raise ValueError(f"unknown delta_rule {self.delta_rule!r}")

    def resolved(self, spec: GridDomainSpec) -> "TrainConfig":
        """Copy with every None default filled in for ``spec``."""
        d = asdict(self)
        if d["delta"] is None:
            if self.delta_rule == "heuristic":
                d["delta"] = heuristic_delta(spec)
            else:
                d["delta"] = 1.0 if spec.is_image else 0.3
        if d["noise_retention"] is None:
            d["noise_retention"] = spec.is_complex
        return TrainConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# -- tabular -----------------------------------------------------------------

class UnseenState:
    """Returned by the tabular learner for a start state it never observed."""

    def __repr__(self):
        return "UNSEEN"


UNSEEN = UnseenState()


@dataclass
class TabularModel:
    spec: GridDomainSpec
    counts: dict = field(default_factory=dict)
    totals: dict = field(default_factory=dict)

    def predict_distribution(self, xbar):
        pred = tabular_predict(self, xbar)
        return None if pred is UNSEEN else pred


def tabular_fit(dataset: Dataset) -> TabularModel:
    model = TabularModel(dataset.spec)
    for xb, xr in zip(dataset.xbar, dataset.xr):
        a, b = decode(dataset.spec, xb), decode(dataset.spec, xr)
        if a is None or b is None:
            raise ValueError("dataset contains a vector that is not a valid state")
        inner = model.counts.setdefault(a, {})
        inner[b] = inner.get(b, 0) + 1
        model.totals[a] = model.totals.get(a, 0) + 1
    return model


def tabular_predict(model: TabularModel, xbar):
    s = decode(model.spec, xbar)
    if s is None or s not in model.counts:
        return UNSEEN
    total = model.totals[s]
    return {k: c / total for k, c in model.counts[s].items()}


# -- deep models ----------------------------------------------------------------

def _sample_in_chunks(fn, count, chunk=4096):
    return np.concatenate([fn(min(chunk, count - lo)) for lo in range(0, count, chunk)])


@dataclass
class DeterministicModel:
    generator: nn.GeneratorNet
    adam: nn.AdamState

    kind = "deterministic"

    def predict(self, xbar):
        xbar = np.atleast_2d(xbar)
        zeros = np.zeros((xbar.shape[0], self.generator.noise_dim))
        return nn.gen_forward(self.generator, xbar, zeros).data

    def sample(self, xbar, count, rng=None):
        return np.repeat(self.predict(xbar), count, axis=0)


@dataclass
class GanModel:
    kind: str
    generator: nn.GeneratorNet
    discriminator: nn.DiscriminatorNet
    g_adam: nn.AdamState
    d_adam: nn.AdamState
    diagnostics: dict = field(default_factory=lambda: {"skipped_pairs": 0, "noop_disc_steps": 0})

    def __post_init__(self):
        if self.kind not in ("gpwgan", "sgan"):
            raise ValueError(f"GAN kind must be gpwgan or sgan, got {self.kind!r}")
        if self.generator.input_dim != self.discriminator.input_dim:
            raise ValueError("generator and discriminator disagree on the state size")

    def generate(self, xbar, n):
        return nn.gen_forward(self.generator, xbar, n).data

    def sample(self, xbar, count, rng):
        xbar = np.asarray(xbar, dtype=np.float64).reshape(1, -1)
        l = self.generator.noise_dim

        def one(k):
            return self.generate(np.repeat(xbar, k, axis=0), rng.random((k, l)))
        return _sample_in_chunks(one, count)


def _adam(cfg: TrainConfig) -> nn.AdamState:
    return nn.AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)


def build_model(kind: str, spec: GridDomainSpec, cfg: TrainConfig, init_seed):
    V = spec.dim
    if not isinstance(init_seed, np.random.SeedSequence):
        init_seed = np.random.SeedSequence(init_seed)
    g_seed, d_seed = init_seed.spawn(2)
    G = nn.build_generator(V, cfg.noise_dim, g_seed, cfg.hidden)
    if kind == "deterministic":
        return DeterministicModel(G, _adam(cfg))
    D = nn.build_discriminator(V, d_seed, cfg.hidden)
    return GanModel(kind, G, D, _adam(cfg), _adam(cfg))


def _check_loss(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise ad.NonFiniteError(f"{what} loss is not finite ({value})")
    return value


def _apply(adam, net, names, grads):
    nn.adam_step(adam, net.params, {k: g.data for k, g in zip(names, grads)})


def det_train_step(model: DeterministicModel, xbar, xr) -> float:
    """One Adam step on the squared error of the zero-noise generator."""
    G = model.generator
    g = ad.Graph()
    mu = G.tensors(g)
    pred = nn.gen_forward(G, xbar, np.zeros((xbar.shape[0], G.noise_dim)), mu)
    loss = ad.mean(ad.square(pred - xr))
    _check_loss(loss.item(), "deterministic")
    names = list(mu)
    _apply(model.adam, G, names, ad.backward(loss, [mu[k] for k in names]))
    return loss.item()


def interpolation_counts(dist, delta: float, t_max: int | None = T_MAX) -> np.ndarray:
    """T_b = ceil(dist / delta), at least 1 and at most ``t_max``."""
    if not delta > 0:
        raise ValueError("delta must be > 0")
    T = np.ceil(np.asarray(dist, dtype=np.float64) / delta - _CEIL_SLACK).astype(np.int64)
    T = np.maximum(T, 1)
    if t_max is not None:
        T = np.minimum(T, t_max)
    return T


@dataclass
class InterpolationBatch:
    pair: np.ndarray      # source pair of each interpolation point
    x_tau: np.ndarray
    target: np.ndarray    # unit direction (x_r - x_g) / ||x_r - x_g||
    weight: np.ndarray    # 1 / (B * T_b)
    counts: np.ndarray    # T_b per kept pair
    skipped: int


def sgan_interpolation(xr, xg, delta, rng, t_max=T_MAX, batch_size=None) -> InterpolationBatch:
    """Expand each (x_r, x_g) pair into T_b interpolation points x_tau."""
    xr, xg = np.atleast_2d(xr), np.atleast_2d(xg)
    B = xr.shape[0] if batch_size is None else batch_size
    diff = xr - xg
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    keep = np.flatnonzero(dist >= MIN_PAIR_DISTANCE)
    T = interpolation_counts(dist[keep], delta, t_max)
    pair = np.repeat(keep, T)
    tau = rng.random(pair.size)[:, None]
    x_tau = tau * xr[pair] + (1.0 - tau) * xg[pair]
    unit = diff[keep] / dist[keep][:, None]
    target = np.repeat(unit, T, axis=0)
    weight = np.repeat(1.0 / (B * T), T)
    return InterpolationBatch(pair, x_tau, target, weight, T, int(xr.shape[0] - keep.size))


def sgan_loss(score_fn: Callable, graph: ad.Graph, batch: InterpolationBatch) -> ad.Tensor:
    """sum_r w_r * || grad_x D(x_tau_r) - target_r ||^2 as a differentiable scalar.

    ``score_fn`` maps a tracked [R, V] tensor of interpolation points to [R, 1]
    scores; rows must not interact (true of any per-sample network).
    """
    x_tau = graph.leaf(batch.x_tau)
    scores = score_fn(x_tau)
    (gx,) = ad.backward(ad.tsum(scores), [x_tau], build_higher_order=True)
    sq = ad.tsum(ad.square(gx - batch.target), axis=1)
    return ad.tsum(sq * batch.weight)


def _disc_rows(model: GanModel, xbar, xr, rng):
    n = rng.random((xbar.shape[0], model.generator.noise_dim))
    return model.generate(xbar, n)


def sgan_disc_step(model: GanModel, xbar, xr, delta: float, rng, t_max=T_MAX) -> float:
    """One Adam step on the SGAN discriminator loss; the generator is untouched."""
    if model.kind != "sgan":
        raise ValueError("sgan_disc_step needs an SGAN model")
    xg = _disc_rows(model, xbar, xr, rng)
    batch = sgan_interpolation(xr, xg, delta, rng, t_max, batch_size=xbar.shape[0])
    model.diagnostics["skipped_pairs"] += batch.skipped
    if batch.pair.size == 0:
        model.diagnostics["noop_disc_steps"] += 1
        return 0.0
    D = model.discriminator
    g = ad.Graph()
    th = D.tensors(g)
    xbar_rep = xbar[batch.pair]
    loss = sgan_loss(lambda x: nn.disc_forward(D, xbar_rep, x, th), g, batch)
    _check_loss(loss.item(), "SGAN discriminator")
    names = list(th)
    _apply(model.d_adam, D, names, ad.backward(loss, [th[k] for k in names]))
    return loss.item()


def gradient_penalty(gx: ad.Tensor) -> ad.Tensor:
    """mean_b (||gx_b|| - 1)^2; rows with a zero gradient contribute exactly 1."""
    sq = np.sum(gx.data * gx.data, axis=1)
    live = np.flatnonzero(sq > 0.0)
    dead = gx.shape[0] - live.size
    total = ad.Tensor(float(dead))
    if live.size:
        norms = ad.l2_norm(ad.take_rows(gx, live), axis=1)
        total = total + ad.tsum(ad.square(norms - 1.0))
    return ad.scale(total, 1.0 / gx.shape[0])


def gpwgan_objective(D: nn.DiscriminatorNet, th: dict, graph: ad.Graph, xbar, xr, xg, tau, lam):
    """E[D(xbar, x_r)] - E[D(xbar, x_g)] - lam * E[(||grad D(xbar, x_tau)|| - 1)^2]."""
    B = xbar.shape[0]
    x_tau = tau[:, None] * xr + (1.0 - tau[:, None]) * xg
    x_all = graph.leaf(np.concatenate([xr, xg, x_tau]))
    scores = nn.disc_forward(D, np.concatenate([xbar, xbar, xbar]), x_all, th)
    (gx,) = ad.backward(ad.tsum(ad.take_rows(scores, np.arange(2 * B, 3 * B))), [x_all],
                        build_higher_order=True)
    gp = gradient_penalty(ad.take_rows(gx, np.arange(2 * B, 3 * B)))
    real = ad.mean(ad.take_rows(scores, np.arange(B)))
    fake = ad.mean(ad.take_rows(scores, np.arange(B, 2 * B)))
    return real - fake - ad.scale(gp, lam)


def gpwgan_disc_step(model: GanModel, xbar, xr, lam: float, rng) -> float:
    """One Adam ascent step on the GP-WGAN critic objective; returns its negation."""
    if model.kind != "gpwgan":
        raise ValueError("gpwgan_disc_step needs a GP-WGAN model")
    xg = _disc_rows(model, xbar, xr, rng)
    tau = rng.random(xbar.shape[0])
    D = model.discriminator
    g = ad.Graph()
    th = D.tensors(g)
    loss = -gpwgan_objective(D, th, g, xbar, xr, xg, tau, lam)
    _check_loss(loss.item(), "GP-WGAN critic")
    names = list(th)
    _apply(model.d_adam, D, names, ad.backward(loss, [th[k] for k in names]))
    return loss.item()


def _retention_term(out: ad.Tensor, n_t: ad.Tensor, batch_size: int) -> ad.Tensor:
    (gn,) = ad.backward(ad.tsum(out), [n_t], build_higher_order=True)
    sq = np.sum(gn.data * gn.data, axis=1)
    live = np.flatnonzero(sq > 0.0)
    if live.size == 0:
        return ad.Tensor(0.0)
    # rows with a zero gradient add -log(1) = 0 and have no usable derivative
    norms = ad.l2_norm(ad.take_rows(gn, live), axis=1)
    return ad.scale(ad.tsum(ad.log1p(norms)), -1.0 / batch_size)


def noise_retention_loss(G: nn.GeneratorNet, mu: dict, graph: ad.Graph, xbar, n) -> ad.Tensor:
    """mean_b -log(1 + ||d/dn sum_i G_i(xbar_b, n_b)||)."""
    n_t = graph.leaf(n)
    return _retention_term(nn.gen_forward(G, xbar, n_t, mu), n_t, xbar.shape[0])


def generator_loss(model: GanModel, mu: dict, graph: ad.Graph, xbar, n, rho, retention):
    G, D = model.generator, model.discriminator
    use_ret = retention and rho > 0
    n_t = graph.leaf(n) if use_ret else n
    xg = nn.gen_forward(G, xbar, n_t, mu)
    loss = -ad.mean(nn.disc_forward(D, xbar, xg))
    if use_ret:
        loss = loss + ad.scale(_retention_term(xg, n_t, xbar.shape[0]), rho)
    return loss


def generator_step(model: GanModel, xbar, rng, rho: float = 1.0, enable_noise_retention: bool = False) -> float:
    """One Adam step on -E[D(xbar, G(xbar, n))] (+ rho * noise-retention loss)."""
    G = model.generator
    n = rng.random((xbar.shape[0], G.noise_dim))
    g = ad.Graph()
    mu = G.tensors(g)
    loss = generator_loss(model, mu, g, xbar, n, rho, enable_noise_retention)
    _check_loss(loss.item(), "generator")
    names = list(mu)
    _apply(model.g_adam, G, names, ad.backward(loss, [mu[k] for k in names]))
    return loss.item()


# -- training loop ----------------------------------------------------------------

@dataclass
class TrainLog:
    rows: list = field(default_factory=list)        # (iteration, d_loss, g_loss, wall)
    snapshots: list = field(default_factory=list)   # (iteration, payload)
    disc_updates: int = 0
    gen_updates: int = 0

    HEADER = "iteration\td_loss\tg_loss\twall_time"

    def to_tsv(self) -> str:
        lines = [self.HEADER]
        for it, dl, gl, wall in self.rows:
            lines.append(f"{it}\t{dl:.10g}\t{gl:.10g}\t{wall:.3f}")
        return "\n".join(lines) + "\n"


def train(kind: str, spec: GridDomainSpec, dataset: Dataset, config: TrainConfig,
          init_seed=None, rng=None, snapshot_every: int = 0,
          on_snapshot: Callable | None = None, progress: Callable | None = None):
    """Train a learner for exactly ``config.iterations`` generator iterations.

    Returns (model, TrainLog). ``init_seed`` and ``rng`` default to streams of
    ``config.seed``.
    """
    from .seeding import stream, stream_seed

    if kind not in KINDS:
        raise ValueError(f"unknown learner {kind!r}")
    log = TrainLog()
    if kind == "tabular":
        return tabular_fit(dataset), log
    cfg = config.resolved(spec)
    init_seed = stream_seed(cfg.seed, "init") if init_seed is None else init_seed
    rng = stream(cfg.seed, "training") if rng is None else rng
    model = build_model(kind, spec, cfg, init_seed)
    N, B = len(dataset), cfg.batch_size
    start = time.perf_counter()

    def batch():
        idx = rng.integers(N, size=B)
        return dataset.xbar[idx], dataset.xr[idx]

    for it in range(1, cfg.iterations + 1):
        if kind == "deterministic":
            dl = float("nan")
            gl = det_train_step(model, *batch())
            log.gen_updates += 1
        else:
            dls = []
            for _ in range(cfg.critic_iters):
                xb, xr = batch()
                if kind == "sgan":
                    dls.append(sgan_disc_step(model, xb, xr, cfg.delta, rng, cfg.t_max))
                else:
                    dls.append(gpwgan_disc_step(model, xb, xr, cfg.gp_lambda, rng))
                log.disc_updates += 1
            dl = float(np.mean(dls))
            xb, _ = batch()
            gl = generator_step(model, xb, rng, cfg.rho, cfg.noise_retention)
            log.gen_updates += 1
        log.rows.append((it, dl, gl, time.perf_counter() - start))
        if progress is not None:
            progress(it, dl, gl)
        if snapshot_every and on_snapshot is not None and it % snapshot_every == 0:
            log.snapshots.append((it, on_snapshot(it, model)))
    return model, log
