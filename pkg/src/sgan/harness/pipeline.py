"""generate -> train -> evaluate, theory checks, and report aggregation.

Output layout of a run directory::

    dataset.sgd             training pairs (binary container, checksummed)
    checkpoint.sgc          trained networks / tabular counts
    train_log.tsv           iteration, losses, wall time
    metrics.tsv             one row, header METRICS_HEADER
    eval_states.tsv         per start state L1 / validity
    manifest_<command>.yaml config snapshot, every defaulted value, timings

The master seed fans out to named streams (see :mod:`sgan.seeding`):
``dataset`` for the pairs, ``init`` and ``training`` for the learner,
``heldout`` for random evaluation backgrounds, ``evaluation`` for sampling.
"""

from __future__ import annotations

import hashlib
import logging
import platform
import time
from pathlib import Path

import numpy as np
import yaml

from .. import __version__, kernels, nn, theory
from ..domains import (VALIDITY_THRESHOLD, Dataset, GridState, default_dataset_size, encode,
                       enumerate_valid_states, generate_dataset, load_dataset, random_state,
                       save_dataset, validate_state)
from ..evaluation import evaluate_model
from ..learners import (_CEIL_SLACK, KINDS, DeterministicModel, GanModel, TabularModel,
                        TrainConfig, _adam, train)
from ..seeding import stream, stream_seed
from .config import ConfigError, ExperimentConfig, dump_config

log = logging.getLogger("sgan")

DATASET_FILE = "dataset.sgd"
CHECKPOINT_FILE = "checkpoint.sgc"
METRICS_FILE = "metrics.tsv"
METRICS_HEADER = ("domain", "representation", "size", "dynamics", "learner", "seed",
                  "iterations", "n_states", "n_samples", "l1", "validity")


class UsageError(ValueError):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _out_dir(cfg: ExperimentConfig, out) -> Path:
    out = out or cfg.out
    if not out:
        raise UsageError("--out is required")
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def defaults_snapshot(cfg: ExperimentConfig) -> dict:
    """Every value the run relies on but the config may not spell out."""
    r = cfg.train.resolved(cfg.domain)
    return {
        "gp_lambda": r.gp_lambda,
        "adam": {"lr": r.lr, "beta1": r.beta1, "beta2": r.beta2, "eps": r.adam_eps},
        "init_scheme": nn.INIT_SCHEME,
        "negative_slope": nn.NEGATIVE_SLOPE,
        "hidden": r.hidden,
        "noise_dim": r.noise_dim,
        "noise_distribution": "uniform[0,1)",
        "delta": r.delta,
        "delta_rule": r.delta_rule,
        "t_rule": f"T = clamp(ceil(d/delta - {_CEIL_SLACK:g}), 1, t_max)",
        "t_max": r.t_max,
        "noise_retention": r.noise_retention,
        "rho": r.rho,
        "critic_iters": r.critic_iters,
        "batch_size": r.batch_size,
        "fence_prob": cfg.domain.fence_prob,
        "block_size": cfg.domain.block_size,
        "validity_threshold": VALIDITY_THRESHOLD,
        "snap_metric": cfg.metric,
        "resample_budget": "10 x n_samples",
        "dataset_size": cfg.dataset_size or default_dataset_size(cfg.domain),
        "eval_backgrounds": cfg.eval_backgrounds if not cfg.domain.enumerable else None,
        "seed_streams": "SeedSequence([master, crc32(name)]) for dataset/init/training/heldout/evaluation",
    }


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, extra: dict) -> Path:
    doc = {
        "format_version": 1,
        "command": command,
        "code_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg.to_dict(),
        "defaults": defaults_snapshot(cfg),
    }
    doc.update(extra)
    path = out / f"manifest_{command}.yaml"
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


# -- generate ----------------------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig, out=None) -> Path:
    out = _out_dir(cfg, out)
    t0 = time.perf_counter()
    count = cfg.dataset_size or default_dataset_size(cfg.domain)
    ds = generate_dataset(cfg.domain, count, stream(cfg.seed, "dataset"), seed=cfg.seed)
    path = out / DATASET_FILE
    save_dataset(path, ds)
    (out / "config.yaml").write_text(dump_config(cfg))
    write_manifest(out, "generate", cfg, {"dataset": {"file": DATASET_FILE, "pairs": count,
                                                       "sha256": _sha256(path)},
                                          "wall_clock_s": round(time.perf_counter() - t0, 3)})
    return path


# -- train -------------------------------------------------------------------------

def _load_run_dataset(cfg, out: Path, dataset) -> Dataset:
    path = Path(dataset) if dataset else out / DATASET_FILE
    if not path.is_file():
        raise UsageError(f"dataset not found: {path} (run 'generate' first or pass --dataset)")
    ds = load_dataset(path)
    if ds.spec != cfg.domain:
        raise ConfigError("domain", f"dataset {path} was generated for {ds.spec.label()}, "
                                    f"config says {cfg.domain.label()}")
    return ds


def save_model(path, model, cfg: ExperimentConfig) -> None:
    meta = {"learner": cfg.learner, "spec": cfg.domain.to_dict(),
            "train": cfg.train.resolved(cfg.domain).to_dict()}
    if isinstance(model, TabularModel):
        meta["counts"] = sorted([a.key(), b.key(), c] for a, inner in model.counts.items()
                                for b, c in inner.items())
        nn.save_checkpoint(path, {}, meta)
    elif isinstance(model, DeterministicModel):
        nn.save_checkpoint(path, {"generator": model.generator}, meta)
    else:
        nn.save_checkpoint(path, {"generator": model.generator,
                                  "discriminator": model.discriminator}, meta)


def load_model(path, cfg: ExperimentConfig):
    nets, meta = nn.load_checkpoint(path)
    if meta.get("learner") != cfg.learner:
        raise ConfigError("learner", f"checkpoint {path} holds a {meta.get('learner')!r} model")
    tc = TrainConfig.from_dict(meta["train"])
    if cfg.learner == "tabular":
        model = TabularModel(cfg.domain)
        for a, b, c in meta["counts"]:
            sa, sb = GridState.from_key(a), GridState.from_key(b)
            model.counts.setdefault(sa, {})[sb] = c
            model.totals[sa] = model.totals.get(sa, 0) + c
        return model
    if cfg.learner == "deterministic":
        return DeterministicModel(nets["generator"], _adam(tc))
    return GanModel(cfg.learner, nets["generator"], nets["discriminator"], _adam(tc), _adam(tc))


def cmd_train(cfg: ExperimentConfig, out=None, dataset=None, log_every: int = 100):
    out = _out_dir(cfg, out)
    ds = _load_run_dataset(cfg, out, dataset)
    t0 = time.perf_counter()

    def progress(it, dl, gl):
        if log_every and it % log_every == 0:
            log.info("iter %d  d_loss %.5g  g_loss %.5g", it, dl, gl)

    model, tlog = train(cfg.learner, cfg.domain, ds, cfg.train, progress=progress)
    ckpt = out / CHECKPOINT_FILE
    save_model(ckpt, model, cfg)
    (out / "train_log.tsv").write_text(tlog.to_tsv())
    extra = {"checkpoint": {"file": CHECKPOINT_FILE, "sha256": _sha256(ckpt)},
             "wall_clock_s": round(time.perf_counter() - t0, 3),
             "iterations": cfg.train.iterations if cfg.learner != "tabular" else 0,
             "disc_updates": tlog.disc_updates, "gen_updates": tlog.gen_updates}
    if isinstance(model, GanModel):
        extra["diagnostics"] = dict(model.diagnostics)
    write_manifest(out, "train", cfg, extra)
    return model, tlog


# -- evaluate ----------------------------------------------------------------------

def evaluation_states(cfg: ExperimentConfig, dataset: Dataset | None = None) -> list:
    spec = cfg.domain
    if spec.enumerable:
        if cfg.eval_states == "all":
            return enumerate_valid_states(spec)
        states = [GridState(tuple(s)) for s in cfg.eval_states]
        for s in states:
            try:
                validate_state(spec, s)
            except ValueError as exc:
                raise ConfigError("evaluation.states", str(exc)) from None
        return states
    # random backgrounds: held-out layouts, agent at the listed cells (default: center)
    cells = [(spec.rows // 2, spec.cols // 2)] if cfg.eval_states == "all" else list(cfg.eval_states)
    seen = set()
    if dataset is not None:
        seen = {row.tobytes() for row in dataset.xbar}
    rng = stream(cfg.seed, "heldout")
    states = []
    for cell in cells:
        picked = 0
        for _ in range(1000 * cfg.eval_backgrounds):
            s = random_state(spec, rng, agent_pos=cell)
            if encode(spec, s).tobytes() in seen:
                continue
            states.append(s)
            picked += 1
            if picked == cfg.eval_backgrounds:
                break
    return states


def format_metrics_row(cfg: ExperimentConfig, n_states: int, l1: float, validity: float) -> str:
    spec = cfg.domain
    vals = (spec.kind, spec.representation, str(spec.size),
            ":".join(f"{p:.6g}" for p in spec.dynamics), cfg.learner, str(cfg.seed),
            str(cfg.train.iterations if cfg.learner != "tabular" else 0), str(n_states),
            str(cfg.n_samples), f"{l1:.6f}", f"{validity:.6f}")
    return "\t".join(vals)


def cmd_evaluate(cfg: ExperimentConfig, out=None, checkpoint=None, dataset=None):
    out = _out_dir(cfg, out)
    ckpt = Path(checkpoint) if checkpoint else out / CHECKPOINT_FILE
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt} (run 'train' first or pass --checkpoint)")
    t0 = time.perf_counter()
    model = load_model(ckpt, cfg)
    ds = None
    if not cfg.domain.enumerable:
        ds_path = Path(dataset) if dataset else out / DATASET_FILE
        ds = load_dataset(ds_path) if ds_path.is_file() else None
    states = evaluation_states(cfg, ds)
    report = evaluate_model(model, cfg.domain, states, cfg.n_samples, stream(cfg.seed, "evaluation"),
                            metric=cfg.metric)
    row = format_metrics_row(cfg, len(states), report.l1, report.validity)
    (out / METRICS_FILE).write_text("\t".join(METRICS_HEADER) + "\n" + row + "\n")
    lines = ["state\tl1\tvalidity\tsamples_used\tinvalid_resample_count"]
    for r in report.rows:
        lines.append(f"{r['state']}\t{r['l1']:.6f}\t{r['validity']:.6f}\t{r['samples_used']}\t"
                     f"{r['invalid_resample_count']}")
    (out / "eval_states.tsv").write_text("\n".join(lines) + "\n")
    write_manifest(out, "evaluate", cfg, {
        "checkpoint": {"file": str(ckpt), "sha256": _sha256(ckpt)},
        "n_states": len(states), "samples_used": report.samples_used,
        "invalid_resample_count": report.invalid_resample_count,
        "wall_clock_s": round(time.perf_counter() - t0, 3)})
    return report, row


# -- theory ------------------------------------------------------------------------

THEORY_CHECKS = ("lemma1", "theorem1", "optimal")


def theorem1_densities():
    return theory.Density1D.bumps([0.25, 0.75], width=0.02), theory.Density1D.uniform()


def cmd_theory(check: str, out, seed: int = 0, budget: int = 20_000, trials: int = 100_000,
               seeds: int = 3) -> dict:
    if check not in THEORY_CHECKS:
        raise UsageError(f"unknown theory check {check!r}; choose from {list(THEORY_CHECKS)}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict = {"check": check, "seed": seed}
    if check == "lemma1":
        rows = ["z\td\teps\tcells\tT\ttrials\testimate\tlimit\tabs_error"]
        for z in (1, 2, 3):
            for j, d in enumerate((0.2, 0.5, 0.9)):
                p = theory.DiscretizationParams(d / 2000, z, d)
                est = theory.hit_probability_simulate(p, trials, seed=seed * 1000 + 10 * z + j)
                lim = theory.hit_probability_limit(z)
                rows.append(f"{z}\t{d}\t{p.eps:.6g}\t{p.cells}\t{p.draws}\t{trials}\t{est:.6f}\t"
                            f"{lim:.6f}\t{abs(est - lim):.6f}")
            summary[f"constancy_z{z}"] = theory.hit_probability_constancy_check(
                z, (0.2, 0.5, 0.9), trials=trials, seed=seed * 1000 + 100 * z)
        (out / "hit_probability.tsv").write_text("\n".join(rows) + "\n")
    elif check == "optimal":
        p_r, p_g = theorem1_densities()
        opt = theory.optimal_discriminator(p_r, p_g)
        rows = ["x\tD\tgrad_D"] + [f"{a:.6f}\t{b:.8g}\t{c:.8g}" for a, b, c in zip(opt.x, opt.value, opt.grad)]
        (out / "optimal_discriminator.tsv").write_text("\n".join(rows) + "\n")
        summary["emd"] = theory.emd_1d(p_r, p_g)
    else:
        p_r, p_g = theorem1_densities()
        results = []
        ref = None
        for k in range(seeds):
            r = theory.theorem1_field_check(p_r, p_g, budget, seed=seed + k)
            ref = r.grad_oracle
            results.append(r)
            _write_triples(out / f"field_seed{seed + k}.tsv", r)
        null = theory.theorem1_field_check(p_g, p_g, budget, seed=seed, reference=ref)
        _write_triples(out / "field_null.tsv", null)
        summary.update({
            "budget": budget,
            "correlations": [r.correlation for r in results],
            "median_correlation": float(np.median([r.correlation for r in results])),
            "scales": [r.c for r in results],
            "sign_agreement": [r.sign_agreement for r in results],
            "null_c": null.c_raw, "null_correlation": null.correlation,
            "null_mean_abs_grad": null.mean_abs_grad,
            "failed": [r.message for r in results + [null] if r.failed],
        })
    (out / f"theory_{check}.yaml").write_text(yaml.safe_dump(_plain(summary), sort_keys=False))
    return summary


def _write_triples(path, r):
    rows = ["x\tgrad_trained\tgrad_oracle"] + [f"{a:.6f}\t{b:.8g}\t{c:.8g}" for a, b, c in r.triples()]
    Path(path).write_text("\n".join(rows) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# -- report ------------------------------------------------------------------------

def read_metrics(paths) -> list[dict]:
    rows = []
    for p in paths:
        p = Path(p)
        f = p / METRICS_FILE if p.is_dir() else p
        if not f.is_file():
            raise UsageError(f"no metrics table at {f}")
        lines = f.read_text().splitlines()
        if not lines or tuple(lines[0].split("\t")) != METRICS_HEADER:
            raise UsageError(f"{f}: unexpected header")
        for line in lines[1:]:
            if line.strip():
                rows.append(dict(zip(METRICS_HEADER, line.split("\t"))))
    return rows


def overall_mean(values) -> float:
    """Unweighted mean over configurations (the tables' "Overall" row)."""
    values = list(values)
    return float(sum(values) / len(values)) if values else float("nan")


def aggregate(rows: list[dict]):
    """(configs, learners, cells, overall); cells[(config, learner)] = (l1, validity),
    averaged over seeds."""
    configs, learners, acc = [], [], {}
    for r in rows:
        key = (r["domain"], r["representation"], r["size"], r["dynamics"])
        if key not in configs:
            configs.append(key)
        if r["learner"] not in learners:
            learners.append(r["learner"])
        acc.setdefault((key, r["learner"]), []).append((float(r["l1"]), float(r["validity"])))
    learners.sort(key=lambda k: KINDS.index(k) if k in KINDS else len(KINDS))
    cells = {k: (overall_mean(a for a, _ in v), overall_mean(b for _, b in v)) for k, v in acc.items()}
    overall = {}
    for ln in learners:
        got = [cells[(c, ln)] for c in configs if (c, ln) in cells]
        overall[ln] = (overall_mean(a for a, _ in got), overall_mean(b for _, b in got))
    return configs, learners, cells, overall


def _cell(v):
    return "-" if v is None else f"{v[0]:.3f}/{round(100 * v[1])}%"


def cmd_report(paths, out=None) -> str:
    configs, learners, cells, overall = aggregate(read_metrics(paths))
    head = ["domain"] + learners
    lines = ["\t".join(head)]
    for c in configs:
        lines.append("\t".join([" ".join(c)] + [_cell(cells.get((c, ln))) for ln in learners]))
    lines.append("\t".join(["Overall"] + [_cell(overall[ln]) for ln in learners]))
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    return text
