"""Experiment configuration files.

One YAML file per experiment. Schema (``format_version: 1``)::

    format_version: 1
    name: sgan-1d-n5            # free text, used in reports
    seed: 0                     # master seed; --seed overrides
    preset: ci                  # ci | paper; --preset overrides
    learner: sgan               # tabular | deterministic | gpwgan | sgan
    domain:
      kind: 1d                  # 1d | 2d | 2d_obstacle | 2d_random_background
      size: 5
      dynamics: [1/3, 2/3]      # floats or "a/b" strings
      representation: vector    # vector | image
      block_size: 4             # optional
      fence_prob: 0.2           # optional, random backgrounds only
    dataset:
      size: null                # null: max(1000, 1e-6 * #transition pairs)
    train:                      # any TrainConfig field except seed
      iterations: 2000
    evaluation:
      n_samples: null           # null: preset value
      states: all               # "all" or a list of [row, col] agent cells
      backgrounds: 64           # random backgrounds: held-out layouts
      metric: maxabs            # maxabs | l2

Every key is optional except ``format_version``, ``learner`` and ``domain``.
Unknown keys are rejected with the dotted path of the offending key.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import yaml

from ..domains import GridDomainSpec
from ..learners import KINDS, TrainConfig

FORMAT_VERSION = 1

PRESETS = {
    "paper": {"train": {"iterations": 100_000},
              "evaluation": {"n_samples": 10_000, "n_samples_random_bg": 1_000}},
    "ci": {"train": {"iterations": 2_000},
           "evaluation": {"n_samples": 2_000, "n_samples_random_bg": 500}},
}
DEFAULT_PRESET = "ci"
DEFAULT_BACKGROUNDS = 64

_TOP = {"format_version", "name", "seed", "preset", "learner", "domain", "dataset", "train", "evaluation"}
_DOMAIN = {"kind", "size", "dynamics", "representation", "block_size", "fence_prob"}
_DATASET = {"size"}
_EVAL = {"n_samples", "states", "backgrounds", "metric"}


class ConfigError(ValueError):
    """Bad or inconsistent configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class ExperimentConfig:
    domain: GridDomainSpec
    learner: str
    train: TrainConfig
    seed: int = 0
    preset: str = DEFAULT_PRESET
    name: str = ""
    dataset_size: int | None = None
    n_samples: int = 2_000
    eval_states: object = "all"
    eval_backgrounds: int = DEFAULT_BACKGROUNDS
    metric: str = "maxabs"
    out: str | None = None
    source: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "name": self.name,
            "seed": self.seed,
            "preset": self.preset,
            "learner": self.learner,
            "domain": self.domain.to_dict(),
            "dataset": {"size": self.dataset_size},
            "train": {k: v for k, v in self.train.to_dict().items() if k != "seed"},
            "evaluation": {"n_samples": self.n_samples,
                           "states": self.eval_states if self.eval_states == "all"
                           else [list(s) for s in self.eval_states],
                           "backgrounds": self.eval_backgrounds, "metric": self.metric},
        }


def _check_keys(section: dict, allowed: set, prefix: str):
    if not isinstance(section, dict):
        raise ConfigError(prefix or "<root>", "expected a mapping")
    for k in section:
        if k not in allowed:
            raise ConfigError(f"{prefix}.{k}" if prefix else str(k), "unknown key")


def _number(value, key):
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(key, f"not a number: {value!r}") from None
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise ConfigError(key, f"not a number: {value!r}")


def _positive_int(value, key, allow_none=False):
    if value is None and allow_none:
        return None
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(key, f"expected a positive integer, got {value!r}")
    return value


def parse_config(raw: dict, preset: str | None = None, seed: int | None = None,
                 out: str | None = None) -> ExperimentConfig:
    """Validate a parsed YAML mapping; ``preset``/``seed``/``out`` override the file."""
    if raw is None:
        raise ConfigError("<root>", "empty config")
    _check_keys(raw, _TOP, "")
    if "format_version" not in raw:
        raise ConfigError("format_version", "missing")
    if raw["format_version"] != FORMAT_VERSION:
        raise ConfigError("format_version", f"unsupported version {raw['format_version']!r}")
    preset = preset or raw.get("preset") or DEFAULT_PRESET
    if preset not in PRESETS:
        raise ConfigError("preset", f"unknown preset {preset!r} (choose from {sorted(PRESETS)})")
    base = copy.deepcopy(PRESETS[preset])

    learner = raw.get("learner")
    if learner not in KINDS:
        raise ConfigError("learner", f"expected one of {list(KINDS)}, got {learner!r}")

    dom = raw.get("domain")
    if dom is None:
        raise ConfigError("domain", "missing")
    _check_keys(dom, _DOMAIN, "domain")
    for k in ("kind", "size", "dynamics"):
        if k not in dom:
            raise ConfigError(f"domain.{k}", "missing")
    if not isinstance(dom["dynamics"], (list, tuple)):
        raise ConfigError("domain.dynamics", "expected a list of probabilities")
    d = dict(dom)
    d["dynamics"] = tuple(_number(p, f"domain.dynamics[{i}]") for i, p in enumerate(dom["dynamics"]))
    try:
        spec = GridDomainSpec.from_dict(d)
    except (TypeError, ValueError) as exc:
        bad = next((f"domain.{k}" for k in ("kind", "representation", "size", "dynamics",
                                             "block_size", "fence_prob") if k in str(exc)), "domain")
        raise ConfigError(bad, str(exc)) from None

    ds = raw.get("dataset") or {}
    _check_keys(ds, _DATASET, "dataset")
    dataset_size = _positive_int(ds.get("size"), "dataset.size", allow_none=True)

    seed = raw.get("seed", 0) if seed is None else seed
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", f"expected a nonnegative integer, got {seed!r}")

    tr = dict(base["train"])
    tr_raw = raw.get("train") or {}
    if not isinstance(tr_raw, dict):
        raise ConfigError("train", "expected a mapping")
    if "seed" in tr_raw:
        raise ConfigError("train.seed", "set the master seed at the top level")
    tr.update(tr_raw)
    try:
        train = TrainConfig.from_dict({**tr, "seed": seed})
    except KeyError as exc:
        unknown = sorted(set(tr) - set(TrainConfig.__dataclass_fields__))
        raise ConfigError(f"train.{unknown[0]}" if unknown else "train", str(exc)) from None
    except (TypeError, ValueError) as exc:
        bad = next((f"train.{k}" for k in tr if k in str(exc)), "train")
        raise ConfigError(bad, str(exc)) from None

    ev = raw.get("evaluation") or {}
    _check_keys(ev, _EVAL, "evaluation")
    default_n = base["evaluation"]["n_samples" if spec.enumerable else "n_samples_random_bg"]
    n_samples = _positive_int(ev.get("n_samples", default_n) or default_n, "evaluation.n_samples")
    states = ev.get("states", "all")
    if states != "all":
        if not isinstance(states, list) or not states:
            raise ConfigError("evaluation.states", "expected 'all' or a non-empty list of [row, col]")
        try:
            states = [tuple(int(v) for v in s) for s in states]
        except (TypeError, ValueError):
            raise ConfigError("evaluation.states", "entries must be [row, col] pairs") from None
        if any(len(s) != 2 for s in states):
            raise ConfigError("evaluation.states", "entries must be [row, col] pairs")
    backgrounds = _positive_int(ev.get("backgrounds", DEFAULT_BACKGROUNDS), "evaluation.backgrounds")
    metric = ev.get("metric", "maxabs")
    if metric not in ("maxabs", "l2"):
        raise ConfigError("evaluation.metric", f"expected maxabs or l2, got {metric!r}")

    return ExperimentConfig(spec, learner, train, seed, preset, str(raw.get("name", "")),
                            dataset_size, n_samples, states, backgrounds, metric, out, raw)


def load_config(path, preset=None, seed=None, out=None) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("--config", f"no such file: {path}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<root>", f"not valid YAML: {exc}") from None
    return parse_config(raw, preset, seed, out)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
