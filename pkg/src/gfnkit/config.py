"""Run configuration: INI file with sections ``run``, ``env``, ``objective``,
``optimizer``, ``eval`` and (Ising only) ``ebgfn``.  Unknown sections or keys
are errors.

Per-environment defaults live in ``ENV_DEFAULTS`` and ``OPTIM_DEFAULTS``;
architectures are plain MLPs throughout.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .envs.base import ConfigError
from .objectives import OBJECTIVES

# -- per-environment parameters ---------------------------------------------------

ENV_DEFAULTS = {
    "hypergrid": {"dim": 2, "side": 8, "r0": 1e-3, "r1": 0.5, "r2": 2.0},
    "bitseq": {"n": 8, "k": 2, "beta": 3.0, "num_modes": 60, "mode_seed": 0},
    "sequence": {"scheme": "autoregressive-fixed", "length": 8, "vocab": 4, "table": "",
                 "table_seed": 0, "r_min": 0.0, "exponent": 10.0, "min_length": 1},
    "phylo": {"species": "", "n_species": 5, "num_sites": 8, "data_seed": 0, "alpha": 4.0,
              "reward_constant": ""},
    "dag": {"d": 5, "num_samples": 100, "expected_in_degree": 1.0, "score": "lingauss", "data": "",
            "data_seed": 0, "prior_var": 1.0, "noise_var": 0.1},
    "ising": {"side": 3, "sigma": 0.2, "data": "", "num_data": 2000, "data_seed": 0, "mode": "sampler",
              "burn_in": 1000, "thinning": 10},
}

OPTIM_DEFAULTS = {
    # lr, z_lr, weight_decay, batch, iterations, hidden, exploration start/end/fraction
    "hypergrid": dict(lr=1e-3, z_lr=1e-1, weight_decay=0.0, batch_size=16, iterations=62500,
                      hidden="256,256", eps_start=0.0, eps_end=0.0, eps_fraction=1.0),
    "bitseq": dict(lr=1e-3, z_lr=0.05, weight_decay=1e-5, batch_size=16, iterations=50000,
                   hidden="64,64,64", eps_start=1e-3, eps_end=1e-3, eps_fraction=1.0),
    "sequence": dict(lr=5e-4, z_lr=0.05, weight_decay=0.0, batch_size=16, iterations=1000000,
                     hidden="256,256", eps_start=1.0, eps_end=0.0, eps_fraction=1.0),
    "phylo": dict(lr=3e-4, z_lr=3e-4, weight_decay=0.0, batch_size=32, iterations=100000,
                  hidden="256,256,256", eps_start=1.0, eps_end=0.0, eps_fraction=0.5,
                  lr_schedule="cosine", lr_end=1e-5, warmup=5000),
    "dag": dict(lr=1e-4, z_lr=1e-4, weight_decay=0.0, batch_size=128, iterations=100000,
                hidden="128,128", eps_start=1.0, eps_end=0.1, eps_fraction=0.5),
    "ising": dict(lr=1e-3, z_lr=1e-1, weight_decay=0.0, batch_size=256, iterations=20000,
                  hidden="256,256,256,256", eps_start=0.0, eps_end=0.0, eps_fraction=1.0),
}

OBJECTIVE_DEFAULTS = {"hypergrid": "tb", "bitseq": "tb", "sequence": "tb", "phylo": "fldb",
                      "dag": "mdb", "ising": "tb"}

EVAL_METRICS = {"hypergrid": "tv", "bitseq": "pearson", "sequence": "tv,topk", "phylo": "pearson",
                "dag": "jsd", "ising": "tv"}


@dataclass(frozen=True)
class ObjectiveSection:
    name: str = "tb"
    subtb_lambda: float = 0.9
    backward_policy: str = "uniform"
    terminal_weight: float = 1.0


@dataclass(frozen=True)
class OptimizerSection:
    lr: float = 1e-3
    z_lr: float = 1e-1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    lr_schedule: str = "constant"
    lr_end: float = 0.0
    warmup: int = 0
    batch_size: int = 16
    iterations: int = 1000
    hidden: str = "256,256"
    eps_start: float = 0.0
    eps_end: float = 0.0
    eps_fraction: float = 1.0

    @property
    def hidden_sizes(self) -> tuple:
        try:
            sizes = tuple(int(h) for h in self.hidden.split(",") if h.strip())
        except ValueError as exc:
            raise ConfigError(f"bad hidden sizes {self.hidden!r}") from exc
        if not sizes:
            raise ConfigError("at least one hidden layer required")
        return sizes


@dataclass(frozen=True)
class EvalSection:
    interval: int = 100
    metrics: str = ""
    buffer_capacity: int = 200_000
    mc_samples: int = 10
    num_eval: int = 2000
    topk: int = 100


@dataclass(frozen=True)
class EbgfnSection:
    alpha: float = 0.5
    K: int = 0              # 0 means K = D
    energy_lr: float = 1e-2


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    env_name: str = "hypergrid"
    env: dict = field(default_factory=dict)
    objective: ObjectiveSection = ObjectiveSection()
    optimizer: OptimizerSection = OptimizerSection()
    eval: EvalSection = EvalSection()
    ebgfn: EbgfnSection = EbgfnSection()

    @property
    def metric_list(self) -> list:
        names = self.eval.metrics or EVAL_METRICS[self.env_name]
        return [m.strip() for m in names.split(",") if m.strip()]


def _coerce(value: str, default, where: str):
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {value!r}") from exc
    return value.strip()


def _section(cls, items: dict, base, name: str):
    known = {f.name: f for f in fields(cls)}
    updates = {}
    for k, v in items.items():
        if k not in known:
            raise ConfigError(f"unknown key {k!r} in [{name}]")
        updates[k] = _coerce(v, getattr(base, k), f"[{name}] {k}")
    return replace(base, **updates)


def default_config(env_name: str = "hypergrid") -> RunConfig:
    if env_name not in ENV_DEFAULTS:
        raise ConfigError(f"unknown environment {env_name!r}; choose from {sorted(ENV_DEFAULTS)}")
    return RunConfig(env_name=env_name, env=dict(ENV_DEFAULTS[env_name]),
                     objective=ObjectiveSection(name=OBJECTIVE_DEFAULTS[env_name]),
                     optimizer=replace(OptimizerSection(), **OPTIM_DEFAULTS[env_name]))


SECTIONS = ("run", "env", "objective", "optimizer", "eval", "ebgfn")


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    for s in parser.sections():
        if s not in SECTIONS:
            raise ConfigError(f"unknown section [{s}]")
    env_items = dict(parser["env"]) if parser.has_section("env") else {}
    env_name = env_items.pop("name", "hypergrid").strip()
    cfg = default_config(env_name)
    env = dict(cfg.env)
    for k, v in env_items.items():
        if k not in env:
            raise ConfigError(f"unknown key {k!r} in [env] for {env_name}")
        env[k] = _coerce(v, env[k], f"[env] {k}")
    cfg = replace(cfg, env=env)
    if parser.has_section("run"):
        run = dict(parser["run"])
        for k in run:
            if k != "seed":
                raise ConfigError(f"unknown key {k!r} in [run]")
        if "seed" in run:
            cfg = replace(cfg, seed=_coerce(run["seed"], 0, "[run] seed"))
    for name, attr, cls in (("objective", "objective", ObjectiveSection), ("optimizer", "optimizer", OptimizerSection),
                            ("eval", "eval", EvalSection), ("ebgfn", "ebgfn", EbgfnSection)):
        if parser.has_section(name):
            cfg = replace(cfg, **{attr: _section(cls, dict(parser[name]), getattr(cfg, attr), name)})
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def validate(cfg: RunConfig) -> None:
    if cfg.objective.name not in OBJECTIVES:
        raise ConfigError(f"unknown objective {cfg.objective.name!r}")
    if cfg.objective.name == "mdb" and cfg.env_name != "dag":
        raise ConfigError("the mdb objective needs an environment where every state can stop (dag)")
    if cfg.env_name == "ising" and cfg.env["mode"] not in ("sampler", "ebgfn"):
        raise ConfigError("ising mode must be 'sampler' or 'ebgfn'")
    o = cfg.optimizer
    if o.batch_size < 1 or o.iterations < 1:
        raise ConfigError("batch_size and iterations must be >= 1")
    if o.lr_schedule not in ("constant", "linear", "cosine"):
        raise ConfigError(f"unknown lr_schedule {o.lr_schedule!r}")
    if not 0.0 < o.eps_fraction <= 1.0:
        raise ConfigError("eps_fraction must lie in (0, 1]")
    if cfg.eval.interval < 1:
        raise ConfigError("eval interval must be >= 1")
    o.hidden_sizes  # noqa: B018  (validates)


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {"seed": str(cfg.seed)}
    parser["env"] = {"name": cfg.env_name, **{k: str(v) for k, v in cfg.env.items()}}
    for name, sec in (("objective", cfg.objective), ("optimizer", cfg.optimizer), ("eval", cfg.eval),
                      ("ebgfn", cfg.ebgfn)):
        parser[name] = {f.name: repr(getattr(sec, f.name)) if isinstance(getattr(sec, f.name), float)
                        else str(getattr(sec, f.name)) for f in fields(sec)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
