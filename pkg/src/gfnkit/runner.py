"""Experiment driver behind the command line: train, eval, gendata, enumerate, bench.

Output files written to the run directory:

* ``metrics.csv``: one row per eval interval, columns ``METRIC_COLUMNS``
  (schema version ``CSV_VERSION``).  Contains no timing, so reruns with the
  same seed are byte-identical.
* ``timing.csv``: wall time and throughput for the same steps.
* ``checkpoint.npz`` and ``run.json``.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rnglib
from .buffer import FifoBuffer
from .config import RunConfig, dump_config
from .envs.base import ConfigError
from .envs.dag import DagEnvironment, LocalScoreCache, ScoreParams, generate_er_dataset, load_dataset, save_dataset
from .envs.hypergrid import HypergridEnvironment, HypergridParams
from .envs.ising import (EbgfnConfig, IsingEnvironment, gibbs_data_sampler, load_samples,
                         neg_log_rmse, save_samples, torus_adjacency, train_ebgfn)
from .envs.phylo import (PhyloEnvironment, PhyloParams, all_topologies, load_species, num_topologies, save_species,
                         synthetic_species)
from .envs.sequences import (EMPTY, SequenceEnvironment, SequenceParams, bitseq_environment, bits_to_words,
                             generate_modes, generate_test_set, load_reward_table, synthetic_reward_table)
from .metrics import EmpiricalDistribution, jsd, pearson, topk_reward_diversity, tv_distance
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.optim import Schedule, schedule_value
from .objectives import LossConfig
from .oracles import enumerate_state_graph, exact_policy_marginal, mc_terminal_logprob
from .rollout import MlpPolicy, UniformPolicy, forward_rollout
from .trainer import TrainState, init_train_state, update

CSV_VERSION = 1
METRIC_COLUMNS = ("step", "loss", "logZ", "tv", "tv_exact", "jsd", "pearson", "topk_reward", "topk_diversity",
                  "neg_log_rmse")
TIMING_COLUMNS = ("step", "wall_time_s", "iterations_per_second")
STATE_GRAPH_CAP = 200_000


@dataclass
class Task:
    cfg: RunConfig
    env: object
    extras: dict = field(default_factory=dict)
    _exact: object = None
    _graph: object = None

    def exact(self):
        if self._exact is None:
            if not hasattr(self.env, "exact_distribution"):
                raise ConfigError(f"no exact oracle for {self.cfg.env_name}")
            self._exact = self.env.exact_distribution()
        return self._exact

    def graph(self):
        if self._graph is None:
            self._graph = enumerate_state_graph(self.env, STATE_GRAPH_CAP)
        return self._graph


# -- building environments ------------------------------------------------------

def build_task(cfg: RunConfig) -> Task:
    e = cfg.env
    name = cfg.env_name
    if name == "hypergrid":
        return Task(cfg, HypergridEnvironment(HypergridParams(e["dim"], e["side"], e["r0"], e["r1"], e["r2"])))
    if name == "bitseq":
        mkey = rnglib.key(e["mode_seed"])
        modes = generate_modes(e["n"], mkey, e["num_modes"], e["beta"])
        env = bitseq_environment(e["n"], e["k"], modes)
        test_bits = generate_test_set(modes, rnglib.fold_in(mkey, 1))
        test_states = env.states_from_tokens(bits_to_words(test_bits, e["k"]))
        return Task(cfg, env, {"modes": modes, "test_states": test_states})
    if name == "sequence":
        if e["table"]:
            table = load_reward_table(e["table"], r_min=e["r_min"], exponent=e["exponent"])
            if table.vocab != e["vocab"] or table.length != e["length"]:
                raise ConfigError("reward table shape does not match [env] vocab/length")
        else:
            variable = e["scheme"] == "autoregressive-variable"
            table = synthetic_reward_table(e["vocab"], e["length"], rnglib.key(e["table_seed"]), e["exponent"],
                                           e["min_length"] if variable else None)
            table.r_min = e["r_min"]
        params = SequenceParams(e["scheme"], e["length"], e["vocab"], e["min_length"])
        return Task(cfg, SequenceEnvironment(params, table))
    if name == "phylo":
        data = (load_species(e["species"]) if e["species"]
                else synthetic_species(e["n_species"], e["num_sites"], rnglib.key(e["data_seed"])))
        c = float(e["reward_constant"]) if str(e["reward_constant"]).strip() else None
        env = PhyloEnvironment(data, PhyloParams(e["alpha"], c))
        return Task(cfg, env, {"species": data})
    if name == "dag":
        ds = (load_dataset(e["data"]) if e["data"] else
              generate_er_dataset(e["d"], e["expected_in_degree"], e["num_samples"], rnglib.key(e["data_seed"])))
        if ds.data.shape[1] != e["d"]:
            raise ConfigError("dataset width does not match [env] d")
        cache = LocalScoreCache.build(ds.data, ScoreParams(e["score"], e["prior_var"], e["noise_var"]))
        return Task(cfg, DagEnvironment(cache), {"dataset": ds})
    if name == "ising":
        J = e["sigma"] * torus_adjacency(e["side"])
        if e["data"]:
            data, side, _ = load_samples(e["data"])
            if side != e["side"]:
                raise ConfigError("sample file lattice side does not match [env] side")
        elif e["mode"] == "ebgfn":
            data = gibbs_data_sampler(J, rnglib.key(e["data_seed"]), e["num_data"], e["burn_in"], e["thinning"])
        else:
            data = None
        env = IsingEnvironment(J if e["mode"] == "sampler" else np.zeros_like(J))
        return Task(cfg, env, {"J_true": J, "data": data})
    raise ConfigError(f"unknown environment {name!r}")


# -- evaluation -------------------------------------------------------------------

def _policy(ts: TrainState):
    return MlpPolicy(ts.params, ts.spec)


def _tokens_list(env, states):
    return [list(t[t != EMPTY]) for t in states.tokens]


def evaluate(task: Task, ts: TrainState, key, buffer: FifoBuffer | None = None, metrics=None,
             env=None) -> dict:
    """Metric values for the configured metric list (missing ones are omitted)."""
    cfg = task.cfg
    env = env if env is not None else task.env
    metrics = cfg.metric_list if metrics is None else metrics
    policy = _policy(ts)
    out = {}
    k_samp, k_mc, k_test = rnglib.split(key, 3)
    samples = None

    def draw():
        nonlocal samples
        if samples is None:
            samples = forward_rollout(policy, env, cfg.eval.num_eval, k_samp).terminal_states
        return samples

    for m in metrics:
        if m == "tv":
            exact = task.exact()
            emp = buffer.empirical() if buffer is not None and len(buffer) else \
                EmpiricalDistribution.from_keys(env.terminal_keys(draw()))
            out["tv"] = tv_distance(emp, exact)
        elif m in ("tv_exact", "jsd"):
            exact = task.exact()
            learned = exact_policy_marginal(env, policy, task.graph())
            p = np.array([learned.prob(k) for k in exact.keys])
            out[m] = 0.5 * float(np.abs(p - exact.probs).sum()) if m == "tv_exact" else jsd(p, exact.probs)
        elif m == "pearson":
            states = _test_states(task, k_test)
            logp = mc_terminal_logprob(policy, env, states, cfg.eval.mc_samples, k_mc)
            out["pearson"] = pearson(logp, env.log_reward(states))
        elif m == "topk":
            s = draw()
            rewards = np.exp(env.log_reward(s))
            k = min(cfg.eval.topk, len(rewards))
            out["topk_reward"], out["topk_diversity"] = topk_reward_diversity(_tokens_list(env, s), rewards, k)
        elif m == "neg_log_rmse":
            J = task.extras.get("J_current")
            if J is None:
                raise ConfigError("neg_log_rmse needs an energy model (ising mode = ebgfn)")
            out["neg_log_rmse"] = neg_log_rmse(task.extras["J_true"], J)
        else:
            raise ConfigError(f"unknown metric {m!r}")
    return out


def _test_states(task: Task, key):
    if "test_states" in task.extras:
        return task.extras["test_states"]
    env = task.env
    n = task.cfg.eval.num_eval
    if task.cfg.env_name == "phylo":
        if num_topologies(env.data.n) <= 10**5:
            tops = all_topologies(env.data.n)
            idx = rnglib.generator(key).choice(len(tops), size=min(n, len(tops)), replace=False)
            return env.states_from_trees([tops[i] for i in sorted(idx)])
    # fall back to on-policy samples
    return forward_rollout(UniformPolicy(env), env, n, key).terminal_states


# -- CSV helpers -------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class MetricWriter:
    def __init__(self, out: Path):
        out.mkdir(parents=True, exist_ok=True)
        self._m = open(out / "metrics.csv", "w", newline="", encoding="utf-8")
        self._t = open(out / "timing.csv", "w", newline="", encoding="utf-8")
        self.mw = csv.writer(self._m, lineterminator="\n")
        self.tw = csv.writer(self._t, lineterminator="\n")
        self.mw.writerow(METRIC_COLUMNS)
        self.tw.writerow(TIMING_COLUMNS)
        self.rows = []

    def write(self, record: dict, wall: float, ips: float):
        self.mw.writerow([_fmt(record.get(c)) for c in METRIC_COLUMNS])
        self.tw.writerow([record["step"], f"{wall:.3f}", f"{ips:.3f}"])
        self._m.flush()
        self._t.flush()
        self.rows.append(dict(record))

    def close(self):
        self._m.close()
        self._t.close()


# -- train ---------------------------------------------------------------------------

def _schedules(cfg: RunConfig):
    o = cfg.optimizer
    if o.lr_schedule == "constant":
        lr = Schedule("constant", o.lr, warmup=o.warmup)
    else:
        lr = Schedule(o.lr_schedule, o.lr, o.lr_end, o.warmup, max(o.iterations - o.warmup, 1))
    eps_horizon = max(int(round(o.eps_fraction * o.iterations)), 1)
    eps = Schedule("linear", o.eps_start, o.eps_end, 0, eps_horizon)
    return lr, eps


def init_state_for(task: Task, key) -> TrainState:
    o = task.cfg.optimizer
    lr, _ = _schedules(task.cfg)
    return init_train_state(task.env, key, o.hidden_sizes, lr, o.z_lr, (o.beta1, o.beta2), o.eps, o.weight_decay)


def loss_config(cfg: RunConfig) -> LossConfig:
    ob = cfg.objective
    return LossConfig(ob.name, ob.subtb_lambda, ob.backward_policy, ob.terminal_weight)


def run_train(cfg: RunConfig, out, progress=None) -> dict:
    """Train, log metrics, save a checkpoint; returns the run summary."""
    out = Path(out)
    task = build_task(cfg)
    if cfg.env_name == "ising" and cfg.env["mode"] == "ebgfn":
        return _run_train_ebgfn(task, out, progress)
    root = rnglib.key(cfg.seed)
    k_init, k_train, k_eval = rnglib.split(root, 3)
    ts = init_state_for(task, k_init)
    lcfg = loss_config(cfg)
    _, eps_sched = _schedules(cfg)
    buffer = FifoBuffer(cfg.eval.buffer_capacity)
    writer = MetricWriter(out)
    env = task.env
    start = last_t = time.perf_counter()
    last_step = 0
    loss = float("nan")
    try:
        for it in range(cfg.optimizer.iterations):
            eps = schedule_value(eps_sched, it)
            batch = forward_rollout(_policy(ts), env, cfg.optimizer.batch_size, rnglib.fold_in(k_train, it), eps)
            ts, loss = update(ts, batch, lcfg, env.stop_action)
            buffer.push_batch(env.terminal_keys(batch.terminal_states))
            step = it + 1
            if step % cfg.eval.interval == 0 or step == cfg.optimizer.iterations:
                record = {"step": step, "loss": loss, "logZ": float(ts.params["logZ"])}
                record.update(evaluate(task, ts, rnglib.fold_in(k_eval, step), buffer))
                now = time.perf_counter()
                writer.write(record, now - start, (step - last_step) / max(now - last_t, 1e-12))
                last_t, last_step = now, step
                if progress:
                    progress(record)
    finally:
        writer.close()
    save_checkpoint(out / "checkpoint.npz", ts.params, ts.adam,
                    {"env": cfg.env_name, "step": ts.step, "config": dump_config(cfg)})
    summary = {"csv_version": CSV_VERSION, "env": cfg.env_name, "objective": cfg.objective.name, "seed": cfg.seed,
               "iterations": cfg.optimizer.iterations, "final": writer.rows[-1] if writer.rows else {},
               "config": dump_config(cfg)}
    (out / "run.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def _run_train_ebgfn(task: Task, out: Path, progress=None) -> dict:
    cfg = task.cfg
    o = cfg.optimizer
    ecfg = EbgfnConfig(iterations=o.iterations, batch_size=o.batch_size, hidden=o.hidden_sizes, lr=o.lr,
                       z_lr=o.z_lr, energy_lr=cfg.ebgfn.energy_lr, alpha=cfg.ebgfn.alpha,
                       K=cfg.ebgfn.K or None)
    writer = MetricWriter(out)
    start = last_t = time.perf_counter()
    state = {"last_step": 0, "last_t": last_t}
    metrics = [m for m in cfg.metric_list if m != "tv"] or ["neg_log_rmse"]
    if "neg_log_rmse" not in metrics:
        metrics.append("neg_log_rmse")
    k_eval = rnglib.fold_in(rnglib.key(cfg.seed), 7)

    def callback(rec, ts, J):
        step = rec["step"]
        if step % cfg.eval.interval and step != o.iterations:
            return
        task.extras["J_current"] = J
        record = {"step": step, "loss": rec["loss"], "logZ": rec["logZ"]}
        record.update(evaluate(task, ts, rnglib.fold_in(k_eval, step), metrics=metrics,
                               env=IsingEnvironment(J)))
        now = time.perf_counter()
        writer.write(record, now - start, (step - state["last_step"]) / max(now - state["last_t"], 1e-12))
        state["last_step"], state["last_t"] = step, now
        if progress:
            progress(record)

    try:
        res = train_ebgfn(task.extras["data"], ecfg, rnglib.key(cfg.seed), J_true=task.extras["J_true"],
                          callback=callback)
    finally:
        writer.close()
    ts = res.train_state
    save_checkpoint(out / "checkpoint.npz", ts.params, ts.adam,
                    {"env": cfg.env_name, "step": ts.step, "config": dump_config(cfg), "J": res.J.tolist(),
                     "best_J": res.best_J.tolist(), "best_neg_log_rmse": res.best_score})
    summary = {"csv_version": CSV_VERSION, "env": cfg.env_name, "objective": "tb", "seed": cfg.seed,
               "iterations": o.iterations, "final": writer.rows[-1] if writer.rows else {},
               "best_neg_log_rmse": res.best_score, "config": dump_config(cfg)}
    (out / "run.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


# -- eval ----------------------------------------------------------------------------

def run_eval(checkpoint, cfg: RunConfig, out=None) -> dict:
    task = build_task(cfg)
    if any(m in ("tv", "tv_exact", "jsd") for m in cfg.metric_list):
        task.exact()  # fail early when the environment cannot be enumerated
    params, _, meta = load_checkpoint(checkpoint)
    ts = init_state_for(task, rnglib.key(0))
    for k, v in params.items():
        if k not in ts.params or np.shape(ts.params[k]) != np.shape(v):
            raise ConfigError(f"checkpoint parameter {k!r} does not match the configured network")
    ts = TrainState(params, ts.adam, ts.spec, int(meta.get("step", 0)))
    env = task.env
    metrics = cfg.metric_list
    if cfg.env_name == "ising" and cfg.env["mode"] == "ebgfn":
        if "J" not in meta:
            raise ConfigError("checkpoint has no energy model")
        task.extras["J_current"] = np.asarray(meta["J"])
        env = IsingEnvironment(task.extras["J_current"])
        metrics = [m for m in metrics if m != "tv"] + (["neg_log_rmse"] if "neg_log_rmse" not in metrics else [])
    record = {"step": ts.step, "logZ": float(params["logZ"])}
    record.update(evaluate(task, ts, rnglib.fold_in(rnglib.key(cfg.seed), 10**9), metrics=metrics, env=env))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return record


# -- gendata -------------------------------------------------------------------------

GENDATA_KINDS = ("er-dag", "ising", "phylo-synthetic", "modes")


def run_gendata(kind: str, cfg: RunConfig, out, seed: int | None = None) -> list:
    """Write a dataset of the given kind; returns the written paths."""
    from .config import ENV_DEFAULTS
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    env_for = {"er-dag": "dag", "ising": "ising", "phylo-synthetic": "phylo", "modes": "bitseq"}
    if kind not in env_for:
        raise ConfigError(f"unknown data kind {kind!r}; choose from {GENDATA_KINDS}")
    e = dict(ENV_DEFAULTS[env_for[kind]])
    if cfg.env_name == env_for[kind]:
        e.update(cfg.env)
    if kind == "er-dag":
        s = e["data_seed"] if seed is None else seed
        ds = generate_er_dataset(e["d"], e["expected_in_degree"], e["num_samples"], rnglib.key(s))
        p = save_dataset(ds, out / "dataset.csv", seed=s)
        return [p, p.with_suffix(".json")]
    if kind == "ising":
        s = e["data_seed"] if seed is None else seed
        J = e["sigma"] * torus_adjacency(e["side"])
        x = gibbs_data_sampler(J, rnglib.key(s), e["num_data"], e["burn_in"], e["thinning"])
        return [save_samples(x, e["side"], e["sigma"], out / "ising_samples.txt")]
    if kind == "phylo-synthetic":
        s = e["data_seed"] if seed is None else seed
        data = synthetic_species(e["n_species"], e["num_sites"], rnglib.key(s))
        return [save_species(data, out / "species.txt")]
    s = e["mode_seed"] if seed is None else seed
    modes = generate_modes(e["n"], rnglib.key(s), e["num_modes"], e["beta"])
    test = generate_test_set(modes, rnglib.fold_in(rnglib.key(s), 1))
    header = f"n={e['n']} beta={e['beta']!r}"
    mp, tp = out / "modes.txt", out / "test_set.txt"
    mp.write_text("\n".join([header] + ["".join(map(str, m)) for m in modes.modes]) + "\n", encoding="utf-8")
    tp.write_text("\n".join([header] + ["".join(map(str, t)) for t in test]) + "\n", encoding="utf-8")
    return [mp, tp]


# -- enumerate -------------------------------------------------------------------------

def describe_objects(task: Task, exact) -> list:
    name = task.cfg.env_name
    objs = exact.objects
    if name == "hypergrid":
        return [";".join(map(str, c)) for c in objs]
    if name in ("bitseq", "sequence"):
        if name == "bitseq":
            from .envs.sequences import words_to_bits
            k = task.cfg.env["k"]
            return ["".join(map(str, words_to_bits(t, k))) for t in objs]
        table = task.env.reward
        return [table.decode([int(v) for v in t if v != EMPTY]) for t in objs]
    if name == "dag":
        return [";".join(f"{u}->{v}" for u, v in zip(*np.nonzero(a))) or "empty" for a in objs]
    if name == "phylo":
        return [repr(t) for t in objs]
    if name == "ising":
        return ["".join("+" if v > 0 else "-" for v in x) for x in objs]
    return [str(i) for i in range(len(exact))]


def run_enumerate(cfg: RunConfig, out) -> dict:
    from scipy.special import logsumexp
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    task = build_task(cfg)
    exact = task.exact()
    names = describe_objects(task, exact)
    with open(out / "distribution.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("object", "log_reward", "probability"))
        for n, lr, p in zip(names, exact.log_rewards, exact.probs):
            w.writerow((n, repr(float(lr)), repr(float(p))))
    summary = {"env": cfg.env_name, "num_terminals": len(exact), "log_z": float(logsumexp(exact.log_rewards))}
    try:
        summary["num_states"] = task.graph().num_states
    except ConfigError:
        summary["num_states"] = None
    (out / "enumerate.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


# -- bench -----------------------------------------------------------------------------

def run_bench(cfg: RunConfig, out=None, warmup: int = 5, iters: int = 20, repeats: int = 5) -> dict:
    """Training iterations per second: mean and 3-sigma standard-error half-width."""
    if warmup < 0 or iters < 1 or repeats < 1:
        raise ConfigError("bench needs warmup >= 0, iters >= 1 and repeats >= 1")
    task = build_task(cfg)
    if cfg.env_name == "ising" and cfg.env["mode"] == "ebgfn":
        raise ConfigError("bench supports plain GFlowNet training only (use ising mode = sampler)")
    k_init, k_train = rnglib.split(rnglib.key(cfg.seed), 2)
    ts = init_state_for(task, k_init)
    lcfg = loss_config(cfg)
    env = task.env
    it = 0

    def one():
        nonlocal ts, it
        batch = forward_rollout(_policy(ts), env, cfg.optimizer.batch_size, rnglib.fold_in(k_train, it))
        ts, _ = update(ts, batch, lcfg, env.stop_action)
        it += 1

    for _ in range(warmup):
        one()
    rates = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(iters):
            one()
        rates.append(iters / (time.perf_counter() - t0))
    rates = np.array(rates)
    se = float(rates.std(ddof=1) / math.sqrt(len(rates))) if len(rates) > 1 else 0.0
    report = {"env": cfg.env_name, "objective": cfg.objective.name, "batch_size": cfg.optimizer.batch_size,
              "warmup": warmup, "iters": iters, "repeats": repeats, "rates": rates.tolist(),
              "mean_its": float(rates.mean()), "pm_3sigma": 3.0 * se}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


__all__ = ["Task", "build_task", "evaluate", "run_train", "run_eval", "run_gendata", "run_enumerate", "run_bench",
           "METRIC_COLUMNS", "TIMING_COLUMNS", "CSV_VERSION", "GENDATA_KINDS"]
