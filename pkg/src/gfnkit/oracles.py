"""Exact oracles on small state graphs.

The construction graph of every environment here is graded: each forward
action raises ``step_count`` by one.  ``enumerate_state_graph`` expands it
level by level, which lets flows and policy marginals be computed by a
single backward or forward sweep.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .envs.base import ConfigError, concat, repeat, take
from .metrics import ExactDistribution
from .rollout import backward_rollout, masked_softmax, trajectory_log_probs


@dataclass
class StateGraph:
    """All states reachable from ``s_0``.

    ``states`` is one batched state holding every node; ``level[i]`` is the
    step count of node ``i``.  Edge ``e`` goes ``src[e] -> dst[e]`` by forward
    action ``action[e]`` with backward action ``bwd_action[e]``.
    """

    states: object
    keys: list
    level: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    action: np.ndarray
    bwd_action: np.ndarray
    fwd_mask: np.ndarray
    bwd_mask: np.ndarray
    is_terminal: np.ndarray

    def __post_init__(self):
        self._index = {k: i for i, k in enumerate(self.keys)}

    @property
    def num_states(self) -> int:
        return len(self.keys)

    def lookup(self, env, states) -> np.ndarray:
        try:
            return np.array([self._index[k] for k in env.state_keys(states)], dtype=np.int64)
        except KeyError as exc:
            raise KeyError("state not in the enumerated graph") from exc

    def terminal_indices(self) -> np.ndarray:
        return np.flatnonzero(self.is_terminal)


def enumerate_state_graph(env, cap: int = 200_000) -> StateGraph:
    _, frontier = env.reset(1)
    levels = [frontier]
    keys = list(env.state_keys(frontier))
    index = {k: 0 for k in keys}
    src, dst, act, bact = [], [], [], []
    offset = 0
    while True:
        mask = env.action_mask(frontier)
        rows, cols = np.nonzero(mask)
        if len(rows) == 0:
            break
        parents = take(frontier, rows)
        children = env.step(parents, cols).state
        back = env.get_backward_action(parents, cols, children)
        ckeys = env.state_keys(children)
        new_rows = []
        base = offset + len(env.state_keys(frontier))
        for r, k in enumerate(ckeys):
            if k not in index:
                index[k] = base + len(new_rows)
                keys.append(k)
                new_rows.append(r)
            src.append(offset + rows[r])
            dst.append(index[k])
            act.append(cols[r])
            bact.append(back[r])
        if len(keys) > cap:
            raise ConfigError(f"state graph exceeds the enumeration cap {cap}")
        offset = base
        frontier = take(children, np.array(new_rows, dtype=np.int64))
        levels.append(frontier)
    states = concat(levels)
    return StateGraph(states=states, keys=keys, level=np.asarray(states.step_count, dtype=np.int64),
                      src=np.array(src, dtype=np.int64), dst=np.array(dst, dtype=np.int64),
                      action=np.array(act, dtype=np.int64), bwd_action=np.array(bact, dtype=np.int64),
                      fwd_mask=env.action_mask(states), bwd_mask=env.backward_action_mask(states),
                      is_terminal=np.asarray(states.is_terminal, dtype=bool))


def _segment_logsumexp(out, seg, values):
    """``out[i] = logsumexp(values[seg == i])`` for every ``i`` present in ``seg``."""
    if len(seg) == 0:
        return
    peak = np.full(len(out), -np.inf)
    np.maximum.at(peak, seg, values)
    shift = np.where(np.isfinite(peak), peak, 0.0)
    total = np.zeros(len(out))
    np.add.at(total, seg, np.exp(values - shift[seg]))
    nodes = np.unique(seg)
    with np.errstate(divide="ignore"):
        out[nodes] = np.log(total[nodes]) + shift[nodes]


@dataclass
class ExactFlows:
    """Balanced flows for the uniform backward policy.

    ``log_flow[i]`` is log F of node ``i`` (log R at terminals), ``log_pf`` is a
    dense ``[num_states, num_actions]`` table (``-inf`` off-support) and
    ``log_pb`` the matching per-edge backward log-probabilities.
    """

    graph: StateGraph
    log_flow: np.ndarray
    log_pf: np.ndarray
    log_pb_edge: np.ndarray
    log_rewards: np.ndarray

    @property
    def log_z(self) -> float:
        return float(self.log_flow[0])


def exact_flows(env, graph: StateGraph | None = None) -> ExactFlows:
    g = graph if graph is not None else enumerate_state_graph(env)
    n = g.num_states
    n_parents = np.maximum(g.bwd_mask.sum(-1), 1)
    log_pb_edge = -np.log(n_parents[g.dst])
    log_r = np.full(n, -np.inf)
    term = g.terminal_indices()
    log_r[term] = env.log_reward(take(g.states, term))
    log_flow = np.full(n, -np.inf)
    log_flow[term] = log_r[term]
    src_level = g.level[g.src]
    for lvl in range(int(g.level.max()) - 1, -1, -1):
        e = src_level == lvl
        _segment_logsumexp(log_flow, g.src[e], log_flow[g.dst[e]] + log_pb_edge[e])
    log_pf = np.full((n, env.num_actions), -np.inf)
    log_pf[g.src, g.action] = log_flow[g.dst] + log_pb_edge - log_flow[g.src]
    return ExactFlows(g, log_flow, log_pf, log_pb_edge, log_r)


def exact_terms(env, flows: ExactFlows, batch) -> dict:
    """Per-step loss inputs (like ``objectives.policy_terms``) from exact flows."""
    g = flows.graph
    n, horizon = batch.fwd_actions.shape
    idx = np.stack([g.lookup(env, s) for s in batch.states], axis=1)
    valid = batch.valid
    a = np.clip(batch.fwd_actions, 0, None)
    log_pf = np.where(valid, flows.log_pf[idx[:, :-1], a], 0.0)
    counts = np.maximum(g.bwd_mask.sum(-1), 1)
    log_pb = np.where(valid, -np.log(counts[idx[:, 1:]]), 0.0)
    out = {"log_pf": log_pf, "log_pb": log_pb, "log_flow": flows.log_flow[idx], "log_z": flows.log_z}
    if env.stop_action is not None:
        stop = flows.log_pf[idx, env.stop_action]
        out["log_pf_stop"] = np.where(np.isfinite(stop), stop, 0.0)
    return out


def exact_policy_marginal(env, policy, graph: StateGraph | None = None, exploration_eps: float = 0.0
                          ) -> ExactDistribution:
    """Exact terminal distribution of ``policy`` by a forward sweep over the state graph."""
    g = graph if graph is not None else enumerate_state_graph(env)
    heads = policy(env.observe(g.states))
    probs = masked_softmax(heads.fwd_logits, g.fwd_mask)
    if exploration_eps > 0:
        counts = np.maximum(g.fwd_mask.sum(-1, keepdims=True), 1)
        probs = (1 - exploration_eps) * probs + exploration_eps * g.fwd_mask / counts
    with np.errstate(divide="ignore"):
        log_probs = np.log(probs)
    log_mass = np.full(g.num_states, -np.inf)
    log_mass[0] = 0.0
    src, dst, act = g.src, g.dst, g.action
    lv = g.level[src]
    for lvl in range(int(g.level.max())):
        e = lv == lvl
        if not e.any():
            continue
        _segment_logsumexp(log_mass, dst[e], log_mass[src[e]] + log_probs[src[e], act[e]])
    term = g.terminal_indices()
    tstates = take(g.states, term)
    keys = env.terminal_keys(tstates)
    p = np.exp(log_mass[term])
    return ExactDistribution(keys, p / p.sum(), tstates, env.log_reward(tstates))


def mc_terminal_logprob(policy, env, terminal_states, num_samples: int, key, uniform_pb: bool = True
                        ) -> np.ndarray:
    """log of (1/N) sum_i P_F(tau_i) / P_B(tau_i | x) with tau_i ~ P_B(. | x), per terminal."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    b = len(terminal_states.is_terminal)
    rep = repeat(terminal_states, num_samples)
    batch = backward_rollout(policy, env, rep, key, uniform_pb=uniform_pb)
    lpf, lpb = trajectory_log_probs(policy, env, batch, uniform_pb=uniform_pb)
    w = (lpf - lpb).reshape(b, num_samples)
    return logsumexp(w, axis=1) - np.log(num_samples)


def enumerate_terminal_keys(env, cap: int = 200_000) -> list:
    """Distinct terminal objects reachable from ``s_0`` (via full state-graph expansion)."""
    g = enumerate_state_graph(env, cap)
    return sorted(set(env.terminal_keys(take(g.states, g.terminal_indices()))))


__all__ = ["StateGraph", "enumerate_state_graph", "ExactFlows", "exact_flows", "exact_terms",
           "exact_policy_marginal", "mc_terminal_logprob", "enumerate_terminal_keys"]
