"""Bayesian-network structure learning: build a DAG one edge at a time.

Forward actions ``u * d + v`` add the edge ``u -> v``; action ``d * d`` stops.
Backward actions ``u * d + v`` remove an edge; ``d * d`` undoes the stop.

Acyclicity is tracked with ``closure_t``, the reflexive transitive closure of
the transposed graph: ``closure_t[i, j]`` is True when ``j`` reaches ``i``.
An edge ``u -> v`` is legal exactly when it is absent and ``v`` does not
reach ``u``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .. import rng as rnglib
from ..metrics import ExactDistribution
from .base import ConfigError, Environment


@dataclass(frozen=True)
class DagState:
    adjacency: np.ndarray   # [B, d, d] bool, adjacency[u, v] means u -> v
    closure_t: np.ndarray   # [B, d, d] bool
    is_terminal: np.ndarray
    step_count: np.ndarray


def transpose_closure(adjacency) -> np.ndarray:
    """Reflexive transitive closure of the transpose, computed from scratch."""
    adj = np.asarray(adjacency, dtype=bool)
    squeeze = adj.ndim == 2
    if squeeze:
        adj = adj[None]
    d = adj.shape[-1]
    reach = adj | np.eye(d, dtype=bool)
    for k in range(d):
        reach = reach | (reach[:, :, k:k + 1] & reach[:, k:k + 1, :])
    out = np.swapaxes(reach, 1, 2)
    return out[0] if squeeze else out


def closure_update(closure_t, u, v) -> np.ndarray:
    """Closure after adding ``u -> v``: OR with the outer product of column ``v`` and row ``u``."""
    c = np.asarray(closure_t, dtype=bool)
    if c.ndim == 2:
        return c | np.outer(c[:, v], c[u, :])
    u = np.asarray(u)
    v = np.asarray(v)
    rows = np.arange(len(c))
    return c | (c[rows, :, v][:, :, None] & c[rows, u, :][:, None, :])


def is_acyclic(adjacency) -> bool:
    adj = np.asarray(adjacency, dtype=bool)
    reach = transpose_closure(adj)
    off = reach & ~np.eye(adj.shape[-1], dtype=bool)
    return not np.any(off & np.swapaxes(off, -1, -2))


# -- local scores --------------------------------------------------------------

@dataclass(frozen=True)
class ScoreParams:
    kind: str = "lingauss"
    prior_var: float = 1.0       # lingauss: w ~ N(0, prior_var I)
    noise_var: float = 0.1       # lingauss: observation noise
    alpha_mu: float = 1.0        # BGe
    alpha_w: float | None = None  # BGe, defaults to d + 2

    def __post_init__(self):
        if self.kind not in ("lingauss", "bge"):
            raise ConfigError(f"unknown score {self.kind!r}")
        if self.prior_var <= 0 or self.noise_var <= 0 or self.alpha_mu <= 0:
            raise ConfigError("score hyperparameters must be positive")


def local_score_lingauss(j: int, parents, data, params: ScoreParams = ScoreParams()) -> float:
    """log p(x_j | X_pa) with x_j = X_pa w + eps, w ~ N(0, a I), eps ~ N(0, s I)."""
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    y = data[:, j]
    pa = sorted(parents)
    s, a = params.noise_var, params.prior_var
    quad = y @ y
    logdet = n * math.log(s)
    if pa:
        x = data[:, pa]
        inner = x.T @ x + (s / a) * np.eye(len(pa))
        chol = np.linalg.cholesky(inner)
        z = np.linalg.solve(chol, x.T @ y)
        quad = quad - z @ z
        # det(s I + a X X^T) = s^n det(I + (a/s) X^T X)
        logdet += 2.0 * np.log(np.diag(chol)).sum() + len(pa) * math.log(a / s)
    return float(-0.5 * (n * math.log(2 * math.pi) + logdet + quad / s))


class BGeStats:
    """Sufficient statistics for the BGe score (zero prior mean, scale ``t I``)."""

    def __init__(self, data, params: ScoreParams = ScoreParams("bge")):
        data = np.asarray(data, dtype=np.float64)
        self.n, self.d = data.shape
        self.alpha_mu = params.alpha_mu
        self.alpha_w = params.alpha_w if params.alpha_w is not None else self.d + 2.0
        if self.alpha_w <= self.d - 1:
            raise ConfigError("BGe alpha_w must exceed d - 1")
        self.t = self.alpha_mu * (self.alpha_w - self.d - 1) / (self.alpha_mu + 1)
        if self.t <= 0:
            raise ConfigError("BGe scale must be positive (alpha_w > d + 1)")
        mean = data.mean(axis=0)
        centered = data - mean
        self.r = (self.t * np.eye(self.d) + centered.T @ centered
                  + (self.n * self.alpha_mu / (self.n + self.alpha_mu)) * np.outer(mean, mean))

    def _logdet(self, idx):
        if not idx:
            return 0.0
        sign, val = np.linalg.slogdet(self.r[np.ix_(idx, idx)])
        if sign <= 0:
            raise FloatingPointError("singular BGe statistics")
        return val

    def local_score(self, j: int, parents) -> float:
        pa = sorted(parents)
        n, d, aw, l = self.n, self.d, self.alpha_w, len(pa)
        log_gamma = (0.5 * (math.log(self.alpha_mu) - math.log(n + self.alpha_mu))
                     + gammaln(0.5 * (n + aw - d + l + 1)) - gammaln(0.5 * (aw - d + l + 1))
                     - 0.5 * n * math.log(math.pi) + 0.5 * (aw - d + 2 * l + 1) * math.log(self.t))
        log_r = (0.5 * (n + aw - d + l) * self._logdet(pa)
                 - 0.5 * (n + aw - d + l + 1) * self._logdet(pa + [j]))
        return float(log_gamma + log_r)


def local_score_bge(j: int, parents, data, params: ScoreParams = ScoreParams("bge")) -> float:
    return BGeStats(data, params).local_score(j, parents)


class LocalScoreCache:
    """``scores[j, mask]`` = local score of node ``j`` with parent bitmask ``mask``.

    Masks that contain ``j`` itself hold NaN.
    """

    MAX_BITS = 16

    def __init__(self, scores: np.ndarray, params: ScoreParams):
        self.scores = scores
        self.params = params
        self.d = scores.shape[0]

    @classmethod
    def build(cls, data, params: ScoreParams = ScoreParams(), max_bits: int = MAX_BITS):
        data = np.asarray(data, dtype=np.float64)
        d = data.shape[1]
        if d > max_bits:
            raise ConfigError(f"d={d} exceeds the local-score cache limit of {max_bits}")
        if params.kind == "bge":
            stats = BGeStats(data, params)
            score = stats.local_score
        else:
            def score(j, pa):
                return local_score_lingauss(j, pa, data, params)
        table = np.full((d, 2 ** d), np.nan)
        for j in range(d):
            for mask in range(2 ** d):
                if mask >> j & 1:
                    continue
                table[j, mask] = score(j, [i for i in range(d) if mask >> i & 1])
        return cls(table, params)

    def parent_masks(self, adjacency) -> np.ndarray:
        adj = np.asarray(adjacency, dtype=np.int64)
        weights = 1 << np.arange(self.d)
        return np.einsum("...ij,i->...j", adj, weights)

    def log_reward(self, adjacency) -> np.ndarray:
        masks = self.parent_masks(adjacency)
        return self.scores[np.arange(self.d), masks].sum(-1)

    def delta_score(self, j: int, parents_mask: int, new_parent: int) -> float:
        if parents_mask >> new_parent & 1:
            raise ValueError("new parent already present")
        return float(self.scores[j, parents_mask | (1 << new_parent)] - self.scores[j, parents_mask])


def delta_score(j: int, parents, new_parent: int, cache: LocalScoreCache) -> float:
    mask = sum(1 << int(i) for i in parents)
    return cache.delta_score(j, mask, new_parent)


# -- environment -----------------------------------------------------------------

class DagEnvironment(Environment):
    name = "dag"

    def __init__(self, cache: LocalScoreCache):
        self.cache = cache
        d = self.d = cache.d
        self.num_actions = d * d + 1
        self.num_bwd_actions = d * d + 1
        self.stop_action = d * d
        self.obs_dim = 2 * d * d
        self.max_steps = d * (d - 1) // 2 + 1

    def _init_state(self, n):
        d = self.d
        return DagState(np.zeros((n, d, d), dtype=bool), np.broadcast_to(np.eye(d, dtype=bool), (n, d, d)).copy(),
                        np.zeros(n, dtype=bool), np.zeros(n, dtype=np.int64))

    def _edge_mask(self, state):
        return (~state.adjacency & ~state.closure_t).reshape(len(state.is_terminal), -1)

    def action_mask(self, state):
        live = ~state.is_terminal
        return np.concatenate([self._edge_mask(state) & live[:, None], live[:, None]], axis=1)

    def backward_action_mask(self, state):
        term = state.is_terminal
        edges = state.adjacency.reshape(len(term), -1) & ~term[:, None]
        return np.concatenate([edges, term[:, None]], axis=1)

    def _apply(self, state, actions, live):
        d = self.d
        add = live & (actions < d * d)
        adj = state.adjacency.copy()
        clo = state.closure_t.copy()
        rows = np.flatnonzero(add)
        u, v = actions[rows] // d, actions[rows] % d
        adj[rows, u, v] = True
        clo[rows] = closure_update(clo[rows], u, v)
        stop = live & (actions == d * d)
        return dataclasses.replace(state, adjacency=adj, closure_t=clo, is_terminal=state.is_terminal | stop)

    def _apply_backward(self, state, bwd, live):
        d = self.d
        rem = live & (bwd < d * d)
        adj = state.adjacency.copy()
        clo = state.closure_t.copy()
        rows = np.flatnonzero(rem)
        adj[rows, bwd[rows] // d, bwd[rows] % d] = False
        if len(rows):
            clo[rows] = transpose_closure(adj[rows])
        unstop = live & (bwd == d * d)
        return dataclasses.replace(state, adjacency=adj, closure_t=clo, is_terminal=state.is_terminal & ~unstop)

    def get_backward_action(self, state, fwd_action, next_state):
        a = np.asarray(fwd_action)
        d = self.d
        stopped = next_state.is_terminal & ~state.is_terminal
        diff = next_state.adjacency.reshape(len(a), -1) & ~state.adjacency.reshape(len(a), -1)
        same = (next_state.adjacency == state.adjacency).reshape(len(a), -1).all(1)
        added = diff[np.arange(len(a)), np.minimum(a, d * d - 1)] & (diff.sum(1) == 1)
        ok = np.where(stopped, same & (a == d * d), added & ~next_state.is_terminal)
        self._check_pair(ok, "(state, action, next_state)")
        return a.copy()

    def get_forward_action(self, state, bwd_action, prev_state):
        return np.asarray(bwd_action).copy()

    def observe(self, state):
        n = len(state.is_terminal)
        return np.concatenate([state.adjacency.reshape(n, -1), self._edge_mask(state)], axis=1).astype(np.float64)

    def log_reward(self, state):
        return self.cache.log_reward(state.adjacency)

    def delta_log_reward(self, state, actions):
        """log R(s') - log R(s) for each forward action (0 for stop)."""
        d = self.d
        a = np.asarray(actions)
        out = np.zeros(len(a))
        rows = np.flatnonzero(a < d * d)
        if len(rows):
            u, v = a[rows] // d, a[rows] % d
            masks = self.cache.parent_masks(state.adjacency[rows])[np.arange(len(rows)), v]
            s = self.cache.scores
            out[rows] = s[v, masks | (1 << u)] - s[v, masks]
        return out

    def state_keys(self, state):
        return [a.tobytes() + bytes([t]) for a, t in
                zip(np.packbits(state.adjacency.reshape(len(state.is_terminal), -1), axis=1), state.is_terminal.astype(int).tolist())]

    def terminal_keys(self, state):
        return [a.tobytes() for a in np.packbits(state.adjacency.reshape(len(state.is_terminal), -1), axis=1)]

    def exact_distribution(self) -> ExactDistribution:
        graphs = enumerate_dags(self.d)
        logr = self.cache.log_reward(graphs)
        keys = [a.tobytes() for a in np.packbits(graphs.reshape(len(graphs), -1), axis=1)]
        return ExactDistribution.from_log_weights(keys, logr, graphs)


# -- enumeration ----------------------------------------------------------------

MAX_ENUM_D = 5


def enumerate_dags(d: int) -> np.ndarray:
    """All labelled DAGs on ``d`` nodes as a ``[G, d, d]`` bool array."""
    if d < 1:
        raise ConfigError("d must be >= 1")
    if d > MAX_ENUM_D:
        raise ConfigError(f"enumerate_dags supports d <= {MAX_ENUM_D}")
    pairs = [(u, v) for u in range(d) for v in range(d) if u != v]
    out = []

    def rec(k, desc, edges):
        # desc[x]: bitmask of nodes reachable from x (including x)
        if k == len(pairs):
            out.append(edges)
            return
        rec(k + 1, desc, edges)
        u, v = pairs[k]
        if desc[v] >> u & 1:
            return
        new = list(desc)
        add = desc[v]
        for x in range(d):
            if desc[x] >> u & 1:
                new[x] |= add
        rec(k + 1, new, edges | (1 << (u * d + v)))

    rec(0, [1 << x for x in range(d)], 0)
    codes = np.array(out, dtype=np.int64)
    return ((codes[:, None] >> np.arange(d * d)) & 1).astype(bool).reshape(-1, d, d)


# -- data ----------------------------------------------------------------------

@dataclass
class DagDataset:
    data: np.ndarray
    adjacency: np.ndarray
    weights: np.ndarray
    noise_var: float
    meta: dict = dataclasses.field(default_factory=dict)


def er_edge_probability(d: int, expected_in_degree: float) -> float:
    if d < 2:
        return 0.0
    return min(1.0, 2.0 * expected_in_degree / (d - 1))


def sample_er_dag(d: int, expected_in_degree: float, key) -> np.ndarray:
    gen = rnglib.generator(key)
    order = gen.permutation(d)
    p = er_edge_probability(d, expected_in_degree)
    upper = np.triu(gen.random((d, d)) < p, k=1)
    adj = np.zeros((d, d), dtype=bool)
    adj[np.ix_(order, order)] = upper
    return adj


def ancestral_sample(adjacency, weights, noise_var: float, n: int, key) -> np.ndarray:
    adj = np.asarray(adjacency, dtype=bool)
    d = adj.shape[0]
    gen = rnglib.generator(key)
    noise = gen.normal(scale=math.sqrt(noise_var), size=(n, d))
    x = np.zeros((n, d))
    for j in topological_order(adj):
        x[:, j] = x @ (weights[:, j] * adj[:, j]) + noise[:, j]
    return x


def topological_order(adjacency) -> list:
    adj = np.asarray(adjacency, dtype=bool)
    indeg = adj.sum(0).astype(int)
    ready = [i for i in range(len(adj)) if indeg[i] == 0]
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in np.flatnonzero(adj[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
    if len(order) != len(adj):
        raise ValueError("graph has a cycle")
    return order


def generate_er_dataset(d: int = 5, expected_in_degree: float = 1.0, n: int = 100, key=None,
                        noise_var: float = 0.1, adjacency=None) -> DagDataset:
    """Random ER ground truth, N(0, 1) edge weights and ancestral samples."""
    if d < 1 or n < 1:
        raise ConfigError("d and n must be >= 1")
    key = rnglib.key(0) if key is None else key
    k_graph, k_w, k_data = rnglib.split(key, 3)
    adj = sample_er_dag(d, expected_in_degree, k_graph) if adjacency is None else np.asarray(adjacency, bool)
    weights = np.where(adj, rnglib.generator(k_w).normal(size=(d, d)), 0.0)
    data = ancestral_sample(adj, weights, noise_var, n, k_data)
    return DagDataset(data, adj, weights, noise_var,
                      {"d": d, "n": n, "expected_in_degree": expected_in_degree})


def save_dataset(ds: DagDataset, path, seed=None) -> Path:
    path = Path(path)
    d = ds.data.shape[1]
    header = ",".join(f"x{i}" for i in range(d))
    np.savetxt(path, ds.data, delimiter=",", header=header, comments="", fmt="%.17g")
    sidecar = {"edges": [[int(u), int(v)] for u, v in zip(*np.nonzero(ds.adjacency))],
               "weights": ds.weights.tolist(), "noise_var": ds.noise_var, "seed": seed, **ds.meta}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_dataset(path) -> DagDataset:
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d = data.shape[1]
    adj = np.zeros((d, d), dtype=bool)
    weights = np.zeros((d, d))
    noise, meta = 0.1, {}
    side = path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        for u, v in meta.pop("edges", []):
            adj[u, v] = True
        weights = np.asarray(meta.pop("weights", weights))
        noise = meta.pop("noise_var", noise)
    return DagDataset(data, adj, weights, noise, meta)
