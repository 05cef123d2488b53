"""Evaluation metrics: TV, JSD, Pearson, DAG feature marginals, top-k reward/diversity."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import rng as rnglib


@dataclass
class ExactDistribution:
    """Enumerated terminal objects (canonical byte keys) with their probabilities."""

    keys: list
    probs: np.ndarray
    objects: object = None
    log_rewards: np.ndarray | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if len(self.keys) != len(self.probs):
            raise ValueError("keys and probs differ in length")
        if np.any(self.probs < 0):
            raise ValueError("probabilities must be non-negative")
        self._index = {k: i for i, k in enumerate(self.keys)}
        if len(self._index) != len(self.keys):
            raise ValueError("duplicate keys in distribution")

    @classmethod
    def from_log_weights(cls, keys, log_weights, objects=None):
        log_weights = np.asarray(log_weights, dtype=np.float64)
        probs = np.exp(log_weights - logsumexp(log_weights))
        return cls(list(keys), probs / probs.sum(), objects, log_weights)

    def index(self, key) -> int:
        return self._index[key]

    def prob(self, key) -> float:
        i = self._index.get(key)
        return 0.0 if i is None else float(self.probs[i])

    def __len__(self):
        return len(self.keys)


@dataclass
class EmpiricalDistribution:
    counts: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def from_keys(cls, keys):
        return cls(Counter(keys))


def perfect_sampler(exact: ExactDistribution, key, n: int) -> list:
    """``n`` i.i.d. draws (as keys) from an exact distribution."""
    if n == 0:
        return []
    idx = rnglib.generator(key).choice(len(exact), size=n, p=exact.probs)
    return [exact.keys[i] for i in idx]


def tv_distance(emp: EmpiricalDistribution, exact: ExactDistribution) -> float:
    total = emp.total
    if total == 0:
        raise ValueError("empty empirical distribution")
    p_hat = np.zeros(len(exact))
    outside = 0.0
    for k, c in emp.counts.items():
        i = exact._index.get(k)
        if i is None:
            outside += c / total
        else:
            p_hat[i] = c / total
    return 0.5 * (np.abs(p_hat - exact.probs).sum() + outside)


def tv(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


def _kl_to_mixture(p, log_p, log_m):
    nz = p > 0
    return float(np.sum(p[nz] * (log_p[nz] - log_m[nz])))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in nats (bounded by log 2)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must share a support")
    with np.errstate(divide="ignore"):
        log_p, log_q = np.log(p), np.log(q)
    # mixture in log space so tiny masses do not underflow to zero
    log_m = np.logaddexp(log_p, log_q) - np.log(2.0)
    return 0.5 * _kl_to_mixture(p, log_p, log_m) + 0.5 * _kl_to_mixture(q, log_q, log_m)


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length samples of size >= 2")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((xc * xc).sum()), np.sqrt((yc * yc).sum())
    if sx == 0 or sy == 0:
        raise ValueError("zero variance")
    return float((xc * yc).sum() / (sx * sy))


# -- DAG structural features --------------------------------------------------

def _reachability(adj: np.ndarray) -> np.ndarray:
    """Batched transitive closure (no reflexive pairs) of adjacency ``[G, d, d]``."""
    reach = adj.astype(bool).copy()
    d = adj.shape[-1]
    for k in range(d):
        reach |= reach[:, :, k:k + 1] & reach[:, k:k + 1, :]
    return reach


def feature_marginals(graphs: np.ndarray, probs, kind: str = "edge") -> np.ndarray:
    """Posterior marginal ``d x d`` matrix of edge, path or Markov-blanket features.

    ``graphs`` is ``[G, d, d]`` with ``graphs[g, i, j] = 1`` meaning ``i -> j``.
    """
    graphs = np.asarray(graphs).astype(bool)
    probs = np.asarray(probs, dtype=np.float64)
    if kind == "edge":
        feat = graphs
    elif kind == "path":
        feat = _reachability(graphs)
    elif kind in ("markov-blanket", "mb"):
        a = graphs.astype(np.int64)
        coparent = np.einsum("gik,gjk->gij", a, a) > 0
        feat = graphs | np.swapaxes(graphs, 1, 2) | coparent
        d = graphs.shape[-1]
        feat = feat & ~np.eye(d, dtype=bool)
    else:
        raise ValueError(f"unknown feature kind {kind!r}")
    return np.einsum("g,gij->ij", probs, feat.astype(np.float64))


# -- top-k reward and diversity -------------------------------------------------

def hamming(x, y) -> int:
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape:
        raise ValueError("hamming distance needs equal lengths")
    return int(np.count_nonzero(x != y))


def edit_distance(x, y) -> int:
    x, y = list(x), list(y)
    prev = list(range(len(y) + 1))
    for i, a in enumerate(x, 1):
        cur = [i] + [0] * len(y)
        for j, b in enumerate(y, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a != b))
        prev = cur
    return prev[-1]


def topk_reward_diversity(samples, rewards, k: int):
    """Mean reward of the ``k`` best samples and their mean pairwise distance.

    Distance is Hamming when all ``k`` samples share a length, edit distance otherwise.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    if k > len(samples) or k < 1:
        raise ValueError(f"k={k} invalid for {len(samples)} samples")
    order = np.argsort(-rewards, kind="stable")[:k]
    top = [samples[i] for i in order]
    mean_reward = float(rewards[order].mean())
    if k == 1:
        return mean_reward, 0.0
    same_len = len({len(s) for s in top}) == 1
    dist = hamming if same_len else edit_distance
    total = 0.0
    pairs = 0
    for i in range(k):
        for j in range(i + 1, k):
            total += dist(top[i], top[j])
            pairs += 1
    return mean_reward, total / pairs
