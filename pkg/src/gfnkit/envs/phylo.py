"""Phylogenetic trees built by merging pairs of roots, scored by Fitch parsimony.

Slot layout: a root lives in the slot named by the smallest leaf it
contains, so the forest has a canonical form.  Forward action ``k`` merges
the slot pair ``(i, j)``, ``i < j`` (the new root takes slot ``i``).  Backward
action ``i`` splits the root in slot ``i`` into its two children.

Trees are nested tuples ``(left, right)`` with integer leaves, children
ordered by smallest leaf.
"""
from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import rng as rnglib
from ..metrics import ExactDistribution
from .base import ConfigError, Environment


@dataclass(frozen=True)
class SpeciesData:
    names: tuple
    chars: np.ndarray     # [n, L] symbol indices
    alphabet: str = "ACGT"

    def __post_init__(self):
        if self.chars.ndim != 2 or self.chars.shape[0] < 2:
            raise ConfigError("species data needs an [n >= 2, L] character matrix")
        if len(self.names) != self.chars.shape[0]:
            raise ConfigError("one name per species required")
        if self.chars.min() < 0 or self.chars.max() >= len(self.alphabet):
            raise ConfigError("character outside alphabet")

    @property
    def n(self) -> int:
        return self.chars.shape[0]

    @property
    def num_sites(self) -> int:
        return self.chars.shape[1]

    def leaf_sets(self) -> np.ndarray:
        return (1 << self.chars).astype(np.uint8)


@dataclass(frozen=True)
class PhyloParams:
    alpha: float = 4.0
    reward_constant: float | None = None   # defaults to L * (n - 1)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")


@dataclass(frozen=True)
class ForestState:
    trees: np.ndarray      # [B, n] object: nested tuple or None
    fitch: np.ndarray      # [B, n, L] uint8 candidate-set bitmasks
    cost: np.ndarray       # [B, n] parsimony of each root
    is_terminal: np.ndarray
    step_count: np.ndarray


# -- parsimony -----------------------------------------------------------------

def min_leaf(tree) -> int:
    while isinstance(tree, tuple):
        tree = tree[0]
    return tree


def make_tree(a, b):
    return (a, b) if min_leaf(a) < min_leaf(b) else (b, a)


def canonical(tree):
    if not isinstance(tree, tuple):
        return int(tree)
    return make_tree(canonical(tree[0]), canonical(tree[1]))


def fitch(tree, leaf_sets: np.ndarray):
    """Return ``(candidate sets [L], mutation count)`` for a (sub)tree."""
    if not isinstance(tree, tuple):
        return leaf_sets[tree], 0
    a, ca = fitch(tree[0], leaf_sets)
    b, cb = fitch(tree[1], leaf_sets)
    inter = a & b
    empty = inter == 0
    return np.where(empty, a | b, inter), ca + cb + int(empty.sum())


def fitch_parsimony(tree, data: SpeciesData) -> int:
    return fitch(tree, data.leaf_sets())[1]


def phylo_log_reward(tree, params: PhyloParams, data: SpeciesData) -> float:
    return (reward_constant(params, data) - fitch_parsimony(tree, data)) / params.alpha


def reward_constant(params: PhyloParams, data: SpeciesData) -> float:
    if params.reward_constant is not None:
        return float(params.reward_constant)
    return float(data.num_sites * (data.n - 1))


def leaves(tree) -> list:
    if not isinstance(tree, tuple):
        return [tree]
    return leaves(tree[0]) + leaves(tree[1])


def all_topologies(n: int) -> list:
    """Every rooted binary tree on leaves ``0..n-1`` in canonical form."""
    trees = [0]
    for leaf in range(1, n):
        nxt = []
        for t in trees:
            nxt.extend(_insert_everywhere(t, leaf))
        trees = nxt
    return [canonical(t) for t in trees]


def _insert_everywhere(tree, leaf):
    yield (tree, leaf)
    if isinstance(tree, tuple):
        for sub in _insert_everywhere(tree[0], leaf):
            yield (sub, tree[1])
        for sub in _insert_everywhere(tree[1], leaf):
            yield (tree[0], sub)


def _double_factorial(k: int) -> int:
    return int(np.prod(np.arange(k, 0, -2))) if k > 0 else 1


def num_topologies(n: int) -> int:
    return _double_factorial(2 * n - 3)


# -- environment -----------------------------------------------------------------

class PhyloEnvironment(Environment):
    name = "phylo"

    def __init__(self, data: SpeciesData, params: PhyloParams = PhyloParams()):
        self.data = data
        self.params = params
        n = data.n
        self.pair_i, self.pair_j = (np.array(x, dtype=np.int64) for x in zip(*itertools.combinations(range(n), 2)))
        self._pair_index = {(int(i), int(j)): k for k, (i, j) in enumerate(zip(self.pair_i, self.pair_j))}
        self.num_actions = len(self.pair_i)
        self.num_bwd_actions = n
        self.max_steps = n - 1
        self._leaf_sets = data.leaf_sets()
        self._width = len(data.alphabet)
        self.obs_dim = n * (data.num_sites * self._width + 1)
        self.constant = reward_constant(params, data)

    def pair_index(self, i: int, j: int) -> int:
        return self._pair_index[(min(i, j), max(i, j))]

    def _init_state(self, num):
        n = self.data.n
        trees = np.empty((num, n), dtype=object)
        for b in range(num):
            trees[b] = list(range(n))
        fitch_sets = np.broadcast_to(self._leaf_sets, (num,) + self._leaf_sets.shape).copy()
        return ForestState(trees, fitch_sets, np.zeros((num, n), dtype=np.int64),
                           np.zeros(num, dtype=bool), np.zeros(num, dtype=np.int64))

    def _occupied(self, state):
        return np.vectorize(lambda t: t is not None, otypes=[bool])(state.trees)

    def action_mask(self, state):
        occ = self._occupied(state)
        return occ[:, self.pair_i] & occ[:, self.pair_j] & ~state.is_terminal[:, None]

    def backward_action_mask(self, state):
        return np.vectorize(lambda t: isinstance(t, tuple), otypes=[bool])(state.trees)

    def _apply(self, state, actions, live):
        trees = state.trees.copy()
        fs = state.fitch.copy()
        cost = state.cost.copy()
        for r in np.flatnonzero(live):
            i, j = self.pair_i[actions[r]], self.pair_j[actions[r]]
            a, b = fs[r, i], fs[r, j]
            inter = a & b
            empty = inter == 0
            trees[r, i] = (trees[r, i], trees[r, j])
            trees[r, j] = None
            fs[r, i] = np.where(empty, a | b, inter)
            fs[r, j] = 0
            cost[r, i] = cost[r, i] + cost[r, j] + int(empty.sum())
            cost[r, j] = 0
        term = state.is_terminal | (live & (state.step_count + 1 == self.data.n - 1))
        return dataclasses.replace(state, trees=trees, fitch=fs, cost=cost, is_terminal=term)

    def _apply_backward(self, state, bwd, live):
        trees = state.trees.copy()
        fs = state.fitch.copy()
        cost = state.cost.copy()
        for r in np.flatnonzero(live):
            i = bwd[r]
            left, right = trees[r, i]
            j = min_leaf(right)
            for slot, sub in ((i, left), (j, right)):
                trees[r, slot] = sub
                fs[r, slot], cost[r, slot] = fitch(sub, self._leaf_sets)
        return dataclasses.replace(state, trees=trees, fitch=fs, cost=cost,
                                   is_terminal=state.is_terminal & ~live)

    def get_backward_action(self, state, fwd_action, next_state):
        a = np.asarray(fwd_action)
        i, j = self.pair_i[a], self.pair_j[a]
        rows = np.arange(len(a))
        ok = np.array([next_state.trees[r, i[r]] == (state.trees[r, i[r]], state.trees[r, j[r]])
                       and next_state.trees[r, j[r]] is None for r in rows], dtype=bool)
        self._check_pair(ok, "(state, action, next_state)")
        return i.copy()

    def get_forward_action(self, state, bwd_action, prev_state):
        b = np.asarray(bwd_action)
        return np.array([self.pair_index(int(i), min_leaf(prev_state.trees[r, i][1])) for r, i in enumerate(b)],
                        dtype=np.int64)

    def observe(self, state):
        bsz, n, L = state.fitch.shape
        bits = ((state.fitch[..., None] >> np.arange(self._width)) & 1).astype(np.float64)
        occ = self._occupied(state).astype(np.float64)
        return np.concatenate([bits.reshape(bsz, n, -1), occ[..., None]], axis=2).reshape(bsz, -1)

    def states_from_trees(self, trees) -> ForestState:
        """Terminal states holding the given complete trees."""
        n, num = self.data.n, len(trees)
        arr = np.empty((num, n), dtype=object)
        fs = np.zeros((num, n, self.data.num_sites), dtype=np.uint8)
        cost = np.zeros((num, n), dtype=np.int64)
        for b, t in enumerate(trees):
            t = canonical(t)
            if sorted(leaves(t)) != list(range(n)):
                raise ValueError("tree must contain every species exactly once")
            arr[b] = [t] + [None] * (n - 1)
            fs[b, 0], cost[b, 0] = fitch(t, self._leaf_sets)
        return ForestState(arr, fs, cost, np.ones(num, dtype=bool), np.full(num, n - 1, dtype=np.int64))

    def parsimony(self, state) -> np.ndarray:
        return state.cost.sum(axis=1)

    def energy(self, state):
        return self.parsimony(state) / self.params.alpha

    def log_reward(self, state):
        return (self.constant - self.parsimony(state)) / self.params.alpha

    def state_keys(self, state):
        return [repr(tuple(row)).encode() for row in state.trees]

    def terminal_keys(self, state):
        return [repr(row[0]).encode() for row in state.trees]

    def exact_distribution(self, cap: int = 10**6) -> ExactDistribution:
        if num_topologies(self.data.n) > cap:
            raise ConfigError("too many topologies to enumerate")
        tops = all_topologies(self.data.n)
        logr = np.array([phylo_log_reward(t, self.params, self.data) for t in tops])
        return ExactDistribution.from_log_weights([repr(t).encode() for t in tops], logr, tops)


# -- data ----------------------------------------------------------------------

def synthetic_species(n: int, num_sites: int, key, alphabet: str = "ACGT",
                      mutation_rate: float | None = 0.2) -> SpeciesData:
    """Random species.  With ``mutation_rate`` set, characters evolve down a random
    tree (per-edge substitution probability ``mutation_rate``); with ``None`` they
    are i.i.d. uniform."""
    if not 2 <= n <= 8 or not 1 <= num_sites <= 16:
        raise ConfigError("synthetic species support 2 <= n <= 8 and 1 <= L <= 16")
    gen = rnglib.generator(key)
    m = len(alphabet)
    if mutation_rate is None:
        chars = gen.integers(0, m, size=(n, num_sites))
    else:
        # random coalescent-style tree, mutate top-down
        nodes = [[i] for i in range(n)]
        merges = []
        while len(nodes) > 1:
            i, j = sorted(gen.choice(len(nodes), size=2, replace=False))
            merges.append((nodes[i], nodes[j]))
            nodes[i] = nodes[i] + nodes[j]
            nodes.pop(j)
        chars = np.zeros((n, num_sites), dtype=np.int64)
        seq = {tuple(sorted(nodes[0])): gen.integers(0, m, size=num_sites)}
        for a, b in reversed(merges):
            parent = seq[tuple(sorted(a + b))]
            for child in (a, b):
                flip = gen.random(num_sites) < mutation_rate
                seq[tuple(sorted(child))] = np.where(flip, gen.integers(0, m, size=num_sites), parent)
        for i in range(n):
            chars[i] = seq[(i,)]
    return SpeciesData(tuple(f"s{i}" for i in range(n)), chars.astype(np.int64), alphabet)


def save_species(data: SpeciesData, path) -> Path:
    path = Path(path)
    rows = [f"n={data.n} L={data.num_sites} alphabet={data.alphabet}"]
    rows += [f"{name},{''.join(data.alphabet[c] for c in row)}" for name, row in zip(data.names, data.chars)]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def load_species(path) -> SpeciesData:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    try:
        header = dict(tok.split("=", 1) for tok in lines[0].split())
        n, L = int(header["n"]), int(header["L"])
    except (IndexError, KeyError, ValueError) as exc:
        raise ValueError(f"{path}: bad species header") from exc
    alphabet = header.get("alphabet", "ACGT")
    names, chars = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        name, _, seq = line.partition(",")
        seq = seq.strip()
        if len(seq) != L:
            raise ValueError(f"{path}:{lineno}: expected {L} sites, got {len(seq)}")
        try:
            chars.append([alphabet.index(c) for c in seq])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: symbol outside alphabet") from exc
        names.append(name.strip())
    if len(names) != n:
        raise ValueError(f"{path}: header says n={n}, found {len(names)} rows")
    return SpeciesData(tuple(names), np.array(chars, dtype=np.int64), alphabet)
