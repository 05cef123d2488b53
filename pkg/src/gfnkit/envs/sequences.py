"""Sequence construction environments and their rewards.

Four generation schemes share one state layout: ``tokens[B, n]`` with
``EMPTY`` (-1) marking unfilled positions, plus the filled count.

===================== ============================ =====================================
scheme                forward actions              backward actions
===================== ============================ =====================================
autoregressive-fixed  ``m`` (append symbol)         1 (remove last)
autoregressive-var    ``m + 1`` (append, stop)      2 (remove last, undo stop)
prepend-append        ``2m`` (prepend a, append a)  2 (remove front, remove back)
non-autoregressive    ``n * m`` (pos * m + symbol)  ``n`` (clear position)
===================== ============================ =====================================

In the prepend/append scheme the first symbol is always placed with a
prepend (append is masked on the empty string, and remove-back on a single
symbol), so each distinct insertion order is one trajectory.
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

EMPTY = -1
SCHEMES = ("autoregressive-fixed", "autoregressive-variable", "prepend-append", "non-autoregressive")

SEED_WORDS = ("00000000", "11111111", "11110000", "00001111", "00111100")


@dataclass(frozen=True)
class SeqState:
    tokens: np.ndarray
    length: np.ndarray
    is_terminal: np.ndarray
    step_count: np.ndarray


# -- rewards -------------------------------------------------------------------

@dataclass(frozen=True)
class ModeSet:
    modes: np.ndarray          # [|M|, n_bits] of 0/1
    beta: float = 3.0
    seed_words: tuple = SEED_WORDS

    @property
    def n_bits(self) -> int:
        return self.modes.shape[1]


def _bits(s: str) -> np.ndarray:
    return np.array([int(c) for c in s], dtype=np.int8)


def generate_modes(n: int, key, size: int = 60, beta: float = 3.0) -> ModeSet:
    """Modes built by concatenating ``n/8`` seed words drawn with replacement.

    Duplicates are resampled.  When fewer than ``size`` distinct strings exist
    (``5^(n/8) < size``) every distinct string is used instead.
    """
    if n % 8 != 0 or n <= 0:
        raise ConfigError(f"mode length must be a positive multiple of 8, got {n}")
    blocks = n // 8
    words = np.stack([_bits(w) for w in SEED_WORDS])
    capacity = len(SEED_WORDS) ** blocks
    if capacity <= size:
        combos = list(itertools.product(range(len(SEED_WORDS)), repeat=blocks))
        modes = np.stack([np.concatenate([words[i] for i in c]) for c in combos])
        return ModeSet(modes, beta)
    gen = rnglib.generator(key)
    seen, modes = set(), []
    while len(modes) < size:
        pick = gen.integers(0, len(SEED_WORDS), size=blocks)
        m = np.concatenate([words[i] for i in pick])
        k = m.tobytes()
        if k not in seen:
            seen.add(k)
            modes.append(m)
    return ModeSet(np.stack(modes), beta)


def generate_test_set(modes: ModeSet, key) -> np.ndarray:
    """For every mode and every ``0 <= i < n``: the mode with ``i`` random bits flipped."""
    gen = rnglib.generator(key)
    n = modes.n_bits
    out = []
    for mode in modes.modes:
        for i in range(n):
            x = mode.copy()
            flip = gen.choice(n, size=i, replace=False)
            x[flip] ^= 1
            out.append(x)
    return np.stack(out)


def mode_reward_log(x, modes: ModeSet) -> np.ndarray:
    """log R(x) = -beta * min_{m in M} hamming(x, m) / n for bit strings ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.int8))
    dist = (x[:, None, :] != modes.modes[None, :, :]).sum(-1).min(axis=1)
    return -modes.beta * dist / modes.n_bits


def words_to_bits(tokens, k: int) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    shifts = np.arange(k - 1, -1, -1)
    return ((tokens[..., None] >> shifts) & 1).reshape(*tokens.shape[:-1], -1).astype(np.int8)


def bits_to_words(bits, k: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    b = bits.reshape(*bits.shape[:-1], -1, k)
    return (b * (1 << np.arange(k - 1, -1, -1))).sum(-1)


class ModeReward:
    """Hamming-to-closest-mode reward over k-bit word tokens."""

    def __init__(self, modes: ModeSet, k: int):
        self.modes = modes
        self.k = k

    def log_reward(self, tokens, length) -> np.ndarray:
        return mode_reward_log(words_to_bits(tokens, self.k), self.modes)


class RewardTable:
    """Explicit sequence -> reward map (stand-in for a proxy model).

    ``log_reward`` returns ``exponent * log(max(r, r_min))``.  In strict mode a
    query for a missing sequence raises ``KeyError``; otherwise it gets ``default``.
    """

    def __init__(self, vocab: int, length: int, entries: dict, alphabet: str | None = None,
                 r_min: float = 0.0, exponent: float = 1.0, strict: bool = True, default: float = 0.0):
        self.vocab = int(vocab)
        self.length = int(length)
        self.alphabet = alphabet or default_alphabet(vocab)
        if len(self.alphabet) != self.vocab:
            raise ConfigError("alphabet size does not match vocab")
        self.entries = dict(entries)
        self.r_min = float(r_min)
        self.exponent = float(exponent)
        self.strict = strict
        self.default = float(default)
        self._dense = None
        if self.vocab ** self.length <= 2 ** 22 and len(self.entries) == self.vocab ** self.length:
            dense = np.full(self.vocab ** self.length, np.nan)
            for seq, r in self.entries.items():
                if len(seq) == self.length:
                    dense[_index(seq, self.vocab)] = r
            if not np.isnan(dense).any():
                self._dense = dense

    def __len__(self):
        return len(self.entries)

    def reward(self, seq) -> float:
        seq = tuple(int(t) for t in seq)
        if seq in self.entries:
            r = self.entries[seq]
        elif self.strict:
            raise KeyError(f"sequence {self.decode(seq)!r} not in reward table")
        else:
            r = self.default
        return max(r, self.r_min)

    def log_reward(self, tokens, length) -> np.ndarray:
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        length = np.broadcast_to(np.asarray(length), (len(tokens),))
        if self._dense is not None and np.all(length == self.length):
            r = np.maximum(self._dense[tokens @ (self.vocab ** np.arange(self.length))], self.r_min)
        else:
            r = np.array([self.reward(t[:n]) for t, n in zip(tokens, length)])
        with np.errstate(divide="ignore"):
            return self.exponent * np.log(r)

    def decode(self, seq) -> str:
        return "".join(self.alphabet[t] for t in seq)

    def encode(self, s: str) -> tuple:
        try:
            return tuple(self.alphabet.index(c) for c in s)
        except ValueError as exc:
            raise ValueError(f"symbol outside alphabet in {s!r}") from exc


def _index(seq, m):
    return int(sum(t * m ** i for i, t in enumerate(seq)))


def default_alphabet(m: int) -> str:
    if m == 4:
        return "ACGT"
    chars = "0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    if m > len(chars):
        raise ConfigError("vocab too large for the default alphabet")
    return chars[:m]


def load_reward_table(path, r_min: float = 0.0, exponent: float = 1.0, strict: bool = True) -> RewardTable:
    """Read a reward-table file.

    Header line ``vocab=<m> length=<n>`` (optionally ``alphabet=<symbols>``),
    then one ``sequence,reward`` row per line.  Duplicate sequences are rejected.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty reward table")
    header = dict(tok.split("=", 1) for tok in lines[0].split())
    try:
        vocab, length = int(header["vocab"]), int(header["length"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: bad header {lines[0]!r}") from exc
    alphabet = header.get("alphabet") or default_alphabet(vocab)
    table = RewardTable(vocab, length, {}, alphabet, r_min, exponent, strict)
    entries = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            s, r = line.split(",")
            seq, val = table.encode(s.strip()), float(r)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: cannot parse {line!r}") from exc
        if len(seq) > length:
            raise ValueError(f"{path}:{lineno}: sequence longer than {length}")
        if seq in entries:
            raise ValueError(f"{path}:{lineno}: duplicate sequence {s!r}")
        entries[seq] = val
    return RewardTable(vocab, length, entries, alphabet, r_min, exponent, strict)


def save_reward_table(table: RewardTable, path) -> Path:
    path = Path(path)
    rows = [f"vocab={table.vocab} length={table.length} alphabet={table.alphabet}"]
    for seq in sorted(table.entries, key=lambda s: (len(s), s)):
        rows.append(f"{table.decode(seq)},{table.entries[seq]!r}")
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def synthetic_reward_table(vocab: int, length: int, key, exponent: float = 1.0,
                           min_length: int | None = None) -> RewardTable:
    """Dense table in (0, 1) from random per-position and neighbour-pair effects.

    With ``min_length`` every sequence of length ``min_length..length`` gets an
    entry (needed by the variable-length scheme); otherwise only full length.
    """
    gen = rnglib.generator(key)
    unary = gen.normal(size=(length, vocab))
    pair = gen.normal(scale=0.5, size=(vocab, vocab))
    lengths = [length] if min_length is None else range(min_length, length + 1)
    keys, scores = [], []
    for L in lengths:
        seqs = np.array(list(itertools.product(range(vocab), repeat=L)), dtype=np.int64).reshape(-1, L)
        score = unary[np.arange(L), seqs].sum(-1)
        if L > 1:
            score = score + pair[seqs[:, :-1], seqs[:, 1:]].sum(-1)
        keys.extend(tuple(int(t) for t in q) for q in seqs)
        scores.append(score)
    score = np.concatenate(scores)
    score = (score - score.mean()) / (score.std() + 1e-12)
    r = 1.0 / (1.0 + np.exp(-2.0 * score))
    return RewardTable(vocab, length, dict(zip(keys, r.tolist())), exponent=exponent)


# -- environment -----------------------------------------------------------------

@dataclass(frozen=True)
class SequenceParams:
    scheme: str = "non-autoregressive"
    length: int = 4
    vocab: int = 4
    min_length: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.length < 1 or self.vocab < 1:
            raise ConfigError("length and vocab must be >= 1")


class SequenceEnvironment(Environment):
    name = "sequence"

    def __init__(self, params: SequenceParams, reward):
        self.params = params
        self.reward = reward
        n, m = params.length, params.vocab
        scheme = params.scheme
        if scheme == "autoregressive-fixed":
            self.num_actions, self.num_bwd_actions, self.max_steps = m, 1, n
        elif scheme == "autoregressive-variable":
            self.num_actions, self.num_bwd_actions, self.max_steps = m + 1, 2, n + 1
            self.stop_action = m
        elif scheme == "prepend-append":
            self.num_actions, self.num_bwd_actions, self.max_steps = 2 * m, 2, n
        else:
            self.num_actions, self.num_bwd_actions, self.max_steps = n * m, n, n
        self.obs_dim = n * (m + 1) + 1

    @property
    def scheme(self):
        return self.params.scheme

    def _init_state(self, num):
        n = self.params.length
        return SeqState(np.full((num, n), EMPTY, dtype=np.int64), np.zeros(num, dtype=np.int64),
                        np.zeros(num, dtype=bool), np.zeros(num, dtype=np.int64))

    # masks
    def action_mask(self, state):
        n, m = self.params.length, self.params.vocab
        live = ~state.is_terminal
        length = state.length
        bsz = len(length)
        if self.scheme == "autoregressive-fixed":
            return np.broadcast_to((live & (length < n))[:, None], (bsz, m)).copy()
        if self.scheme == "autoregressive-variable":
            mask = np.zeros((bsz, m + 1), dtype=bool)
            mask[:, :m] = (live & (length < n))[:, None]
            mask[:, m] = live & (length >= self.params.min_length)
            return mask
        if self.scheme == "prepend-append":
            mask = np.zeros((bsz, 2 * m), dtype=bool)
            mask[:, :m] = (live & (length < n))[:, None]
            mask[:, m:] = (live & (length < n) & (length > 0))[:, None]
            return mask
        empty = (state.tokens == EMPTY) & live[:, None]
        return np.repeat(empty, m, axis=1)

    def backward_action_mask(self, state):
        term = state.is_terminal
        length = state.length
        if self.scheme == "autoregressive-fixed":
            return (length > 0)[:, None]
        if self.scheme == "autoregressive-variable":
            return np.stack([~term & (length > 0), term], axis=1)
        if self.scheme == "prepend-append":
            return np.stack([length > 0, length > 1], axis=1)
        return state.tokens != EMPTY

    # transitions
    def _apply(self, state, actions, live):
        n, m = self.params.length, self.params.vocab
        tokens = state.tokens.copy()
        length = state.length.copy()
        term = state.is_terminal.copy()
        rows = np.flatnonzero(live)
        a = actions[rows]
        if self.scheme in ("autoregressive-fixed", "autoregressive-variable"):
            stop = a == m if self.scheme == "autoregressive-variable" else np.zeros(len(a), bool)
            add = rows[~stop]
            tokens[add, length[add]] = a[~stop]
            length[add] += 1
            term[rows[stop]] = True
            if self.scheme == "autoregressive-fixed":
                term[rows] = length[rows] == n
        elif self.scheme == "prepend-append":
            pre = a < m
            for r, sym, p in zip(rows, a % m, pre):
                if p:
                    tokens[r, 1:length[r] + 1] = state.tokens[r, :length[r]]
                    tokens[r, 0] = sym
                else:
                    tokens[r, length[r]] = sym
            length[rows] += 1
            term[rows] = length[rows] == n
        else:
            tokens[rows, a // m] = a % m
            length[rows] += 1
            term[rows] = length[rows] == n
        return dataclasses.replace(state, tokens=tokens, length=length, is_terminal=term)

    def _apply_backward(self, state, bwd, live):
        tokens = state.tokens.copy()
        length = state.length.copy()
        term = state.is_terminal.copy()
        rows = np.flatnonzero(live)
        b = bwd[rows]
        if self.scheme == "autoregressive-variable":
            unstop = rows[b == 1]
            term[unstop] = False
            rows = rows[b == 0]
            b = b[b == 0]
        if self.scheme in ("autoregressive-fixed", "autoregressive-variable"):
            tokens[rows, length[rows] - 1] = EMPTY
            length[rows] -= 1
            term[rows] = False
        elif self.scheme == "prepend-append":
            for r, front in zip(rows, b == 0):
                L = length[r]
                if front:
                    tokens[r, :L - 1] = state.tokens[r, 1:L]
                tokens[r, L - 1] = EMPTY
            length[rows] -= 1
            term[rows] = False
        else:
            tokens[rows, b] = EMPTY
            length[rows] -= 1
            term[rows] = False
        return dataclasses.replace(state, tokens=tokens, length=length, is_terminal=term)

    def get_backward_action(self, state, fwd_action, next_state):
        m = self.params.vocab
        a = np.asarray(fwd_action)
        if self.scheme == "autoregressive-fixed":
            ok = next_state.length == state.length + 1
            self._check_pair(ok, "(state, action, next_state)")
            return np.zeros_like(a)
        if self.scheme == "autoregressive-variable":
            stopped = next_state.is_terminal & ~state.is_terminal & (next_state.length == state.length)
            ok = np.where(stopped, a == m, next_state.length == state.length + 1)
            self._check_pair(ok, "(state, action, next_state)")
            return np.where(stopped, 1, 0)
        if self.scheme == "prepend-append":
            ok = next_state.length == state.length + 1
            self._check_pair(ok, "(state, action, next_state)")
            return np.where(a < m, 0, 1)
        pos = a // m
        ok = (state.tokens[np.arange(len(a)), pos] == EMPTY) & \
             (next_state.tokens[np.arange(len(a)), pos] == a % m)
        self._check_pair(ok, "(state, action, next_state)")
        return pos

    def get_forward_action(self, state, bwd_action, prev_state):
        """Forward action leading from ``state`` back to ``prev_state``."""
        m = self.params.vocab
        b = np.asarray(bwd_action)
        idx = np.arange(len(b))
        if self.scheme == "autoregressive-fixed":
            return prev_state.tokens[idx, state.length]
        if self.scheme == "autoregressive-variable":
            sym = prev_state.tokens[idx, np.minimum(state.length, self.params.length - 1)]
            return np.where(b == 1, m, sym)
        if self.scheme == "prepend-append":
            front = prev_state.tokens[idx, 0]
            back = prev_state.tokens[idx, np.maximum(prev_state.length - 1, 0)]
            return np.where(b == 0, front, m + back)
        return b * m + prev_state.tokens[idx, b]

    def states_from_tokens(self, tokens) -> SeqState:
        """Terminal states for complete token rows (``EMPTY``-padded when variable length)."""
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        n = self.params.length
        if tokens.shape[1] != n:
            raise ValueError(f"expected rows of length {n}")
        length = (tokens != EMPTY).sum(1)
        steps = length + 1 if self.scheme == "autoregressive-variable" else length
        if self.scheme != "autoregressive-variable" and np.any(length != n):
            raise ValueError("fixed-length scheme needs complete sequences")
        return SeqState(tokens.copy(), length, np.ones(len(tokens), dtype=bool), steps.astype(np.int64))

    def observe(self, state):
        n, m = self.params.length, self.params.vocab
        bsz = len(state.length)
        onehot = np.zeros((bsz, n, m + 1))
        np.put_along_axis(onehot, np.where(state.tokens == EMPTY, m, state.tokens)[:, :, None], 1.0, axis=2)
        return np.concatenate([onehot.reshape(bsz, -1), (state.length / n)[:, None]], axis=1)

    def log_reward(self, state):
        return self.reward.log_reward(state.tokens, state.length)

    def terminal_keys(self, state):
        return [t.tobytes() for t in np.ascontiguousarray(state.tokens, dtype=np.int64)]

    def all_terminal_tokens(self) -> np.ndarray:
        n, m = self.params.length, self.params.vocab
        if self.scheme == "autoregressive-variable":
            out = []
            for L in range(max(self.params.min_length, 0), n + 1):
                for seq in itertools.product(range(m), repeat=L):
                    out.append(list(seq) + [EMPTY] * (n - L))
            return np.array(out, dtype=np.int64).reshape(-1, n)
        return np.array(list(itertools.product(range(m), repeat=n)), dtype=np.int64).reshape(-1, n)

    def exact_distribution(self, cap: int = 10**6) -> ExactDistribution:
        n, m = self.params.length, self.params.vocab
        count = sum(m ** L for L in range(n + 1)) if self.scheme == "autoregressive-variable" else m ** n
        if count > cap:
            raise ConfigError(f"{count} terminal sequences exceed the enumeration cap {cap}")
        toks = self.all_terminal_tokens()
        lengths = (toks != EMPTY).sum(1)
        logr = self.reward.log_reward(toks, lengths)
        return ExactDistribution.from_log_weights([t.tobytes() for t in toks], logr, toks)


def bitseq_environment(n: int, k: int, modes: ModeSet) -> SequenceEnvironment:
    """Non-autoregressive bit strings of length ``n`` built from ``k``-bit words."""
    if k < 1 or n % k != 0:
        raise ConfigError(f"k must divide n (n={n}, k={k})")
    if modes.n_bits != n:
        raise ConfigError("mode length does not match n")
    params = SequenceParams("non-autoregressive", n // k, 2 ** k)
    env = SequenceEnvironment(params, ModeReward(modes, k))
    env.name = "bitseq"
    env.bits_per_token = k
    return env
