"""Ising spin assignment and energy-based GFlowNet training.

A state holds spins in {-1, 0, +1} where 0 marks an unassigned site.
Forward action ``2 * site + bit`` assigns ``-1`` (bit 0) or ``+1`` (bit 1);
backward action ``site`` clears an assigned site.  The reward of a full
configuration is ``exp(x^T J x)``.

Heat-bath conditional: with E(x) = -x^T J x and symmetric, zero-diagonal J,
flipping site i changes the energy by ``4 x_i h_i`` with ``h = J x``, so
p(x_i = +1 | rest) = logistic(4 h_i).
"""
from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .. import rng as rnglib
from ..metrics import ExactDistribution
from .base import ConfigError, Environment


def torus_adjacency(side: int) -> np.ndarray:
    """4-neighbour adjacency of a ``side x side`` torus (entries 0/1)."""
    if side < 2:
        raise ConfigError("lattice side must be >= 2")
    d = side * side
    a = np.zeros((d, d))
    for r in range(side):
        for c in range(side):
            i = r * side + c
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                j = ((r + dr) % side) * side + (c + dc) % side
                if j != i:
                    a[i, j] = 1.0
    return a


def ising_energy(x, J) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return -np.einsum("...i,ij,...j->...", x, np.asarray(J, dtype=np.float64), x)


def check_coupling(J) -> np.ndarray:
    J = np.asarray(J, dtype=np.float64)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ConfigError("J must be square")
    if not np.allclose(J, J.T):
        raise ConfigError("J must be symmetric")
    if np.any(np.diag(J) != 0):
        raise ConfigError("J must have a zero diagonal")
    return J


@dataclass(frozen=True)
class SpinState:
    spins: np.ndarray
    is_terminal: np.ndarray
    step_count: np.ndarray


class IsingEnvironment(Environment):
    name = "ising"

    def __init__(self, J):
        self.J = check_coupling(J)
        d = self.D = self.J.shape[0]
        self.side = int(round(np.sqrt(d)))
        self.num_actions = 2 * d
        self.num_bwd_actions = d
        self.obs_dim = 3 * d
        self.max_steps = d

    def with_coupling(self, J) -> "IsingEnvironment":
        return IsingEnvironment(J)

    def _init_state(self, n):
        return SpinState(np.zeros((n, self.D), dtype=np.int8), np.zeros(n, dtype=bool),
                         np.zeros(n, dtype=np.int64))

    def action_mask(self, state):
        free = (state.spins == 0) & ~state.is_terminal[:, None]
        return np.repeat(free, 2, axis=1)

    def backward_action_mask(self, state):
        return state.spins != 0

    def _apply(self, state, actions, live):
        spins = state.spins.copy()
        rows = np.flatnonzero(live)
        spins[rows, actions[rows] // 2] = np.where(actions[rows] % 2 == 1, 1, -1)
        term = state.is_terminal | (live & (spins != 0).all(1))
        return dataclasses.replace(state, spins=spins, is_terminal=term)

    def _apply_backward(self, state, bwd, live):
        spins = state.spins.copy()
        rows = np.flatnonzero(live)
        spins[rows, bwd[rows]] = 0
        return dataclasses.replace(state, spins=spins, is_terminal=state.is_terminal & ~live)

    def get_backward_action(self, state, fwd_action, next_state):
        a = np.asarray(fwd_action)
        rows = np.arange(len(a))
        site = a // 2
        ok = (state.spins[rows, site] == 0) & (next_state.spins[rows, site] == np.where(a % 2 == 1, 1, -1))
        ok &= ((next_state.spins != state.spins).sum(1) == 1)
        self._check_pair(ok, "(state, action, next_state)")
        return site

    def get_forward_action(self, state, bwd_action, prev_state):
        b = np.asarray(bwd_action)
        return 2 * b + (prev_state.spins[np.arange(len(b)), b] == 1)

    def observe(self, state):
        n = len(state.is_terminal)
        onehot = np.zeros((n, self.D, 3))
        np.put_along_axis(onehot, (state.spins.astype(np.int64) + 1)[:, :, None], 1.0, axis=2)
        return onehot.reshape(n, -1)

    def log_reward(self, state):
        return -ising_energy(state.spins, self.J)

    def terminal_keys(self, state):
        return [s.tobytes() for s in np.ascontiguousarray(state.spins, dtype=np.int8)]

    def exact_distribution(self, cap: int = 2 ** 20) -> ExactDistribution:
        return gibbs_exact_distribution(self.J, cap)


def all_configurations(d: int) -> np.ndarray:
    return np.array(list(itertools.product((-1, 1), repeat=d)), dtype=np.int8)


def gibbs_exact_distribution(J, cap: int = 2 ** 20) -> ExactDistribution:
    J = check_coupling(J)
    d = J.shape[0]
    if 2 ** d > cap:
        raise ConfigError(f"2^{d} configurations exceed the enumeration cap {cap}")
    xs = all_configurations(d)
    return ExactDistribution.from_log_weights([x.tobytes() for x in xs], -ising_energy(xs, J), xs)


def configurations_to_state(x) -> SpinState:
    x = np.asarray(x, dtype=np.int8)
    if not np.all(np.abs(x) == 1):
        raise ValueError("configurations must be in {-1, +1}")
    n, d = x.shape
    return SpinState(x.copy(), np.ones(n, dtype=bool), np.full(n, d, dtype=np.int64))


# -- MCMC data generation ----------------------------------------------------------

def heat_bath_prob_plus(J, x, site: int) -> np.ndarray:
    """p(x_site = +1 | other spins) for each row of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    return expit(4.0 * (x @ np.asarray(J)[:, site]))


def _sweep(J, x, gen, beta):
    d = x.shape[1]
    for i in range(d):
        p = expit(4.0 * beta * (x @ J[:, i]))
        x[:, i] = np.where(gen.random(len(x)) < p, 1.0, -1.0)


def gibbs_data_sampler(J, key, n_samples: int, burn_in: int = 1000, thinning: int = 10,
                       num_chains: int = 100, betas=None) -> np.ndarray:
    """Heat-bath samples of P(x) proportional to exp(x^T J x).

    ``num_chains`` chains run in parallel; after ``burn_in`` sweeps each chain
    contributes one sample every ``thinning`` sweeps.  With ``betas`` (a ladder
    of inverse temperatures starting at 1) adjacent temperatures exchange
    configurations after every sweep and only the beta = 1 chains are kept.
    """
    J = check_coupling(J)
    d = J.shape[0]
    gen = rnglib.generator(key)
    ladder = np.array([1.0] if betas is None else betas, dtype=np.float64)
    if ladder[0] != 1.0 or np.any(ladder <= 0):
        raise ConfigError("temperature ladder must start at 1 and stay positive")
    chains = gen.choice([-1.0, 1.0], size=(len(ladder), num_chains, d))
    out = []
    sweep = 0
    while len(out) * num_chains < n_samples:
        for t, beta in enumerate(ladder):
            _sweep(J, chains[t], gen, beta)
        if len(ladder) > 1:
            energy = ising_energy(chains, J)
            for t in range(len(ladder) - 1):
                log_acc = (ladder[t] - ladder[t + 1]) * (energy[t] - energy[t + 1])
                swap = np.log(gen.random(num_chains)) < log_acc
                chains[t][swap], chains[t + 1][swap] = chains[t + 1][swap].copy(), chains[t][swap].copy()
                energy[t][swap], energy[t + 1][swap] = energy[t + 1][swap], energy[t][swap]
        sweep += 1
        if sweep > burn_in and (sweep - burn_in) % thinning == 0:
            out.append(chains[0].copy())
    return np.concatenate(out)[:n_samples].astype(np.int8)


def save_samples(x, side: int, sigma: float, path) -> Path:
    path = Path(path)
    rows = [f"N={side} sigma={sigma!r}"] + [" ".join(str(int(v)) for v in row) for row in x]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def load_samples(path):
    """Return ``(samples [n, N*N] int8, N, sigma)``."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    try:
        header = dict(tok.split("=", 1) for tok in lines[0].split())
        side, sigma = int(header["N"]), float(header["sigma"])
    except (IndexError, KeyError, ValueError) as exc:
        raise ValueError(f"{path}: bad header") from exc
    x = np.array([[int(v) for v in ln.split()] for ln in lines[1:]], dtype=np.int8).reshape(-1, side * side)
    if not np.all(np.abs(x) == 1):
        raise ValueError(f"{path}: spins must be +1 or -1")
    return x, side, sigma


# -- energy-model updates -------------------------------------------------------

def energy_grad(x) -> np.ndarray:
    """d E / d J for each row: -x x^T (zero diagonal)."""
    x = np.asarray(x, dtype=np.float64)
    g = -np.einsum("...i,...j->...ij", x, x)
    d = x.shape[-1]
    g[..., np.arange(d), np.arange(d)] = 0.0
    return g


def cd_gradient(data, proposals, J=None) -> np.ndarray:
    """Mean of dE(x)/dJ - dE(x')/dJ over (data, proposal) pairs."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    proposals = np.atleast_2d(np.asarray(proposals, dtype=np.float64))
    if data.shape != proposals.shape:
        raise ValueError("data and proposal batches must match")
    return (energy_grad(data) - energy_grad(proposals)).mean(axis=0)


def neg_log_rmse(J_true, J_est) -> float:
    """-log RMSE over all entries; ``inf`` when the matrices are equal."""
    a, b = np.asarray(J_true, dtype=np.float64), np.asarray(J_est, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    rmse = np.sqrt(np.mean((a - b) ** 2))
    return float("inf") if rmse == 0 else float(-np.log(rmse))


# -- back-and-forth proposal ------------------------------------------------------

def _policy_log_probs(policy, env, state, uniform_pb):
    from ..rollout import masked_softmax
    heads = policy(env.observe(state))
    fmask = env.action_mask(state)
    bmask = env.backward_action_mask(state)
    with np.errstate(divide="ignore"):
        lpf = np.log(masked_softmax(heads.fwd_logits, fmask))
        if uniform_pb:
            lpb = np.where(bmask, -np.log(np.maximum(bmask.sum(-1, keepdims=True), 1)), -np.inf)
        else:
            lpb = np.log(masked_softmax(heads.bwd_logits, bmask))
    return lpf, lpb


def back_and_forth_proposal(policy, env, x, K: int, key, uniform_pb: bool = True):
    """``K`` backward steps from ``x`` then ``K`` forward steps.

    Returns ``(x', log_ratio)`` where ``log_ratio = log q(x | x') - log q(x' | x)``
    for the segment proposal, i.e. the Hastings correction
    ``log [P_B(tau'|x') P_F(tau)] - log [P_B(tau|x) P_F(tau')]``.
    """
    from ..rollout import sample_categorical
    x = np.asarray(x, dtype=np.int8)
    if not 0 <= K <= env.max_steps:
        raise ValueError(f"K must lie in [0, {env.max_steps}]")
    state = configurations_to_state(x)
    n = len(x)
    if K == 0:
        return x.copy(), np.zeros(n)
    gen = rnglib.generator(key)
    rows = np.arange(n)
    log_pb_tau = np.zeros(n)
    log_pf_tau = np.zeros(n)
    for _ in range(K):
        _, lpb = _policy_log_probs(policy, env, state, uniform_pb)
        b = sample_categorical(np.exp(lpb), gen)
        log_pb_tau += lpb[rows, b]
        prev = state
        state = env.backward_step(state, b).state
        a = env.get_forward_action(state, b, prev)
        lpf, _ = _policy_log_probs(policy, env, state, uniform_pb)
        log_pf_tau += lpf[rows, a]
    log_pf_new = np.zeros(n)
    log_pb_new = np.zeros(n)
    for _ in range(K):
        lpf, _ = _policy_log_probs(policy, env, state, uniform_pb)
        a = sample_categorical(np.exp(lpf), gen)
        log_pf_new += lpf[rows, a]
        nxt = env.step(state, a).state
        b = env.get_backward_action(state, a, nxt)
        _, lpb = _policy_log_probs(policy, env, nxt, uniform_pb)
        log_pb_new += lpb[rows, b]
        state = nxt
    log_ratio = (log_pb_new + log_pf_tau) - (log_pb_tau + log_pf_new)
    return state.spins.copy(), log_ratio


def mh_accept(x, x_new, log_ratio, J, key):
    """Accept ``x_new`` with probability min(1, exp(E(x) - E(x_new)) * exp(log_ratio)).

    Returns ``(chosen configurations, accepted mask)``.
    """
    x = np.asarray(x)
    x_new = np.asarray(x_new)
    log_ratio = np.asarray(log_ratio, dtype=np.float64)
    if not np.all(np.isfinite(log_ratio)):
        raise FloatingPointError("non-finite proposal ratio")
    log_a = ising_energy(x, J) - ising_energy(x_new, J) + log_ratio
    u = rnglib.generator(key).random(len(x))
    accept = np.log(u) < log_a
    accept |= np.all(x == x_new, axis=1)
    return np.where(accept[:, None], x_new, x), accept


# -- EB-GFN loop -----------------------------------------------------------------

@dataclass
class EbgfnConfig:
    iterations: int = 20000
    batch_size: int = 256
    hidden: tuple = (256, 256, 256, 256)
    lr: float = 1e-3
    z_lr: float = 1e-1
    energy_lr: float = 1e-2
    alpha: float = 0.5
    K: int | None = None        # None means K = D
    gfn_steps_per_energy_step: int = 1
    exploration_eps: float = 0.0


@dataclass
class EbgfnResult:
    J: np.ndarray
    best_J: np.ndarray
    best_score: float
    history: list = field(default_factory=list)
    train_state: object = None


def train_ebgfn(data, config: EbgfnConfig, key, J_true=None, J_init=None, callback=None) -> EbgfnResult:
    """Alternate TB updates of a sampler (rewards from the current energy model)
    with contrastive-divergence updates of the coupling matrix."""
    from ..nn.optim import adam_init, adam_step
    from ..objectives import LossConfig
    from ..rollout import MlpPolicy, backward_rollout, concat_batches, forward_rollout
    from ..trainer import init_train_state, update

    data = np.asarray(data, dtype=np.int8)
    d = data.shape[1]
    J = np.zeros((d, d)) if J_init is None else check_coupling(J_init).copy()
    env = IsingEnvironment(J)
    k_init, key = rnglib.split(key, 2)
    ts = init_train_state(env, k_init, config.hidden, config.lr, config.z_lr)
    energy_opt = adam_init({"J": J}, lr=config.energy_lr)
    K = d if config.K is None else config.K
    loss_cfg = LossConfig("tb")
    best_J, best = J.copy(), -np.inf
    history = []
    for it in range(config.iterations):
        k_it = rnglib.fold_in(key, it)
        k_mix, k_fwd, k_data, k_bwd, k_cd, k_prop, k_mh = rnglib.split(k_it, 7)
        gen = rnglib.generator(k_mix)
        loss = 0.0
        for _ in range(config.gfn_steps_per_energy_step):
            n_fwd = int(gen.binomial(config.batch_size, config.alpha))
            parts = []
            policy = MlpPolicy(ts.params, ts.spec)
            if n_fwd:
                parts.append(forward_rollout(policy, env, n_fwd, k_fwd, config.exploration_eps))
            if config.batch_size - n_fwd:
                idx = rnglib.generator(k_data).integers(0, len(data), config.batch_size - n_fwd)
                parts.append(backward_rollout(policy, env, configurations_to_state(data[idx]), k_bwd))
            ts, loss = update(ts, concat_batches(parts), loss_cfg)
        idx = rnglib.generator(k_cd).integers(0, len(data), config.batch_size)
        x = data[idx]
        x_prop, log_ratio = back_and_forth_proposal(MlpPolicy(ts.params, ts.spec), env, x, K, k_prop)
        x_new, accepted = mh_accept(x, x_prop, log_ratio, J, k_mh)
        g = cd_gradient(x, x_new)
        energy_opt, new = adam_step(energy_opt, {"J": J}, {"J": g})
        J = 0.5 * (new["J"] + new["J"].T)
        np.fill_diagonal(J, 0.0)
        env = env.with_coupling(J)
        record = {"step": it + 1, "loss": float(loss), "logZ": float(ts.params["logZ"]),
                  "accept_rate": float(accepted.mean())}
        if J_true is not None:
            score = neg_log_rmse(J_true, J)
            record["neg_log_rmse"] = score
            if score > best:
                best, best_J = score, J.copy()
        history.append(record)
        if callback is not None:
            callback(record, ts, J)
    if J_true is None:
        best_J = J.copy()
    return EbgfnResult(J, best_J, best, history, ts)


__all__ = [n for n in dir() if not n.startswith("_") and n != "annotations"]
