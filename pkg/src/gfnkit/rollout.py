"""Batched trajectory sampling in both directions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rnglib
from .envs.base import PAD, InvalidActionError, concat, take
from .nn.mlp import MlpSpec, PolicyHeads, mlp_forward


@dataclass
class TrajectoryBatch:
    """Padded trajectories in forward orientation.

    Position ``t`` holds state ``s_t``; ``fwd_actions[:, t]`` leads from ``s_t`` to
    ``s_{t+1}`` and ``bwd_actions[:, t]`` leads back.  ``pad_mask`` is True on
    padding steps (``t >= lengths``).
    """

    states: list
    obs: np.ndarray
    fwd_actions: np.ndarray
    bwd_actions: np.ndarray
    fwd_masks: np.ndarray
    bwd_masks: np.ndarray
    is_terminal: np.ndarray
    log_rewards: np.ndarray
    lengths: np.ndarray
    pad_mask: np.ndarray
    energies: np.ndarray
    delta_log_rewards: np.ndarray
    terminal_states: object

    @property
    def valid(self) -> np.ndarray:
        return ~self.pad_mask

    @property
    def batch_size(self) -> int:
        return len(self.lengths)

    @property
    def horizon(self) -> int:
        return self.fwd_actions.shape[1]


class MlpPolicy:
    """Numpy (tape-free) view of MLP parameters used while sampling."""

    def __init__(self, params: dict, spec: MlpSpec):
        self.params = params
        self.spec = spec

    def __call__(self, obs) -> PolicyHeads:
        return mlp_forward(self.params, obs, self.spec)


class UniformPolicy:
    def __init__(self, env):
        self.env = env

    def __call__(self, obs) -> PolicyHeads:
        n = len(obs)
        return PolicyHeads(np.zeros((n, self.env.num_actions)), np.zeros((n, self.env.num_bwd_actions)),
                           np.zeros(n))


def masked_softmax(logits, mask) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not np.all(np.isfinite(logits[mask])):
        raise FloatingPointError("non-finite logits on legal actions")
    z = np.where(mask, logits, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(z - m), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    return e / np.where(s > 0, s, 1.0)


def eps_uniform(logits, mask, eps: float) -> np.ndarray:
    """``(1 - eps) * softmax(masked logits) + eps * uniform(legal)`` per row."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise InvalidActionError("a row has no legal action")
    probs = masked_softmax(logits, mask)
    if eps > 0:
        probs = (1.0 - eps) * probs + eps * mask / counts
    return probs


def sample_categorical(probs, gen: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    u = gen.random(len(probs)) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=-1)
    # guard against round-off landing on a zero-probability tail entry
    idx = np.minimum(idx, probs.shape[-1] - 1)
    bad = probs[np.arange(len(idx)), idx] == 0
    if bad.any():
        idx[bad] = np.argmax(probs[bad] > 0, axis=-1)
    return idx


def build_batch(env, states: list, fwd_actions, bwd_actions, lengths) -> TrajectoryBatch:
    """Assemble a TrajectoryBatch from forward-ordered state snapshots."""
    horizon = len(states) - 1
    n = len(lengths)
    fwd_actions = np.asarray(fwd_actions, dtype=np.int64)
    bwd_actions = np.asarray(bwd_actions, dtype=np.int64)
    obs = np.stack([env.observe(s) for s in states], axis=1)
    fwd_masks = np.stack([env.action_mask(s) for s in states], axis=1)
    bwd_masks = np.stack([env.backward_action_mask(s) for s in states], axis=1)
    is_terminal = np.stack([s.is_terminal for s in states], axis=1)
    energies = np.stack([env.energy(s) for s in states], axis=1)
    pad_mask = np.arange(horizon)[None, :] >= np.asarray(lengths)[:, None]
    delta = np.zeros((n, horizon))
    if hasattr(env, "delta_log_reward"):
        for t in range(horizon):
            rows = np.flatnonzero(~pad_mask[:, t])
            if len(rows):
                delta[rows, t] = env.delta_log_reward(take(states[t], rows), fwd_actions[rows, t])
    final = states[-1]
    if not np.all(final.is_terminal):
        raise InvalidActionError("trajectory did not reach a terminal state within max_steps")
    return TrajectoryBatch(states=states, obs=obs, fwd_actions=fwd_actions, bwd_actions=bwd_actions,
                           fwd_masks=fwd_masks, bwd_masks=bwd_masks, is_terminal=is_terminal,
                           log_rewards=env.log_reward(final), lengths=np.asarray(lengths, dtype=np.int64),
                           pad_mask=pad_mask, energies=energies, delta_log_rewards=delta,
                           terminal_states=final)


def forward_rollout(policy, env, num_envs: int, key, exploration_eps: float = 0.0,
                    state=None) -> TrajectoryBatch:
    """Sample complete trajectories from ``s_0`` (or from ``state``) with
    epsilon-uniform exploration on top of ``policy``."""
    if state is None:
        obs, state = env.reset(num_envs)
    else:
        obs = env.observe(state)
    n = len(state.is_terminal)
    horizon = env.max_steps
    gen = rnglib.generator(key)
    states = [state]
    fwd = np.full((n, horizon), PAD, dtype=np.int64)
    bwd = np.full((n, horizon), PAD, dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for t in range(horizon):
        live = ~state.is_terminal
        if not live.any():
            break
        rows = np.flatnonzero(live)
        heads = policy(obs[rows])
        probs = eps_uniform(heads.fwd_logits, env.action_mask(take(state, rows)), exploration_eps)
        actions = np.full(n, PAD, dtype=np.int64)
        actions[rows] = sample_categorical(probs, gen)
        res = env.step(state, actions)
        fwd[rows, t] = actions[rows]
        bwd[rows, t] = env.get_backward_action(take(state, rows), actions[rows], take(res.state, rows))
        lengths[rows] += 1
        state, obs = res.state, res.obs
        states.append(state)
    while len(states) < horizon + 1:
        states.append(state)
    return build_batch(env, states, fwd, bwd, lengths)


def backward_rollout(policy, env, terminal_states, key, uniform_pb: bool = True) -> TrajectoryBatch:
    """Sample trajectories from terminal states back to ``s_0`` with the backward
    policy (uniform over legal parents by default), returned in forward order."""
    if not np.all(terminal_states.is_terminal):
        raise InvalidActionError("backward_rollout needs terminal states")
    state = terminal_states
    n = len(state.is_terminal)
    horizon = env.max_steps
    gen = rnglib.generator(key)
    back_states = [state]
    fwd_steps, bwd_steps = [], []
    lengths = np.zeros(n, dtype=np.int64)
    for _ in range(horizon):
        live = ~env.is_initial(state)
        if not live.any():
            break
        rows = np.flatnonzero(live)
        sub = take(state, rows)
        mask = env.backward_action_mask(sub)
        if uniform_pb:
            logits = np.zeros(mask.shape)
        else:
            logits = policy(env.observe(sub)).bwd_logits
        b = np.full(n, PAD, dtype=np.int64)
        b[rows] = sample_categorical(masked_softmax(logits, mask), gen)
        res = env.backward_step(state, b)
        a = np.full(n, PAD, dtype=np.int64)
        a[rows] = env.get_forward_action(take(res.state, rows), b[rows], sub)
        fwd_steps.append(a)
        bwd_steps.append(b)
        lengths[rows] += 1
        state = res.state
        back_states.append(state)
    if np.any(~env.is_initial(state)):
        raise InvalidActionError("backward rollout did not reach s_0 within max_steps")
    pool = concat(back_states)
    fwd = np.full((n, horizon), PAD, dtype=np.int64)
    bwd = np.full((n, horizon), PAD, dtype=np.int64)
    ar = np.arange(n)
    fa = np.stack(fwd_steps, axis=0) if fwd_steps else None
    ba = np.stack(bwd_steps, axis=0) if bwd_steps else None
    states = []
    for t in range(horizon + 1):
        src = np.where(t <= lengths, lengths - t, 0)
        states.append(take(pool, src * n + ar))
        if t < horizon:
            step_idx = lengths - t - 1
            ok = step_idx >= 0
            if ok.any():
                fwd[ok, t] = fa[step_idx[ok], ar[ok]]
                bwd[ok, t] = ba[step_idx[ok], ar[ok]]
    return build_batch(env, states, fwd, bwd, lengths)


def trajectory_log_probs(policy, env, batch: TrajectoryBatch, uniform_pb: bool = True):
    """Per-trajectory ``(sum log P_F, sum log P_B)`` under ``policy`` (numpy, no tape)."""
    n, horizon = batch.fwd_actions.shape
    obs = batch.obs.reshape(n * (horizon + 1), -1)
    heads = policy(obs)
    fmask = batch.fwd_masks.reshape(n * (horizon + 1), -1)
    logpf_all = np.log(np.where(fmask, masked_softmax(heads.fwd_logits, fmask), 1.0))
    bmask = batch.bwd_masks.reshape(n * (horizon + 1), -1)
    if uniform_pb:
        logpb_all = -np.log(np.maximum(bmask.sum(-1, keepdims=True), 1)) * bmask
    else:
        logpb_all = np.log(np.where(bmask, masked_softmax(heads.bwd_logits, bmask), 1.0))
    valid = batch.valid
    rows = np.arange(n)[:, None] * (horizon + 1) + np.arange(horizon)[None, :]
    lpf = logpf_all[rows, np.clip(batch.fwd_actions, 0, None)] * valid
    lpb = logpb_all[rows + 1, np.clip(batch.bwd_actions, 0, None)] * valid
    return lpf.sum(1), lpb.sum(1)


def concat_batches(batches: list) -> TrajectoryBatch:
    """Stack trajectory batches that share a horizon along the batch axis."""
    batches = [b for b in batches if b.batch_size > 0]
    if len(batches) == 1:
        return batches[0]
    horizons = {b.horizon for b in batches}
    if len(horizons) != 1:
        raise ValueError("batches must share a horizon")
    cat = np.concatenate
    return TrajectoryBatch(
        states=[concat([b.states[t] for b in batches]) for t in range(len(batches[0].states))],
        obs=cat([b.obs for b in batches]), fwd_actions=cat([b.fwd_actions for b in batches]),
        bwd_actions=cat([b.bwd_actions for b in batches]), fwd_masks=cat([b.fwd_masks for b in batches]),
        bwd_masks=cat([b.bwd_masks for b in batches]), is_terminal=cat([b.is_terminal for b in batches]),
        log_rewards=cat([b.log_rewards for b in batches]), lengths=cat([b.lengths for b in batches]),
        pad_mask=cat([b.pad_mask for b in batches]), energies=cat([b.energies for b in batches]),
        delta_log_rewards=cat([b.delta_log_rewards for b in batches]),
        terminal_states=concat([b.terminal_states for b in batches]))
