"""GFlowNet training objectives: DB, TB, SubTB, FLDB and MDB.

Each loss takes per-step log-probability terms as Tensors (so it can be
differentiated) plus constant batch data, and returns a scalar Tensor.
Shapes: ``B`` trajectories, ``T`` steps, ``T + 1`` states.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.autograd import Tensor, as_tensor, masked_log_softmax, where
from .nn.mlp import MlpSpec, mlp_forward
from .rollout import TrajectoryBatch

OBJECTIVES = ("db", "tb", "subtb", "fldb", "mdb")


@dataclass(frozen=True)
class LossConfig:
    objective: str = "tb"
    subtb_lambda: float = 0.9
    backward_policy: str = "uniform"
    terminal_weight: float = 1.0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}; choose from {OBJECTIVES}")
        if self.objective == "subtb" and not 0.0 < self.subtb_lambda <= 1.0:
            raise ValueError("SubTB lambda must lie in (0, 1]")
        if self.backward_policy not in ("uniform", "learned"):
            raise ValueError("backward_policy must be 'uniform' or 'learned'")


def _valid(valid, shape):
    return np.broadcast_to(np.asarray(valid, dtype=bool), shape)


def _check_rewards(log_rewards):
    log_rewards = np.asarray(log_rewards, dtype=np.float64)
    if not np.all(np.isfinite(log_rewards)):
        raise FloatingPointError("non-finite log-reward")
    return log_rewards


def tb_loss(log_pf, log_pb, log_z, log_rewards, valid) -> Tensor:
    """Mean over trajectories of (log Z + sum log P_F - log R - sum log P_B)^2."""
    log_pf, log_pb = as_tensor(log_pf), as_tensor(log_pb)
    log_rewards = _check_rewards(log_rewards)
    v = _valid(valid, log_pf.shape).astype(np.float64)
    resid = as_tensor(log_z) + ((log_pf - log_pb) * v).sum(axis=1) - log_rewards
    return resid.square().mean()


def _target_flow(log_flow, log_rewards, is_terminal, extra=None):
    """log F at positions 1..T with terminal positions replaced by log R (+ extra)."""
    is_terminal = np.asarray(is_terminal, dtype=bool)
    log_flow = as_tensor(log_flow)
    n = log_flow.shape[0]
    term = np.broadcast_to(np.asarray(log_rewards, dtype=np.float64)[:, None], is_terminal.shape)
    if extra is not None:
        term = term + extra
    return where(is_terminal, term, log_flow), n


def _weighted_mean(resid_sq: Tensor, valid, is_terminal_next, terminal_weight: float) -> Tensor:
    v = np.asarray(valid, dtype=np.float64)
    w = v * np.where(np.asarray(is_terminal_next, dtype=bool), terminal_weight, 1.0)
    count = v.sum()
    if count == 0:
        return (resid_sq * 0.0).sum()
    return (resid_sq * w).sum() * (1.0 / count)


def db_loss(log_pf, log_pb, log_flow, log_rewards, is_terminal, valid,
            terminal_weight: float = 1.0) -> Tensor:
    """Mean over valid transitions of (log F(s) + log P_F - log F(s') - log P_B)^2,
    with log F(s') := log R(s') when s' is terminal."""
    log_pf, log_pb, log_flow = as_tensor(log_pf), as_tensor(log_pb), as_tensor(log_flow)
    log_rewards = _check_rewards(log_rewards)
    is_terminal = np.asarray(is_terminal, dtype=bool)
    flows, _ = _target_flow(log_flow, log_rewards, is_terminal)
    horizon = log_pf.shape[1]
    resid = flows[:, :horizon] + log_pf - flows[:, 1:] - log_pb
    return _weighted_mean(resid.square(), valid, is_terminal[:, 1:], terminal_weight)


def fldb_loss(log_pf, log_pb, log_flow, log_rewards, is_terminal, energies, valid,
              terminal_weight: float = 1.0) -> Tensor:
    """Forward-looking DB.  ``log_flow`` parameterizes log F~(s) = E(s) + log F(s);
    at terminal states log F~ := log R + E."""
    log_pf, log_pb, log_flow = as_tensor(log_pf), as_tensor(log_pb), as_tensor(log_flow)
    log_rewards = _check_rewards(log_rewards)
    energies = np.asarray(energies, dtype=np.float64)
    is_terminal = np.asarray(is_terminal, dtype=bool)
    flows, _ = _target_flow(log_flow, log_rewards, is_terminal, extra=energies)
    horizon = log_pf.shape[1]
    d_energy = energies[:, 1:] - energies[:, :horizon]
    resid = flows[:, :horizon] + log_pf - flows[:, 1:] - log_pb + d_energy
    return _weighted_mean(resid.square(), valid, is_terminal[:, 1:], terminal_weight)


def subtb_weights(lengths, horizon: int, lam: float) -> np.ndarray:
    """``w[b, j, k]`` proportional to lam^(k-j) for 0 <= j < k <= len_b, rows normalized."""
    j = np.arange(horizon + 1)[:, None]
    k = np.arange(horizon + 1)[None, :]
    lengths = np.asarray(lengths)[:, None, None]
    active = (j < k) & (k <= lengths)
    w = np.where(active, float(lam) ** (k - j), 0.0)
    total = w.sum(axis=(1, 2), keepdims=True)
    return w / np.where(total > 0, total, 1.0)


def subtb_loss(log_pf, log_pb, log_flow, log_rewards, is_terminal, lengths, lam: float = 0.9,
               weights=None) -> Tensor:
    """Weighted sum over all sub-trajectories of squared log-ratios, averaged over
    trajectories.  ``weights`` (``[B, T+1, T+1]``) overrides the lambda weights."""
    log_pf, log_pb, log_flow = as_tensor(log_pf), as_tensor(log_pb), as_tensor(log_flow)
    log_rewards = _check_rewards(log_rewards)
    n, horizon = log_pf.shape
    lengths = np.asarray(lengths)
    valid = np.arange(horizon)[None, :] < lengths[:, None]
    flows, _ = _target_flow(log_flow, log_rewards, np.asarray(is_terminal, dtype=bool))
    # prefix[b, t] = sum_{i<t} (log P_F - log P_B)
    upper = np.triu(np.ones((horizon, horizon + 1)), k=1)
    prefix = ((log_pf - log_pb) * valid.astype(np.float64)) @ upper
    a = flows - prefix
    resid = a.reshape(n, horizon + 1, 1) - a.reshape(n, 1, horizon + 1)
    if weights is None:
        weights = subtb_weights(lengths, horizon, lam)
    return (resid.square() * weights).sum() * (1.0 / n)


def mdb_loss(log_pf, log_pb, log_pf_stop, delta_log_rewards, valid) -> Tensor:
    """Modified DB for environments where every state can stop.

    Residual per transition s -> s' (both non-terminal):
    log P_F(s'|s) + log P_F(stop|s') - delta - log P_B(s|s') - log P_F(stop|s),
    where delta = log R(s') - log R(s).
    """
    log_pf, log_pb, log_pf_stop = as_tensor(log_pf), as_tensor(log_pb), as_tensor(log_pf_stop)
    horizon = log_pf.shape[1]
    delta = np.asarray(delta_log_rewards, dtype=np.float64)
    resid = log_pf + log_pf_stop[:, 1:] - delta - log_pb - log_pf_stop[:, :horizon]
    v = np.asarray(valid, dtype=np.float64)
    count = v.sum()
    if count == 0:
        return (resid.square() * 0.0).sum()
    return (resid.square() * v).sum() * (1.0 / count)


# -- network heads -> per-step terms ------------------------------------------

def policy_terms(params, spec: MlpSpec, batch: TrajectoryBatch, backward_policy: str = "uniform",
                 stop_action: int | None = None) -> dict:
    """Evaluate the policy network on every state of ``batch`` and gather the
    per-step log-probabilities used by the losses."""
    n, horizon = batch.fwd_actions.shape
    t1 = horizon + 1
    obs = batch.obs.reshape(n * t1, -1)
    heads = mlp_forward(params, obs, spec)
    fmask = batch.fwd_masks.reshape(n * t1, -1)
    logpf_all = masked_log_softmax(heads.fwd_logits, fmask)
    rows = (np.arange(n)[:, None] * t1 + np.arange(horizon)[None, :]).ravel()
    valid = batch.valid.astype(np.float64)
    fcols = np.clip(batch.fwd_actions, 0, None).ravel()
    log_pf = logpf_all[rows, fcols].reshape(n, horizon) * valid
    bcols = np.clip(batch.bwd_actions, 0, None).ravel()
    bmask = batch.bwd_masks.reshape(n * t1, -1)
    if backward_policy == "learned":
        logpb_all = masked_log_softmax(heads.bwd_logits, bmask)
        log_pb = logpb_all[rows + 1, bcols].reshape(n, horizon) * valid
    else:
        counts = np.maximum(bmask.sum(-1), 1)
        log_pb = Tensor(-np.log(counts)[rows + 1].reshape(n, horizon) * valid)
    out = {"log_pf": log_pf, "log_pb": log_pb, "log_flow": heads.log_flow.reshape(n, t1)}
    if stop_action is not None:
        out["log_pf_stop"] = logpf_all[:, stop_action].reshape(n, t1)
    return out


def batch_loss(params, spec: MlpSpec, batch: TrajectoryBatch, config: LossConfig,
               stop_action: int | None = None) -> Tensor:
    """Loss of ``config.objective`` on a trajectory batch; ``params['logZ']`` is used by TB."""
    terms = policy_terms(params, spec, batch, config.backward_policy, stop_action)
    obj = config.objective
    if obj == "tb":
        return tb_loss(terms["log_pf"], terms["log_pb"], params["logZ"], batch.log_rewards, batch.valid)
    if obj == "db":
        return db_loss(terms["log_pf"], terms["log_pb"], terms["log_flow"], batch.log_rewards,
                       batch.is_terminal, batch.valid, config.terminal_weight)
    if obj == "fldb":
        return fldb_loss(terms["log_pf"], terms["log_pb"], terms["log_flow"], batch.log_rewards,
                         batch.is_terminal, batch.energies, batch.valid, config.terminal_weight)
    if obj == "subtb":
        return subtb_loss(terms["log_pf"], terms["log_pb"], terms["log_flow"], batch.log_rewards,
                          batch.is_terminal, batch.lengths, config.subtb_lambda)
    if obj == "mdb":
        if stop_action is None:
            raise ValueError("MDB needs an environment with a stop action")
        valid = batch.valid & ~batch.is_terminal[:, 1:]
        return mdb_loss(terms["log_pf"], terms["log_pb"], terms["log_pf_stop"],
                        batch.delta_log_rewards, valid)
    raise ValueError(obj)
