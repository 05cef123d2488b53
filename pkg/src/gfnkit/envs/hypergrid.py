"""Hypergrid: walk from the origin of {0..H-1}^d by unit increments, then stop."""
from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass

import numpy as np

from ..metrics import ExactDistribution
from .base import ConfigError, Environment


@dataclass(frozen=True)
class HypergridParams:
    dim: int = 2
    side: int = 8
    r0: float = 1e-3
    r1: float = 0.5
    r2: float = 2.0

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("hypergrid dim must be >= 1")
        if self.side < 2:
            raise ConfigError("hypergrid side must be >= 2")
        if min(self.r0, self.r1, self.r2) < 0:
            raise ConfigError("reward constants must be non-negative")


@dataclass(frozen=True)
class GridState:
    coords: np.ndarray
    is_terminal: np.ndarray
    step_count: np.ndarray


def grid_log_reward(coords, params: HypergridParams) -> np.ndarray:
    coords = np.atleast_2d(np.asarray(coords))
    dev = np.abs(coords / (params.side - 1) - 0.5)
    outer = np.all(dev > 0.25, axis=-1)
    band = np.all((dev > 0.3) & (dev < 0.4), axis=-1)
    return np.log(params.r0 + params.r1 * outer + params.r2 * band)


class HypergridEnvironment(Environment):
    """Forward actions ``0..d-1`` increment a coordinate, ``d`` stops.
    Backward actions ``0..d-1`` decrement a coordinate, ``d`` undoes the stop."""

    name = "hypergrid"

    def __init__(self, params: HypergridParams | None = None, **kwargs):
        self.params = params if params is not None else HypergridParams(**kwargs)
        d, h = self.params.dim, self.params.side
        self.num_actions = d + 1
        self.num_bwd_actions = d + 1
        self.stop_action = d
        self.obs_dim = d * h
        self.max_steps = d * (h - 1) + 1

    def _init_state(self, n):
        return GridState(np.zeros((n, self.params.dim), dtype=np.int64),
                         np.zeros(n, dtype=bool), np.zeros(n, dtype=np.int64))

    def action_mask(self, state):
        d = self.params.dim
        mask = np.zeros((len(state.is_terminal), d + 1), dtype=bool)
        live = ~state.is_terminal
        mask[:, :d] = (state.coords < self.params.side - 1) & live[:, None]
        mask[:, d] = live
        return mask

    def backward_action_mask(self, state):
        d = self.params.dim
        mask = np.zeros((len(state.is_terminal), d + 1), dtype=bool)
        term = state.is_terminal
        mask[:, :d] = (state.coords > 0) & ~term[:, None]
        mask[:, d] = term
        return mask

    def _apply(self, state, actions, live):
        d = self.params.dim
        stop = live & (actions == d)
        inc = live & (actions < d)
        coords = state.coords.copy()
        rows = np.flatnonzero(inc)
        coords[rows, actions[rows]] += 1
        return dataclasses.replace(state, coords=coords, is_terminal=state.is_terminal | stop)

    def _apply_backward(self, state, bwd_actions, live):
        d = self.params.dim
        unstop = live & (bwd_actions == d)
        dec = live & (bwd_actions < d)
        coords = state.coords.copy()
        rows = np.flatnonzero(dec)
        coords[rows, bwd_actions[rows]] -= 1
        return dataclasses.replace(state, coords=coords, is_terminal=state.is_terminal & ~unstop)

    def observe(self, state):
        n, d, h = len(state.is_terminal), self.params.dim, self.params.side
        obs = np.zeros((n, d, h))
        np.put_along_axis(obs, state.coords[:, :, None], 1.0, axis=2)
        return obs.reshape(n, d * h)

    def log_reward(self, state):
        return grid_log_reward(state.coords, self.params)

    def get_backward_action(self, state, fwd_action, next_state):
        fwd_action = np.asarray(fwd_action)
        d = self.params.dim
        diff = next_state.coords - state.coords
        stopped = next_state.is_terminal & ~state.is_terminal
        ok = np.where(stopped, (diff == 0).all(1) & (fwd_action == d),
                      (diff.sum(1) == 1) & (diff >= 0).all(1)
                      & (np.argmax(diff, axis=1) == fwd_action) & ~next_state.is_terminal)
        self._check_pair(ok, "(state, action, next_state)")
        return np.where(stopped, d, fwd_action)

    def get_forward_action(self, state, bwd_action, prev_state):
        return np.asarray(bwd_action).copy()

    def terminal_keys(self, state):
        return [c.tobytes() for c in np.ascontiguousarray(state.coords, dtype=np.int64)]

    def all_terminal_coords(self) -> np.ndarray:
        d, h = self.params.dim, self.params.side
        return np.array(list(itertools.product(range(h), repeat=d)), dtype=np.int64).reshape(-1, d)

    def exact_distribution(self, cap: int = 10**6) -> ExactDistribution:
        d, h = self.params.dim, self.params.side
        if h ** d > cap:
            raise ConfigError(f"H^d = {h ** d} exceeds the enumeration cap {cap}")
        coords = self.all_terminal_coords()
        keys = [c.tobytes() for c in coords]
        return ExactDistribution.from_log_weights(keys, grid_log_reward(coords, self.params), coords)


def grid_exact_distribution(params: HypergridParams, cap: int = 10**6) -> ExactDistribution:
    return HypergridEnvironment(params).exact_distribution(cap)
