"""Shared environment contract.

Environments are stateless objects configured by immutable params.  All
mutable data lives in a batched state dataclass whose fields are numpy
arrays with the batch on axis 0.  ``step``/``backward_step`` return new
state objects and never modify their inputs.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

PAD = -1


class ConfigError(ValueError):
    """Invalid environment or run configuration."""


class InvalidActionError(ValueError):
    """A masked (illegal) action was applied to a live instance."""


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray
    state: object
    log_reward: np.ndarray
    done: np.ndarray
    info: dict = field(default_factory=dict)

    def __iter__(self):
        # allows ``obs, state, log_reward, done, info = env.step(...)``
        return iter((self.obs, self.state, self.log_reward, self.done, self.info))


def take(state, idx):
    """Rows ``idx`` of a batched state (``idx`` may be a boolean mask)."""
    return dataclasses.replace(state, **{f.name: getattr(state, f.name)[idx]
                                         for f in dataclasses.fields(state)})


def concat(states):
    first = states[0]
    return dataclasses.replace(first, **{f.name: np.concatenate([getattr(s, f.name) for s in states])
                                         for f in dataclasses.fields(first)})


def repeat(state, n: int):
    """Repeat every row ``n`` times (row-major)."""
    return take(state, np.repeat(np.arange(batch_size(state)), n))


def batch_size(state) -> int:
    return len(state.is_terminal)


def states_equal(a, b) -> bool:
    for f in dataclasses.fields(a):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if x.shape != y.shape or x.dtype != y.dtype:
            return False
        if x.dtype == object:
            if not all(u == v for u, v in zip(x.ravel(), y.ravel())):
                return False
        elif not np.array_equal(x, y):
            return False
    return True


def rows_equal(a, b) -> np.ndarray:
    """Per-row equality of two batched states of the same size."""
    out = np.ones(batch_size(a), dtype=bool)
    for f in dataclasses.fields(a):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if x.dtype == object:
            eq = np.array([all(u == v for u, v in zip(np.ravel(p), np.ravel(q))) for p, q in zip(x, y)],
                          dtype=bool)
        else:
            eq = (x == y).reshape(len(x), -1).all(axis=1)
        out &= eq
    return out


class Environment:
    """Base class for vectorized construction environments.

    Subclasses set ``num_actions``, ``num_bwd_actions``, ``obs_dim`` and
    ``max_steps`` and implement the underscore hooks.  ``stop_action`` is the
    last forward index for environments with an explicit exit; for those the
    last backward index is the matching "un-stop" move out of a terminal copy.
    """

    name = "base"
    num_actions: int
    num_bwd_actions: int
    obs_dim: int
    max_steps: int
    stop_action: int | None = None

    # -- hooks ------------------------------------------------------------
    def _init_state(self, num_envs: int):
        raise NotImplementedError

    def _apply(self, state, actions, live):
        """Forward transition of rows ``live``; other rows must be returned unchanged."""
        raise NotImplementedError

    def _apply_backward(self, state, bwd_actions, live):
        raise NotImplementedError

    def action_mask(self, state) -> np.ndarray:
        raise NotImplementedError

    def backward_action_mask(self, state) -> np.ndarray:
        raise NotImplementedError

    def observe(self, state) -> np.ndarray:
        raise NotImplementedError

    def log_reward(self, state) -> np.ndarray:
        """Log-reward of (terminal) states."""
        raise NotImplementedError

    def get_backward_action(self, state, fwd_action, next_state) -> np.ndarray:
        raise NotImplementedError

    def get_forward_action(self, state, bwd_action, prev_state) -> np.ndarray:
        raise NotImplementedError

    def terminal_keys(self, state) -> list:
        """Canonical byte encoding of the objects carried by (terminal) states."""
        raise NotImplementedError

    # -- optional ---------------------------------------------------------
    def energy(self, state) -> np.ndarray:
        """Intermediate energy used by forward-looking losses; zero unless overridden."""
        return np.zeros(batch_size(state))

    def step_info(self, state, actions, new_state, live) -> dict:
        return {}

    def state_keys(self, state) -> list:
        fields = dataclasses.fields(state)
        keys = []
        for i in range(batch_size(state)):
            parts = []
            for f in fields:
                if f.name == "step_count":
                    continue
                v = getattr(state, f.name)[i]
                parts.append(repr(v.tolist()).encode() if isinstance(v, np.ndarray) and v.dtype == object
                             else (repr(v).encode() if not isinstance(v, np.ndarray) else v.tobytes()))
            keys.append(b"|".join(parts))
        return keys

    # -- contract ---------------------------------------------------------
    def reset(self, num_envs: int, key=None):
        if int(num_envs) < 1:
            raise ConfigError("num_envs must be >= 1")
        state = self._init_state(int(num_envs))
        return self.observe(state), state

    def is_initial(self, state) -> np.ndarray:
        return state.step_count == 0

    def step(self, state, actions) -> StepResult:
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        live = ~state.is_terminal
        if live.any():
            safe = np.where(live, actions, 0)
            mask = self.action_mask(state)
            in_range = (safe >= 0) & (safe < self.num_actions)
            ok = in_range & mask[np.arange(len(safe)), np.clip(safe, 0, self.num_actions - 1)]
            bad = live & ~ok
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise InvalidActionError(f"illegal forward action {actions[i]} for instance {i}")
            new = self._apply(state, safe, live)
            new = dataclasses.replace(new, step_count=np.where(live, state.step_count + 1, state.step_count))
        else:
            new = state
        log_reward = np.zeros(len(actions))
        entered = new.is_terminal & live
        if entered.any():
            log_reward[entered] = self.log_reward(take(new, entered))
        info = self.step_info(state, actions, new, live) if live.any() else {}
        return StepResult(self.observe(new), new, log_reward, new.is_terminal.copy(), info)

    def backward_step(self, state, bwd_actions) -> StepResult:
        bwd_actions = np.asarray(bwd_actions, dtype=np.int64).reshape(-1)
        initial = self.is_initial(state)
        pad = initial & (bwd_actions == PAD)
        if (initial & ~pad).any():
            i = int(np.flatnonzero(initial & ~pad)[0])
            raise InvalidActionError(f"backward step from the initial state (instance {i})")
        live = ~initial
        if live.any():
            safe = np.where(live, bwd_actions, 0)
            mask = self.backward_action_mask(state)
            in_range = (safe >= 0) & (safe < self.num_bwd_actions)
            ok = in_range & mask[np.arange(len(safe)), np.clip(safe, 0, self.num_bwd_actions - 1)]
            bad = live & ~ok
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise InvalidActionError(f"illegal backward action {bwd_actions[i]} for instance {i}")
            new = self._apply_backward(state, safe, live)
            new = dataclasses.replace(new, step_count=np.where(live, state.step_count - 1, state.step_count))
        else:
            new = state
        n = len(bwd_actions)
        return StepResult(self.observe(new), new, np.zeros(n), self.is_initial(new), {})

    def _check_pair(self, ok, what):
        if not np.all(ok):
            i = int(np.flatnonzero(~np.asarray(ok))[0])
            raise InvalidActionError(f"inconsistent {what} for instance {i}")
