"""Adam/AdamW, learning-rate schedules and EMA target parameters."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Schedule:
    """Learning-rate (or exploration) schedule.

    ``kind`` is one of ``constant``, ``linear`` or ``cosine``.  The value ramps
    linearly from 0 to ``start`` during ``warmup`` steps, then moves from
    ``start`` to ``end`` over the following ``horizon`` steps and stays at ``end``.
    """

    kind: str = "constant"
    start: float = 1e-3
    end: float | None = None
    warmup: int = 0
    horizon: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.warmup < 0 or self.horizon < 1:
            raise ValueError("warmup must be >= 0 and horizon >= 1")


def schedule_value(s: Schedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    if s.warmup > 0 and step < s.warmup:
        return s.start * step / s.warmup
    if s.kind == "constant":
        return s.start
    end = s.start if s.end is None else s.end
    frac = min(max(step - s.warmup, 0) / s.horizon, 1.0)
    if s.kind == "linear":
        return s.start + (end - s.start) * frac
    return end + 0.5 * (s.start - end) * (1.0 + math.cos(math.pi * frac))


def constant(value: float) -> Schedule:
    return Schedule("constant", value)


@dataclass
class AdamState:
    lr: float | Schedule = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    decoupled: bool = True
    lr_overrides: dict = field(default_factory=dict)
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self, name: str | None = None) -> float:
        lr = self.lr_overrides.get(name, self.lr) if name is not None else self.lr
        if isinstance(lr, Schedule):
            return schedule_value(lr, self.t)
        return float(lr)


def adam_init(params: dict, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0,
              decoupled=True, lr_overrides=None) -> AdamState:
    """``lr_overrides`` maps parameter names (e.g. ``logZ``) to their own rate."""
    return AdamState(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay,
                     decoupled=decoupled, lr_overrides=dict(lr_overrides or {}),
                     m={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
                     v={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()})


def adam_step(state: AdamState, params: dict, grads: dict):
    """One bias-corrected Adam update; with ``decoupled`` the weight decay is AdamW-style.

    Returns ``(new_state, new_params)``; inputs are not modified.
    """
    b1, b2 = state.betas
    lrs = {k: state.current_lr(k) for k in params}
    t = state.t + 1
    new_m, new_v, new_p = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"gradient shape {g.shape} != parameter shape {np.shape(p)} for {k}")
        if state.weight_decay and not state.decoupled:
            g = g + state.weight_decay * p
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        step = lrs[k] * m_hat / (np.sqrt(v_hat) + state.eps)
        if state.weight_decay and state.decoupled:
            new_p[k] = p - step - lrs[k] * state.weight_decay * p
        else:
            new_p[k] = p - step
        new_m[k], new_v[k] = m, v
    new_state = AdamState(lr=state.lr, betas=state.betas, eps=state.eps,
                          weight_decay=state.weight_decay, decoupled=state.decoupled,
                          lr_overrides=state.lr_overrides, t=t, m=new_m, v=new_v)
    return new_state, new_p


@dataclass
class EmaParams:
    shadow: dict
    tau: float = 0.005

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")


def ema_init(params: dict, tau: float = 0.005) -> EmaParams:
    return EmaParams({k: np.array(v, dtype=np.float64) for k, v in params.items()}, tau)


def ema_update(ema: EmaParams, live: dict) -> EmaParams:
    tau = ema.tau
    shadow = {}
    for k, s in ema.shadow.items():
        if np.shape(live[k]) != np.shape(s):
            raise ValueError(f"shape mismatch for {k}")
        shadow[k] = (1.0 - tau) * s + tau * np.asarray(live[k])
    return EmaParams(shadow, tau)
