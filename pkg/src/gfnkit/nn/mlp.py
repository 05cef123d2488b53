"""MLP policies producing forward logits, backward logits and a log-flow scalar."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng as rnglib
from .autograd import Tensor, as_tensor

ACTIVATIONS = ("relu",)


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a policy network: obs width, hidden widths and the three heads."""

    obs_dim: int
    hidden: tuple = (256, 256)
    num_actions: int = 1
    num_bwd_actions: int = 1
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for w in (self.obs_dim, self.num_actions, self.num_bwd_actions, *self.hidden):
            if int(w) < 1:
                raise ValueError(f"layer widths must be >= 1, got {w}")

    @property
    def out_dim(self) -> int:
        return self.num_actions + self.num_bwd_actions + 1

    @property
    def layer_sizes(self) -> list:
        return [self.obs_dim, *self.hidden, self.out_dim]


@dataclass
class PolicyHeads:
    fwd_logits: object
    bwd_logits: object
    log_flow: object


def mlp_init(spec: MlpSpec, key, log_z: float = 0.0) -> dict:
    """Fan-in scaled uniform weights, zero biases, and a scalar ``logZ``."""
    sizes = spec.layer_sizes
    gen = rnglib.generator(key)
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"W{i}"] = gen.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    params["logZ"] = np.array(float(log_z))
    return params


def num_layers(params: dict) -> int:
    return sum(1 for k in params if k.startswith("W"))


def _check_obs(params, obs):
    width = params["W0"].shape[0]
    if obs.shape[-1] != width:
        raise ValueError(f"obs width {obs.shape[-1]} does not match first layer {width}")


def mlp_forward(params: dict, obs, spec: MlpSpec) -> PolicyHeads:
    """Forward pass.  Works on raw arrays (fast, no tape) or on Tensors."""
    taped = any(isinstance(v, Tensor) for v in params.values())
    n = num_layers(params)
    if not taped:
        h = np.asarray(obs, dtype=np.float64)
        _check_obs(params, h)
        for i in range(n):
            h = h @ params[f"W{i}"] + params[f"b{i}"]
            if i < n - 1:
                h = np.maximum(h, 0.0)
    else:
        h = as_tensor(obs)
        _check_obs({"W0": params["W0"].data if isinstance(params["W0"], Tensor) else params["W0"]}, h)
        for i in range(n):
            h = h @ params[f"W{i}"] + params[f"b{i}"]
            if i < n - 1:
                h = h.relu()
    a, b = spec.num_actions, spec.num_bwd_actions
    return PolicyHeads(h[:, :a], h[:, a:a + b], h[:, a + b])
