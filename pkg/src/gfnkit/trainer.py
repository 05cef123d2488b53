"""One GFlowNet update: rollout batch in, new parameters and optimizer state out."""
from __future__ import annotations

from dataclasses import dataclass

from .nn.autograd import grad
from .nn.mlp import MlpSpec, mlp_init
from .nn.optim import AdamState, adam_init, adam_step
from .objectives import LossConfig, batch_loss


@dataclass
class TrainState:
    params: dict
    adam: AdamState
    spec: MlpSpec
    step: int = 0


def init_train_state(env, key, hidden=(256, 256), lr=1e-3, z_lr=1e-1, betas=(0.9, 0.999), eps=1e-8,
                     weight_decay=0.0, log_z=0.0) -> TrainState:
    spec = MlpSpec(env.obs_dim, tuple(hidden), env.num_actions, env.num_bwd_actions)
    params = mlp_init(spec, key, log_z)
    adam = adam_init(params, lr=lr, betas=betas, eps=eps, weight_decay=weight_decay,
                     lr_overrides={"logZ": z_lr})
    return TrainState(params, adam, spec)


def update(state: TrainState, batch, loss_config: LossConfig, stop_action=None):
    """Return ``(new_state, loss_value)``."""
    value, grads = grad(lambda p: batch_loss(p, state.spec, batch, loss_config, stop_action), state.params)
    adam, params = adam_step(state.adam, state.params, grads)
    return TrainState(params, adam, state.spec, state.step + 1), value
