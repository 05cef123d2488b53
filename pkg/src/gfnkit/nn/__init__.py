from .autograd import Tensor, as_tensor, grad, logsumexp, masked_log_softmax, numerical_grad, where
from .checkpoint import load_checkpoint, save_checkpoint
from .mlp import MlpSpec, PolicyHeads, mlp_forward, mlp_init
from .optim import (AdamState, EmaParams, Schedule, adam_init, adam_step, constant, ema_init,
                    ema_update, schedule_value)

__all__ = [
    "Tensor", "as_tensor", "grad", "logsumexp", "masked_log_softmax", "numerical_grad", "where",
    "load_checkpoint", "save_checkpoint", "MlpSpec", "PolicyHeads", "mlp_forward", "mlp_init",
    "AdamState", "EmaParams", "Schedule", "adam_init", "adam_step", "constant", "ema_init",
    "ema_update", "schedule_value",
]
