from .adam import AdamState, adam_step, cosine_lr
from .mlp import Mlp, mlp_forward, time_features
from .tape import Tape, Var

__all__ = ["AdamState", "Mlp", "Tape", "Var", "adam_step", "cosine_lr", "mlp_forward", "time_features"]
