"""Small numpy neural-network kernels with reverse-mode gradients."""

from . import autodiff
from .autodiff import StaleTapeError, Tape, Var
from .gradcheck import GradReport, check_scalar_fn, grad_check
from .layers import LayerSpec, backward, forward, init_stack
from .optim import AdamW, cosine_lr
from .params import Bound, ParamSpec, ParamStore, prefixed

__all__ = [
    "AdamW",
    "Bound",
    "GradReport",
    "LayerSpec",
    "ParamSpec",
    "ParamStore",
    "StaleTapeError",
    "Tape",
    "Var",
    "autodiff",
    "backward",
    "check_scalar_fn",
    "cosine_lr",
    "forward",
    "grad_check",
    "init_stack",
    "prefixed",
]
