"""Pose feature extraction from a 9-vector (normalized translation + R6D).

Two encoders share one interface:

* ``mode="dpe"``: separate translation and rotation MLPs (dense, LayerNorm,
  GELU), self-attention over the two branch features, then a linear
  projection to the pose feature.
* ``mode="mlp"``: a single three-layer MLP over the whole 9-vector, the
  ablation baseline.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nn import autodiff as ad
from .nn.layers import attention_params, dense, dense_params, layernorm, layernorm_params
from .nn.params import Bound, ParamSpec, ParamStore, prefixed


@dataclass(frozen=True)
class DPEConfig:
    mode: str = "dpe"
    hidden: int = 128
    branch_dim: int = 64
    feature_dim: int = 128
    # 2: (F_t, F_r) as two tokens of width branch_dim; 1: one token of width 2*branch_dim
    tokens: int = 2
    residual: bool = True

    def __post_init__(self):
        if self.mode not in ("dpe", "mlp"):
            raise ValueError(f"unknown pose encoder mode {self.mode!r}")
        if self.tokens not in (1, 2):
            raise ValueError("tokens must be 1 or 2")

    def to_dict(self):
        return asdict(self)


def _mlp3_params(d_in: int, hidden: int, d_out: int) -> list[ParamSpec]:
    return (
        prefixed("l0", dense_params(d_in, hidden))
        + prefixed("n0", layernorm_params(hidden))
        + prefixed("l1", dense_params(hidden, hidden))
        + prefixed("n1", layernorm_params(hidden))
        + prefixed("l2", dense_params(hidden, d_out))
    )


def _mlp3(p: Bound, x: ad.Var) -> ad.Var:
    h = ad.gelu(layernorm(p.sub("n0"), dense(p.sub("l0"), x)))
    h = ad.gelu(layernorm(p.sub("n1"), dense(p.sub("l1"), h)))
    return dense(p.sub("l2"), h)


class PoseEncoder:
    def __init__(self, cfg: DPEConfig = DPEConfig()):
        self.cfg = cfg

    def param_specs(self) -> list[ParamSpec]:
        c = self.cfg
        if c.mode == "mlp":
            return prefixed("mlp", _mlp3_params(9, c.hidden, c.feature_dim))
        width = c.branch_dim if c.tokens == 2 else 2 * c.branch_dim
        return (
            prefixed("trans", _mlp3_params(3, c.hidden, c.branch_dim))
            + prefixed("rot", _mlp3_params(6, c.hidden, c.branch_dim))
            + prefixed("attn", attention_params(width))
            + prefixed("proj", dense_params(2 * c.branch_dim, c.feature_dim))
        )

    def __call__(self, p: Bound, x: ad.Var, trace: dict | None = None) -> ad.Var:
        """``x`` has shape ``(B, 9)``; returns ``(B, feature_dim)``."""
        c = self.cfg
        if not np.all(np.isfinite(x.value)):
            raise ValueError("non-finite pose input")
        if c.mode == "mlp":
            return _mlp3(p.sub("mlp"), x)
        t, r = ad.split(x, [3, 6], axis=-1)
        f_t = _mlp3(p.sub("trans"), t)
        f_r = _mlp3(p.sub("rot"), r)
        if trace is not None:
            trace["f_t"], trace["f_r"] = f_t.value, f_r.value
        B = x.value.shape[0]
        if c.tokens == 2:
            tokens = ad.concat([ad.reshape(f_t, (B, 1, -1)), ad.reshape(f_r, (B, 1, -1))], axis=1)
        else:
            tokens = ad.reshape(ad.concat([f_t, f_r], axis=-1), (B, 1, -1))
        mixed = ad.attention(tokens, p.sub("attn"))
        if c.residual:
            mixed = ad.add(tokens, mixed)
        return dense(p.sub("proj"), ad.reshape(mixed, (B, 2 * c.branch_dim)))


def encode_pose(pose_action: np.ndarray, params: ParamStore, cfg: DPEConfig = DPEConfig(), trace=None):
    """Evaluate the encoder on one 9-vector or a ``(B, 9)`` batch."""
    x = np.asarray(pose_action, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    tape = ad.Tape()
    bound = params.bind(tape)
    out = PoseEncoder(cfg)(bound, tape.leaf(x), trace)
    return out.value[0] if single else out.value


def init_pose_encoder(cfg: DPEConfig = DPEConfig(), seed: int = 0) -> ParamStore:
    return ParamStore.build(PoseEncoder(cfg).param_specs(), seed)
