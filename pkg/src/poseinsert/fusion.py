"""Fusing pose and image features.

``prgf``: ``f_fusion = f_pose + sigmoid(W f_pose + b) * f_img'``, where
``f_img'`` is the image feature compressed by dense + LayerNorm + ReLU.
``concat``: ``[f_pose, f_img']`` followed by a dense layer back to the pose width.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nn import autodiff as ad
from .nn.layers import dense, dense_params, layernorm, layernorm_params
from .nn.params import Bound, ParamSpec, ParamStore, prefixed


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "prgf"
    d_img: int = 1200
    dim: int = 128

    def __post_init__(self):
        if self.mode not in ("prgf", "concat"):
            raise ValueError(f"unknown fusion mode {self.mode!r}")

    def to_dict(self):
        return asdict(self)


class Fusion:
    def __init__(self, cfg: FusionConfig = FusionConfig()):
        self.cfg = cfg

    def param_specs(self) -> list[ParamSpec]:
        c = self.cfg
        specs = prefixed("compress", dense_params(c.d_img, c.dim)) + prefixed(
            "compress_norm", layernorm_params(c.dim)
        )
        if c.mode == "prgf":
            specs += prefixed("gate", dense_params(c.dim, c.dim))
        else:
            specs += prefixed("cat", dense_params(2 * c.dim, c.dim))
        return specs

    def compress(self, p: Bound, f_img: ad.Var) -> ad.Var:
        if f_img.value.shape[-1] != self.cfg.d_img:
            raise ValueError(f"image feature must have {self.cfg.d_img} entries, got {f_img.value.shape[-1]}")
        return ad.relu(layernorm(p.sub("compress_norm"), dense(p.sub("compress"), f_img)))

    def gate(self, p: Bound, f_pose: ad.Var) -> ad.Var:
        return ad.sigmoid(dense(p.sub("gate"), f_pose))

    def __call__(self, p: Bound, f_pose: ad.Var, f_img: ad.Var, trace: dict | None = None) -> ad.Var:
        f_c = self.compress(p, f_img)
        if self.cfg.mode == "prgf":
            w_g = self.gate(p, f_pose)
            if trace is not None:
                trace["gate"] = w_g.value
            return ad.add(f_pose, ad.mul(w_g, f_c))
        return dense(p.sub("cat"), ad.concat([f_pose, f_c], axis=-1))


def init_fusion(cfg: FusionConfig = FusionConfig(), seed: int = 0) -> ParamStore:
    return ParamStore.build(Fusion(cfg).param_specs(), seed)


def _run(fn, params: ParamStore, *arrays):
    tape = ad.Tape()
    bound = params.bind(tape)
    leaves = [tape.leaf(np.asarray(a, dtype=np.float64)) for a in arrays]
    return fn(bound, *leaves).value


def compress_image_feature(f_img: np.ndarray, params: ParamStore, cfg: FusionConfig = FusionConfig()):
    return _run(Fusion(cfg).compress, params, f_img)


def gate(f_pose: np.ndarray, params: ParamStore, cfg: FusionConfig = FusionConfig()):
    return _run(Fusion(cfg).gate, params, f_pose)


def fuse(f_pose, f_img_c, w_g=None, mode: str = "prgf", params: ParamStore | None = None):
    """Combine an already-compressed image feature with the pose feature.

    ``prgf`` needs the gate ``w_g``; ``concat`` needs ``params`` holding ``cat.*``.
    """
    f_pose = np.asarray(f_pose, dtype=np.float64)
    f_img_c = np.asarray(f_img_c, dtype=np.float64)
    if f_pose.shape != f_img_c.shape:
        raise ValueError(f"feature shapes differ: {f_pose.shape} vs {f_img_c.shape}")
    if mode == "prgf":
        return f_pose + np.asarray(w_g, dtype=np.float64) * f_img_c
    if mode == "concat":
        if params is None:
            raise ValueError("concat fusion needs parameters")
        cat = np.concatenate([f_pose, f_img_c], axis=-1)
        return cat @ params["cat.w"] + params["cat.b"]
    raise ValueError(f"unknown fusion mode {mode!r}")
