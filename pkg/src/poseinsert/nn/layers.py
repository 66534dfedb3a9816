"""Layer kinds, their parameter layouts, and sequential stacks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .params import Bound, ParamSpec, ParamStore, prefixed

KINDS = ("dense", "layernorm", "gelu", "relu", "sigmoid", "conv2d", "attention")
LN_EPS = 1e-5


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int = 0
    out_dim: int = 0
    kernel: int = 3
    stride: int = 1
    heads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "attention" and self.heads != 1:
            raise ValueError("only single-head attention is supported")


def dense_params(d_in: int, d_out: int, bias: bool = True) -> list[ParamSpec]:
    out = [ParamSpec("w", (d_in, d_out), "glorot", (d_in, d_out))]
    if bias:
        out.append(ParamSpec("b", (d_out,), "zeros"))
    return out


def layernorm_params(d: int) -> list[ParamSpec]:
    return [ParamSpec("g", (d,), "ones"), ParamSpec("b", (d,), "zeros")]


def conv2d_params(c_in: int, c_out: int, k: int) -> list[ParamSpec]:
    fan = (c_in * k * k, c_out * k * k)
    return [ParamSpec("w", (k, k, c_in, c_out), "glorot", fan), ParamSpec("b", (c_out,), "zeros")]


def conv1d_params(c_in: int, c_out: int, k: int) -> list[ParamSpec]:
    fan = (c_in * k, c_out * k)
    return [ParamSpec("w", (k, c_in, c_out), "glorot", fan), ParamSpec("b", (c_out,), "zeros")]


def attention_params(d: int) -> list[ParamSpec]:
    specs = []
    for n in ("q", "k", "v", "o"):
        specs.append(ParamSpec(f"w{n}", (d, d), "glorot", (d, d)))
        specs.append(ParamSpec(f"b{n}", (d,), "zeros"))
    return specs


def dense(p: Bound, x: ad.Var) -> ad.Var:
    return ad.linear(x, p["w"], p["b"] if "b" in p else None)


def layernorm(p: Bound, x: ad.Var) -> ad.Var:
    return ad.layernorm(x, p["g"], p["b"], LN_EPS)


def layer_params(spec: LayerSpec) -> list[ParamSpec]:
    k = spec.kind
    if k == "dense":
        return dense_params(spec.in_dim, spec.out_dim)
    if k == "layernorm":
        return layernorm_params(spec.in_dim)
    if k == "conv2d":
        return conv2d_params(spec.in_dim, spec.out_dim, spec.kernel)
    if k == "attention":
        return attention_params(spec.in_dim)
    return []


def apply_layer(spec: LayerSpec, p: Bound, x: ad.Var) -> ad.Var:
    k = spec.kind
    if k == "dense":
        if x.value.shape[-1] != spec.in_dim:
            raise ValueError(f"dense expects last dim {spec.in_dim}, got {x.value.shape}")
        return dense(p, x)
    if k == "layernorm":
        return layernorm(p, x)
    if k == "gelu":
        return ad.gelu(x)
    if k == "relu":
        return ad.relu(x)
    if k == "sigmoid":
        return ad.sigmoid(x)
    if k == "conv2d":
        if x.value.ndim != 4 or x.value.shape[-1] != spec.in_dim:
            raise ValueError(f"conv2d expects (B, H, W, {spec.in_dim}), got {x.value.shape}")
        return ad.conv2d(x, p["w"], p["b"], stride=spec.stride)
    if k == "attention":
        if x.value.ndim != 3 or x.value.shape[-1] != spec.in_dim:
            raise ValueError(f"attention expects (B, T, {spec.in_dim}), got {x.value.shape}")
        return ad.attention(x, p)
    raise AssertionError(k)


def output_dim(spec: LayerSpec, d_in: int) -> int:
    if spec.kind in ("dense", "conv2d"):
        return spec.out_dim
    return d_in


def check_stack(stack: Sequence[LayerSpec]):
    d = None
    for i, s in enumerate(stack):
        if s.kind in ("dense", "layernorm", "conv2d", "attention"):
            if d is not None and s.in_dim != d:
                raise ValueError(f"layer {i} ({s.kind}) expects width {s.in_dim}, previous gives {d}")
            d = output_dim(s, s.in_dim)


def stack_params(stack: Sequence[LayerSpec]) -> list[ParamSpec]:
    check_stack(stack)
    specs = []
    for i, s in enumerate(stack):
        specs += prefixed(str(i), layer_params(s))
    return specs


def init_stack(stack: Sequence[LayerSpec], seed: int | None = None) -> ParamStore:
    if seed is None:
        seed = stack[0].seed if stack else 0
    return ParamStore.build(stack_params(stack), seed)


def forward(stack: Sequence[LayerSpec], params: ParamStore, x, dtype=np.float64):
    """Run a sequential stack; returns ``(y, tape)`` with the tape ready for :func:`backward`."""
    tape = ad.Tape()
    bound = params.bind(tape, dtype)
    xv = tape.leaf(np.asarray(x, dtype=dtype))
    h = xv
    for i, s in enumerate(stack):
        h = apply_layer(s, bound.sub(str(i)), h)
    tape.inputs["x"] = xv
    tape.outputs["y"] = h
    tape.bound = bound
    tape.params = params
    return h.value, tape


def backward(tape: ad.Tape, dy):
    """Cotangents of ``x`` and of every parameter for the scalar ``<dy, y>``."""
    y = tape.outputs["y"]
    grads = tape.gradients([y], [dy])
    x = tape.inputs["x"]
    dx = grads[x.index]
    if dx is None:
        dx = np.zeros_like(x.value)
    return dx, tape.params.collect_grad(grads, tape.bound)
