"""Flat parameter storage with a named offset table."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .autodiff import Tape, Var


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    init: str = "glorot"  # glorot | zeros | ones | normal
    fan: tuple[int, int] | None = None  # (fan_in, fan_out) for glorot

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


def _init_values(spec: ParamSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.init == "zeros":
        return np.zeros(spec.size)
    if spec.init == "ones":
        return np.ones(spec.size)
    if spec.init == "normal":
        return rng.normal(0.0, 0.02, spec.size)
    if spec.init == "glorot":
        fan_in, fan_out = spec.fan or (spec.shape[0], spec.shape[-1])
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, spec.size)
    raise ValueError(f"unknown initializer {spec.init!r}")


@dataclass
class ParamStore:
    """All learnable parameters in one float64 vector.

    ``table`` maps each parameter name to ``(offset, shape)``; its insertion
    order is the layout order.  ``version`` is bumped by every in-place update
    so that tapes recorded against older values can be detected.
    """

    flat: np.ndarray
    table: dict[str, tuple[int, tuple[int, ...]]]
    version: int = field(default=0)

    @classmethod
    def build(cls, specs: Iterable[ParamSpec], seed: int = 0) -> "ParamStore":
        specs = list(specs)
        table = {}
        offset = 0
        for s in specs:
            if s.name in table:
                raise ValueError(f"duplicate parameter name {s.name!r}")
            table[s.name] = (offset, tuple(s.shape))
            offset += s.size
        flat = np.zeros(offset)
        # one child stream per parameter keeps values stable when specs are appended
        for s in specs:
            child = np.random.default_rng([seed, _name_key(s.name)])
            off, _ = table[s.name]
            flat[off : off + s.size] = _init_values(s, child)
        return cls(flat, table)

    def __len__(self):
        return self.flat.size

    def __getitem__(self, name: str) -> np.ndarray:
        off, shape = self.table[name]
        n = int(np.prod(shape, dtype=np.int64))
        return self.flat[off : off + n].reshape(shape)

    def __setitem__(self, name: str, value):
        self[name][...] = value
        self.version += 1

    def names(self) -> list[str]:
        return list(self.table)

    def counts(self) -> dict[str, int]:
        return {k: int(np.prod(s, dtype=np.int64)) for k, (_, s) in self.table.items()}

    def zeros_like(self) -> "ParamStore":
        return ParamStore(np.zeros_like(self.flat), dict(self.table))

    def copy(self) -> "ParamStore":
        return ParamStore(self.flat.copy(), dict(self.table), self.version)

    def assign(self, flat: np.ndarray):
        self.flat[...] = flat
        self.version += 1

    def layout_hash(self) -> str:
        text = json.dumps([[k, o, list(s)] for k, (o, s) in self.table.items()])
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def bind(self, tape: Tape, dtype=np.float64) -> "Bound":
        tape.watch.append((self, self.version))
        vars_ = {k: tape.leaf(self[k].astype(dtype, copy=True)) for k in self.table}
        return Bound(vars_)

    def collect_grad(self, tape_grads: list, bound: "Bound") -> "ParamStore":
        g = np.zeros_like(self.flat)
        for name, v in bound.vars.items():
            gv = tape_grads[v.index]
            if gv is not None:
                off, shape = self.table[name]
                g[off : off + gv.size] = np.asarray(gv, dtype=np.float64).reshape(-1)
        return ParamStore(g, dict(self.table))


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")


class Bound:
    """Parameter variables on a tape, addressable through dotted prefixes."""

    def __init__(self, vars_: dict[str, Var], prefix: str = ""):
        self.vars = vars_
        self.prefix = prefix

    def __getitem__(self, name: str) -> Var:
        return self.vars[self.prefix + name]

    def __contains__(self, name: str) -> bool:
        return (self.prefix + name) in self.vars

    def sub(self, prefix: str) -> "Bound":
        return Bound(self.vars, self.prefix + prefix + ".")


def prefixed(prefix: str, specs: Iterable[ParamSpec]) -> list[ParamSpec]:
    return [ParamSpec(f"{prefix}.{s.name}", s.shape, s.init, s.fan) for s in specs]
