"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .layers import LayerSpec, backward, forward
from .params import ParamStore


@dataclass
class GradReport:
    max_rel_error: float
    checked: int
    tol: float
    worst: str = ""

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def rel_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_scalar_fn(
    fn: Callable[[np.ndarray], float],
    grad: np.ndarray,
    x: np.ndarray,
    indices: Sequence[int],
    step: float = 1e-5,
    floor: float = 1e-6,
) -> tuple[float, int]:
    """Compare ``grad[i]`` with central differences of ``fn`` at ``x`` for each index."""
    worst, worst_i = 0.0, -1
    x = x.copy()
    for i in indices:
        old = x.flat[i]
        x.flat[i] = old + step
        fp = fn(x)
        x.flat[i] = old - step
        fm = fn(x)
        x.flat[i] = old
        fd = (fp - fm) / (2 * step)
        e = rel_error(grad.flat[i], fd, floor)
        if e > worst:
            worst, worst_i = e, i
    return worst, worst_i


def grad_check(
    stack: Sequence[LayerSpec],
    params: ParamStore,
    x: np.ndarray,
    tol: float = 1e-4,
    n_samples: int = 40,
    step: float = 1e-5,
    seed: int = 0,
) -> GradReport:
    """Analytic vs central-difference gradients of a random projection of the stack output.

    Checks a random subsample of parameter entries plus a subsample of input
    entries.  A stack with no parameters passes vacuously on the parameter side.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    y, tape = forward(stack, params, x)
    proj = rng.standard_normal(y.shape)
    dx, dparams = backward(tape, proj)

    def f_params(flat):
        ps = ParamStore(flat, params.table)
        return float(np.sum(forward(stack, ps, x)[0] * proj))

    def f_input(xx):
        return float(np.sum(forward(stack, params, xx)[0] * proj))

    worst, checked, where = 0.0, 0, ""
    if len(params):
        idx = rng.choice(len(params), size=min(n_samples, len(params)), replace=False)
        e, i = check_scalar_fn(f_params, dparams.flat, params.flat, idx, step)
        checked += len(idx)
        if e > worst:
            worst, where = e, f"param[{i}]"
    idx = rng.choice(x.size, size=min(n_samples, x.size), replace=False)
    e, i = check_scalar_fn(f_input, dx, x, idx, step)
    checked += len(idx)
    if e > worst:
        worst, where = e, f"input[{i}]"
    return GradReport(worst, checked, tol, where)
