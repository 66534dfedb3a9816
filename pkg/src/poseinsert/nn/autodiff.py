"""Tape-based reverse-mode differentiation over numpy arrays.

Every op computes its value eagerly and, when its inputs live on a tape,
appends a closure mapping the output cotangent to input cotangents.
``Tape.gradients`` replays the closures in reverse order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

# plain floats: numpy float64 scalars would promote float32 arrays
_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class StaleTapeError(RuntimeError):
    """The parameters a tape was recorded against have since been modified."""


class Var:
    __slots__ = ("value", "tape", "index", "requires_grad")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int, requires_grad: bool = True):
        self.value = value
        self.tape = tape
        self.index = index
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, index={self.index})"


class Tape:
    """Records ops for reverse replay; ``Tape(grad=False)`` only evaluates."""

    def __init__(self, grad: bool = True):
        self.grad = grad
        self._parents: list[tuple[int, ...]] = []
        self._backward: list[Callable | None] = []
        self.vars: list[Var] = []
        # (ParamStore, version) pairs checked before replay
        self.watch: list[tuple[object, int]] = []
        self.inputs: dict[str, Var] = {}
        self.outputs: dict[str, Var] = {}

    def leaf(self, value, requires_grad: bool = True) -> Var:
        return self._new(np.asarray(value), (), None, requires_grad)

    def const(self, value) -> Var:
        """Leaf that never receives a gradient (data, fixed embeddings)."""
        return self.leaf(value, requires_grad=False)

    def _new(self, value, parents, backward, requires_grad=True) -> Var:
        v = Var(value, self, len(self.vars), requires_grad)
        self.vars.append(v)
        self._parents.append(parents)
        self._backward.append(backward)
        return v

    def record(self, value, parents: Sequence[Var], backward: Callable) -> Var:
        if not self.grad or not any(p.requires_grad for p in parents):
            return self._new(value, (), None, False)
        return self._new(value, tuple(p.index for p in parents), backward)

    def gradients(self, outputs: Sequence[Var], cotangents: Sequence[np.ndarray]) -> list:
        """Cotangent for every node (``None`` where no gradient flows)."""
        for store, version in self.watch:
            if store.version != version:
                raise StaleTapeError("parameters changed after this tape was recorded")
        grads: list = [None] * len(self.vars)
        for out, ct in zip(outputs, cotangents):
            ct = np.asarray(ct, dtype=out.value.dtype).reshape(out.value.shape)
            grads[out.index] = ct if grads[out.index] is None else grads[out.index] + ct
        for i in range(len(self.vars) - 1, -1, -1):
            g = grads[i]
            fn = self._backward[i]
            if g is None or fn is None:
                continue
            for j, pg in zip(self._parents[i], fn(g)):
                if pg is None:
                    continue
                grads[j] = pg if grads[j] is None else grads[j] + pg
        return grads


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _lift(x, tape: Tape) -> Var:
    if isinstance(x, Var):
        return x
    return tape.const(np.asarray(x))


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    sa, sb = a.value.shape, b.value.shape
    return tape.record(
        a.value + b.value, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb))
    )


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    sa, sb = a.value.shape, b.value.shape
    return tape.record(
        a.value - b.value, (a, b), lambda g: (unbroadcast(g, sa), -unbroadcast(g, sb))
    )


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    return tape.record(
        av * bv,
        (a, b),
        lambda g: (unbroadcast(g * bv, av.shape), unbroadcast(g * av, bv.shape)),
    )


def scale(a: Var, c: float) -> Var:
    c = float(c)
    return a.tape.record(a.value * c, (a,), lambda g: (g * c,))


def relu(a: Var) -> Var:
    mask = a.value > 0
    return a.tape.record(a.value * mask, (a,), lambda g: (g * mask,))


def gelu(a: Var) -> Var:
    x = a.value
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    d = cdf + x * pdf
    return a.tape.record(x * cdf, (a,), lambda g: (g * d,))


def sigmoid(a: Var) -> Var:
    y = expit(a.value)
    return a.tape.record(y, (a,), lambda g: (g * y * (1.0 - y),))


def square(a: Var) -> Var:
    x = a.value
    return a.tape.record(x * x, (a,), lambda g: (2.0 * g * x,))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def mean(a: Var, axis=None, keepdims=False) -> Var:
    x = a.value
    y = x.mean(axis=axis, keepdims=keepdims)
    n = x.size // max(np.asarray(y).size, 1)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype, copy=True),)

    return a.tape.record(np.asarray(y), (a,), back)


def reshape(a: Var, shape) -> Var:
    s = a.value.shape
    return a.tape.record(a.value.reshape(shape), (a,), lambda g: (g.reshape(s),))


def swapaxes(a: Var, i: int, j: int) -> Var:
    return a.tape.record(np.swapaxes(a.value, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def transpose(a: Var, axes: Sequence[int]) -> Var:
    inv = np.argsort(axes)
    return a.tape.record(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    tape = _tape_of(*xs)
    xs = [_lift(x, tape) for x in xs]
    sizes = [x.value.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return tape.record(
        np.concatenate([x.value for x in xs], axis=axis),
        xs,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def split(a: Var, sizes: Sequence[int], axis: int = -1) -> list[Var]:
    out = []
    start = 0
    for n in sizes:
        out.append(take_slice(a, axis, start, start + n))
        start += n
    return out


def take_slice(a: Var, axis: int, start: int, stop: int) -> Var:
    x = a.value
    ax = axis % x.ndim
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)

    def back(g):
        full = np.zeros_like(x)
        full[idx] = g
        return (full,)

    return a.tape.record(x[idx], (a,), back)


def gather_rows(a: Var, index: np.ndarray) -> Var:
    """``a.value[index]`` along axis 0 (duplicates accumulate on the way back)."""
    x = a.value

    def back(g):
        full = np.zeros_like(x)
        np.add.at(full, index, g)
        return (full,)

    return a.tape.record(x[index], (a,), back)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value

    def back(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return unbroadcast(ga, av.shape), unbroadcast(gb, bv.shape)

    return tape.record(av @ bv, (a, b), back)


def linear(x: Var, W: Var, b: Var | None = None) -> Var:
    """``x @ W + b`` over the last axis, with ``x`` of any leading shape."""
    xv, Wv = x.value, W.value
    lead = xv.shape[:-1]
    x2 = xv.reshape(-1, xv.shape[-1])
    y = x2 @ Wv
    if b is not None:
        y = y + b.value

    def back(g):
        g2 = g.reshape(-1, Wv.shape[1])
        gx = (g2 @ Wv.T).reshape(xv.shape) if x.requires_grad else None
        gW = x2.T @ g2
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    parents = (x, W) if b is None else (x, W, b)
    return x.tape.record(y.reshape(lead + (Wv.shape[1],)), parents, back)


def softmax(a: Var, axis: int = -1) -> Var:
    x = a.value
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return a.tape.record(y, (a,), back)


def layernorm(x: Var, gamma: Var, beta: Var, eps: float = 1e-5) -> Var:
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gamma.value
    y = xhat * gv + beta.value

    def back(g):
        red = tuple(range(g.ndim - 1))
        dgamma = np.sum(g * xhat, axis=red)
        dbeta = np.sum(g, axis=red)
        dxhat = g * gv
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return x.tape.record(y, (x, gamma, beta), back)


def conv2d(x: Var, W: Var, b: Var | None, stride: int = 1, padding: int | None = None) -> Var:
    """NHWC convolution; ``W`` has shape ``(kh, kw, C_in, C_out)``."""
    xv, Wv = x.value, W.value
    B, H, Wd, C = xv.shape
    kh, kw, cin, cout = Wv.shape
    if cin != C:
        raise ValueError(f"conv2d expects {cin} input channels, got {C}")
    if padding is None:
        padding = kh // 2
    ph = pw = padding
    xp = np.pad(xv, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    Ho = (H + 2 * ph - kh) // stride + 1
    Wo = (Wd + 2 * pw - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    # (B, Ho, Wo, C, kh, kw) -> (B*Ho*Wo, kh*kw*C)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * Ho * Wo, kh * kw * C)
    Wm = Wv.reshape(kh * kw * C, cout)
    y = cols @ Wm
    if b is not None:
        y = y + b.value

    def back(g):
        g2 = g.reshape(B * Ho * Wo, cout)
        gW = (cols.T @ g2).reshape(Wv.shape)
        gx = None
        if x.requires_grad:
            dcols = (g2 @ Wm.T).reshape(B, Ho, Wo, kh, kw, C)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride, :] += dcols[
                        :, :, :, i, j, :
                    ]
            gx = dxp[:, ph : ph + H, pw : pw + Wd, :]
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    parents = (x, W) if b is None else (x, W, b)
    return x.tape.record(y.reshape(B, Ho, Wo, cout), parents, back)


def conv1d(x: Var, W: Var, b: Var | None, padding: int | None = None) -> Var:
    """``x`` is ``(B, L, C)``; ``W`` is ``(k, C_in, C_out)``; stride 1, 'same' padding."""
    B, L, C = x.value.shape
    k = W.value.shape[0]
    x4 = reshape(x, (B, 1, L, C))
    W4 = reshape(W, (1,) + W.value.shape)
    pad = k // 2 if padding is None else padding
    # height kernel is 1, so only width gets padded
    y = _conv2d_1d(x4, W4, b, pad)
    return reshape(y, (B, y.value.shape[2], y.value.shape[3]))


def _conv2d_1d(x4: Var, W4: Var, b, pad: int) -> Var:
    xv, Wv = x4.value, W4.value
    B, _, L, C = xv.shape
    _, k, cin, cout = Wv.shape
    xp = np.pad(xv[:, 0], ((0, 0), (pad, pad), (0, 0)))
    Lo = L + 2 * pad - k + 1
    win = sliding_window_view(xp, k, axis=1)[:, :Lo]  # (B, Lo, C, k)
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B * Lo, k * C)
    Wm = Wv.reshape(k * C, cout)
    y = cols @ Wm
    if b is not None:
        y = y + b.value

    def back(g):
        g2 = g.reshape(B * Lo, cout)
        gW = (cols.T @ g2).reshape(Wv.shape)
        gx = None
        if x4.requires_grad:
            dcols = (g2 @ Wm.T).reshape(B, Lo, k, C)
            dxp = np.zeros_like(xp)
            for i in range(k):
                dxp[:, i : i + Lo, :] += dcols[:, :, i, :]
            gx = dxp[:, pad : pad + L, :][:, None]
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    parents = (x4, W4) if b is None else (x4, W4, b)
    return x4.tape.record(y.reshape(B, 1, Lo, cout), parents, back)


def attention(x: Var, p: dict) -> Var:
    """Single-head scaled dot-product self-attention over ``x`` of shape ``(B, T, d)``."""
    q = linear(x, p["wq"], p["bq"])
    k = linear(x, p["wk"], p["bk"])
    v = linear(x, p["wv"], p["bv"])
    d = q.value.shape[-1]
    scores = scale(matmul(q, swapaxes(k, -1, -2)), 1.0 / np.sqrt(d))
    a = softmax(scores, axis=-1)
    o = matmul(a, v)
    return linear(o, p["wo"], p["bo"])


def mse(pred: Var, target: np.ndarray) -> Var:
    diff = sub(pred, target)
    return mean(square(diff))
