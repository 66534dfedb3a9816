"""Noise schedules, forward noising, the deterministic DDIM update, and the
1-D temporal convolution denoiser with FiLM conditioning.

Diffusion steps are indexed ``k = 1..K``; ``k = K`` is the noisiest.  The
denoiser predicts the clean chunk ``A^0`` directly (sample prediction).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import autodiff as ad
from .nn.layers import conv1d_params, dense, dense_params, layernorm, layernorm_params
from .nn.params import Bound, ParamSpec, prefixed


def _exact_complement(ab: float) -> tuple[float, float]:
    """``(ab', bh)`` with ``bh * bh + ab' == 1.0`` in float64.

    ``ab'`` is ``ab`` itself when a few-ulp nudge of ``sqrt(1 - ab)`` suffices;
    otherwise (only possible for ``ab < 0.5``) ``ab' = 1 - bh * bh``, which is
    exact by Sterbenz's lemma and moves ``ab`` by at most ~1e-16.
    """
    base = math.sqrt(1.0 - ab)
    cands = [base]
    up = down = base
    for _ in range(4):
        up, down = math.nextafter(up, 2.0), math.nextafter(down, -1.0)
        cands += [up, down]
    for bh in cands:
        if bh >= 0.0 and bh * bh + ab == 1.0:
            return ab, bh
    return 1.0 - base * base, base


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """``alpha_bar[k - 1]`` is the cumulative signal coefficient at step ``k``."""

    alpha_bar: np.ndarray
    kind: str = "custom"
    beta_hat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64).reshape(-1)
        if ab.size == 0:
            raise ValueError("schedule needs at least one step")
        if np.any(ab < 0) or np.any(ab > 1):
            raise ValueError("alpha_bar entries must lie in [0, 1]")
        if np.any(np.diff(ab) > 0):
            raise ValueError("alpha_bar must be non-increasing in k")
        pairs = [_exact_complement(float(a)) for a in ab]
        ab = np.array([a for a, _ in pairs])
        bh = np.array([b for _, b in pairs])
        ab.setflags(write=False)
        bh.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)
        object.__setattr__(self, "beta_hat", bh)

    @property
    def K(self) -> int:
        return self.alpha_bar.size

    def abar(self, k) -> np.ndarray:
        k = np.asarray(k)
        if np.any(k < 1) or np.any(k > self.K):
            raise ValueError(f"step index out of range [1, {self.K}]")
        return self.alpha_bar[k - 1]

    def timesteps(self, steps: int) -> np.ndarray:
        """Descending DDIM sub-sequence starting at ``K``."""
        if steps < 1:
            raise ValueError("DDIM needs at least one step")
        if steps > self.K:
            raise ValueError(f"{steps} sampling steps exceed the {self.K}-step schedule")
        ks = np.round(np.linspace(self.K, 1, steps)).astype(int)
        return ks


def make_schedule(K: int, kind: str = "cosine", s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """Squared-cosine or linear schedule with ``K`` steps."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if kind == "cosine":
        t = np.arange(K + 1) / K
        f = np.cos((t + s) / (1 + s) * np.pi / 2) ** 2
        betas = np.minimum(1.0 - f[1:] / f[:-1], max_beta)
    elif kind == "linear":
        # rescaled so the total noise does not depend on K
        sc = 1000.0 / K
        betas = np.minimum(np.linspace(sc * 1e-4, sc * 0.02, K), max_beta)
    else:
        raise ValueError(f"unknown schedule {kind!r}")
    return NoiseSchedule(np.cumprod(1.0 - betas), kind)


def add_noise(a0: np.ndarray, k, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """``sqrt(abar_k) a0 + sqrt(1 - abar_k) eps``; ``k`` may be per batch element."""
    a0 = np.asarray(a0)
    eps = np.asarray(eps)
    if a0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} differs from sample shape {a0.shape}")
    ab = sched.abar(k)
    bh = sched.beta_hat[np.asarray(k) - 1]
    shape = np.shape(ab) + (1,) * (a0.ndim - np.ndim(ab))
    return np.sqrt(np.reshape(ab, shape)) * a0 + np.reshape(bh, shape) * eps


def ddim_update(x_k: np.ndarray, a0_hat: np.ndarray, abar_k: float, abar_prev: float) -> np.ndarray:
    """One deterministic (eta = 0) DDIM step from a sample prediction."""
    if abar_prev >= 1.0:
        return np.array(a0_hat, copy=True)
    eps_hat = (x_k - np.sqrt(abar_k) * a0_hat) / np.sqrt(1.0 - abar_k)
    return np.sqrt(abar_prev) * a0_hat + np.sqrt(1.0 - abar_prev) * eps_hat


def sinusoidal_embedding(k: np.ndarray, dim: int) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = k * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass(frozen=True)
class DenoiserConfig:
    channels: int = 64
    n_blocks: int = 3
    kernel: int = 3
    k_embed: int = 32
    action_dim: int = 9
    # fixed sinusoidal features of the chunk index, appended to the input
    # channels; without them the convolutions only see position via padding
    pos_dim: int = 8

    def to_dict(self):
        return asdict(self)


class TemporalDenoiser:
    """Residual 1-D conv blocks over the action chunk, each FiLM-modulated by
    the observation feature and the step embedding."""

    def __init__(self, cfg: DenoiserConfig, cond_dim: int):
        self.cfg = cfg
        self.cond_dim = cond_dim

    def param_specs(self) -> list[ParamSpec]:
        c = self.cfg
        C = c.channels
        d_cond = self.cond_dim + C
        specs = prefixed("kemb0", dense_params(c.k_embed, C)) + prefixed("kemb1", dense_params(C, C))
        specs += prefixed("inp", conv1d_params(c.action_dim + c.pos_dim, C, c.kernel))
        for i in range(c.n_blocks):
            specs += prefixed(f"b{i}.conv0", conv1d_params(C, C, c.kernel))
            specs += prefixed(f"b{i}.norm0", layernorm_params(C))
            specs += prefixed(f"b{i}.film", dense_params(d_cond, 2 * C))
            specs += prefixed(f"b{i}.conv1", conv1d_params(C, C, c.kernel))
            specs += prefixed(f"b{i}.norm1", layernorm_params(C))
        specs += prefixed("out_norm", layernorm_params(C))
        specs += prefixed("out", conv1d_params(C, c.action_dim, 1))
        return specs

    def __call__(self, p: Bound, x: ad.Var, k: np.ndarray, cond: ad.Var) -> ad.Var:
        """``x``: ``(B, h, 9)`` noisy chunk; ``k``: ``(B,)``; ``cond``: ``(B, cond_dim)``."""
        c = self.cfg
        C = c.channels
        B = x.value.shape[0]
        kemb = x.tape.const(sinusoidal_embedding(k, c.k_embed).astype(x.value.dtype))
        kemb = dense(p.sub("kemb1"), ad.gelu(dense(p.sub("kemb0"), kemb)))
        ctx = ad.concat([cond, kemb], axis=-1)
        if c.pos_dim:
            h_len = x.value.shape[1]
            pos = np.broadcast_to(sinusoidal_embedding(np.arange(h_len), c.pos_dim), (B, h_len, c.pos_dim))
            x = ad.concat([x, x.tape.const(pos.astype(x.value.dtype))], axis=-1)
        h = ad.conv1d(x, p["inp.w"], p["inp.b"])
        for i in range(c.n_blocks):
            q = p.sub(f"b{i}")
            r = ad.gelu(layernorm(q.sub("norm0"), ad.conv1d(h, q["conv0.w"], q["conv0.b"])))
            film = ad.reshape(dense(q.sub("film"), ctx), (B, 1, 2 * C))
            gamma, beta = ad.split(film, [C, C], axis=-1)
            r = ad.add(ad.add(r, ad.mul(r, gamma)), beta)
            r = ad.gelu(layernorm(q.sub("norm1"), ad.conv1d(r, q["conv1.w"], q["conv1.b"])))
            h = ad.add(h, r)
        h = layernorm(p.sub("out_norm"), h)
        return ad.conv1d(h, p["out.w"], p["out.b"])
