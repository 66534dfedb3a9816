"""Conditional diffusion policy over relative-pose action chunks.

Variants:

============  ==============  ===========  =========
variant       pose encoder    image        fusion
============  ==============  ===========  =========
posedp-mlp    MLP             no           -
posedp-dpe    disentangled    no           -
rpdp-cat      disentangled    goal-cond.   concat
rpdp-prgf     disentangled    goal-cond.   gated
============  ==============  ===========  =========
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .diffusion import DenoiserConfig, TemporalDenoiser, add_noise, ddim_update, make_schedule
from .fusion import Fusion, FusionConfig
from .nn import autodiff as ad
from .nn.optim import AdamW, cosine_lr
from .nn.params import ParamStore, prefixed
from .pose_encoder import DPEConfig, PoseEncoder
from .rgbd_encoder import GIEConfig, GoalImageEncoder

log = logging.getLogger(__name__)

VARIANTS = ("posedp-mlp", "posedp-dpe", "rpdp-cat", "rpdp-prgf")


@dataclass(frozen=True)
class PolicyConfig:
    variant: str = "posedp-dpe"
    horizon: int = 16
    exec_steps: int = 8
    K: int = 100
    schedule: str = "cosine"
    infer_steps: int = 16
    pose: DPEConfig = field(default_factory=DPEConfig)
    image: GIEConfig = field(default_factory=GIEConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    dtype: str = "float32"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        mode = "mlp" if self.variant == "posedp-mlp" else "dpe"
        if self.pose.mode != mode:
            object.__setattr__(self, "pose", replace(self.pose, mode=mode))
        if not 1 <= self.exec_steps <= self.horizon:
            raise ValueError("exec_steps must lie in [1, horizon]")

    @property
    def uses_image(self) -> bool:
        return self.variant.startswith("rpdp")

    @property
    def fusion(self) -> FusionConfig | None:
        if not self.uses_image:
            return None
        mode = "prgf" if self.variant == "rpdp-prgf" else "concat"
        return FusionConfig(mode=mode, d_img=self.image.d_img, dim=self.pose.feature_dim)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        d = dict(d)
        d["pose"] = DPEConfig(**d["pose"])
        img = dict(d["image"])
        img["trunk_channels"] = tuple(img["trunk_channels"])
        d["image"] = GIEConfig(**img)
        d["denoiser"] = DenoiserConfig(**d["denoiser"])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 80
    lr: float = 3e-4
    weight_decay: float = 1e-2
    lr_schedule: str = "cosine"
    warmup_steps: int = 0
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class Batch:
    """Normalized training tensors.

    ``obs``: ``(B, 9)``; ``actions``: ``(B, h, 9)``; ``current``: ``(B, S, S, 4)``
    patches or ``None``; ``goals``: ``(G, S, S, 4)``; ``goal_index``: ``(B,)``.
    """

    obs: np.ndarray
    actions: np.ndarray
    current: np.ndarray | None = None
    goals: np.ndarray | None = None
    goal_index: np.ndarray | None = None

    def __len__(self):
        return self.obs.shape[0]

    def take(self, idx: np.ndarray) -> "Batch":
        if self.current is None:
            return Batch(self.obs[idx], self.actions[idx])
        gi = self.goal_index[idx]
        used, remap = np.unique(gi, return_inverse=True)
        return Batch(self.obs[idx], self.actions[idx], self.current[idx], self.goals[used], remap)


class Policy:
    def __init__(self, cfg: PolicyConfig):
        self.cfg = cfg
        self.pose_encoder = PoseEncoder(cfg.pose)
        self.image_encoder = GoalImageEncoder(cfg.image) if cfg.uses_image else None
        self.fusion = Fusion(cfg.fusion) if cfg.uses_image else None
        self.denoiser = TemporalDenoiser(cfg.denoiser, cfg.pose.feature_dim)
        self.schedule = make_schedule(cfg.K, cfg.schedule)
        self.dtype = np.dtype(cfg.dtype)

    def param_specs(self):
        specs = prefixed("pose", self.pose_encoder.param_specs())
        if self.cfg.uses_image:
            specs += prefixed("img", self.image_encoder.param_specs())
            specs += prefixed("fuse", self.fusion.param_specs())
        specs += prefixed("den", self.denoiser.param_specs())
        return specs

    def init_params(self, seed: int = 0) -> ParamStore:
        return ParamStore.build(self.param_specs(), seed)

    # -- graph pieces -----------------------------------------------------

    def condition(self, p, tape: ad.Tape, batch: Batch, trace: dict | None = None) -> ad.Var:
        obs = tape.const(np.asarray(batch.obs, dtype=self.dtype))
        f_pose = self.pose_encoder(p.sub("pose"), obs)
        if not self.cfg.uses_image:
            return f_pose
        if batch.current is None:
            raise ValueError(f"{self.cfg.variant} needs RGBD patches")
        enc = self.image_encoder
        cur = tape.const(enc.prepare(batch.current, self.dtype))
        goal = tape.const(enc.prepare(batch.goals, self.dtype))
        f_img = enc(p.sub("img"), cur, goal, batch.goal_index)
        return self.fusion(p.sub("fuse"), f_pose, f_img, trace)

    def loss_and_grad(
        self, params: ParamStore, batch: Batch, k: np.ndarray, eps: np.ndarray, grad: bool = True
    ):
        """Sample-prediction MSE for fixed step indices and noise."""
        tape = ad.Tape(grad=grad)
        p = params.bind(tape, self.dtype)
        a0 = np.asarray(batch.actions, dtype=np.float64)
        x_k = add_noise(a0, k, eps, self.schedule).astype(self.dtype)
        cond = self.condition(p, tape, batch)
        pred = self.denoiser(p.sub("den"), tape.const(x_k), k, cond)
        loss = ad.mse(pred, a0.astype(self.dtype))
        if not grad:
            return float(loss.value), None
        grads = tape.gradients([loss], [np.ones((), dtype=self.dtype)])
        return float(loss.value), params.collect_grad(grads, p)

    def draw_noise(self, rng: np.random.Generator, n: int):
        k = rng.integers(1, self.cfg.K + 1, size=n)
        eps = rng.standard_normal((n, self.cfg.horizon, self.cfg.denoiser.action_dim))
        return k, eps

    def training_loss(self, params: ParamStore, batch: Batch, rng: np.random.Generator) -> float:
        if len(batch) == 0:
            raise ValueError("empty batch")
        k, eps = self.draw_noise(rng, len(batch))
        return self.loss_and_grad(params, batch, k, eps, grad=False)[0]

    def predict_clean(self, params: ParamStore, batch: Batch, x_k: np.ndarray, k: np.ndarray, trace=None):
        tape = ad.Tape(grad=False)
        p = params.bind(tape, self.dtype)
        cond = self.condition(p, tape, batch, trace)
        return self.denoiser(p.sub("den"), tape.const(x_k.astype(self.dtype)), k, cond).value

    def sample(
        self, params: ParamStore, batch: Batch, seed: int = 0, steps: int | None = None, trace: dict | None = None
    ) -> np.ndarray:
        """Deterministic DDIM sampling; the initial Gaussian draw is the only randomness."""
        steps = self.cfg.infer_steps if steps is None else steps
        ks = self.schedule.timesteps(steps)
        n = len(batch)
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, self.cfg.horizon, self.cfg.denoiser.action_dim))
        tape = ad.Tape(grad=False)
        p = params.bind(tape, self.dtype)
        cond = self.condition(p, tape, batch, trace)
        den = p.sub("den")
        for i, k in enumerate(ks):
            a0_hat = self.denoiser(den, tape.const(x.astype(self.dtype)), np.full(n, k), cond).value
            a0_hat = a0_hat.astype(np.float64)
            ab_prev = 1.0 if i + 1 == len(ks) else float(self.schedule.abar(ks[i + 1]))
            x = ddim_update(x, a0_hat, float(self.schedule.abar(k)), ab_prev)
        return x


def train(
    data: Batch,
    cfg: PolicyConfig,
    tcfg: TrainConfig = TrainConfig(),
    params: ParamStore | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> tuple[ParamStore, list[tuple[int, float]]]:
    """Minibatch AdamW on the sample-prediction loss.  Returns params and (epoch, mean loss) history."""
    if len(data) == 0:
        raise ValueError("no training samples")
    if data.actions.shape[1] != cfg.horizon:
        raise ValueError(f"dataset horizon {data.actions.shape[1]} differs from policy horizon {cfg.horizon}")
    if cfg.uses_image and data.current is None:
        raise ValueError(f"{cfg.variant} needs a dataset with RGBD patches")
    policy = Policy(cfg)
    if params is None:
        params = policy.init_params(tcfg.seed)
    opt = AdamW(params, lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    rng = np.random.default_rng([tcfg.seed, 1])
    n = len(data)
    per_epoch = -(-n // tcfg.batch_size)
    total = per_epoch * tcfg.epochs
    history = []
    step = 0
    t0 = time.perf_counter()
    for epoch in range(tcfg.epochs):
        order = rng.permutation(n)
        losses = []
        for s in range(per_epoch):
            idx = order[s * tcfg.batch_size : (s + 1) * tcfg.batch_size]
            batch = data.take(idx)
            k, eps = policy.draw_noise(rng, len(idx))
            loss, grad = policy.loss_and_grad(params, batch, k, eps)
            if tcfg.lr_schedule == "cosine":
                lr = cosine_lr(tcfg.lr, step, total, tcfg.warmup_steps)
            else:
                lr = tcfg.lr
            opt.step(grad.flat, lr)
            losses.append(loss * len(idx))
            step += 1
        mean_loss = float(np.sum(losses) / n)
        history.append((epoch, mean_loss))
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
        if epoch % 100 == 0 or epoch + 1 == tcfg.epochs:
            log.info("epoch %d loss %.6f (%.1fs)", epoch, mean_loss, time.perf_counter() - t0)
    return params, history


def grad_check_policy(
    cfg: PolicyConfig, batch: Batch, seed: int = 0, n_samples: int = 40, step: float = 1e-5
):
    """Central-difference check of the training loss gradient, in float64.

    Samples ``n_samples`` parameter entries at random, with every parameter
    tensor represented at least once.
    """
    from .nn.gradcheck import GradReport, check_scalar_fn

    cfg = replace(cfg, dtype="float64")
    pol = Policy(cfg)
    params = pol.init_params(seed)
    rng = np.random.default_rng([seed, 3])
    # move zero-initialized biases and unit gains off their special values
    params.assign(params.flat + 0.05 * rng.standard_normal(len(params)))
    k, eps = pol.draw_noise(rng, len(batch))
    _, grad = pol.loss_and_grad(params, batch, k, eps)

    def f(flat):
        return pol.loss_and_grad(ParamStore(flat, params.table), batch, k, eps, grad=False)[0]

    firsts = [off + int(rng.integers(0, max(int(np.prod(s)), 1))) for off, s in params.table.values()]
    extra = rng.choice(len(params), size=max(n_samples - len(firsts), 0), replace=False)
    idx = np.unique(np.concatenate([firsts, extra]).astype(int))
    worst, i = check_scalar_fn(f, grad.flat, params.flat, idx, step)
    name = next(n for n, (o, s) in params.table.items() if o <= i < o + int(np.prod(s)))
    return GradReport(worst, len(idx), 1e-4, name)
