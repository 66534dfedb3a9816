"""Goal-conditioned RGBD patch encoder and the cropping utilities that feed it.

Images are ``(H, W, 4)`` float arrays, channels ``R, G, B, depth`` with RGB in
``[0, 1]`` and depth in meters.  Pixel ``(row i, col j)`` covers the square
``[j, j+1) x [i, i+1)`` in image coordinates, so a box spanning a whole
``W x H`` frame is ``BBox(0, 0, W, H)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nn import autodiff as ad
from .nn.layers import conv2d_params, dense, dense_params, layernorm, layernorm_params
from .nn.params import Bound, ParamSpec, ParamStore, prefixed


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"inverted box {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def clamp(self, width: float, height: float) -> "BBox":
        x1 = min(max(self.x1, 0.0), width)
        x2 = min(max(self.x2, 0.0), width)
        y1 = min(max(self.y1, 0.0), height)
        y2 = min(max(self.y2, 0.0), height)
        return BBox(x1, y1, x2, y2)

    def as_tuple(self):
        return (self.x1, self.y1, self.x2, self.y2)


def union_bbox(b_s: BBox, b_t: BBox) -> BBox:
    xs = (b_s.x1, b_s.x2, b_t.x1, b_t.x2)
    ys = (b_s.y1, b_s.y2, b_t.y1, b_t.y2)
    return BBox(min(xs), min(ys), max(xs), max(ys))


def sample_coords(box: BBox, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Continuous image coordinates of the output pixel centers."""
    u = (np.arange(size) + 0.5) / size
    return box.x1 + u * box.width, box.y1 + u * box.height


def crop_and_resize(image: np.ndarray, box: BBox, size: int) -> np.ndarray:
    """Square ``size x size`` patch; bilinear on RGB, nearest-neighbour on depth."""
    H, W = image.shape[:2]
    box = box.clamp(W, H)
    if box.width <= 0 or box.height <= 0:
        raise ValueError(f"zero-area crop box {box}")
    xs, ys = sample_coords(box, size)
    out = np.empty((size, size, image.shape[2]), dtype=image.dtype)

    # bilinear: pixel centers sit at integer + 0.5
    fx, fy = xs - 0.5, ys - 0.5
    x0 = np.clip(np.floor(fx).astype(int), 0, W - 1)
    y0 = np.clip(np.floor(fy).astype(int), 0, H - 1)
    x1 = np.clip(x0 + 1, 0, W - 1)
    y1 = np.clip(y0 + 1, 0, H - 1)
    wx = np.clip(fx - x0, 0.0, 1.0)[None, :, None]
    wy = np.clip(fy - y0, 0.0, 1.0)[:, None, None]
    rgb = image[..., :3]
    top = rgb[y0][:, x0] * (1 - wx) + rgb[y0][:, x1] * wx
    bot = rgb[y1][:, x0] * (1 - wx) + rgb[y1][:, x1] * wx
    out[..., :3] = top * (1 - wy) + bot * wy

    xn = np.clip(np.floor(xs).astype(int), 0, W - 1)
    yn = np.clip(np.floor(ys).astype(int), 0, H - 1)
    out[..., 3] = image[yn][:, xn, 3]
    return out


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GIEConfig:
    patch_size: int = 64
    trunk_channels: tuple[int, int] = (8, 16)
    fused_channels: int = 32
    # stride of the conv that merges the concatenated maps
    fuse_stride: int = 2
    n_res: int = 2
    token_patch: int = 4
    token_dim: int = 64
    d_img: int = 1200
    depth_scale: float = 1.0

    def to_dict(self):
        return asdict(self)

    @property
    def map_size(self) -> int:
        return self.patch_size // 4 // self.fuse_stride

    @property
    def n_tokens(self) -> int:
        return (self.map_size // self.token_patch) ** 2


class GoalImageEncoder:
    def __init__(self, cfg: GIEConfig = GIEConfig()):
        if cfg.patch_size % (4 * cfg.fuse_stride * cfg.token_patch):
            raise ValueError("patch_size must be divisible by 4 * fuse_stride * token_patch")
        self.cfg = cfg

    def param_specs(self) -> list[ParamSpec]:
        c = self.cfg
        c1, c2 = c.trunk_channels
        F = c.fused_channels
        specs = prefixed("trunk0", conv2d_params(4, c1, 3)) + prefixed("trunk1", conv2d_params(c1, c2, 3))
        specs += prefixed("fuse", conv2d_params(2 * c2, F, 3))
        for i in range(c.n_res):
            specs += prefixed(f"res{i}a", conv2d_params(F, F, 3))
            specs += prefixed(f"res{i}b", conv2d_params(F, F, 3))
        specs += prefixed("tok", dense_params(F * c.token_patch**2, c.token_dim))
        specs.append(ParamSpec("pos", (c.n_tokens, c.token_dim), "normal"))
        specs += prefixed("tok_norm", layernorm_params(c.token_dim))
        specs += prefixed("tok_mlp", dense_params(c.token_dim, c.token_dim))
        specs += prefixed("out", dense_params(c.token_dim, c.d_img))
        return specs

    def prepare(self, patches: np.ndarray, dtype=np.float64) -> np.ndarray:
        """Scale the depth channel; input ``(..., S, S, 4)``."""
        x = np.array(patches, dtype=dtype)
        x[..., 3] /= self.cfg.depth_scale
        return x

    def trunk(self, p: Bound, x: ad.Var) -> ad.Var:
        h = ad.relu(ad.conv2d(x, p["trunk0.w"], p["trunk0.b"], stride=2))
        return ad.relu(ad.conv2d(h, p["trunk1.w"], p["trunk1.b"], stride=2))

    def __call__(
        self,
        p: Bound,
        current: ad.Var,
        goal: ad.Var,
        goal_index: np.ndarray | None = None,
        trace: dict | None = None,
    ) -> ad.Var:
        """Encode ``current`` ``(B, S, S, 4)`` against ``goal`` ``(G, S, S, 4)``.

        ``goal_index[b]`` selects the goal patch for batch element ``b``; when
        omitted, ``goal`` must be batch-aligned with ``current``.  The trunk
        runs once per distinct goal patch.
        """
        c = self.cfg
        S = c.patch_size
        if current.value.shape[1:] != (S, S, 4) or goal.value.shape[1:] != (S, S, 4):
            raise ValueError(
                f"patches must be ({S}, {S}, 4); got {current.value.shape[1:]} and {goal.value.shape[1:]}"
            )
        B = current.value.shape[0]
        if goal_index is None and goal.value.shape[0] != B:
            raise ValueError("current and goal batches differ in size")
        fc = self.trunk(p, current)
        fg = self.trunk(p, goal)
        if goal_index is not None:
            fg = ad.gather_rows(fg, np.asarray(goal_index))
        if trace is not None:
            trace["trunk_current"], trace["trunk_goal"] = fc.value, fg.value
        h = ad.concat([fc, fg], axis=-1)
        h = ad.relu(ad.conv2d(h, p["fuse.w"], p["fuse.b"], stride=c.fuse_stride))
        for i in range(c.n_res):
            r = ad.relu(ad.conv2d(h, p[f"res{i}a.w"], p[f"res{i}a.b"]))
            r = ad.conv2d(r, p[f"res{i}b.w"], p[f"res{i}b.b"])
            h = ad.relu(ad.add(h, r))
        # (B, M, M, F) -> (B, T, P*P*F) patch tokens
        M, P, F = c.map_size, c.token_patch, c.fused_channels
        n = M // P
        t = ad.reshape(h, (B, n, P, n, P, F))
        t = ad.transpose(t, (0, 1, 3, 2, 4, 5))
        t = ad.reshape(t, (B, n * n, P * P * F))
        t = ad.add(dense(p.sub("tok"), t), p["pos"])
        t = ad.gelu(dense(p.sub("tok_mlp"), layernorm(p.sub("tok_norm"), t)))
        pooled = ad.mean(t, axis=1)
        return dense(p.sub("out"), pooled)


def encode_goal_conditioned(
    current: np.ndarray, goal: np.ndarray, params: ParamStore, cfg: GIEConfig = GIEConfig(), trace=None
) -> np.ndarray:
    """Image feature for one ``(S, S, 4)`` pair or batch-aligned ``(B, S, S, 4)`` pairs."""
    current = np.asarray(current)
    goal = np.asarray(goal)
    if current.shape != goal.shape:
        raise ValueError(f"current {current.shape} and goal {goal.shape} patches differ in shape")
    single = current.ndim == 3
    enc = GoalImageEncoder(cfg)
    tape = ad.Tape()
    bound = params.bind(tape)
    cur = tape.leaf(enc.prepare(current[None] if single else current))
    gol = tape.leaf(enc.prepare(goal[None] if single else goal))
    out = enc(bound, cur, gol, trace=trace).value
    return out[0] if single else out


def init_image_encoder(cfg: GIEConfig = GIEConfig(), seed: int = 0) -> ParamStore:
    return ParamStore.build(GoalImageEncoder(cfg).param_specs(), seed)
