"""Synthetic top-down RGBD rendering of the socket and peg.

The camera is orthographic and looks straight down; image column ``u`` grows
with base ``x`` and row ``v`` grows with ``-y``.  Surfaces are flat-shaded
boxes: the table, the socket block with its rectangular hole, and the peg's
top face.  RGB is box-filtered over ``ss x ss`` sub-samples per pixel; depth
(meters along the optical axis) is sampled at pixel centers.
"""

from __future__ import annotations

import math

import numpy as np

from ..rgbd_encoder import BBox, union_bbox
from .core import SimState
from .task import TaskSpec

TABLE_RGB = np.array([0.85, 0.84, 0.78])
SOCKET_RGB = np.array([0.42, 0.48, 0.58])
HOLE_RGB = np.array([0.08, 0.08, 0.12])
PEG_RGB = np.array([0.82, 0.26, 0.2])

SUPERSAMPLE = 4


def to_image(spec: TaskSpec, X, Y):
    c = spec.frame_size / 2.0
    return c + spec.px_per_mm * (np.asarray(X) - spec.region_x), c - spec.px_per_mm * (np.asarray(Y) - spec.region_y)


def to_base(spec: TaskSpec, u, v):
    c = spec.frame_size / 2.0
    return spec.region_x + (np.asarray(u) - c) / spec.px_per_mm, spec.region_y - (np.asarray(v) - c) / spec.px_per_mm


def _rect_box(spec, cx, cy, yaw, hx, hy) -> BBox:
    c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
    ex, ey = hx * c + hy * s, hx * s + hy * c
    u, v = to_image(spec, [cx - ex, cx + ex], [cy + ey, cy - ey])
    return BBox(float(u[0]), float(v[0]), float(u[1]), float(v[1]))


def _peg_xy_yaw(state: SimState):
    t = state.t_b_s
    yaw = math.atan2(t.rotation[1, 0], t.rotation[0, 0])
    return float(t.translation[0]), float(t.translation[1]), yaw


def object_boxes(state: SimState, spec: TaskSpec) -> tuple[BBox, BBox]:
    """Image-space boxes of the peg (source) and socket (target)."""
    tx, ty = state.t_b_t.translation[:2]
    tyaw = math.atan2(state.t_b_t.rotation[1, 0], state.t_b_t.rotation[0, 0])
    px, py, pyaw = _peg_xy_yaw(state)
    b_s = _rect_box(spec, px, py, pyaw, spec.peg_half_x, spec.peg_half_y)
    b_t = _rect_box(spec, float(tx), float(ty), tyaw, spec.socket_half_x, spec.socket_half_y)
    return b_s, b_t


def crop_box(state: SimState, spec: TaskSpec) -> BBox:
    """Union of the two object boxes, grown by the margin and squared about its center."""
    b = union_bbox(*object_boxes(state, spec))
    half = 0.5 * max(b.width, b.height) * (1.0 + spec.crop_margin)
    cx, cy = 0.5 * (b.x1 + b.x2), 0.5 * (b.y1 + b.y2)
    return BBox(cx - half, cy - half, cx + half, cy + half)


def surfaces(state: SimState, spec: TaskSpec, X: np.ndarray, Y: np.ndarray):
    """Top surface height (mm, base z) and label at base points: 0 table, 1 socket, 2 hole, 3 peg."""
    R = state.t_b_t.rotation
    d0 = X - state.t_b_t.translation[0]
    d1 = Y - state.t_b_t.translation[1]
    lx = R[0, 0] * d0 + R[1, 0] * d1
    ly = R[0, 1] * d0 + R[1, 1] * d1
    in_socket = (np.abs(lx) <= spec.socket_half_x) & (np.abs(ly) <= spec.socket_half_y)
    in_hole = (np.abs(lx) < spec.hole_half_x) & (np.abs(ly) < spec.hole_half_y)

    px, py, pyaw = _peg_xy_yaw(state)
    c, s = math.cos(pyaw), math.sin(pyaw)
    e0, e1 = X - px, Y - py
    qx = c * e0 + s * e1
    qy = -s * e0 + c * e1
    in_peg = (np.abs(qx) <= spec.peg_half_x) & (np.abs(qy) <= spec.peg_half_y)

    top = spec.socket_height
    label = np.zeros(X.shape, dtype=np.int8)
    height = np.zeros(X.shape)
    label[in_socket] = 1
    height[in_socket] = top
    hole = in_socket & in_hole
    label[hole] = 2
    height[hole] = top - spec.hole_depth
    peg_top = float(state.t_b_s.translation[2]) + spec.peg_length
    label[in_peg] = 3
    height[in_peg] = peg_top
    return height, label


_PALETTE = np.stack([TABLE_RGB, SOCKET_RGB, HOLE_RGB, PEG_RGB])


def render_box(state: SimState, spec: TaskSpec, box: BBox, size: int, ss: int = SUPERSAMPLE) -> np.ndarray:
    """Render the image region ``box`` (pixel coordinates) at ``size x size``."""
    if box.width <= 0 or box.height <= 0:
        raise ValueError(f"zero-area render box {box}")
    out = np.empty((size, size, 4), dtype=np.float32)
    # RGB: ss x ss sub-samples per output pixel
    f = (np.arange(size * ss) + 0.5) / (size * ss)
    u, v = box.x1 + f * box.width, box.y1 + f * box.height
    X, Y = to_base(spec, u[None, :], v[:, None])
    X, Y = np.broadcast_arrays(X, Y)
    _, lab = surfaces(state, spec, X, Y)
    rgb = _PALETTE[lab].reshape(size, ss, size, ss, 3).mean(axis=(1, 3))
    out[..., :3] = rgb
    # depth: pixel centers
    g = (np.arange(size) + 0.5) / size
    X, Y = to_base(spec, (box.x1 + g * box.width)[None, :], (box.y1 + g * box.height)[:, None])
    X, Y = np.broadcast_arrays(X, Y)
    h, _ = surfaces(state, spec, X, Y)
    out[..., 3] = (spec.camera_height - h) / 1000.0
    return out


def render_patch(state: SimState, spec: TaskSpec) -> tuple[np.ndarray, BBox]:
    """Patch over the union box at ``spec.patch_size``, plus the box used."""
    box = crop_box(state, spec)
    return render_box(state, spec, box, spec.patch_size), box


def render_frame(state: SimState, spec: TaskSpec, ss: int = 1) -> np.ndarray:
    """Full camera frame ``(frame_size, frame_size, 4)``."""
    F = spec.frame_size
    return render_box(state, spec, BBox(0, 0, F, F), F, ss)


def render_goal(state: SimState, spec: TaskSpec) -> np.ndarray:
    """Patch of the same scene with the peg fully inserted."""
    return render_patch(state.inserted(spec), spec)[0]
