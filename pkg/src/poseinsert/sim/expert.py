"""Scripted demonstrations.

The expert sees the true state and moves the peg at fixed speeds; what it
records is what a tracker would report, i.e. noisy camera-frame poses, plus
patches rendered from the noise-free geometry.

``direct``: straight to a point above the mouth, then straight down.
``spiral``: approach a deliberately misaligned point, press on the mouth
plane, search along an Archimedean spiral (pitch = one clearance) until the
peg drops in, then center and insert.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import NoiseProcess, SimState, command_for, noisy_poses, step, success
from .render import crop_box, render_patch
from .task import TaskSpec

STYLES = ("direct", "spiral")


class ExpertFailure(RuntimeError):
    pass


@dataclass
class Episode:
    """One demonstration.

    ``t_c_s`` / ``t_c_t``: ``(N, 4, 4)`` observed (noisy) camera-frame poses;
    ``bbox``: ``(N, 4)`` union boxes; ``true_rel``: ``(N, 4)`` ground-truth
    ``(x, y, z, yaw)``; ``contact``: ``(N,)``; ``patches``: ``(N, S, S, 4)``
    float32 or ``None``.  The last frame is the inserted state, so its patch
    doubles as the goal observation.
    """

    t_c_s: np.ndarray
    t_c_t: np.ndarray
    bbox: np.ndarray
    true_rel: np.ndarray
    contact: np.ndarray
    patches: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.t_c_s.shape[0]

    @property
    def goal_patch(self) -> np.ndarray | None:
        return None if self.patches is None else self.patches[-1]

    def relative(self) -> np.ndarray:
        """Observed relative trajectory ``T_t^s = (T_c^t)^-1 T_c^s``, ``(N, 4, 4)``."""
        return np.linalg.inv(self.t_c_t) @ self.t_c_s


class Recorder:
    """Collects frames while a controller drives the sim."""

    def __init__(self, spec: TaskSpec, noise: NoiseProcess, with_patches: bool = True):
        self.spec = spec
        self.noise = noise
        self.with_patches = with_patches
        self.rows: list = []

    def record(self, state: SimState):
        s, t = noisy_poses(state, self.noise.draw())
        if self.with_patches:
            patch, box = render_patch(state, self.spec)
        else:
            patch, box = None, crop_box(state, self.spec)
        self.rows.append((s.matrix, t.matrix, box.as_tuple(), state.rel, state.contact, patch))
        return s, t, patch, box

    def episode(self, meta: dict) -> Episode:
        s, t, b, r, c, p = zip(*self.rows)
        patches = np.stack(p).astype(np.float32) if self.with_patches else None
        return Episode(
            np.stack(s), np.stack(t), np.array(b, dtype=np.float64), np.array(r, dtype=np.float64),
            np.array(c, dtype=bool), patches, dict(meta),
        )


def _toward(p, goal, speed, yaw_speed):
    p = np.asarray(p, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    d = goal[:3] - p[:3]
    n = float(np.linalg.norm(d))
    out = p.copy()
    out[:3] = goal[:3] if n <= speed else p[:3] + d * (speed / n)
    dy = goal[3] - p[3]
    out[3] = goal[3] if abs(dy) <= yaw_speed else p[3] + math.copysign(yaw_speed, dy)
    return out


def _reached(p, goal, tol=1e-9):
    return np.all(np.abs(np.asarray(p) - np.asarray(goal)) <= tol)


class ExpertController:
    """Waypoint generator over the true state; a plain object, so it can be deep-copied."""

    def __init__(self, spec: TaskSpec, style: str, rng: np.random.Generator):
        if style not in STYLES:
            raise ValueError(f"unknown expert style {style!r}; choose from {STYLES}")
        self.spec = spec
        self.style = style
        c = spec.clearance
        if style == "direct":
            self.m = np.zeros(2)
        else:
            ang = rng.uniform(0.0, 2 * math.pi)
            self.m = rng.uniform(1.0, 2.0) * c * np.array([math.cos(ang), math.sin(ang)])
        self.phase = "approach"
        self.theta = 0.0
        self.radius = 0.0

    def next(self, state: SimState):
        """Next relative waypoint ``(x, y, z, yaw)``, or ``None`` once the peg is at the bottom."""
        spec, m, c = self.spec, self.m, self.spec.clearance
        if self.phase == "approach":
            pre = np.array([m[0], m[1], spec.pre_insert_height, 0.0])
            if not _reached(state.rel, pre):
                far = state.rel[2] > spec.pre_insert_height + spec.free_speed
                return _toward(state.rel, pre, spec.free_speed if far else spec.insert_speed, spec.yaw_speed)
            self.phase = "lower" if self.style == "spiral" else "insert"
        if self.phase == "lower":
            if state.depth > 0.0:
                self.phase = "insert"
            elif state.contact and state.rel[2] <= 0.0:
                self.phase = "spiral"
            else:
                goal = np.array([m[0], m[1], -spec.insert_speed, 0.0])
                return _toward(state.rel, goal, spec.insert_speed, spec.yaw_speed)
        if self.phase == "spiral":
            if state.depth > 0.0:
                self.phase = "insert"
            else:
                # Archimedean spiral about m, pitch one clearance, ~c/4 of arc per step
                self.theta += (0.25 * c) / max(self.radius, 0.25 * c)
                self.radius = c * self.theta / (2 * math.pi)
                if self.radius > 6 * c:
                    raise ExpertFailure("spiral search left the search radius without finding the hole")
                r, th = self.radius, self.theta
                return np.array([m[0] + r * math.cos(th), m[1] + r * math.sin(th), -spec.insert_speed, 0.0])
        bottom = np.array([0.0, 0.0, -spec.hole_depth, 0.0])
        if _reached(state.rel, bottom):
            self.phase = "done"
            return None
        return _toward(state.rel, bottom, spec.insert_speed, spec.yaw_speed)


def expert_length(state: SimState, spec: TaskSpec, style: str = "direct", seed: int = 0, max_steps: int = 5000) -> int:
    """Frames the expert needs from ``state`` (no rendering, no noise)."""
    ctrl = ExpertController(spec, style, np.random.default_rng([seed, 11]))
    for n in range(max_steps):
        goal = ctrl.next(state)
        if goal is None:
            return n + 1
        state = step(state, command_for(state, goal), spec)
    raise ExpertFailure(f"expert did not finish within {max_steps} steps")


def scripted_expert(
    state: SimState,
    spec: TaskSpec,
    style: str = "direct",
    seed: int = 0,
    with_patches: bool = True,
    max_steps: int = 5000,
) -> Episode:
    """Run the expert from ``state`` to a successful insertion and record the episode."""
    rng = np.random.default_rng([seed, 11])
    noise = NoiseProcess(spec, np.random.default_rng([seed, 13]))
    rec = Recorder(spec, noise, with_patches)
    ctrl = ExpertController(spec, style, rng)
    rec.record(state)
    for _ in range(max_steps):
        goal = ctrl.next(state)
        if goal is None:
            break
        state = step(state, command_for(state, goal), spec)
        rec.record(state)
    else:
        raise ExpertFailure(f"expert did not finish within {max_steps} steps")
    if not success(state, spec):
        raise ExpertFailure(f"expert finished without success (depth {state.depth:.4f} mm)")
    return rec.episode({"style": style, "seed": seed, "rate_hz": spec.rate_hz, "spec_hash": spec.spec_hash()})
