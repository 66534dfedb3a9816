"""Quasi-static peg-in-hole kinematics.

The simulated state is the peg pose in the target frame, reduced to
``(x, y, z, yaw)``: tilt is absorbed by the gripper's passive compliance.
``z`` is the height of the peg tip above the hole mouth, so the insertion
depth is ``max(0, -z)``.  Motion toward a commanded pose is split into
sub-steps of at most a quarter clearance; at each sub-step the peg is

* blocked at the mouth plane when its cross-section does not fit the hole,
* clamped laterally against the walls once inside,
* stopped by the hole bottom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from ..se3 import Pose, compose, exp_so3, inverse, rot_z, yaw_of
from .task import TaskSpec

CONTACT_TOL = 1e-9

# camera looks straight down: x_c = x_b, y_c = -y_b, z_c = -z_b
_CAM_R = np.diag([1.0, -1.0, -1.0])


@dataclass(frozen=True)
class SimState:
    t_b_t: Pose  # target in base
    t_b_c: Pose  # camera in base
    t_s_e: Pose  # grasp: end-effector in peg frame
    rel: tuple  # (x, y, z, yaw) of the peg tip in the target frame
    contact: bool = False
    step_index: int = 0

    @property
    def depth(self) -> float:
        return max(0.0, -self.rel[2])

    @property
    def t_t_s(self) -> Pose:
        x, y, z, yaw = self.rel
        return Pose(rot_z(yaw), np.array([x, y, z]), ("t", "s"))

    @property
    def t_b_s(self) -> Pose:
        return compose(self.t_b_t, self.t_t_s)

    @property
    def t_b_e(self) -> Pose:
        return compose(self.t_b_s, self.t_s_e)

    @property
    def t_c_t(self) -> Pose:
        return compose(inverse(self.t_b_c), self.t_b_t)

    @property
    def t_c_s(self) -> Pose:
        return compose(self.t_c_t, self.t_t_s)

    def inserted(self, spec: TaskSpec) -> "SimState":
        """Same scene with the peg centered at full depth."""
        return replace(self, rel=(0.0, 0.0, -spec.hole_depth, 0.0), contact=True)


def camera_pose(spec: TaskSpec) -> Pose:
    return Pose(_CAM_R.copy(), np.array([spec.region_x, spec.region_y, spec.camera_height]), ("b", "c"))


def reset(spec: TaskSpec, seed: int, target: tuple[float, float, float] | None = None) -> SimState:
    """Sample a target in the region (or place it at ``target = (x, y, yaw)``) and a jittered start."""
    if spec.region_half < 0 or spec.region_yaw < 0:
        raise ValueError("empty target sampling region")
    rng = np.random.default_rng([seed, 7])
    u = rng.uniform(-1.0, 1.0, size=3)
    if target is None:
        tx = spec.region_x + spec.region_half * u[0]
        ty = spec.region_y + spec.region_half * u[1]
        tyaw = spec.region_yaw * u[2]
    else:
        tx, ty, tyaw = (float(v) for v in target)
    t_b_t = Pose(rot_z(tyaw), np.array([tx, ty, spec.socket_height]), ("b", "t"))

    j = rng.uniform(-1.0, 1.0, size=6)
    start = np.array(
        [
            spec.region_x + spec.start_jitter * j[0],
            spec.region_y + spec.start_jitter * j[1],
            spec.socket_height + spec.approach_height + 0.25 * spec.start_jitter * j[2],
        ]
    )
    start_yaw = tyaw + spec.start_yaw_jitter * j[3]
    t_b_s = Pose(rot_z(start_yaw), start, ("b", "s"))
    rel_pose = compose(inverse(t_b_t), t_b_s)
    x, y, z = rel_pose.translation
    rel = (float(x), float(y), float(z), float(yaw_of(rel_pose.rotation)))

    g = rng.uniform(-1.0, 1.0, size=3)
    t_s_e = Pose(
        rot_z(0.1 * g[2] * spec.grasp_jitter / spec.peg_half_x),
        np.array([spec.grasp_jitter * g[0], spec.grasp_jitter * g[1], spec.grasp_offset]),
        ("s", "e"),
    )
    return SimState(t_b_t, camera_pose(spec), t_s_e, rel)


# -- geometry -------------------------------------------------------------


def footprint(spec: TaskSpec, yaw: float) -> tuple[float, float]:
    """Half-extents of the axis-aligned box around the peg cross-section at ``yaw``."""
    c, s = abs(math.cos(yaw)), abs(math.sin(yaw))
    return spec.peg_half_x * c + spec.peg_half_y * s, spec.peg_half_x * s + spec.peg_half_y * c


def contained(spec: TaskSpec, x: float, y: float, yaw: float) -> bool:
    ex, ey = footprint(spec, yaw)
    return abs(x) + ex <= spec.hole_half_x + CONTACT_TOL and abs(y) + ey <= spec.hole_half_y + CONTACT_TOL


@lru_cache(maxsize=64)
def _max_yaw(peg_x, peg_y, hole_x, hole_y) -> float:
    def slack(a):
        c, s = math.cos(a), math.sin(a)
        return min(hole_x - (peg_x * c + peg_y * s), hole_y - (peg_x * s + peg_y * c))

    hi = math.pi / 4
    if slack(hi) >= 0:
        return hi
    return brentq(slack, 0.0, hi, xtol=1e-15)


def max_yaw(spec: TaskSpec) -> float:
    """Largest |yaw| at which the peg still fits the hole when centered."""
    return _max_yaw(spec.peg_half_x, spec.peg_half_y, spec.hole_half_x, spec.hole_half_y)


def _clamp_inside(spec: TaskSpec, x, y, yaw):
    clamped = False
    ym = max_yaw(spec)
    if abs(yaw) > ym:
        yaw = math.copysign(ym, yaw)
        clamped = True
    ex, ey = footprint(spec, yaw)
    lx = max(spec.hole_half_x - ex, 0.0)
    ly = max(spec.hole_half_y - ey, 0.0)
    if abs(x) > lx:
        x = math.copysign(lx, x)
        clamped = True
    if abs(y) > ly:
        y = math.copysign(ly, y)
        clamped = True
    return x, y, yaw, clamped


def relative_command(state: SimState, cmd_b_e: Pose) -> tuple[float, float, float, float]:
    """Peg pose in the target frame that a commanded end-effector pose asks for."""
    t_b_s = compose(cmd_b_e.retag(("b", "e")), inverse(state.t_s_e))
    t_t_s = compose(inverse(state.t_b_t), t_b_s)
    x, y, z = t_t_s.translation
    return float(x), float(y), float(z), float(yaw_of(t_t_s.rotation))


def move(state: SimState, spec: TaskSpec, goal_rel, max_travel: float | None = None) -> SimState:
    """Advance the peg toward ``goal_rel = (x, y, z, yaw)`` under the contact constraints."""
    goal = np.asarray(goal_rel, dtype=np.float64)
    if not np.all(np.isfinite(goal)):
        raise ValueError("non-finite command")
    p0 = np.asarray(state.rel, dtype=np.float64)
    d = goal - p0
    d[3] = (d[3] + math.pi) % (2 * math.pi) - math.pi
    max_travel = 4.0 * spec.free_speed if max_travel is None else max_travel
    trans = math.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
    if trans > max_travel:
        d[:3] *= max_travel / trans
    max_turn = 4.0 * spec.yaw_speed
    if abs(d[3]) > max_turn:
        d[3] = math.copysign(max_turn, d[3])
    q = p0 + d

    unit = 0.25 * spec.clearance
    n = int(math.ceil(max(abs(d[0]), abs(d[1]), abs(d[2]), abs(d[3]) * spec.peg_half_x) / unit))
    x, y, z, yaw = p0
    contact = False
    for i in range(1, n + 1):
        c = q if i == n else p0 + d * (i / n)
        cx, cy, cz, cyaw = (float(v) for v in c)
        if z >= 0.0:
            if cz < 0.0 and not contained(spec, cx, cy, cyaw):
                cz = 0.0
                contact = True
            elif cz < 0.0:
                # entering: the containment test already holds at the new pose
                cx, cy, cyaw, hit = _clamp_inside(spec, cx, cy, cyaw)
                contact |= hit
        elif cz < 0.0:
            cx, cy, cyaw, hit = _clamp_inside(spec, cx, cy, cyaw)
            contact |= hit
        if cz < -spec.hole_depth:
            cz = -spec.hole_depth
            contact = True
        x, y, z, yaw = cx, cy, cz, cyaw
    if n == 0:
        contact = state.contact and z <= 0.0
    return replace(state, rel=(x, y, z, yaw), contact=bool(contact), step_index=state.step_index + 1)


def step(state: SimState, cmd_b_e: Pose, spec: TaskSpec) -> SimState:
    """Apply one commanded end-effector pose."""
    m = cmd_b_e.matrix
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite command")
    return move(state, spec, relative_command(state, cmd_b_e))


def command_for(state: SimState, rel) -> Pose:
    """End-effector pose that places the peg at ``rel`` in the (true) target frame."""
    x, y, z, yaw = rel
    t_t_s = Pose(rot_z(yaw), np.array([x, y, z], dtype=np.float64), ("t", "s"))
    return compose(compose(state.t_b_t, t_t_s), state.t_s_e)


def lateral_offset(state: SimState) -> float:
    return max(abs(state.rel[0]), abs(state.rel[1]))


def success(state: SimState, spec: TaskSpec) -> bool:
    return state.depth >= 0.95 * spec.hole_depth and lateral_offset(state) < spec.clearance + CONTACT_TOL


# -- observation noise ----------------------------------------------------


class NoiseProcess:
    """Pose-estimation errors for one rollout.

    Each of the four error vectors (source translation/rotation, target
    translation/rotation) is a unit AR(1) process scaled by its sigma, so every
    single draw is zero-mean Gaussian with the configured std.  With
    ``noise_corr = 1`` (the default) the first draw is held for the whole
    rollout, a fixed tracker bias; with 0 the frames are independent.
    """

    def __init__(self, spec: TaskSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.z = None

    def draw(self) -> np.ndarray:
        rho = self.spec.noise_corr
        if self.z is not None and rho == 1.0:
            return self.z * self._scale()
        e = self.rng.standard_normal((4, 3))
        if self.z is None or rho == 0.0:
            self.z = e
        else:
            self.z = rho * self.z + math.sqrt(1.0 - rho * rho) * e
        return self.z * self._scale()

    def _scale(self):
        s = self.spec
        return np.array([s.sigma_t_source, s.sigma_r_source, s.sigma_t_target, s.sigma_r_target])[:, None]


def perturb(pose: Pose, dt: np.ndarray, dr: np.ndarray) -> Pose:
    """Translation error added in the parent frame, rotation error applied in the body frame."""
    R = pose.rotation
    if np.any(dr != 0.0):
        R = R @ exp_so3(dr)
    t = pose.translation + dt if np.any(dt != 0.0) else pose.translation
    return Pose(R, t, pose.frame)


def noisy_poses(state: SimState, noise: np.ndarray) -> tuple[Pose, Pose]:
    """``(T_c^s, T_c^t)`` perturbed by a ``(4, 3)`` error block from :class:`NoiseProcess`."""
    return perturb(state.t_c_s, noise[0], noise[1]), perturb(state.t_c_t, noise[2], noise[3])
