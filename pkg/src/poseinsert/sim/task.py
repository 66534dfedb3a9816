"""Task description for the peg-in-hole scene and its plain-text config format.

All lengths are millimeters, angles radians.  The scene:

* base frame ``b``: world, ``z`` up, table at ``z = 0``;
* target ``t``: socket frame, origin at the center of the hole mouth, ``z`` up,
  hole occupying ``|x| < hole_half_x``, ``|y| < hole_half_y``, ``-hole_depth < z < 0``;
* source ``s``: peg frame, origin at the center of the peg tip, peg body along ``+z``;
* end-effector ``e``: grasp point on the peg, ``peg_length`` above the tip;
* camera ``c``: orthographic, looking straight down from ``camera_height``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class TaskSpec:
    name: str = "easy"
    peg_half_x: float = 4.0
    peg_half_y: float = 2.0
    peg_length: float = 20.0
    clearance: float = 0.5
    hole_depth: float = 8.0
    socket_wall: float = 1.5
    socket_height: float = 10.0
    # target sampling region, centered on (region_x, region_y)
    region_x: float = 0.0
    region_y: float = 0.0
    region_half: float = 10.0
    region_yaw: float = 0.1
    # peg start: above the region center, jittered
    approach_height: float = 20.0
    start_jitter: float = 3.0
    start_yaw_jitter: float = 0.1
    grasp_jitter: float = 0.5
    # pose-estimation noise, stationary std per axis; noise_corr is the AR(1)
    # coefficient between consecutive frames (0 = independent draws, 1 = one
    # fixed tracker bias per rollout)
    sigma_t_source: float = 0.0
    sigma_r_source: float = 0.0
    sigma_t_target: float = 0.0
    sigma_r_target: float = 0.0
    noise_corr: float = 1.0
    rate_hz: float = 30.0
    # expert and actuator speeds, mm (rad) per control step
    free_speed: float = 1.0
    insert_speed: float = 0.25
    yaw_speed: float = 0.03
    pre_insert_height: float = 2.0
    # rendering
    camera_height: float = 300.0
    px_per_mm: float = 4.0
    frame_size: int = 256
    patch_size: int = 64
    crop_margin: float = 0.15

    def __post_init__(self):
        if not self.clearance > 0:
            raise ValueError("clearance must be positive")
        if not self.hole_depth > 0:
            raise ValueError("hole depth must be positive")
        if self.peg_half_x <= 0 or self.peg_half_y <= 0:
            raise ValueError("peg half-extents must be positive")
        if self.peg_length <= self.hole_depth:
            raise ValueError("peg must be longer than the hole is deep")
        if self.region_half < 0 or self.region_yaw < 0:
            raise ValueError("sampling region half-widths must be non-negative")
        if not 0 <= self.noise_corr <= 1:
            raise ValueError("noise_corr must lie in [0, 1]")
        for f in ("sigma_t_source", "sigma_r_source", "sigma_t_target", "sigma_r_target"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be non-negative")

    @property
    def hole_half_x(self) -> float:
        return self.peg_half_x + self.clearance

    @property
    def hole_half_y(self) -> float:
        return self.peg_half_y + self.clearance

    @property
    def socket_half_x(self) -> float:
        return self.hole_half_x + self.socket_wall

    @property
    def socket_half_y(self) -> float:
        return self.hole_half_y + self.socket_wall

    @property
    def grasp_offset(self) -> float:
        return self.peg_length

    def scaled(self, s: float, name: str | None = None) -> "TaskSpec":
        """Uniformly scale every length (noise included); resolution follows."""
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in _LENGTHS:
                kw[f.name] = v * s
        kw["px_per_mm"] = self.px_per_mm / s
        kw["camera_height"] = self.camera_height
        return replace(self, name=name or self.name, **kw)

    def with_noise(self, sigma_t: float, lever: float | None = None, corr: float | None = None) -> "TaskSpec":
        """Same translation noise on source and target; rotation noise ``sigma_t / lever``."""
        lever = self.peg_half_x if lever is None else lever
        sr = sigma_t / lever
        return replace(
            self,
            sigma_t_source=sigma_t,
            sigma_t_target=sigma_t,
            sigma_r_source=sr,
            sigma_r_target=sr,
            noise_corr=self.noise_corr if corr is None else corr,
        )

    # -- text config ------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)!r}".replace("'", "") for f in fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TaskSpec":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {n}: expected 'key = value', got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {n}: unknown key {key!r}")
            kind = types[key]
            kw[key] = val if kind == "str" else int(val) if kind == "int" else float(val)
        return cls(**kw)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "TaskSpec":
        return cls.from_text(Path(path).read_text())

    def spec_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


_LENGTHS = {
    "peg_half_x",
    "peg_half_y",
    "peg_length",
    "clearance",
    "hole_depth",
    "socket_wall",
    "socket_height",
    "region_x",
    "region_y",
    "region_half",
    "approach_height",
    "start_jitter",
    "grasp_jitter",
    "sigma_t_source",
    "sigma_t_target",
    "free_speed",
    "insert_speed",
    "pre_insert_height",
}

EASY = TaskSpec()
# The tight task keeps the easy scene's proportions and shrinks it tenfold, so
# clearance drops to 0.05 mm while the normalized action precision required
# of the policy is unchanged; the grasp jitter shrinks with it.
HARD = EASY.scaled(0.1, name="hard")

PRESETS = {"easy": EASY, "hard": HARD}


def preset(name: str) -> TaskSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def region_bounds(spec: TaskSpec) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([spec.region_x - spec.region_half, spec.region_y - spec.region_half, -spec.region_yaw])
    hi = np.array([spec.region_x + spec.region_half, spec.region_y + spec.region_half, spec.region_yaw])
    return lo, hi
