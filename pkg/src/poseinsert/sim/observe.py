"""Noisy observations as a pose tracker plus camera would deliver them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rgbd_encoder import BBox
from ..se3 import Pose
from .core import NoiseProcess, SimState, noisy_poses
from .render import crop_box, render_goal, render_patch
from .task import TaskSpec


@dataclass(frozen=True)
class NoisyObservation:
    t_c_s: Pose
    t_c_t: Pose
    current: np.ndarray | None
    goal: np.ndarray | None
    bbox: BBox


def observe(
    state: SimState,
    spec: TaskSpec,
    rng: np.random.Generator,
    noise: NoiseProcess | None = None,
    goal: np.ndarray | None = None,
    patches: bool = True,
) -> NoisyObservation:
    """Perturb the true poses; render patches from the noise-free geometry.

    Without a ``noise`` process every call draws independent errors from
    ``rng``.  ``goal`` defaults to a render of this scene with the peg inserted.
    """
    if noise is None:
        noise = NoiseProcess(spec, rng)
    t_c_s, t_c_t = noisy_poses(state, noise.draw())
    if not patches:
        return NoisyObservation(t_c_s, t_c_t, None, None, crop_box(state, spec))
    current, box = render_patch(state, spec)
    if goal is None:
        goal = render_goal(state, spec)
    return NoisyObservation(t_c_s, t_c_t, current, goal, box)
