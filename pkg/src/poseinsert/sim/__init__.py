"""Deterministic quasi-static peg-in-hole simulator."""

from .core import (
    NoiseProcess,
    SimState,
    camera_pose,
    command_for,
    contained,
    lateral_offset,
    max_yaw,
    move,
    noisy_poses,
    perturb,
    reset,
    step,
    success,
)
from .expert import STYLES, Episode, ExpertController, ExpertFailure, Recorder, expert_length, scripted_expert
from .observe import NoisyObservation, observe
from .render import crop_box, object_boxes, render_box, render_frame, render_goal, render_patch
from .task import EASY, HARD, PRESETS, TaskSpec, preset, region_bounds
