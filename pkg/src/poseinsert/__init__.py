"""Relative-pose diffusion policies for tight-clearance peg insertion.

Pure numpy/scipy: SE(3) algebra (:mod:`poseinsert.se3`), a small autodiff
core (:mod:`poseinsert.nn`), pose and RGBD encoders, gated fusion, a DDIM
action-chunk policy (:mod:`poseinsert.policy`), a quasi-static insertion
simulator (:mod:`poseinsert.sim`) and the collect/train/eval harness
(:mod:`poseinsert.harness`).
"""

__version__ = "0.1.0"
