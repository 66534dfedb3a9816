"""Closed-loop evaluation.

Each trial repeats: observe (noisy poses, patches) -> relative pose ->
normalize -> DDIM sample an action chunk -> decode to ``T_t^s`` poses ->
end-effector targets through the calibration chain -> execute the first
``exec_steps`` targets.  A trial ends on success or at the step cap, which is
20 times the length of a noise-free direct expert run from the same start.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..nn import checkpoint
from ..policy import Batch, Policy, PolicyConfig
from ..se3 import Pose, encode_action, end_effector_trajectory, relative_pose, rot_to_r6d
from ..sim import (
    ExpertController,
    NoiseProcess,
    SimState,
    TaskSpec,
    expert_length,
    lateral_offset,
    move,
    observe,
    reset,
    step,
    success,
)
from .dataset import Normalizer, decode_chunk
from .training import load_policy

CAP_FACTOR = 20
REPORT_MAGIC = "poseinsert eval report v1"


# -- policies -------------------------------------------------------------


class LearnedPolicy:
    def __init__(self, cfg: PolicyConfig, params, norm: Normalizer, goal: np.ndarray | None):
        self.cfg = cfg
        self.policy = Policy(cfg)
        self.params = params
        self.norm = norm
        self.goal = goal
        self.uses_image = cfg.uses_image
        self.exec_steps = cfg.exec_steps

    def start(self, spec: TaskSpec, state: SimState, seed: int):
        pass

    def act(self, obs, state: SimState, seed: int) -> tuple[list[Pose], np.ndarray | None]:
        rel = relative_pose(obs.t_c_t, obs.t_c_s)
        v = self.norm.encode(encode_action(rel))
        h = self.cfg.horizon
        batch = Batch(v[None], np.zeros((1, h, 9)))
        if self.uses_image:
            batch = Batch(batch.obs, batch.actions, obs.current[None], self.goal[None], np.zeros(1, dtype=int))
        trace = {}
        chunk = self.policy.sample(self.params, batch, seed=seed, trace=trace)[0]
        T = decode_chunk(chunk, self.norm)
        poses = [Pose(m[:3, :3], m[:3, 3], ("t", "s")) for m in T]
        gate = trace.get("gate")
        return poses, None if gate is None else np.asarray(gate[0], dtype=np.float64)


class ExpertReplayPolicy:
    """Harness self-test: plays the scripted expert through the same chain.

    Predictions come from rolling the expert forward on a copy of the true
    state, so with noise-free observations the executed motion reproduces a
    demonstration exactly.
    """

    uses_image = False
    goal = None

    def __init__(self, style: str = "direct", horizon: int = 16, exec_steps: int = 8):
        self.style = style
        self.horizon = horizon
        self.exec_steps = exec_steps
        self.ctrl = None

    def start(self, spec: TaskSpec, state: SimState, seed: int):
        self.spec = spec
        self.ctrl = ExpertController(spec, self.style, np.random.default_rng([seed, 11]))

    def act(self, obs, state: SimState, seed: int):
        ctrl = copy.deepcopy(self.ctrl)
        s = state
        poses = []
        for k in range(self.horizon):
            goal = ctrl.next(s)
            if goal is not None:
                s = move(s, self.spec, goal)
            poses.append(s.t_t_s)
            if k + 1 == self.exec_steps:
                keep = copy.deepcopy(ctrl)
        self.ctrl = keep
        return poses, None


def load_any(ckpt):
    """Policy object for a checkpoint (learned or expert-replay)."""
    _, header = checkpoint.load(ckpt)
    pol = header["config"].get("policy", {})
    if pol.get("variant") == "expert":
        return ExpertReplayPolicy(pol.get("style", "direct"), pol.get("horizon", 16), pol.get("exec_steps", 8))
    cfg, params, norm, goal, _ = load_policy(ckpt)
    return LearnedPolicy(cfg, params, norm, goal)


def write_expert_checkpoint(path, style: str = "direct", horizon: int = 16, exec_steps: int = 8) -> Path:
    from ..nn.params import ParamStore

    path = Path(path).with_suffix(".ckpt")
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg = {"policy": {"variant": "expert", "style": style, "horizon": horizon, "exec_steps": exec_steps}}
    checkpoint.save(path, ParamStore(np.zeros(0), {}), cfg)
    return path


# -- trials ----------------------------------------------------------------


@dataclass
class TrialLog:
    index: int
    seed: int
    success: bool
    steps: int
    cap: int
    final_depth: float
    final_lateral: float
    inferences: int
    target: tuple
    trajectory: list = field(default_factory=list)  # per executed step: x y z + r6d (true)
    gates: list = field(default_factory=list)  # per inference: step, mean, min, max, true z


def trial_seed(seed: int, i: int, in_dist: bool) -> int:
    return int(np.random.SeedSequence([seed, i, 0 if in_dist else 1, 202]).generate_state(1)[0])


def sample_ood_target(spec: TaskSpec, rng: np.random.Generator) -> tuple[float, float, float]:
    """Target in the square ring 1.5-2x the training half-extent away from the region center."""
    R = spec.region_half
    while True:
        p = rng.uniform(-2 * R, 2 * R, size=2)
        if np.max(np.abs(p)) >= 1.5 * R:
            break
    yaw = rng.uniform(-spec.region_yaw, spec.region_yaw)
    return (spec.region_x + float(p[0]), spec.region_y + float(p[1]), float(yaw))


def calibrated(t_b_c: Pose, error_mm) -> Pose:
    if error_mm is None:
        return t_b_c
    return Pose(t_b_c.rotation, t_b_c.translation + np.asarray(error_mm, dtype=np.float64), t_b_c.frame)


def run_trial(
    policy,
    spec: TaskSpec,
    index: int,
    seed: int,
    in_dist: bool = True,
    calib_error=None,
    cap: int | None = None,
) -> TrialLog:
    ts = trial_seed(seed, index, in_dist)
    target = None if in_dist else sample_ood_target(spec, np.random.default_rng([ts, 3]))
    state = reset(spec, ts, target=target)
    if cap is None:
        cap = CAP_FACTOR * expert_length(state, spec)
    noise = NoiseProcess(spec, np.random.default_rng([ts, 17]))
    obs_rng = np.random.default_rng([ts, 19])
    t_b_c_used = calibrated(state.t_b_c, calib_error)
    policy.start(spec, state, ts)
    tgt = state.t_b_t
    log = TrialLog(index, ts, False, 0, cap, 0.0, 0.0, 0, (float(tgt.translation[0]), float(tgt.translation[1])))
    steps = 0
    done = success(state, spec)
    while not done and steps < cap:
        obs = observe(state, spec, obs_rng, noise, goal=policy.goal, patches=policy.uses_image)
        poses, gate = policy.act(obs, state, seed=ts + 7919 * log.inferences)
        log.inferences += 1
        if gate is not None:
            log.gates.append((steps, float(gate.mean()), float(gate.min()), float(gate.max()), float(state.rel[2])))
        cmds = end_effector_trajectory(state.t_b_e, t_b_c_used, obs.t_c_s, obs.t_c_t, poses)
        for cmd in cmds[: policy.exec_steps]:
            state = step(state, cmd, spec)
            steps += 1
            t = state.t_t_s
            log.trajectory.append(tuple(float(a) for a in np.concatenate([t.translation, rot_to_r6d(t.rotation)])))
            if success(state, spec):
                done = True
                break
            if steps >= cap:
                break
    log.success = bool(done)
    log.steps = steps
    log.final_depth = float(state.depth)
    log.final_lateral = float(lateral_offset(state))
    return log


# -- report ------------------------------------------------------------------


@dataclass
class EvalReport:
    task: str
    spec_hash: str
    checkpoint: str
    distribution: str
    seed: int
    calib_error: tuple | None
    trials: list

    @property
    def n(self) -> int:
        return len(self.trials)

    @property
    def successes(self) -> int:
        return sum(1 for t in self.trials if t.success)

    @property
    def success_rate(self) -> float:
        """Percent."""
        return 100.0 * self.successes / self.n if self.n else 0.0

    def to_text(self) -> str:
        lines = [
            REPORT_MAGIC,
            f"task = {self.task}",
            f"spec_hash = {self.spec_hash}",
            f"checkpoint = {self.checkpoint}",
            f"distribution = {self.distribution}",
            f"seed = {self.seed}",
            f"calibration_error_mm = {'none' if self.calib_error is None else ' '.join(repr(float(v)) for v in self.calib_error)}",
            f"trials = {self.n}",
            f"successes = {self.successes}",
            f"success_rate = {self.successes}/{self.n} = {self.success_rate:.4f}%",
            "# index seed success steps cap final_depth_mm final_lateral_mm inferences",
        ]
        for t in self.trials:
            lines.append(
                f"trial {t.index} {t.seed} {int(t.success)} {t.steps} {t.cap} "
                f"{t.final_depth!r} {t.final_lateral!r} {t.inferences}"
            )
        return "\n".join(lines) + "\n"

    def gate_phase_means(self, z_split: float, successful_only: bool = True) -> tuple[float, float]:
        """Mean gate value over inferences above / at-or-below ``z_split`` (true tip height, mm)."""
        hi, lo = [], []
        for t in self.trials:
            if successful_only and not t.success:
                continue
            for _, mean, _, _, z in t.gates:
                (hi if z > z_split else lo).append(mean)
        return (float(np.mean(hi)) if hi else math.nan, float(np.mean(lo)) if lo else math.nan)


def parse_report(text: str) -> dict:
    """Header fields plus ``trials`` as tuples; enough to recompute the success rate."""
    lines = text.splitlines()
    if not lines or lines[0] != REPORT_MAGIC:
        raise ValueError("not an evaluation report")
    out, trials = {}, []
    for ln in lines[1:]:
        if ln.startswith("trial "):
            f = ln.split()
            trials.append((int(f[1]), int(f[2]), bool(int(f[3])), int(f[4]), int(f[5]), float(f[6]), float(f[7]), int(f[8])))
        elif " = " in ln and not ln.startswith("#"):
            k, _, v = ln.partition(" = ")
            out[k] = v
    out["trials_list"] = trials
    return out


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def evaluate(
    ckpt,
    spec: TaskSpec,
    n_trials: int,
    in_dist: bool = True,
    seed: int = 0,
    calib_error=None,
    out_dir=None,
    policy=None,
    indices=None,
) -> EvalReport:
    """Run ``n_trials`` closed-loop trials; write ``report.txt`` and ``trials.jsonl`` into ``out_dir``.

    ``indices`` picks specific trial numbers instead of ``0..n_trials-1``.
    """
    indices = list(range(n_trials)) if indices is None else [int(i) for i in indices]
    if not indices:
        raise ValueError("need at least one trial")
    policy = load_any(ckpt) if policy is None else policy
    trials = [run_trial(policy, spec, i, seed, in_dist, calib_error) for i in indices]
    report = EvalReport(
        spec.name,
        spec.spec_hash(),
        file_digest(ckpt) if ckpt is not None else "none",
        "in" if in_dist else "ood",
        seed,
        None if calib_error is None else tuple(float(v) for v in calib_error),
        trials,
    )
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.txt").write_text(report.to_text())
        with open(d / "trials.jsonl", "w") as f:
            for t in trials:
                f.write(json.dumps(t.__dict__, sort_keys=True) + "\n")
    return report


def rollout(ckpt, spec: TaskSpec, index: int = 0, seed: int = 0, in_dist: bool = True, calib_error=None, out_dir=None):
    """A single trial, same seeding as trial ``index`` of :func:`evaluate`."""
    return evaluate(ckpt, spec, 1, in_dist, seed, calib_error, out_dir, indices=[index])
