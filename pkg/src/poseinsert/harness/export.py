"""Trajectory and gate-trace exports for a finished eval or rollout run.

A run directory holds ``trials.jsonl`` (one JSON object per trial).  Export
writes, per trial, ``trajectory_XXX.csv`` (true relative pose per executed
step) and, when the policy has a gate, ``gates_XXX.csv``; then one SVG of all
trajectories and one of the gate traces.  Output is byte-stable across runs.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

TRAJ_HEADER = "step,x,y,z,r1,r2,r3,r4,r5,r6"
GATE_HEADER = "step,gate_mean,gate_min,gate_max,true_z"


class RunError(FileNotFoundError):
    pass


def load_trials(run_dir) -> list[dict]:
    path = Path(run_dir) / "trials.jsonl"
    if not path.exists():
        raise RunError(f"{path} not found; is {run_dir} an eval or rollout directory?")
    trials = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    if not trials:
        raise RunError(f"{path} holds no trials")
    return trials


def _csv(header: str, rows) -> str:
    return header + "\n" + "".join(",".join(repr(v) for v in r) + "\n" for r in rows)


def _save_svg(fig, path: Path):
    with plt.rc_context({"svg.hashsalt": "poseinsert", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def export_traces(run_dir, out_dir=None) -> list[Path]:
    """Write CSVs and SVGs for every trial in ``run_dir``; returns the paths written."""
    trials = load_trials(run_dir)
    out = Path(out_dir) if out_dir is not None else Path(run_dir) / "export"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for t in trials:
        i = t["index"]
        p = out / f"trajectory_{i:03d}.csv"
        p.write_text(_csv(TRAJ_HEADER, ([k + 1, *row] for k, row in enumerate(t["trajectory"]))))
        written.append(p)
        if t["gates"]:
            p = out / f"gates_{i:03d}.csv"
            p.write_text(_csv(GATE_HEADER, t["gates"]))
            written.append(p)

    fig, (ax_xz, ax_yz) = plt.subplots(1, 2, figsize=(8, 4))
    for t in trials:
        traj = t["trajectory"]
        if not traj:
            continue
        x, y, z = ([r[j] for r in traj] for j in range(3))
        style = "-" if t["success"] else ":"
        ax_xz.plot(x, z, style, lw=0.8)
        ax_yz.plot(y, z, style, lw=0.8)
    for ax, lab in ((ax_xz, "x"), (ax_yz, "y")):
        ax.set_xlabel(f"{lab} in target frame [mm]")
        ax.set_ylabel("z [mm]")
        ax.axhline(0.0, color="k", lw=0.5)
    fig.suptitle("executed relative trajectories (dotted: failed)")
    fig.tight_layout()
    p = out / "trajectories.svg"
    _save_svg(fig, p)
    written.append(p)

    if any(t["gates"] for t in trials):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for t in trials:
            if t["gates"]:
                ax.plot([g[0] for g in t["gates"]], [g[1] for g in t["gates"]], lw=0.8)
        ax.set_xlabel("control step")
        ax.set_ylabel("mean gate weight")
        ax.set_ylim(0.0, 1.0)
        fig.tight_layout()
        p = out / "gates.svg"
        _save_svg(fig, p)
        written.append(p)
    return written
