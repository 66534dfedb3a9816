"""Demonstration collection into a dataset directory."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..sim import ExpertFailure, TaskSpec, reset, scripted_expert
from .dataset import write_canonical_csv
from .episode_io import read_episode, read_manifest, verify_manifest, write_episode, write_manifest

log = logging.getLogger(__name__)


def episode_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, i, 101]).generate_state(1)[0])


def collect(
    spec: TaskSpec,
    n_demos: int,
    out_dir,
    style: str = "direct",
    seed: int = 0,
    fix_target: bool = False,
    patches: bool = True,
) -> Path:
    """Record ``n_demos`` expert episodes plus their canonical trajectories and a manifest.

    With ``fix_target`` every episode reuses episode 0's target placement.
    """
    if n_demos < 1:
        raise ValueError("need at least one demonstration")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec.save(out / "task.cfg")
    files = ["task.cfg"]
    target = None
    for i in range(n_demos):
        s = episode_seed(seed, i)
        state = reset(spec, s, target=target)
        if fix_target and target is None:
            t = state.t_b_t
            target = (t.translation[0], t.translation[1], float(np.arctan2(t.rotation[1, 0], t.rotation[0, 0])))
        try:
            ep = scripted_expert(state, spec, style, seed=s, with_patches=patches)
        except ExpertFailure as e:
            raise ExpertFailure(f"episode {i}: {e}") from e
        ep.meta["episode"] = i
        name = f"episode_{i:03d}.ep"
        write_episode(out / name, ep)
        write_canonical_csv(out / f"canonical_{i:03d}.csv", ep)
        files += [name, f"canonical_{i:03d}.csv"]
        log.info("episode %d: %d frames", i, len(ep))
    header = {
        "episodes": n_demos,
        "style": style,
        "seed": seed,
        "fix_target": int(fix_target),
        "patches": int(patches),
        "spec_hash": spec.spec_hash(),
    }
    write_manifest(out, files, header)
    return out


def load_dataset(directory, verify: bool = True):
    """``(spec, episodes, header)`` for a collected dataset."""
    d = Path(directory)
    header, entries = read_manifest(d)
    if verify:
        bad = verify_manifest(d)
        if bad:
            raise ValueError(f"manifest hash mismatch for {bad}")
    spec = TaskSpec.load(d / "task.cfg")
    if header.get("spec_hash") not in (None, spec.spec_hash()):
        raise ValueError("task.cfg does not match the dataset's spec hash")
    episodes = [read_episode(d / name) for _, name in entries if name.endswith(".ep")]
    if not episodes:
        raise ValueError(f"dataset {d} holds no episodes")
    return spec, episodes, header
