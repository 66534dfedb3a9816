"""``train`` subcommand: dataset directory -> checkpoint and sidecars.

Outputs next to ``<out>.ckpt``:

* ``<out>.norm.json``  translation normalizer;
* ``<out>.goal.npy``   frozen goal patch (image variants only);
* ``<out>.log.csv``    ``epoch,loss``.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..nn import checkpoint
from ..policy import PolicyConfig, TrainConfig, train
from .collect import load_dataset
from .dataset import Normalizer, build_batch, fit_normalizer

log = logging.getLogger(__name__)


def sidecars(ckpt) -> dict[str, Path]:
    p = Path(ckpt)
    stem = p.with_suffix("")
    return {
        "norm": stem.with_suffix(".norm.json"),
        "goal": stem.with_suffix(".goal.npy"),
        "log": stem.with_suffix(".log.csv"),
    }


def train_cmd(
    dataset_dir,
    variant: str,
    out,
    policy: PolicyConfig | None = None,
    tcfg: TrainConfig = TrainConfig(),
    goal_mode: str = "task",
) -> Path:
    spec, episodes, header = load_dataset(dataset_dir)
    cfg = policy if policy is not None else PolicyConfig(variant=variant)
    if cfg.variant != variant:
        cfg = replace(cfg, variant=variant)
    if cfg.uses_image:
        missing = [i for i, e in enumerate(episodes) if e.patches is None]
        if missing:
            raise ValueError(f"{variant} needs RGBD patches; episodes {missing} have none")
        if episodes[0].patches.shape[1] != cfg.image.patch_size:
            raise ValueError(
                f"dataset patches are {episodes[0].patches.shape[1]} px, policy expects {cfg.image.patch_size}"
            )
    norm = fit_normalizer(episodes)
    data = build_batch(episodes, cfg.horizon, norm, patches=cfg.uses_image, goal_mode=goal_mode)
    params, history = train(data, cfg, tcfg)

    out = Path(out).with_suffix(".ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    sc = sidecars(out)
    config = {"policy": cfg.to_dict(), "train": tcfg.to_dict(), "goal_mode": goal_mode}
    extra = {
        "dataset_spec_hash": spec.spec_hash(),
        "episodes": len(episodes),
        "mean_episode_length": float(np.mean([len(e) for e in episodes])),
        "final_loss": history[-1][1],
    }
    checkpoint.save(out, params, config, extra)
    sc["norm"].write_text(norm.to_json() + "\n")
    if cfg.uses_image:
        np.save(sc["goal"], data.goals[0].astype("<f4"))
    sc["log"].write_text("epoch,loss\n" + "".join(f"{e},{l!r}\n" for e, l in history))
    (out.parent / (out.stem + ".task.cfg")).write_text(spec.to_text())
    return out


def load_policy(ckpt):
    """``(PolicyConfig, params, Normalizer, goal patch or None, header)``."""
    params, header = checkpoint.load(ckpt)
    cfg = PolicyConfig.from_dict(header["config"]["policy"])
    sc = sidecars(ckpt)
    norm = Normalizer.from_json(sc["norm"].read_text())
    goal = np.load(sc["goal"]) if cfg.uses_image else None
    return cfg, params, norm, goal, header
