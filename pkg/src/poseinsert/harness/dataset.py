"""Canonicalized training samples.

Every frame of every demonstration becomes one sample: the observed relative
pose ``T_t^s`` at frame ``i`` and the next ``h`` relative poses as the action
chunk.  Chunks running past the end of an episode repeat its final pose.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..policy import Batch
from ..se3 import decode_matrices, encode_matrices
from ..sim.expert import Episode


@dataclass(frozen=True)
class Normalizer:
    """Per-axis affine map of translations (mm) onto ``[-1, 1]``; R6D passes through."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    @classmethod
    def fit(cls, translations: np.ndarray, min_half_range: float = 1e-6) -> "Normalizer":
        t = np.asarray(translations, dtype=np.float64).reshape(-1, 3)
        lo, hi = t.min(axis=0), t.max(axis=0)
        mid, half = 0.5 * (lo + hi), np.maximum(0.5 * (hi - lo), min_half_range)
        return cls(tuple(map(float, mid - half)), tuple(map(float, mid + half)))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lo) + np.array(self.hi))

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (np.array(self.hi) - np.array(self.lo))

    def encode(self, vec9: np.ndarray) -> np.ndarray:
        v = np.array(vec9, dtype=np.float64)
        v[..., :3] = (v[..., :3] - self.center) / self.half
        return v

    def decode(self, vec9: np.ndarray) -> np.ndarray:
        v = np.array(vec9, dtype=np.float64)
        v[..., :3] = v[..., :3] * self.half + self.center
        return v

    def to_json(self) -> str:
        return json.dumps({"lo": list(self.lo), "hi": list(self.hi)}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Normalizer":
        d = json.loads(text)
        return cls(tuple(d["lo"]), tuple(d["hi"]))


def relative_vectors(ep: Episode) -> np.ndarray:
    """``(N, 9)`` canonical trajectory in millimeters and R6D."""
    return encode_matrices(ep.relative())


def chunk_indices(n: int, horizon: int) -> np.ndarray:
    """``(n, horizon)`` frame indices of each sample's action chunk, final frame repeated."""
    idx = np.arange(n)[:, None] + np.arange(1, horizon + 1)[None, :]
    return np.minimum(idx, n - 1)


def fit_normalizer(episodes: list[Episode]) -> Normalizer:
    return Normalizer.fit(np.concatenate([relative_vectors(e)[:, :3] for e in episodes]))


def build_batch(
    episodes: list[Episode],
    horizon: int,
    norm: Normalizer,
    patches: bool = False,
    goal_mode: str = "task",
) -> Batch:
    """Stack all samples.  ``goal_mode='task'`` uses episode 0's final patch for every sample."""
    if not episodes:
        raise ValueError("no episodes")
    obs, act, cur, gidx = [], [], [], []
    for i, ep in enumerate(episodes):
        v = norm.encode(relative_vectors(ep))
        obs.append(v)
        act.append(v[chunk_indices(len(ep), horizon)])
        if patches:
            if ep.patches is None:
                raise ValueError(f"episode {i} has no RGBD patches")
            cur.append(ep.patches)
            gidx.append(np.full(len(ep), 0 if goal_mode == "task" else i))
    b = Batch(np.concatenate(obs), np.concatenate(act))
    if patches:
        if goal_mode == "task":
            goals = episodes[0].goal_patch[None]
        elif goal_mode == "episode":
            goals = np.stack([e.goal_patch for e in episodes])
        else:
            raise ValueError(f"unknown goal mode {goal_mode!r}")
        b = Batch(b.obs, b.actions, np.concatenate(cur), goals, np.concatenate(gidx))
    return b


def decode_chunk(chunk: np.ndarray, norm: Normalizer) -> np.ndarray:
    """Normalized ``(h, 9)`` chunk -> ``(h, 4, 4)`` relative poses (mm)."""
    return decode_matrices(norm.decode(chunk))


def write_canonical_csv(path, ep: Episode) -> None:
    v = relative_vectors(ep)
    lines = ["frame,x,y,z,r1,r2,r3,r4,r5,r6"]
    lines += [f"{i}," + ",".join(repr(float(a)) for a in row) for i, row in enumerate(v)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_canonical_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1)[:, 1:].reshape(-1, 9)
