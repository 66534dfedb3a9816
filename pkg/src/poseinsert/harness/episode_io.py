"""Episode files and dataset manifests.

Episode file layout::

    POSEINSERT-EPISODE
    version 1
    key = value            (metadata, one per line)
    ...
    end
    <N x 34 little-endian float64>   frame records
    patches N S S 4                  (only when patches are stored)
    <N x S x S x 4 little-endian float32>

A frame record is ``index, T_c^s (12), T_c^t (12), bbox (4), true x y z yaw,
contact``; poses are 9 rotation entries row-major then the translation.
"""

from __future__ import annotations

import hashlib
import io
from pathlib import Path

import numpy as np

from ..sim.expert import Episode

MAGIC = b"POSEINSERT-EPISODE\n"
VERSION = 1
RECORD = 34


class EpisodeFormatError(ValueError):
    pass


def _row12(T: np.ndarray) -> np.ndarray:
    return np.concatenate([T[:, :3, :3].reshape(-1, 9), T[:, :3, 3]], axis=1)


def _mat(rows: np.ndarray) -> np.ndarray:
    T = np.zeros((rows.shape[0], 4, 4))
    T[:, :3, :3] = rows[:, :9].reshape(-1, 3, 3)
    T[:, :3, 3] = rows[:, 9:12]
    T[:, 3, 3] = 1.0
    return T


def encode_episode(ep: Episode) -> bytes:
    n = len(ep)
    rec = np.empty((n, RECORD))
    rec[:, 0] = np.arange(n)
    rec[:, 1:13] = _row12(ep.t_c_s)
    rec[:, 13:25] = _row12(ep.t_c_t)
    rec[:, 25:29] = ep.bbox
    rec[:, 29:33] = ep.true_rel
    rec[:, 33] = ep.contact
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(f"version {VERSION}\n".encode())
    meta = dict(ep.meta)
    meta["frames"] = n
    for k in sorted(meta):
        v = str(meta[k])
        if "\n" in v or "=" in str(k):
            raise EpisodeFormatError(f"metadata entry {k!r} cannot be stored")
        buf.write(f"{k} = {v}\n".encode())
    buf.write(b"end\n")
    buf.write(rec.astype("<f8").tobytes())
    if ep.patches is not None:
        p = ep.patches
        buf.write(f"patches {' '.join(str(d) for d in p.shape)}\n".encode())
        buf.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return buf.getvalue()


def decode_episode(data: bytes) -> Episode:
    if not data.startswith(MAGIC):
        raise EpisodeFormatError("not an episode file")
    pos = len(MAGIC)

    def line():
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise EpisodeFormatError("truncated header")
        out = data[pos:end].decode()
        pos = end + 1
        return out

    ver = line()
    if ver != f"version {VERSION}":
        raise EpisodeFormatError(f"unsupported {ver!r}")
    meta = {}
    while (ln := line()) != "end":
        k, _, v = ln.partition(" = ")
        meta[k] = v
    n = int(meta.pop("frames"))
    size = n * RECORD * 8
    if len(data) < pos + size:
        raise EpisodeFormatError("truncated frame records")
    rec = np.frombuffer(data, dtype="<f8", count=n * RECORD, offset=pos).reshape(n, RECORD)
    pos += size
    if np.any(np.diff(rec[:, 0]) <= 0):
        raise EpisodeFormatError("frames are not time-ordered")
    patches = None
    if pos < len(data):
        head = line().split()
        if head[0] != "patches":
            raise EpisodeFormatError("unexpected trailing block")
        shape = tuple(int(d) for d in head[1:])
        if shape[0] != n:
            raise EpisodeFormatError("patch block does not match the frame count")
        count = int(np.prod(shape))
        patches = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
    return Episode(
        _mat(rec[:, 1:13]),
        _mat(rec[:, 13:25]),
        rec[:, 25:29].copy(),
        rec[:, 29:33].copy(),
        rec[:, 33].astype(bool),
        patches,
        meta,
    )


def write_episode(path, ep: Episode) -> str:
    data = encode_episode(ep)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_episode(path) -> Episode:
    return decode_episode(Path(path).read_bytes())


# -- manifest -----------------------------------------------------------


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(directory, files: list[str], header: dict | None = None) -> Path:
    d = Path(directory)
    lines = [f"# {k} = {v}" for k, v in sorted((header or {}).items())]
    lines += [f"{file_hash(d / f)}  {f}" for f in files]
    out = d / "manifest.txt"
    out.write_text("\n".join(lines) + "\n")
    return out


def read_manifest(directory) -> tuple[dict, list[tuple[str, str]]]:
    """Header entries and ``(hash, filename)`` pairs, in listing order."""
    path = Path(directory) / "manifest.txt"
    if not path.exists():
        raise FileNotFoundError(f"no manifest in {directory}")
    header, entries = {}, []
    for ln in path.read_text().splitlines():
        if ln.startswith("# "):
            k, _, v = ln[2:].partition(" = ")
            header[k] = v
        elif ln.strip():
            h, _, name = ln.partition("  ")
            entries.append((h, name))
    return header, entries


def verify_manifest(directory) -> list[str]:
    """Names of listed files whose content hash no longer matches."""
    _, entries = read_manifest(directory)
    d = Path(directory)
    return [name for h, name in entries if not (d / name).exists() or file_hash(d / name) != h]
