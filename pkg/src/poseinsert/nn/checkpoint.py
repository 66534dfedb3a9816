"""Checkpoint files: a text header followed by a little-endian float64 blob.

Layout::

    POSEINSERT-CKPT 1\\n
    <header length in bytes>\\n
    <JSON header: config, config hash, layer table, extra>
    <float64 LE parameter blob>
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .params import ParamStore

MAGIC = b"POSEINSERT-CKPT 1\n"


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    text = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save(path, params: ParamStore, config: dict, extra: dict | None = None):
    header = {
        "config": config,
        "config_hash": config_hash(config),
        "layers": [[k, o, list(s)] for k, (o, s) in params.table.items()],
        "n_params": len(params),
        "extra": extra or {},
    }
    text = json.dumps(header, sort_keys=True, indent=1).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(f"{len(text)}\n".encode())
        f.write(text)
        f.write(params.flat.astype("<f8").tobytes())


def load(path) -> tuple[ParamStore, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    rest = data[len(MAGIC) :]
    nl = rest.index(b"\n")
    n = int(rest[:nl])
    header = json.loads(rest[nl + 1 : nl + 1 + n])
    blob = rest[nl + 1 + n :]
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    if flat.size != header["n_params"]:
        raise CheckpointError(f"{path}: expected {header['n_params']} parameters, found {flat.size}")
    if config_hash(header["config"]) != header["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    table = {k: (o, tuple(s)) for k, o, s in header["layers"]}
    return ParamStore(flat.copy(), table), header
