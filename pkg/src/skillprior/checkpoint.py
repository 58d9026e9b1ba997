"""Binary checkpoint format with a JSON header and raw little-endian arrays.

Layout: magic line, one JSON header line, then the concatenated array bytes.
The writer is deterministic so the file hash identifies the parameters.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Dict, Tuple

import numpy as np

MAGIC = b"SKILLPRIOR-CKPT\n"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class MalformedCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    """Checkpoint is well-formed but was produced for something else."""


def save_checkpoint(path, arrays: Dict[str, np.ndarray], kind: str, config_hash: str, meta: dict) -> str:
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype=np.dtype(arrays[name].dtype).newbyteorder("<"))
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset,
                        "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"format_version": FORMAT_VERSION, "kind": kind, "config_hash": config_hash,
              "meta": meta, "arrays": entries}
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for raw in blobs:
            f.write(raw)
    os.replace(tmp, path)
    return file_hash(path)


def load_checkpoint(path, kind: str = None) -> Tuple[dict, Dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(MAGIC):
        raise MalformedCheckpointError(f"{path}: not a checkpoint file (bad magic)")
    end = data.find(b"\n", len(MAGIC))
    if end < 0:
        raise MalformedCheckpointError(f"{path}: header line missing")
    try:
        header = json.loads(data[len(MAGIC):end])
        version = header["format_version"]
        entries = header["arrays"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MalformedCheckpointError(f"{path}: bad header ({exc})") from None
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format_version {version}, expected {FORMAT_VERSION}")
    if kind is not None and header.get("kind") != kind:
        raise CheckpointMismatchError(f"{path}: checkpoint kind {header.get('kind')!r}, expected {kind!r}")
    body = memoryview(data)[end + 1:]
    arrays = {}
    try:
        for e in entries:
            lo, hi = e["offset"], e["offset"] + e["nbytes"]
            if hi > len(body):
                raise MalformedCheckpointError(f"{path}: array {e['name']} truncated")
            arrays[e["name"]] = np.frombuffer(body[lo:hi], dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedCheckpointError(f"{path}: bad array table ({exc})") from None
    expected = sum(e["nbytes"] for e in entries)
    if len(body) != expected:
        raise MalformedCheckpointError(f"{path}: body is {len(body)} bytes, expected {expected}")
    return header, arrays


def file_hash(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()
