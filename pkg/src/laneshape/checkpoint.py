"""Named-tensor checkpoint files.

Layout: the magic line ``TENSORS 1``, one line with the byte length of the
JSON manifest, the manifest itself, a newline, then a single little-endian
float64 blob holding every tensor back to back.  The manifest lists name,
shape, and byte offset (into the blob) per tensor plus a free-form ``meta``
mapping for hyperparameters and run state.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"TENSORS 1\n"


class CheckpointFormatError(ValueError):
    pass


def save_tensors(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, a in arrays.items():
        a = np.ascontiguousarray(a, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    manifest = json.dumps({"tensors": entries, "meta": meta or {}},
                          sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(f"{len(manifest)}\n".encode("ascii"))
        f.write(manifest)
        f.write(b"\n")
        for blob in blobs:
            f.write(blob)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointFormatError(f"{path}: not a tensor checkpoint")
        length_line = f.readline()
        try:
            manifest_len = int(length_line)
        except ValueError as e:
            raise CheckpointFormatError(f"{path}: bad manifest length") from e
        try:
            manifest = json.loads(f.read(manifest_len).decode("utf-8"))
        except json.JSONDecodeError as e:
            raise CheckpointFormatError(f"{path}: bad manifest") from e
        if f.read(1) != b"\n":
            raise CheckpointFormatError(f"{path}: missing blob separator")
        blob = f.read()
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        a = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        arrays[entry["name"]] = a.reshape(shape).astype(np.float64)
    return arrays, manifest.get("meta", {})
