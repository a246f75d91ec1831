"""Single-file tensor container: a magic line, a JSON header, raw little-endian bytes.

Writing is a pure function of (meta, tensors), so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"RLMCKPT 1\n"


class CheckpointError(ValueError):
    pass


def dumps(meta: dict, tensors: dict[str, np.ndarray]) -> bytes:
    index, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = arr.tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True, separators=(",", ":"))
    return MAGIC + header.encode("utf-8") + b"\n" + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not an RLM checkpoint (bad magic)")
    rest = blob[len(MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise CheckpointError("truncated checkpoint header")
    header = json.loads(rest[:nl].decode("utf-8"))
    body = rest[nl + 1:]
    tensors = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(body):
            raise CheckpointError(f"tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(body[start:start + n], dtype="<f8").astype(np.float64)
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(f"tensor {entry['name']}: {arr.size} values for shape {shape}")
        tensors[entry["name"]] = arr.reshape(shape)
    return header["meta"], tensors


def save(path, meta, tensors):
    Path(path).write_bytes(dumps(meta, tensors))


def load(path):
    return loads(Path(path).read_bytes())
