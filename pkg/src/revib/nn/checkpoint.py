"""Single-file parameter checkpoints.

Layout::

    line 1   b"REVIB-CKPT\\n"
    line 2   one UTF-8 JSON object followed by b"\\n":
             {"version": 1, "seed": int, "dtype": "<f8", "meta": {...},
              "tensors": [{"name": str, "shape": [int], "offset": int}, ...]}
    rest     little-endian float64 payload; each tensor is row-major and
             starts at ``offset`` bytes into the payload

Tensors are written in name order and the JSON uses sorted keys, so equal
parameters produce equal bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .layers import ParamStore

MAGIC = b"REVIB-CKPT\n"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(store: ParamStore, path, meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name in sorted(store.names()):
        arr = np.ascontiguousarray(store[name].data, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {"version": VERSION, "seed": store.seed, "dtype": "<f8",
              "meta": meta or {}, "tensors": entries}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for c in chunks:
            fh.write(c)


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC) or b"\n" not in raw[len(MAGIC):]:
        raise CheckpointError(f"{path}: not a revib checkpoint")
    end = raw.index(b"\n", len(MAGIC))
    try:
        header = json.loads(raw[len(MAGIC):end])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    payload = memoryview(raw)[end + 1:]
    expected = sum(8 * int(np.prod(e["shape"], dtype=np.int64)) for e in header["tensors"])
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload has {len(payload)} bytes, header describes "
                              f"{expected}")
    tensors = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return header, tensors


def load_into(store: ParamStore, path) -> dict:
    header, tensors = read(path)
    store.load_state(tensors)
    store.seed = header["seed"]
    return header
