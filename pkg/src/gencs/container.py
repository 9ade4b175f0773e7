"""Self-describing binary container: a JSON header line followed by f64le blocks.

Layout::

    GENCS-CONTAINER v1\n
    {"kind": ..., "dtype": "f64le", "blocks": [{"name": ..., "shape": [...]}, ...], ...}\n
    <raw little-endian float64 bytes, blocks concatenated in header order>

Round trips are bit-exact since the payload is the raw IEEE-754 representation.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"GENCS-CONTAINER v1\n"
DTYPE_TAG = "f64le"


class ContainerError(ValueError):
    pass


def write_container(path, kind: str, meta: dict[str, Any], blocks: list[tuple[str, np.ndarray]]) -> None:
    header = {
        "kind": kind,
        "dtype": DTYPE_TAG,
        "meta": meta,
        "blocks": [{"name": name, "shape": list(np.shape(arr))} for name, arr in blocks],
    }
    line = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(line + b"\n")
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))


def read_container(path, kind: str | None = None) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ContainerError(f"{path}: not a gencs container")
    rest = raw[len(MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl].decode("utf-8"))
    if header.get("dtype") != DTYPE_TAG:
        raise ContainerError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    if kind is not None and header.get("kind") != kind:
        raise ContainerError(f"{path}: expected kind {kind!r}, found {header.get('kind')!r}")
    payload = rest[nl + 1:]
    offset = 0
    blocks: dict[str, np.ndarray] = {}
    for spec in header["blocks"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(payload):
            raise ContainerError(f"{path}: truncated block {spec['name']!r}")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(shape)
        blocks[spec["name"]] = arr.astype(np.float64)
        offset += nbytes
    if offset != len(payload):
        raise ContainerError(f"{path}: {len(payload) - offset} trailing bytes")
    return header["meta"], blocks
