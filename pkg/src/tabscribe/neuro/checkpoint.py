"""Checkpoint file format: one JSON header line, then raw little-endian f32 tensors."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, header: dict, tensors: list[np.ndarray]) -> None:
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    header["param_shapes"] = [list(t.shape) for t in tensors]
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for t in tensors:
            f.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, list[np.ndarray]]:
    with open(path, "rb") as f:
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"bad checkpoint header: {e}") from e
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format version {header.get('format_version')}")
        tensors = []
        for shape in header["param_shapes"]:
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(4 * n)
            if len(buf) != 4 * n:
                raise CheckpointError("truncated checkpoint")
            tensors.append(np.frombuffer(buf, dtype="<f4").reshape(shape).copy())
        if f.read(1):
            raise CheckpointError("trailing bytes after parameter tensors")
    return header, tensors
