"""Named-tensor checkpoints.

Layout: a UTF-8 text header, then the raw tensor data::

    LAYOUTMRC-CHECKPOINT 1
    tensors 3
    emb.token 120 8
    sal.w 8
    sal.b
    end
    <little-endian float32 values of each tensor, header order, C order>

A tensor line is the name followed by its dimensions; scalars have none.
"""

from __future__ import annotations

from os import PathLike
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = "LAYOUTMRC-CHECKPOINT 1"


class CheckpointError(ValueError):
    pass


def to_bytes(params: Mapping[str, np.ndarray]) -> bytes:
    lines = [MAGIC, f"tensors {len(params)}"]
    for name, arr in params.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"tensor name {name!r} contains whitespace")
        lines.append(" ".join([name, *(str(d) for d in np.shape(arr))]))
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes() for arr in params.values())
    return header + body


def save_checkpoint(params: Mapping[str, np.ndarray], path: str | PathLike) -> None:
    Path(path).write_bytes(to_bytes(params))


def from_bytes(data: bytes) -> dict[str, np.ndarray]:
    pos = 0
    shapes: list[tuple[str, tuple[int, ...]]] = []

    def readline() -> str:
        nonlocal pos
        end = data.find(b"\n", pos)
        if end < 0:
            raise CheckpointError("truncated checkpoint header")
        line = data[pos:end].decode("utf-8")
        pos = end + 1
        return line

    if readline() != MAGIC:
        raise CheckpointError("not a layoutmrc checkpoint")
    count_line = readline().split()
    if len(count_line) != 2 or count_line[0] != "tensors":
        raise CheckpointError("malformed tensor count line")
    for _ in range(int(count_line[1])):
        name, *dims = readline().split()
        shapes.append((name, tuple(int(d) for d in dims)))
    if readline() != "end":
        raise CheckpointError("header does not terminate with 'end'")
    params: dict[str, np.ndarray] = {}
    for name, shape in shapes:
        n = int(np.prod(shape, dtype=np.int64))
        nbytes = 4 * n
        if pos + nbytes > len(data):
            raise CheckpointError(f"truncated data for tensor {name}")
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape)
        params[name] = arr.astype(np.float64)
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after last tensor")
    return params


def load_checkpoint(path: str | PathLike,
                    expected: Mapping[str, tuple[int, ...]] | None = None) -> dict[str, np.ndarray]:
    """Read a checkpoint; when ``expected`` shapes are given, mismatches name the tensor."""
    params = from_bytes(Path(path).read_bytes())
    if expected is not None:
        for name, shape in expected.items():
            if name not in params:
                raise CheckpointError(f"checkpoint is missing tensor {name} {tuple(shape)}")
            if tuple(params[name].shape) != tuple(shape):
                raise CheckpointError(
                    f"tensor {name} has shape {tuple(params[name].shape)}, config expects {tuple(shape)}"
                )
        extra = sorted(set(params) - set(expected))
        if extra:
            raise CheckpointError(f"checkpoint has unexpected tensors: {', '.join(extra)}")
        params = {name: params[name] for name in expected}
    return params
