"""Plain-text checkpoints that round-trip float64 parameters bit for bit.

Layout::

    DGLSTM-CKPT v1
    <network spec as sorted key=value pairs>
    <name> <rows> <cols>
    <row 0 values>
    ...

Values are written with 17 significant digits, one matrix row per line.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .network import NetworkSpec, Params, check_params, param_shapes

MAGIC = "DGLSTM-CKPT v1"


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be parsed."""


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_checkpoint(spec: NetworkSpec, params: Params) -> str:
    check_params(spec, params)
    lines = [MAGIC, spec.to_kv()]
    for name, (rows, cols) in param_shapes(spec).items():
        arr = params[name]
        lines.append(f"{name} {rows} {cols}")
        for r in range(rows):
            lines.append(" ".join("%.17g" % v for v in arr[r]))
    return "\n".join(lines) + "\n"


def save_checkpoint(path, spec: NetworkSpec, params: Params) -> None:
    atomic_write_text(path, format_checkpoint(spec, params))


def parse_checkpoint(text: str) -> tuple[NetworkSpec, Params]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != MAGIC:
        raise CheckpointError(f"line 1: expected {MAGIC!r}")
    if len(lines) < 2:
        raise CheckpointError("line 2: missing network spec")
    try:
        spec = NetworkSpec.from_kv(lines[1])
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"line 2: bad network spec: {exc}") from None

    expected = param_shapes(spec)
    params = {}
    pos = 2
    for name, (rows, cols) in expected.items():
        if pos >= len(lines):
            raise CheckpointError(
                f"line {pos + 1}: expected {len(expected)} tensors, found {len(params)} (file ends before {name})")
        header = lines[pos].split()
        if header != [name, str(rows), str(cols)]:
            raise CheckpointError(f"line {pos + 1}: expected header '{name} {rows} {cols}', got {lines[pos]!r}")
        pos += 1
        values = []
        while len(values) < rows * cols:
            if pos >= len(lines):
                raise CheckpointError(
                    f"line {pos + 1}: expected {len(expected)} tensors, found {len(params)} "
                    f"({name} has {len(values)} of {rows * cols} values)")
            try:
                values.extend(float(tok) for tok in lines[pos].split())
            except ValueError:
                raise CheckpointError(f"line {pos + 1}: non-numeric value in {name}") from None
            pos += 1
        if len(values) != rows * cols:
            raise CheckpointError(f"line {pos}: {name} has {len(values)} values, expected {rows * cols}")
        arr = np.array(values, dtype=np.float64).reshape(rows, cols)
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"line {pos}: non-finite value in {name}")
        params[name] = arr
    if pos != len(lines):
        raise CheckpointError(f"line {pos + 1}: unexpected content after {len(expected)} tensors")
    return spec, params


def load_checkpoint(path) -> tuple[NetworkSpec, Params]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_checkpoint(fh.read())
