"""Serialization: columnar CSV, compact binary, and JSON reports.

CSV carries one row per (path, step) with columns
``path_id, step, t, x_1..x_d`` (plus ``y_1..y_d`` for coupled data) and
round-trips values exactly via %.17g.  The binary format is the magic
``PCPL1``, a little-endian header ``<IIQQ`` of (d, n_steps, N, seed),
then the path block(s) as little-endian float64; one block is a plain
ensemble, two blocks are the x and y legs of a coupled ensemble.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .coupling import CoupledEnsemble
from .errors import ConfigError
from .sde import PathEnsemble, TimeGrid
from .verify import TestReport

MAGIC = b"PCPL1"
_HEADER = struct.Struct("<IIQQ")


def _parts(obj):
    if isinstance(obj, CoupledEnsemble):
        return obj.grid, (obj.x, obj.y), obj.seed
    if isinstance(obj, PathEnsemble):
        return obj.grid, (obj.values,), obj.seed
    raise ConfigError(f"cannot serialize object of type {type(obj).__name__}")


# ---------------------------------------------------------------------------
# CSV


def write_csv(path, obj) -> None:
    grid, blocks, _ = _parts(obj)
    n_paths, n_rows, d = blocks[0].shape
    header = ["path_id", "step", "t"] + [f"x_{i + 1}" for i in range(d)]
    if len(blocks) == 2:
        header += [f"y_{i + 1}" for i in range(d)]
    path_ids = np.repeat(np.arange(n_paths), n_rows)
    steps = np.tile(np.arange(n_rows), n_paths)
    times = np.tile(grid.times, n_paths)
    cols = [path_ids, steps, times]
    cols += [blk.reshape(-1, d)[:, i] for blk in blocks for i in range(d)]
    table = np.column_stack(cols)
    fmt = ["%d", "%d", "%.17g"] + ["%.17g"] * (len(blocks) * d)
    np.savetxt(path, table, fmt=fmt, delimiter=",", header=",".join(header), comments="")


def read_csv(path):
    """Read back an ensemble written by :func:`write_csv`.

    CSV carries no seed, so the result reports seed 0.
    """
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header[:3] != ["path_id", "step", "t"]:
        raise ConfigError(f"not an ensemble CSV: header starts with {header[:3]}")
    d = sum(1 for name in header if name.startswith("x_"))
    coupled = any(name.startswith("y_") for name in header)
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.lexsort((table[:, 1], table[:, 0]))
    table = table[order]
    n_rows = int(table[:, 1].max()) + 1
    n_paths = table.shape[0] // n_rows
    if n_paths * n_rows != table.shape[0]:
        raise ConfigError(f"ragged ensemble CSV: {table.shape[0]} rows, {n_rows} steps+1")
    grid = TimeGrid(n_rows - 1)
    x = table[:, 3 : 3 + d].reshape(n_paths, n_rows, d)
    if not coupled:
        return PathEnsemble(grid=grid, values=x, seed=0)
    y = table[:, 3 + d : 3 + 2 * d].reshape(n_paths, n_rows, d)
    return CoupledEnsemble(grid=grid, x=x, y=y, seed=0)


# ---------------------------------------------------------------------------
# binary


def write_binary(path, obj) -> None:
    grid, blocks, seed = _parts(obj)
    n_paths, _, d = blocks[0].shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(d, grid.n_steps, n_paths, seed))
        for blk in blocks:
            fh.write(np.ascontiguousarray(blk, dtype="<f8").tobytes())


def read_binary(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ConfigError(f"{path}: not a path ensemble file (bad magic {magic!r})")
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ConfigError(f"{path}: truncated header")
        d, n_steps, n_paths, seed = _HEADER.unpack(header)
        payload = fh.read()
    block = n_paths * (n_steps + 1) * d * 8
    if block == 0 or len(payload) not in (block, 2 * block):
        raise ConfigError(
            f"{path}: payload of {len(payload)} bytes does not hold 1 or 2 "
            f"blocks of {block}"
        )
    shape = (n_paths, n_steps + 1, d)
    grid = TimeGrid(n_steps)
    x = np.frombuffer(payload[:block], dtype="<f8").reshape(shape).copy()
    if len(payload) == block:
        return PathEnsemble(grid=grid, values=x, seed=int(seed))
    y = np.frombuffer(payload[block:], dtype="<f8").reshape(shape).copy()
    return CoupledEnsemble(grid=grid, x=x, y=y, seed=int(seed))


# ---------------------------------------------------------------------------
# JSON reports


def cost_report(estimate, n_steps: int, seed: int, closed_form=None, gap_report=None) -> dict:
    """Assemble the standard cost-report payload."""
    out = {
        "cost_spec": estimate.spec_label,
        "N": estimate.n_pairs,
        "n_steps": int(n_steps),
        "seed": int(seed),
        "mean": estimate.mean,
        "stderr": estimate.stderr,
    }
    if closed_form is not None:
        out["closed_form"] = closed_form.as_dict()
        out["gap"] = estimate.mean - closed_form.mean
    if gap_report is not None:
        out["candidates"] = [e.as_dict() for e in gap_report.entries]
        out["any_flagged"] = gap_report.any_flagged
    return out


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_reports_jsonl(path, reports) -> None:
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.as_dict(), sort_keys=True))
            fh.write("\n")


def read_reports_jsonl(path):
    reports = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            reports.append(TestReport(**raw))
    return reports
