"""Versioned CSV tables, binary operator snapshots and coupling atom lists.

Every text file starts with ``# format_version = 1``; floats are written
with 17 significant digits so that reruns are byte-identical.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .phase_space import PhaseGrid
from .quantum import DensityOperator

FORMAT_VERSION = 1
_HEADER = f"# format_version = {FORMAT_VERSION}"


def fmt(value):
    """Canonical text for a table cell."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(value)


def csv_text(columns, rows, comments=()):
    """CSV text with a version line, optional comment lines and a unit-bearing header.

    Parameters
    ----------
    columns : sequence of (name, unit)
    rows : iterable of sequences
    """
    buf = io.StringIO()
    buf.write(_HEADER + "\n")
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"{name} [{unit}]" for name, unit in columns])
    for r in rows:
        if len(r) != len(columns):
            raise ValueError(f"row has {len(r)} cells, header has {len(columns)}")
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path, columns, rows, comments=()):
    text = csv_text(columns, rows, comments)
    Path(path).write_text(text, encoding="utf-8")
    return text


def _parse_cell(s):
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_csv(path):
    """Read a table written by :func:`write_csv`.

    Returns
    -------
    columns : list of (name, unit)
    rows : list of lists (numbers parsed, other cells kept as text)
    meta : dict of ``key = value`` comment lines
    """
    meta, body = {}, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, sep, val = line[1:].partition("=")
            if sep:
                meta[key.strip()] = val.strip()
            continue
        if line.strip():
            body.append(line)
    reader = list(csv.reader(body))
    if not reader:
        raise ValueError(f"{path}: no header row")
    columns = []
    for cell in reader[0]:
        name, _, unit = cell.partition(" [")
        columns.append((name.strip(), unit.rstrip("]")))
    rows = [[_parse_cell(c) for c in r] for r in reader[1:]]
    return columns, rows, meta


# operator snapshots ---------------------------------------------------------------

def save_operator(path, op):
    """Write ``path`` (row-major complex pairs, little-endian float64) and ``path.txt``."""
    path = Path(path)
    M = np.ascontiguousarray(op.matrix, dtype="<c16")
    path.write_bytes(M.tobytes(order="C"))
    g = op.grid
    side = [
        _HEADER,
        f"n = {g.n_x}",
        f"length = {fmt(g.length_x)}",
        f"v_max = {fmt(g.v_max)}",
        f"dim = {g.dim}",
        f"hbar = {fmt(op.hbar)}",
        f"kind = {op.kind}",
        f"trace_target = {fmt(op.trace_target)}",
        "layout = row-major complex128 little-endian",
    ]
    Path(str(path) + ".txt").write_text("\n".join(side) + "\n", encoding="utf-8")


def load_operator(path, validate=True):
    path = Path(path)
    meta = {}
    for line in Path(str(path) + ".txt").read_text(encoding="utf-8").splitlines():
        key, sep, val = line.lstrip("# ").partition("=")
        if sep:
            meta[key.strip()] = val.strip()
    n = int(meta["n"])
    grid = PhaseGrid(n, n, float(meta["length"]), float(meta["v_max"]), int(meta["dim"]))
    M = np.frombuffer(path.read_bytes(), dtype="<c16")
    if M.size != n * n:
        raise ValueError(f"{path}: expected {n * n} entries, found {M.size}")
    return DensityOperator(M.reshape(n, n), grid, float(meta["hbar"]), meta["kind"],
                           float(meta["trace_target"]), validate=validate)


# couplings ------------------------------------------------------------------------

def export_coupling(path, coupling):
    """Atom list of a classical coupling (x1, xi1, x2, xi2, w), or of an
    operator coupling (x, xi, w) whose states are not written.
    """
    if hasattr(coupling, "z1"):
        cols = [("x1", "length"), ("xi1", "velocity"), ("x2", "length"), ("xi2", "velocity"),
                ("w", "mass")]
        rows = np.column_stack([coupling.z1, coupling.z2, coupling.w])
    else:
        cols = [("x", "length"), ("xi", "velocity"), ("w", "mass")]
        rows = np.column_stack([coupling.points, coupling.weights])
    return write_csv(path, cols, rows.tolist())


def density_rows(f):
    """Rows (x, xi, f) of a d = 1 phase-space density, x slowest."""
    g = f.grid
    X, V = np.broadcast_arrays(*g.mesh())
    return np.column_stack([X.ravel(), V.ravel(), f.values.ravel()]).tolist()


def export_density(path, f):
    cols = [("x", "length"), ("xi", "velocity"), ("f", "mass/(length*velocity)")]
    return write_csv(path, cols, density_rows(f), comments=(f"t = {fmt(f.time)}",))
