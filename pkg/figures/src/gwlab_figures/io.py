"""Parsers for the experiment output files the figures consume.

Each parser validates the documented schema and reports the first offending
column or row in the exception message; nothing here recomputes statistics,
the files are the single source of numerical truth.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptySeries, SchemaError

CURVE_COLUMNS = ("estimate", "stderr", "n_trees")
MEASURE_HEADER = "E_lo,E_hi,mass,stderr"


def _read_text(path) -> str:
    p = Path(path)
    try:
        return p.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read {p}: {exc}") from exc


def _float(row_no: int, column: str, raw: str) -> float:
    try:
        val = float(raw)
    except ValueError as exc:
        raise SchemaError(
            f"row {row_no}: column '{column}' is not a number: {raw!r}"
        ) from exc
    if math.isnan(val):
        raise SchemaError(f"row {row_no}: column '{column}' is NaN")
    return val


@dataclass(frozen=True)
class Curve:
    """Return curve rows: times (t or s), estimates, stderrs, n_trees."""

    times: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray
    n_trees: int
    time_column: str


def read_curve(path) -> Curve:
    lines = _read_text(path).splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty file")
    header = lines[0].split(",")
    if not header or header[0] not in ("t", "s"):
        raise SchemaError(f"{path}: missing column 't'")
    for want in CURVE_COLUMNS:
        if want not in header[1:]:
            raise SchemaError(f"{path}: missing column '{want}'")
    if len(header) != 4 or tuple(header[1:]) != CURVE_COLUMNS:
        raise SchemaError(f"{path}: unexpected header {lines[0]!r}")
    times, estimates, stderrs, counts = [], [], [], []
    for row_no, line in enumerate(lines[1:], start=1):
        parts = line.split(",")
        if len(parts) != 4:
            raise SchemaError(f"{path}: row {row_no} has {len(parts)} fields, want 4")
        times.append(_float(row_no, header[0], parts[0]))
        estimates.append(_float(row_no, "estimate", parts[1]))
        stderrs.append(_float(row_no, "stderr", parts[2]))
        counts.append(_float(row_no, "n_trees", parts[3]))
    if not times:
        raise EmptySeries(f"{path}: no data rows")
    n_trees = int(counts[0])
    return Curve(
        times=np.asarray(times),
        estimates=np.asarray(estimates),
        stderrs=np.asarray(stderrs),
        n_trees=n_trees,
        time_column=header[0],
    )


@dataclass(frozen=True)
class Measure:
    """Spectral measure rows: the atom at zero, grid cells, and the tail."""

    atom: float
    atom_stderr: float
    edges_lo: np.ndarray
    edges_hi: np.ndarray
    masses: np.ndarray
    stderrs: np.ndarray
    tail: float
    tail_stderr: float


def read_measure(path) -> Measure:
    lines = _read_text(path).splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty file")
    if lines[0] != MEASURE_HEADER:
        header = lines[0].split(",")
        for want in MEASURE_HEADER.split(","):
            if want not in header:
                raise SchemaError(f"{path}: missing column '{want}'")
        raise SchemaError(f"{path}: unexpected header {lines[0]!r}")
    rows = []
    for row_no, line in enumerate(lines[1:], start=1):
        parts = line.split(",")
        if len(parts) != 4:
            raise SchemaError(f"{path}: row {row_no} has {len(parts)} fields, want 4")
        lo = _float(row_no, "E_lo", parts[0])
        hi = math.inf if parts[1] == "inf" else _float(row_no, "E_hi", parts[1])
        rows.append((lo, hi,
                     _float(row_no, "mass", parts[2]),
                     _float(row_no, "stderr", parts[3])))
    if not rows:
        raise EmptySeries(f"{path}: no data rows")
    if rows[0][0] != 0.0 or rows[0][1] != 0.0:
        raise SchemaError(f"{path}: first row must be the atom row 0,0,...")
    atom, atom_err = rows[0][2], rows[0][3]
    tail = tail_err = 0.0
    if len(rows) > 1 and math.isinf(rows[-1][1]):
        tail, tail_err = rows[-1][2], rows[-1][3]
        rows = rows[:-1]
    cells = rows[1:]
    lo = np.array([r[0] for r in cells])
    hi = np.array([r[1] for r in cells])
    if cells and (np.any(hi <= lo) or np.any(lo[1:] != hi[:-1])):
        raise SchemaError(f"{path}: cell edges are not contiguous increasing")
    return Measure(
        atom=atom,
        atom_stderr=atom_err,
        edges_lo=lo,
        edges_hi=hi,
        masses=np.array([r[2] for r in cells]),
        stderrs=np.array([r[3] for r in cells]),
        tail=tail,
        tail_stderr=tail_err,
    )


@dataclass(frozen=True)
class Envelope:
    """Two-sided bound constants for the low-energy spectral mass.

    lower(E) = exp(-f_minus)/(2 x) * exp(-2 sqrt(3) f_minus / sqrt(E)) and
    upper(E) = exp(f_plus)/x * exp(-f_plus / sqrt(E)), both clamped to
    [0, 1], with x the mean of the dying-out offspring law.
    """

    lambda_extinct: float
    f_minus: float
    f_plus: float

    def lower(self, E):
        e = np.asarray(E, dtype=float)
        pref = math.exp(-self.f_minus) / (2.0 * self.lambda_extinct)
        return np.clip(pref * np.exp(-2.0 * math.sqrt(3.0) * self.f_minus
                                     / np.sqrt(e)), 0.0, 1.0)

    def upper(self, E):
        e = np.asarray(E, dtype=float)
        pref = math.exp(self.f_plus) / self.lambda_extinct
        return np.clip(pref * np.exp(-self.f_plus / np.sqrt(e)), 0.0, 1.0)


def read_envelope(path) -> Envelope:
    try:
        payload = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise SchemaError(f"{path}: top level must be an object")
    bounds = payload.get("bounds", payload)
    for key in ("lambda_extinct", "f_minus", "f_plus"):
        if key not in bounds:
            raise SchemaError(f"{path}: missing column '{key}'")
        if not isinstance(bounds[key], (int, float)):
            raise SchemaError(f"{path}: column '{key}' is not a number")
    return Envelope(
        lambda_extinct=float(bounds["lambda_extinct"]),
        f_minus=float(bounds["f_minus"]),
        f_plus=float(bounds["f_plus"]),
    )
