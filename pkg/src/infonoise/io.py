"""File formats: dataset, profile and grid CSVs, schedule JSON, JSON-lines logs.

Floats are written with ``repr`` so every value round-trips exactly.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .allocate import (
    GateParams,
    OnsetPivot,
    PivotMethod,
    Weighting,
    apply_gate,
    build_allocation,
    calibrate_pivot,
    effective_emphasis,
    pivot_from_dict,
    schedule_from_allocation,
    smooth_profile,
)
from .errors import ConfigError, DataError
from .grid import LogGrid, Profile, SigmaRange, TabulatedDensity, build_log_grid
from .infer import InferenceGrid
from .oracle import Dataset

__all__ = [
    "read_dataset",
    "write_dataset",
    "read_profile_csv",
    "write_profile_csv",
    "read_grid_csv",
    "write_grid_csv",
    "write_table_csv",
    "write_json",
    "read_json",
    "write_jsonl",
    "read_jsonl",
    "Schedule",
]


def _fmt(v: float) -> str:
    return repr(float(v))


def _parse_rows(path, header: bool) -> tuple[list[int], list[list[str]], Optional[list[str]]]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"{path}: cannot read: {exc.strerror}") from None
    with fh:
        rows, lines, head = [], [], None
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                head = row
                continue
            if not row or all(not c.strip() for c in row):
                continue
            rows.append(row)
            lines.append(lineno)
    return lines, rows, head


def _floats(path, lineno: int, row: list[str]) -> list[float]:
    try:
        vals = [float(c) for c in row]
    except ValueError:
        raise DataError(f"{path}: line {lineno}: not a number in {row!r}") from None
    if not all(np.isfinite(vals)):
        raise DataError(f"{path}: line {lineno}: non-finite value in {row!r}")
    return vals


def read_dataset(path, header: bool = False) -> Dataset:
    """One sample per row, ``d`` float columns; ``header`` skips line 1."""
    lines, rows, _ = _parse_rows(path, header)
    if not rows:
        raise DataError(f"{path}: no samples")
    width = len(rows[0])
    out = []
    for lineno, row in zip(lines, rows):
        if len(row) != width:
            raise DataError(f"{path}: line {lineno}: expected {width} columns, got {len(row)}")
        out.append(_floats(path, lineno, row))
    return Dataset(np.array(out))


def write_dataset(path, points) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in pts:
            w.writerow([_fmt(v) for v in row])


def write_profile_csv(path, profile: Profile) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma", "value"])
        for s, v in zip(profile.grid.centers, profile.values):
            w.writerow([_fmt(s), _fmt(v)])


def _grid_from_centers(centers: np.ndarray, grid: Optional[LogGrid]) -> LogGrid:
    K = centers.size
    candidates = []
    if grid is not None:
        candidates.append(grid)
    else:
        candidates.append(build_log_grid(SigmaRange(), K))
        if K >= 2:
            # invert center_k = lo * r^(k + 1/2) with r = (hi/lo)^(1/K)
            r = np.exp(np.mean(np.diff(np.log(centers))))
            lo = centers[0] / np.sqrt(r)
            hi = lo * r**K
            lo, hi = float(f"{lo:.12g}"), float(f"{hi:.12g}")
            if 0 < lo < hi:
                candidates.append(build_log_grid(SigmaRange(lo, hi), K))
    for g in candidates:
        if g.K == K and np.allclose(g.centers, centers, rtol=1e-9, atol=0):
            return g
    raise DataError("profile sigma column is not the center set of a log grid")


def read_profile_csv(path, grid: Optional[LogGrid] = None) -> Profile:
    """Read a ``sigma,value`` profile and recover its log grid.

    Without ``grid`` the default range is tried first, then the range implied
    by the sigma column.
    """
    lines, rows, head = _parse_rows(path, header=True)
    if head is None or [h.strip() for h in head] != ["sigma", "value"]:
        raise DataError(f"{path}: line 1: expected header 'sigma,value', got {head!r}")
    sig, val = [], []
    for lineno, row in zip(lines, rows):
        if len(row) != 2:
            raise DataError(f"{path}: line {lineno}: expected 2 columns, got {len(row)}")
        s, v = _floats(path, lineno, row)
        sig.append(s)
        val.append(v)
    if len(sig) < 2:
        raise DataError(f"{path}: need at least 2 profile rows")
    try:
        g = _grid_from_centers(np.array(sig), grid)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None
    return Profile(g, np.array(val))


def write_grid_csv(path, grid: InferenceGrid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "sigma"])
        for i, s in enumerate(grid.nodes):
            w.writerow([i, _fmt(s)])


def read_grid_csv(path) -> InferenceGrid:
    lines, rows, head = _parse_rows(path, header=True)
    if head is None or [h.strip() for h in head] != ["index", "sigma"]:
        raise DataError(f"{path}: line 1: expected header 'index,sigma', got {head!r}")
    nodes = []
    for i, (lineno, row) in enumerate(zip(lines, rows)):
        if len(row) != 2:
            raise DataError(f"{path}: line {lineno}: expected 2 columns, got {len(row)}")
        idx, s = _floats(path, lineno, row)
        if idx != i:
            raise DataError(f"{path}: line {lineno}: expected index {i}, got {row[0]}")
        nodes.append(s)
    try:
        return InferenceGrid(np.array(nodes))
    except ConfigError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_table_csv(path, columns: list[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: cannot read: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def write_jsonl(path, records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: {exc.msg}") from None
    return out


class Schedule:
    """A training schedule plus the allocation it was derived from.

    The JSON form is the sampling density ``pi`` in density-file layout,
    extended with ``rho``, ``u_cdf`` (the CDF of ``rho``), ``phi = pi * w``,
    the weighting, the gate and the pivot rule.
    """

    def __init__(self, pi: TabulatedDensity, rho: TabulatedDensity, weighting: Weighting,
                 gate: GateParams, pivot: PivotMethod):
        if pi.grid != rho.grid:
            raise ConfigError("pi and rho live on different grids")
        self.pi = pi
        self.rho = rho
        self.weighting = weighting
        self.gate = gate
        self.pivot = pivot

    @classmethod
    def from_rate(cls, rate: Profile, weighting: Weighting = Weighting(), n: float = 3,
                  pivot: PivotMethod | None = None, smoothing: bool = False) -> "Schedule":
        """Pivot, gate, optionally smooth, normalize to ``rho``, divide by ``w``."""
        pivot = pivot or OnsetPivot()
        gate = GateParams(calibrate_pivot(rate, pivot), n)
        gated = apply_gate(rate, gate)
        if smoothing:
            gated = smooth_profile(gated)
        rho = build_allocation(gated)
        return cls(schedule_from_allocation(rho, weighting), rho.rho, weighting, gate, pivot)

    @property
    def phi(self) -> Profile:
        return effective_emphasis(self.pi, self.weighting)

    def to_dict(self) -> dict:
        out = self.pi.to_dict()
        out.update(
            rho=self.rho.density.tolist(),
            u_cdf=self.rho.cdf.tolist(),
            phi=self.phi.values.tolist(),
            weighting=self.weighting.to_dict(),
            gate={"c": self.gate.c, "n": self.gate.n},
            pivot_method=self.pivot.to_dict()["kind"],
            pivot=self.pivot.to_dict(),
            pivot_c=self.gate.c,
        )
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "Schedule":
        try:
            pi = TabulatedDensity.from_dict(obj)
            rho = TabulatedDensity(pi.grid, np.asarray(obj["rho"], float), np.asarray(obj["u_cdf"], float))
            pivot = pivot_from_dict(obj.get("pivot", obj["pivot_method"]))
            gate = GateParams(float(obj["gate"]["c"]), float(obj["gate"]["n"]))
            return cls(pi, rho, Weighting.from_dict(obj["weighting"]), gate, pivot)
        except KeyError as exc:
            raise DataError(f"schedule file is missing field {exc}") from None

    def save(self, path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "Schedule":
        return cls.from_dict(read_json(Path(path)))
