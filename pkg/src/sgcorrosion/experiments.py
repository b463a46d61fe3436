"""Convergence studies, epsilon sweeps and profile runs with CSV output.

Every study runs independent simulations (optionally in worker processes),
then assembles its table in a fixed order so repeated invocations write
byte-identical CSV files.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import mesh as meshmod
from .mesh import Mesh1D
from .timeloop import RunConfig, State, Trajectory, run, step_count

FIELDS = ("p", "n", "psi")

SPACE_COLUMNS = ("cells", "h", "err_p", "err_n", "err_psi", "rate_p", "rate_n", "rate_psi")
TIME_COLUMNS = ("dt", "err_p", "err_n", "err_psi", "rate_p", "rate_n", "rate_psi")
EPS_COLUMNS = ("epsilon", "err_p", "err_n", "err_psi",
               "dist_to_eps0_p", "dist_to_eps0_n", "dist_to_eps0_psi")
PROFILE_COLUMNS = ("x", "p", "n", "psi")

ERROR_NORMS = ("projected", "nested")


class StudyError(RuntimeError):
    """A run inside a study failed; ``table`` holds the rows computed so far."""

    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table


@dataclass(frozen=True)
class ErrorReport:
    """Per-field discrete L2 errors at the final time."""

    p: float
    n: float
    psi: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.p, self.n, self.psi)

    def max(self) -> float:
        return max(self.as_tuple())


# ---------------------------------------------------------------------------
# error measures


def _nesting(coarse: Mesh1D, fine: Mesh1D) -> int:
    if not (coarse.is_uniform and fine.is_uniform):
        raise ValueError("error measures need uniform meshes")
    r, rem = divmod(fine.cells, coarse.cells)
    if rem or r < 1:
        raise ValueError(f"meshes are not nested ({coarse.cells} does not divide {fine.cells})")
    return r


def l2_error_nested(coarse: State, coarse_mesh: Mesh1D,
                    reference: State, reference_mesh: Mesh1D) -> ErrorReport:
    """L2 distance between two piecewise-constant fields on nested meshes.

    Every fine cell lies in exactly one coarse cell, so the integral of the
    squared difference is a finite sum over fine cells.

    Notes
    -----
    For a smooth solution this distance is bounded below by the O(h) gap
    between a function and its cell averages; it cannot show more than first
    order. :func:`l2_error_projected` removes that floor.
    """
    r = _nesting(coarse_mesh, reference_mesh)
    w = reference_mesh.widths
    out = []
    for f in FIELDS:
        c = np.repeat(getattr(coarse, f)[1:-1], r)
        d = c - getattr(reference, f)[1:-1]
        out.append(float(np.sqrt(np.sum(w * d * d))))
    return ErrorReport(*out)


def l2_error_projected(coarse: State, coarse_mesh: Mesh1D,
                       reference: State, reference_mesh: Mesh1D) -> ErrorReport:
    """L2 error of the coarse cell values against the reference averaged
    onto the coarse cells.

    The coarse unknowns approximate cell averages, so this is the error of
    the scheme itself, free of the piecewise-constant reconstruction gap.
    """
    r = _nesting(coarse_mesh, reference_mesh)
    I = coarse_mesh.cells
    wf = reference_mesh.widths.reshape(I, r)
    out = []
    for f in FIELDS:
        ref = getattr(reference, f)[1:-1].reshape(I, r)
        avg = np.sum(wf * ref, axis=1) / coarse_mesh.widths
        d = getattr(coarse, f)[1:-1] - avg
        out.append(float(np.sqrt(np.sum(coarse_mesh.widths * d * d))))
    return ErrorReport(*out)


def l2_error_same_mesh(a: State, b: State, mesh: Mesh1D) -> ErrorReport:
    """Cellwise L2 distance of two states on the same mesh."""
    w = mesh.widths
    out = []
    for f in FIELDS:
        d = getattr(a, f)[1:-1] - getattr(b, f)[1:-1]
        out.append(float(np.sqrt(np.sum(w * d * d))))
    return ErrorReport(*out)


def _error_fn(norm: str):
    if norm == "projected":
        return l2_error_projected
    if norm == "nested":
        return l2_error_nested
    raise ValueError(f"error norm must be one of {ERROR_NORMS}, got {norm!r}")


def observed_rate(err_coarse: float, err_fine: float, h_coarse: float, h_fine: float) -> float:
    """log(err_coarse/err_fine) / log(h_coarse/h_fine); NaN when undefined."""
    if not (err_coarse > 0 and err_fine > 0) or h_coarse == h_fine:
        return math.nan
    if not (math.isfinite(err_coarse) and math.isfinite(err_fine)):
        return math.nan
    return math.log(err_coarse / err_fine) / math.log(h_coarse / h_fine)


# ---------------------------------------------------------------------------
# tables


@dataclass
class ConvergenceRow:
    resolution: float          # cells for space studies, dt for time studies
    h: float
    errors: tuple[float, float, float]
    rates: tuple[float, float, float] = (math.nan, math.nan, math.nan)
    flagged: bool = False


@dataclass
class ConvergenceTable:
    """Errors and pairwise observed rates, rows ordered by decreasing step.

    ``kind`` is ``"space"`` or ``"time"``; ``meta`` records epsilon, mesh,
    reference and error norm.
    """

    kind: str
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    complete: bool = True

    @property
    def columns(self) -> tuple:
        return SPACE_COLUMNS if self.kind == "space" else TIME_COLUMNS

    def errors(self, name: str) -> list[float]:
        i = FIELDS.index(name)
        return [r.errors[i] for r in self.rows]

    def rates(self, name: str) -> list[float]:
        i = FIELDS.index(name)
        return [r.rates[i] for r in self.rows[1:]]

    def headline_rate(self, name: str, pairs: int = 2) -> float:
        """Mean observed rate over the finest ``pairs`` pairs."""
        r = self.rates(name)
        if len(r) < 1:
            return math.nan
        return float(np.mean(r[-pairs:]))

    def records(self) -> list[tuple]:
        out = []
        for row in self.rows:
            lead = (int(row.resolution), row.h) if self.kind == "space" else (row.resolution,)
            out.append(lead + tuple(row.errors) + tuple(row.rates))
        return out


def fill_rates(rows: list) -> None:
    """Set pairwise rates in place; rows with an undefined rate are flagged."""
    for prev, row in zip(rows, rows[1:]):
        row.rates = tuple(observed_rate(e0, e1, prev.h, row.h)
                          for e0, e1 in zip(prev.errors, row.errors))
        row.flagged = any(math.isnan(r) for r in row.rates)


@dataclass
class EpsSweepTable:
    rows: list = field(default_factory=list)   # (eps, err x3, dist x3)
    meta: dict = field(default_factory=dict)
    columns: tuple = EPS_COLUMNS

    def records(self) -> list[tuple]:
        return [tuple(r) for r in self.rows]

    def column(self, name: str) -> list[float]:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def write_rows(path, columns: Sequence[str], records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for rec in records:
            w.writerow([_fmt(v) for v in rec])
    return path


def emit_csv(table, path) -> Path:
    """Write a table with a header row and 17-significant-digit values."""
    return write_rows(path, table.columns, table.records())


def read_csv(path) -> tuple[tuple, list[tuple]]:
    """Parse a file written by :func:`emit_csv`; returns (header, records)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = tuple(rows[0])
    out = []
    for r in rows[1:]:
        rec = []
        for name, v in zip(header, r):
            rec.append(int(v) if name == "cells" else float(v))
        out.append(tuple(rec))
    return header, out


# ---------------------------------------------------------------------------
# running


def _final(config: RunConfig) -> State:
    return run(config).final


def _run_all(configs: list, threads: int = 1) -> list:
    """Final states of independent runs; exceptions are returned, not raised."""
    if threads <= 1 or len(configs) <= 1:
        out = []
        for c in configs:
            try:
                out.append(_final(c))
            except Exception as exc:  # recorded per run
                out.append(exc)
        return out
    with ProcessPoolExecutor(max_workers=min(threads, len(configs))) as pool:
        futs = [pool.submit(_final, c) for c in configs]
        out = []
        for f in futs:
            try:
                out.append(f.result())
            except Exception as exc:
                out.append(exc)
        return out


def default_threads() -> int:
    return max(1, min(8, os.cpu_count() or 1))


def _with(config: RunConfig, cells: int | None = None, dt: float | None = None,
          epsilon: float | None = None) -> RunConfig:
    c = config
    if cells is not None:
        c = replace(c, mesh=meshmod.uniform(cells))
    if dt is not None:
        c = replace(c, options=replace(c.options, dt=dt))
    if epsilon is not None:
        c = replace(c, params=c.params.replace(epsilon=epsilon))
    return replace(c, output_times=None)


def convergence_space(base: RunConfig, resolutions: Sequence[int], reference_I: int,
                      reference_dt: float, threads: int = 1,
                      norm: str = "projected") -> ConvergenceTable:
    """Spatial study on uniform meshes against a self-computed reference."""
    err_fn = _error_fn(norm)
    res = sorted(int(i) for i in resolutions)
    for i in res:
        if i < 1 or reference_I % i:
            raise ValueError(f"resolution {i} does not divide reference_I={reference_I}")
    step_count(base.t_final, reference_dt)
    configs = [_with(base, cells=i, dt=reference_dt) for i in res]
    configs.append(_with(base, cells=reference_I, dt=reference_dt))
    states = _run_all(configs, threads)
    table = ConvergenceTable("space", meta={
        "epsilon": base.params.epsilon, "mesh": "uniform", "reference_cells": reference_I,
        "dt": reference_dt, "t_final": base.t_final, "norm": norm})
    ref = states[-1]
    if isinstance(ref, Exception):
        table.complete = False
        raise StudyError(f"reference run failed: {ref}", table) from ref
    ref_mesh = configs[-1].mesh
    failed = []
    for i, cfg, s in zip(res, configs, states):
        if isinstance(s, Exception):
            failed.append((i, s))
            table.rows.append(ConvergenceRow(i, 1.0 / i, (math.nan,) * 3, flagged=True))
            continue
        e = err_fn(s, cfg.mesh, ref, ref_mesh)
        table.rows.append(ConvergenceRow(i, 1.0 / i, e.as_tuple()))
    fill_rates(table.rows)
    if failed:
        table.complete = False
        i, exc = failed[0]
        raise StudyError(f"run with {i} cells failed: {exc}", table) from exc
    return table


def _check_divides(t_final: float, dt: float) -> None:
    k = round(t_final / dt)
    if abs(k * dt - t_final) > 1e-12 * max(1.0, t_final):
        raise ValueError(f"dt={dt!r} does not divide t_final={t_final!r}")


def convergence_time(base: RunConfig, steps: Sequence[float], reference_dt: float,
                     mesh_I: int, threads: int = 1) -> ConvergenceTable:
    """Temporal study on one uniform mesh against a small-step reference."""
    dts = sorted((float(d) for d in steps), reverse=True)
    for d in dts + [reference_dt]:
        if not d > 0:
            raise ValueError("time steps must be positive")
        _check_divides(base.t_final, d)
    mesh = meshmod.uniform(mesh_I)
    configs = [_with(base, cells=mesh_I, dt=d) for d in dts]
    configs.append(_with(base, cells=mesh_I, dt=reference_dt))
    states = _run_all(configs, threads)
    table = ConvergenceTable("time", meta={
        "epsilon": base.params.epsilon, "mesh": "uniform", "cells": mesh_I,
        "reference_dt": reference_dt, "t_final": base.t_final})
    ref = states[-1]
    if isinstance(ref, Exception):
        table.complete = False
        raise StudyError(f"reference run failed: {ref}", table) from ref
    failed = []
    for d, s in zip(dts, states):
        if isinstance(s, Exception):
            failed.append((d, s))
            table.rows.append(ConvergenceRow(d, d, (math.nan,) * 3, flagged=True))
            continue
        table.rows.append(ConvergenceRow(d, d, l2_error_same_mesh(s, ref, mesh).as_tuple()))
    fill_rates(table.rows)
    if failed:
        table.complete = False
        d, exc = failed[0]
        raise StudyError(f"run with dt={d:g} failed: {exc}", table) from exc
    return table


def eps_sweep(base: RunConfig, eps_values: Sequence[float], mesh_I: int, dt: float,
              reference_I: int, reference_dt: float, threads: int = 1,
              norm: str = "projected") -> EpsSweepTable:
    """Errors of one (mesh, dt) discretisation for several epsilon.

    Each epsilon gets its own fine reference. When 0 is among the values,
    the distance of every run to the epsilon = 0 run of the same
    discretisation is reported too (NaN otherwise).
    """
    err_fn = _error_fn(norm)
    eps = [float(e) for e in eps_values]
    for e in eps:
        if not (math.isfinite(e) and e >= 0):
            raise ValueError(f"epsilon values must be finite and >= 0, got {e!r}")
    table = EpsSweepTable(meta={"cells": mesh_I, "dt": dt, "reference_cells": reference_I,
                                "reference_dt": reference_dt, "t_final": base.t_final,
                                "norm": norm})
    if not eps:
        return table
    if reference_I % mesh_I:
        raise ValueError(f"mesh_I={mesh_I} does not divide reference_I={reference_I}")
    coarse = [_with(base, cells=mesh_I, dt=dt, epsilon=e) for e in eps]
    fine = [_with(base, cells=reference_I, dt=reference_dt, epsilon=e) for e in eps]
    states = _run_all(coarse + fine, threads)
    bad = [s for s in states if isinstance(s, Exception)]
    if bad:
        raise StudyError(f"eps sweep run failed: {bad[0]}", table) from bad[0]
    cs, fs = states[:len(eps)], states[len(eps):]
    mesh, ref_mesh = coarse[0].mesh, fine[0].mesh
    zero = cs[eps.index(0.0)] if 0.0 in eps else None
    for e, c, f in zip(eps, cs, fs):
        err = err_fn(c, mesh, f, ref_mesh).as_tuple()
        if zero is None:
            dist = (math.nan,) * 3
        else:
            dist = l2_error_same_mesh(c, zero, mesh).as_tuple()
        table.rows.append((e,) + err + dist)
    return table


def flatness(values: Sequence[float]) -> float:
    """Relative spread (max - min) / min of a list of positive errors."""
    v = np.asarray(values, dtype=float)
    return float((v.max() - v.min()) / v.min())


# ---------------------------------------------------------------------------
# profiles


@dataclass
class ProfileResult:
    paths: list
    times: list
    steady: bool
    trajectory: Trajectory


def profile_records(state: State, mesh: Mesh1D) -> list[tuple]:
    return list(zip(mesh.centers, state.p, state.n, state.psi))


def profile_run(config: RunConfig, out_dir, stem: str = "profile") -> ProfileResult:
    """Run ``config`` and write one ``x,p,n,psi`` file per sample time.

    Rows include the two boundary points. ``<stem>_index.csv`` lists the
    files with their times and marks the final one steady when
    :func:`~sgcorrosion.timeloop.detect_steady` fired on the last step.
    """
    out_dir = Path(out_dir)
    traj = run(config)
    paths = []
    for k, s in enumerate(traj.samples):
        p = write_rows(out_dir / f"{stem}_{k:04d}.csv", PROFILE_COLUMNS,
                       profile_records(s, config.mesh))
        paths.append(p)
    last = len(traj.samples) - 1
    index = [(p.name, s.time, int(traj.steady and k == last))
             for k, (p, s) in enumerate(zip(paths, traj.samples))]
    with open(out_dir / f"{stem}_index.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(("file", "time", "steady"))
        for name, t, st in index:
            w.writerow((name, _fmt(t), st))
    return ProfileResult(paths, traj.times, traj.steady, traj)
