"""One-dimensional finite volume meshes of [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh1D:
    """Cell-centred mesh with boundary points stored as extra centres.

    Attributes
    ----------
    interfaces : ndarray, shape (I+1,)
        ``x_{1/2} = 0 < ... < x_{I+1/2} = 1``.
    centers : ndarray, shape (I+2,)
        ``x_0 = 0``, the I cell midpoints, ``x_{I+1} = 1``.
    widths : ndarray, shape (I,)
        Cell widths ``h_i``.
    gaps : ndarray, shape (I+1,)
        Distances ``h_{i+1/2} = x_{i+1} - x_i`` for i = 0..I.
    """

    interfaces: np.ndarray
    centers: np.ndarray
    widths: np.ndarray
    gaps: np.ndarray

    @property
    def cells(self) -> int:
        return self.widths.size

    @property
    def h(self) -> float:
        return float(self.widths.max())

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.widths, 1.0 / self.cells, rtol=0, atol=1e-14))

    def __len__(self):
        return self.cells + 2

    def __repr__(self):
        return f"Mesh1D(cells={self.cells}, h={self.h:.3g})"


def from_interfaces(points) -> Mesh1D:
    x = np.array(points, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need at least two interface points")
    if x[0] != 0.0 or x[-1] != 1.0:
        raise ValueError("interfaces must start at 0 and end at 1")
    if not np.all(np.diff(x) > 0):
        raise ValueError("interfaces must be strictly increasing")
    x.setflags(write=False)
    widths = np.diff(x)
    centers = np.concatenate(([0.0], 0.5 * (x[1:] + x[:-1]), [1.0]))
    gaps = np.diff(centers)
    for a in (widths, centers, gaps):
        a.setflags(write=False)
    return Mesh1D(x, centers, widths, gaps)


def uniform(cell_count: int) -> Mesh1D:
    cells = _check_count(cell_count)
    x = np.arange(cells + 1) / cells
    return from_interfaces(x)


def tchebychev(cell_count: int) -> Mesh1D:
    """Cosine-stretched mesh, refined towards both ends.

    Interfaces are ``(1 - cos(pi j / I)) / 2``, symmetrised so that the
    mesh is exactly mirror-symmetric about 1/2.
    """
    cells = _check_count(cell_count)
    j = np.arange(cells + 1)
    x = 0.5 * (1.0 - np.cos(np.pi * j / cells))
    x = 0.5 * (x + (1.0 - x[::-1]))
    x[0], x[-1] = 0.0, 1.0
    return from_interfaces(x)


def from_file(path) -> Mesh1D:
    """Read interfaces, one decimal number per line (``#`` comments allowed)."""
    pts = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            pts.append(float(line))
    return from_interfaces(pts)


def build(kind: str, cells: int | None = None, path=None) -> Mesh1D:
    if path is not None:
        return from_file(path)
    if kind == "uniform":
        return uniform(cells)
    if kind == "tchebychev":
        return tchebychev(cells)
    raise ValueError(f"unknown mesh kind {kind!r}")


def _check_count(cell_count) -> int:
    if isinstance(cell_count, bool) or int(cell_count) != cell_count or cell_count < 1:
        raise ValueError(f"cell count must be a positive integer, got {cell_count!r}")
    return int(cell_count)
