"""Scalar kernels: Bernoulli function, Scharfetter-Gummel fluxes, discrete norms.

Grid functions are plain arrays of length ``I + 2``; entries 0 and ``I + 1``
hold the boundary values.
"""

from __future__ import annotations

import math

import numpy as np

from . import _core

TAYLOR_CUTOFF = _core._pykernels.TAYLOR_CUTOFF


def bernoulli(x):
    """B(x) = x / (exp(x) - 1) with B(0) = 1.

    Accepts scalars or arrays. Near zero a Taylor polynomial is used; for
    large negative x the result tends to -x and for large positive x it
    underflows to 0.
    """
    if np.ndim(x) == 0:
        x = float(x)
        if abs(x) < TAYLOR_CUTOFF:
            x2 = x * x
            return 1.0 - 0.5 * x + x2 / 12.0 - x2 * x2 / 720.0
        try:
            return x / math.expm1(x)
        except OverflowError:
            return 0.0
    arr = np.ascontiguousarray(x, dtype=float)
    return _core.bernoulli_array(arr.ravel()).reshape(arr.shape)


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite input to flux")


def sg_flux(z, gap, dpsi, u_left, u_right):
    """Scharfetter-Gummel flux across one edge.

    ``[B(z h dpsi) u_left - B(-z h dpsi) u_right] / h`` where ``h`` is the
    distance between the two centres and ``dpsi`` the discrete field.
    """
    _check_finite(gap, dpsi, u_left, u_right)
    if np.any(np.asarray(gap) <= 0):
        raise ValueError("gap must be positive")
    x = z * gap * dpsi
    return (bernoulli(x) * u_left - bernoulli(-x) * u_right) / gap


def _xcoth(y):
    """y * coth(y), continuous through y = 0."""
    y = np.asarray(y, dtype=float)
    shape = y.shape
    y = np.atleast_1d(y)
    small = np.abs(y) < 1e-4
    with np.errstate(divide="ignore", invalid="ignore"):
        out = y / np.tanh(y)
    y2 = y[small] ** 2
    out[small] = 1.0 + y2 / 3.0 - y2 * y2 / 45.0
    return out.reshape(shape)


def sg_flux_coth(z, gap, dpsi, u_left, u_right):
    """The same flux written as centred drift plus coth-weighted diffusion.

    ``-z dpsi (u_l + u_r)/2 + (z dpsi / 2) coth(-z h dpsi / 2) (u_r - u_l)``.
    The second coefficient is evaluated as ``-(y coth y) / h`` with
    ``y = -z h dpsi / 2`` so that dpsi = 0 gives ``-1/h``.
    """
    _check_finite(gap, dpsi, u_left, u_right)
    if np.any(np.asarray(gap) <= 0):
        raise ValueError("gap must be positive")
    y = -0.5 * z * gap * dpsi
    diff_coef = -_xcoth(y) / gap
    out = -z * dpsi * 0.5 * (u_left + u_right) + diff_coef * (u_right - u_left)
    return out if np.ndim(out) else float(out)


def flux_scale(z, gap, dpsi, u_left, u_right):
    """Largest term magnitude of the two flux forms, for relative comparisons.

    The coth form cancels a centred drift against a diffusion term, so a
    relative comparison has to be taken against the larger of the two sets
    of terms.
    """
    x = z * gap * dpsi
    sg = (np.abs(bernoulli(x) * u_left) + np.abs(bernoulli(-x) * u_right)) / gap
    y = -0.5 * z * gap * dpsi
    coth = (np.abs(z * dpsi) * 0.5 * (np.abs(u_left) + np.abs(u_right))
            + _xcoth(y) / gap * np.abs(u_right - u_left))
    out = np.maximum(sg, coth)
    return out if np.ndim(out) else float(out)


def norm_l2(w, mesh) -> float:
    """Discrete L2(0,1) norm over the cells; boundary entries are ignored."""
    w = np.asarray(w, dtype=float)
    _check_length(w, mesh)
    return float(np.sqrt(np.sum(mesh.widths * w[1:-1] ** 2)))


def norm_1T(w, mesh) -> float:
    """Discrete H1 norm including the boundary values."""
    w = np.asarray(w, dtype=float)
    _check_length(w, mesh)
    jumps = np.diff(w)
    return float(np.sqrt(np.sum(jumps**2 / mesh.gaps) + w[0] ** 2 + w[-1] ** 2))


def _check_length(w, mesh):
    if w.shape != (mesh.cells + 2,):
        raise ValueError(f"grid function has shape {w.shape}, mesh needs ({mesh.cells + 2},)")
