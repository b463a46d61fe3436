"""Linear subproblems of the scheme.

Both the Poisson equation and the frozen-potential transport equation are
tridiagonal in the I cell unknowns once the two boundary values are
eliminated through their Robin closures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _core
from .numerics import bernoulli
from .params import Z, ModelParams, beta, gamma


class LinearSolveError(ArithmeticError):
    """A tridiagonal solve broke down or produced a non-finite result."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass
class Tridiagonal:
    """``sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]``.

    ``sub[0]`` and ``sup[-1]`` are stored but unused.
    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        n = self.diag.shape
        if not (self.sub.shape == self.sup.shape == self.rhs.shape == n):
            raise ValueError("tridiagonal arrays must share one length")

    @property
    def size(self) -> int:
        return self.diag.size

    def matvec(self, x):
        y = self.diag * x
        y[1:] += self.sub[1:] * x[:-1]
        y[:-1] += self.sup[:-1] * x[1:]
        return y

    def residual(self, x):
        return self.matvec(x) - self.rhs

    def dense(self):
        n = self.size
        a = np.diag(self.diag)
        a[np.arange(1, n), np.arange(n - 1)] = self.sub[1:]
        a[np.arange(n - 1), np.arange(1, n)] = self.sup[:-1]
        return a


def thomas_solve(sys: Tridiagonal, check: bool = False) -> np.ndarray:
    """Direct tridiagonal solve without pivoting.

    Safe for the diagonally dominant and M-matrix systems assembled here.
    With ``check=True`` the relative backward error is verified against
    1e-12.
    """
    try:
        x = _core.thomas(
            np.ascontiguousarray(sys.sub, dtype=float),
            np.ascontiguousarray(sys.diag, dtype=float),
            np.ascontiguousarray(sys.sup, dtype=float),
            np.ascontiguousarray(sys.rhs, dtype=float),
        )
    except _core.PivotError as exc:
        raise LinearSolveError(str(exc), exc.index) from None
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("non-finite solution")
    if check:
        err = backward_error(sys, x)
        if err > 1e-12:
            raise LinearSolveError(f"backward error {err:.3g} exceeds 1e-12")
    return x


def backward_error(sys: Tridiagonal, x) -> float:
    scale = (np.abs(sys.diag) * np.abs(x))
    scale[1:] += np.abs(sys.sub[1:] * x[:-1])
    scale[:-1] += np.abs(sys.sup[:-1] * x[1:])
    scale += np.abs(sys.rhs)
    r = np.abs(sys.residual(x))
    return float(np.max(r / np.maximum(scale, np.finfo(float).tiny), initial=0.0))


# -- Poisson ---------------------------------------------------------------

def assemble_poisson(mesh, params: ModelParams, p_cells, n_cells) -> Tridiagonal:
    lam2 = params.lambda_sq
    g = mesh.gaps
    kappa = lam2 / g
    # boundary edges absorb the eliminated Robin values
    kappa[0] = lam2 / (g[0] + params.alpha0)
    kappa[-1] = lam2 / (g[-1] + params.alpha1)
    diag = kappa[:-1] + kappa[1:]
    sub = -kappa[:-1].copy()
    sup = -kappa[1:].copy()
    rhs = mesh.widths * (3.0 * np.asarray(p_cells) - np.asarray(n_cells) + params.rho_hl)
    rhs[0] += kappa[0] * params.dpsi0_pzc
    rhs[-1] += kappa[-1] * (params.v_applied - params.dpsi1_pzc)
    sub[0] = 0.0
    sup[-1] = 0.0
    return Tridiagonal(sub, diag, sup, rhs)


def poisson_boundary(mesh, params: ModelParams, psi_cells):
    """Boundary potentials from the two capacitance closures."""
    g0, gI = mesh.gaps[0], mesh.gaps[-1]
    psi0 = (g0 * params.dpsi0_pzc + params.alpha0 * psi_cells[0]) / (g0 + params.alpha0)
    w = params.v_applied - params.dpsi1_pzc
    psi1 = (gI * w + params.alpha1 * psi_cells[-1]) / (gI + params.alpha1)
    return psi0, psi1


def solve_poisson(mesh, params: ModelParams, p_cells, n_cells) -> np.ndarray:
    """Discrete potential, boundary values included (length I + 2)."""
    p_cells = np.asarray(p_cells, dtype=float)
    n_cells = np.asarray(n_cells, dtype=float)
    if p_cells.shape != (mesh.cells,) or n_cells.shape != (mesh.cells,):
        raise ValueError("density arrays must have one entry per cell")
    if not (np.all(np.isfinite(p_cells)) and np.all(np.isfinite(n_cells))):
        raise ValueError("non-finite densities")
    sys = assemble_poisson(mesh, params, p_cells, n_cells)
    cells = thomas_solve(sys)
    out = np.empty(mesh.cells + 2)
    out[1:-1] = cells
    out[0], out[-1] = poisson_boundary(mesh, params, cells)
    _check_gauss(mesh, params, out, p_cells, n_cells)
    return out


def gauss_defect(mesh, params: ModelParams, psi, p_cells, n_cells) -> float:
    """Relative defect of the summed Poisson rows.

    ``lambda^2 (dpsi_{1/2} - dpsi_{I+1/2}) = sum_i h_i (3 P_i - N_i + rho_hl)``.
    """
    lam2 = params.lambda_sq
    d0 = (psi[1] - psi[0]) / mesh.gaps[0]
    d1 = (psi[-1] - psi[-2]) / mesh.gaps[-1]
    q = mesh.widths * (3.0 * p_cells - n_cells + params.rho_hl)
    scale = max(1.0, lam2 * (abs(d0) + abs(d1)),
                float(np.sum(mesh.widths * (3.0 * np.abs(p_cells) + np.abs(n_cells)
                                            + abs(params.rho_hl)))))
    return abs(lam2 * (d0 - d1) - float(np.sum(q))) / scale


def _check_gauss(mesh, params, psi, p_cells, n_cells, tol=1e-10):
    err = gauss_defect(mesh, params, psi, p_cells, n_cells)
    if not err <= tol:
        raise LinearSolveError(f"Poisson solve violates the discrete Gauss law ({err:.3g})")


# -- transport -------------------------------------------------------------

def edge_weights(z, mesh, psi):
    """Bernoulli weights divided by the gaps on all I+1 edges.

    Returns ``(wl, wr)`` such that the flux is ``wl * u_i - wr * u_{i+1}``.
    """
    x = z * np.diff(psi)
    g = mesh.gaps
    return bernoulli(x) / g, bernoulli(-x) / g


def edge_fluxes(z, mesh, psi, u):
    wl, wr = edge_weights(z, mesh, psi)
    return wl * u[:-1] - wr * u[1:]


def boundary_coefficients(params: ModelParams, species, psi):
    """(beta0, gamma0, beta1, gamma1) at the current boundary potentials.

    May raise :class:`~sgcorrosion.params.EvaluationOverflowError`; the
    solver itself only uses :func:`closures`.
    """
    x0 = psi[0]
    x1 = params.v_applied - psi[-1]
    return (beta(params, species, 0, x0), gamma(params, species, 0, x0),
            beta(params, species, 1, x1), gamma(params, species, 1, x1))


@dataclass(frozen=True)
class Closure:
    """One Butler-Volmer closure divided through by ``D = beta + w_b``.

    ``w_b`` is the flux weight of the boundary value and ``w_i`` that of
    the adjacent cell value. The eliminated boundary value is
    ``u_b = q + v u_cell`` and ``s = beta / D``.
    """

    s: float
    q: float
    v: float
    log_d: float


def _lse(values) -> float:
    vals = [v for v in values if v != -math.inf]
    if not vals:
        return -math.inf
    top = max(vals)
    return top + math.log(sum(math.exp(v - top) for v in vals))


def _closure(params: ModelParams, species, side, x, w_b, w_i) -> Closure:
    """Closure ``beta(x) u_b - gamma(x) = outward flux`` solved for ``u_b``.

    Every ratio is formed from exponent differences taken before any
    exponential is evaluated, so ``q <= u_max`` and ``s <= 1`` hold exactly
    in floating point.
    """
    z = Z[species.upper()]
    m, k, a, b = (params.kinetic(species, side, c) for c in "mkab")
    with np.errstate(divide="ignore"):
        lwb, lwi = float(np.log(w_b)), float(np.log(w_i))
    lm = math.log(m) - z * b * x if m else -math.inf
    lk = math.log(k) + z * a * x if k else -math.inf
    log_d = _lse([lm, lk, lwb])
    if not math.isfinite(log_d):
        raise LinearSolveError("boundary elimination denominator is not positive")
    log_beta_ = _lse([lm, lk])
    s = math.exp(-_lse([0.0, lwb - log_beta_])) if log_beta_ > -math.inf else 0.0
    # gamma carries the m branch at x=0 and the k branch at x=1
    c_own = m if side == 0 else k
    if c_own == 0.0:
        q = 0.0
    else:
        if side == 0:
            other = math.log(k / m) + z * (a + b) * x if k else -math.inf
            wall = lwb - math.log(m) + z * b * x
        else:
            other = math.log(m / k) - z * (a + b) * x if m else -math.inf
            wall = lwb - math.log(k) - z * a * x
        q = params.u_max(species) * math.exp(-_lse([0.0, other, wall]))
    return Closure(s, q, math.exp(lwi - log_d), log_d)


def closures(mesh, params: ModelParams, species, psi):
    """Left and right :class:`Closure` for a species at potential ``psi``."""
    z = Z[species.upper()]
    x = z * np.array([psi[1] - psi[0], psi[-1] - psi[-2]])
    g = mesh.gaps[[0, -1]]
    wl = bernoulli(x) / g
    wr = bernoulli(-x) / g
    x0 = float(psi[0])
    x1 = params.v_applied - float(psi[-1])
    return (_closure(params, species, 0, x0, wl[0], wr[0]),
            _closure(params, species, 1, x1, wr[1], wl[1]))


def _relaxation(params, eps_u, mu):
    return eps_u + mu / params.lambda_sq


def assemble_transport(mesh, params: ModelParams, species, psi, eps_u, mu, dt,
                       u_old_time, u_old_iter):
    """Relaxed implicit transport system for one species at frozen potential.

    Row i reads ``(h_i/dt)[eps_u (u_i - u^k_i) + (mu/lambda^2)(u_i - u^l_i)]
    + F_{i+1/2} - F_{i-1/2} = 0``.

    Returns the system together with the two boundary closures needed to
    recover the eliminated values.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (mesh.cells + 2,):
        raise ValueError("psi must include the boundary values")
    wl, wr = edge_weights(Z[species.upper()], mesh, psi)
    left, right = closures(mesh, params, species, psi)

    coef = _relaxation(params, eps_u, mu)
    h = mesh.widths
    if coef > 0:
        if not dt > 0:
            raise ValueError("dt must be positive")
        c = h * coef / dt
        rhs = h * (eps_u * np.asarray(u_old_time, dtype=float)
                   + (mu / params.lambda_sq) * np.asarray(u_old_iter, dtype=float)) / dt
    else:
        c = np.zeros_like(h)
        rhs = np.zeros_like(h)

    # F_{1/2} = wl0 q0 - (wr0 s0) u_1 and F_{I+1/2} = (wlI s1) u_I - wrI q1
    wr_eff = wr.copy()
    wl_eff = wl.copy()
    wr_eff[0] *= left.s
    wl_eff[-1] *= right.s
    diag = c + wl_eff[1:] + wr_eff[:-1]
    sup = -wr[1:].copy()
    sub = -wl[:-1].copy()
    rhs[0] += wl[0] * left.q
    rhs[-1] += wr[-1] * right.q
    sub[0] = 0.0
    sup[-1] = 0.0
    return Tridiagonal(sub, diag, sup, rhs), (left, right)


def transport_boundary(bdata, u_cells):
    """Boundary densities eliminated from the Butler-Volmer closures."""
    left, right = bdata
    return left.q + left.v * u_cells[0], right.q + right.v * u_cells[-1]


def solve_transport(mesh, params: ModelParams, species, psi, eps_u, mu, dt,
                    u_old_time, u_old_iter) -> np.ndarray:
    """Solve the relaxed transport step; returns length I + 2."""
    sys, bdata = assemble_transport(mesh, params, species, psi, eps_u, mu, dt,
                                    u_old_time, u_old_iter)
    cells = thomas_solve(sys)
    out = np.empty(mesh.cells + 2)
    out[1:-1] = cells
    out[0], out[-1] = transport_boundary(bdata, cells)
    return out


def boundary_values(mesh, params: ModelParams, species, psi, u_cells):
    """Recompute the two eliminated boundary densities for a given potential."""
    return transport_boundary(closures(mesh, params, species, np.asarray(psi, float)), u_cells)


def boundary_flux_terms(closure: Closure, flux: float, flux_terms: float, u_b: float):
    """Defect ``r = F_out - (beta u_b - gamma)`` of one closure and its term size.

    ``flux`` is the outward flux through the boundary (``-F_{1/2}`` on the
    left, ``F_{I+1/2}`` on the right). Both are evaluated divided by ``D``
    and returned as ``(r / D, terms / D, 1 / D)`` so that stiff closures do
    not overflow.
    """
    inv_d = math.exp(-closure.log_d)
    r = flux * inv_d - (closure.s * u_b - closure.q)
    terms = flux_terms * inv_d + closure.s * abs(u_b) + closure.q
    return r, terms, inv_d


# -- residuals -------------------------------------------------------------

RESIDUAL_KEYS = ("poisson", "transport_p", "transport_n",
                 "bc_psi0", "bc_psi1", "bc_p0", "bc_p1", "bc_n0", "bc_n1")


@dataclass(frozen=True)
class SchemeResidual:
    """Maximum residual of each group of scheme equations.

    ``absolute`` holds raw defects. ``scaled`` divides each defect by
    ``max(1, sum of |terms|)`` of its own equation, which keeps O(1)
    equations absolute while making the stiff boundary closures (rate
    constants up to 1e11) comparable.
    """

    absolute: dict
    scaled: dict

    @property
    def max_scaled(self) -> float:
        return max(self.scaled.values())

    @property
    def max_absolute(self) -> float:
        return max(self.absolute.values())


def _record(absolute, scaled, key, res, terms):
    res = np.abs(np.atleast_1d(res))
    terms = np.atleast_1d(terms)
    absolute[key] = float(res.max(initial=0.0))
    scaled[key] = float(np.max(res / np.maximum(1.0, terms), initial=0.0))


def scheme_residual(mesh, params: ModelParams, state_prev, state_next, dt,
                    time_terms: bool = True) -> SchemeResidual:
    """Defects of the unrelaxed scheme at ``state_next``.

    ``state_prev`` and ``state_next`` provide ``p``, ``n``, ``psi`` arrays of
    length I + 2. With ``time_terms=False`` the accumulation terms are
    dropped, giving the stationary defect.
    """
    absolute, scaled = {}, {}
    lam2 = params.lambda_sq
    psi = np.asarray(state_next.psi, dtype=float)
    P = np.asarray(state_next.p, dtype=float)
    N = np.asarray(state_next.n, dtype=float)
    h = mesh.widths
    dpsi = np.diff(psi) / mesh.gaps

    src = h * (3.0 * P[1:-1] - N[1:-1] + params.rho_hl)
    res = -lam2 * (dpsi[1:] - dpsi[:-1]) - src
    terms = lam2 * (np.abs(dpsi[1:]) + np.abs(dpsi[:-1])) + h * (
        3.0 * np.abs(P[1:-1]) + np.abs(N[1:-1]) + abs(params.rho_hl))
    _record(absolute, scaled, "poisson", res, terms)

    res = psi[0] - params.alpha0 * dpsi[0] - params.dpsi0_pzc
    terms = abs(psi[0]) + params.alpha0 * abs(dpsi[0]) + abs(params.dpsi0_pzc)
    _record(absolute, scaled, "bc_psi0", res, terms)
    w = params.v_applied - params.dpsi1_pzc
    res = psi[-1] + params.alpha1 * dpsi[-1] - w
    terms = abs(psi[-1]) + params.alpha1 * abs(dpsi[-1]) + abs(w)
    _record(absolute, scaled, "bc_psi1", res, terms)

    for species, u, u_prev in (("P", P, state_prev.p), ("N", N, state_prev.n)):
        key = species.lower()
        z = Z[species]
        wl, wr = edge_weights(z, mesh, psi)
        fl, fr = wl * u[:-1], wr * u[1:]
        F = fl - fr
        res = F[1:] - F[:-1]
        terms = np.abs(fl[1:]) + np.abs(fr[1:]) + np.abs(fl[:-1]) + np.abs(fr[:-1])
        eps_u = params.eps_u(species)
        if time_terms and eps_u != 0.0:
            acc = eps_u * h * (u[1:-1] - np.asarray(u_prev, dtype=float)[1:-1]) / dt
            res = res + acc
            terms = terms + eps_u * h * (np.abs(u[1:-1]) + np.abs(u_prev[1:-1])) / dt
        _record(absolute, scaled, f"transport_{key}", res, terms)

        left, right = closures(mesh, params, species, psi)
        for side, cl, flux, fterms, ub in (
                ("0", left, -F[0], abs(fl[0]) + abs(fr[0]), u[0]),
                ("1", right, F[-1], abs(fl[-1]) + abs(fr[-1]), u[-1])):
            r, terms, inv_d = boundary_flux_terms(cl, flux, fterms, ub)
            key_bc = f"bc_{key}{side}"
            with np.errstate(over="ignore"):
                absolute[key_bc] = float(abs(r) * math.exp(cl.log_d)) if cl.log_d < 700 \
                    else math.inf if r else 0.0
            scaled[key_bc] = float(abs(r) / max(inv_d, terms, np.finfo(float).tiny))
    return SchemeResidual(absolute, scaled)
