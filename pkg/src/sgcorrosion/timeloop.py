"""Implicit Euler time marching with a relaxed Gummel-type fixed point.

Each time step solves the coupled nonlinear scheme by iterating

1. the Poisson equation at frozen densities,
2. the relaxed transport equation of each species at frozen potential,

until the max-norm increment over P, N and Psi drops below ``fp_tol``
(relative to the field's max-norm when that exceeds 1).
The relaxation ``mu`` adds ``(h_i/dt)(mu/lambda^2)(u_i - u_i^(l))`` to the
transport rows; the fixed point does not depend on it.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import system
from .mesh import Mesh1D
from .numerics import norm_1T
from .params import EPS_P, Z, ModelParams

logger = logging.getLogger(__name__)

BOUND_POLICIES = ("warn", "abort", "off")
MU_POLICIES = ("auto", "fixed")

# A step whose increment has not improved for STALL_ITERS sweeps is accepted
# when the best increment is within STALL_FACTOR of fp_tol.
STALL_ITERS = 25
STALL_FACTOR = 1e3


class FixedPointNotConverged(RuntimeError):
    def __init__(self, iterations, increment):
        super().__init__(
            f"fixed point not converged after {iterations} iterations "
            f"(last increment {increment:.3e})")
        self.iterations = iterations
        self.increment = increment


class BoundViolation(RuntimeError):
    """A density left [0, u_max]."""


class BoundWarning(UserWarning):
    pass


class SchemeResidualError(RuntimeError):
    pass


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class State:
    p: np.ndarray
    n: np.ndarray
    psi: np.ndarray
    time: float = 0.0
    step_index: int = 0

    def __post_init__(self):
        shape = np.shape(self.p)
        if np.shape(self.n) != shape or np.shape(self.psi) != shape:
            raise ValueError("p, n and psi must have the same length")
        for name in ("p", "n", "psi"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in {name}")

    def copy(self) -> "State":
        return replace(self, p=self.p.copy(), n=self.n.copy(), psi=self.psi.copy())

    def in_bounds(self, params: ModelParams) -> bool:
        return bool(self.p.min() >= 0.0 and self.p.max() <= params.p_max
                    and self.n.min() >= 0.0 and self.n.max() <= params.n_max)


@dataclass(frozen=True)
class SolverOptions:
    """Time step and fixed-point controls.

    ``mu`` is only used with ``mu_policy="fixed"``; ``"auto"`` takes the
    smallest relaxation that keeps the iteration inside the invariant set.
    ``anderson_depth=0`` gives the plain fixed-point iteration.
    """

    dt: float
    mu: float = 0.0
    mu_policy: str = "auto"
    fp_tol: float = 1e-12
    fp_max_iters: int = 500
    bound_policy: str = "warn"
    residual_tol: float = 1e-9
    anderson_depth: int = 50

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.fp_tol > 0:
            raise ValueError("fp_tol must be positive")
        if self.fp_max_iters < 1:
            raise ValueError("fp_max_iters must be >= 1")
        if self.anderson_depth < 0:
            raise ValueError("anderson_depth must be >= 0")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.bound_policy not in BOUND_POLICIES:
            raise ValueError(f"bound_policy must be one of {BOUND_POLICIES}")
        if self.mu_policy not in MU_POLICIES:
            raise ValueError(f"mu_policy must be one of {MU_POLICIES}")

    def effective_mu(self, params: ModelParams) -> float:
        if self.mu_policy == "auto":
            return auto_mu(params, self.dt)
        return self.mu


@dataclass
class StepInfo:
    iterations: int
    increment: float
    stalled: bool
    residual: system.SchemeResidual
    mass_defect_p: float
    mass_defect_n: float
    in_bounds: bool


def auto_mu(params: ModelParams, dt: float) -> float:
    """mu = dt * max(9 P_max, N_max)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return dt * max(9.0 * params.p_max, params.n_max)


def project_initial(u0, mesh: Mesh1D, tol: float = 1e-12) -> np.ndarray:
    """Cell averages of an initial profile (a constant or a callable of x)."""
    if callable(u0):
        out = np.empty(mesh.cells)
        x = mesh.interfaces
        for i in range(mesh.cells):
            with warnings.catch_warnings():
                warnings.simplefilter("error", integrate.IntegrationWarning)
                try:
                    val, err = integrate.quad(u0, x[i], x[i + 1], epsabs=tol * mesh.widths[i],
                                              epsrel=tol, limit=200)
                except integrate.IntegrationWarning as exc:
                    raise QuadratureError(f"cell {i + 1}: {exc}") from None
            out[i] = val / mesh.widths[i]
        return out
    c = float(u0)
    return np.full(mesh.cells, c)


def initial_state(params: ModelParams, mesh: Mesh1D, p0, n0) -> State:
    """Projected initial data; boundary slots come from the closures at t=0."""
    p = project_initial(p0, mesh)
    n = project_initial(n0, mesh)
    psi = system.solve_poisson(mesh, params, p, n)
    return State(_with_bounds(mesh, params, "P", psi, p),
                 _with_bounds(mesh, params, "N", psi, n), psi)


def _with_bounds(mesh, params, species, psi, cells):
    out = np.empty(cells.size + 2)
    out[1:-1] = cells
    out[0], out[-1] = system.boundary_values(mesh, params, species, psi, cells)
    return out


def mass_defect(mesh, params: ModelParams, species, prev: State, new: State, dt) -> float:
    """Relative defect of the discrete conservation law over the whole domain.

    ``eps_u sum h_i (u^{k+1} - u^k)/dt`` must equal the net boundary inflow
    ``(gamma0 - beta0 u_0) - (beta1 u_{I+1} - gamma1)``. When a closure is
    too stiff for ``beta`` to be representable, its boundary term is replaced
    by the Scharfetter-Gummel flux through that edge, which the closure
    equates to it (and which ``scheme_residual`` checks separately).
    """
    u_new = new.p if species == "P" else new.n
    u_old = prev.p if species == "P" else prev.n
    eps_u = params.eps_u(species)
    acc = eps_u * np.sum(mesh.widths * (u_new[1:-1] - u_old[1:-1])) / dt
    psi = new.psi
    left, right = system.closures(mesh, params, species, psi)
    z = Z[species]
    wl, wr = system.edge_weights(z, mesh, psi)
    fluxes = ((wl[0] * u_new[0], wr[0] * u_new[1]), (wl[-1] * u_new[-2], wr[-1] * u_new[-1]))

    def boundary_term(cl, ub, outward_flux, flux_pair):
        # beta u_b - gamma = D (s u_b - q)
        if cl.log_d < 700.0:
            d = math.exp(cl.log_d)
            return d * (cl.s * ub - cl.q), d * (cl.s * abs(ub) + cl.q)
        return outward_flux, abs(flux_pair[0]) + abs(flux_pair[1])

    f0 = fluxes[0][0] - fluxes[0][1]
    f1 = fluxes[1][0] - fluxes[1][1]
    out0, t0 = boundary_term(left, u_new[0], -f0, fluxes[0])
    out1, t1 = boundary_term(right, u_new[-1], f1, fluxes[1])
    inflow = -out0 - out1
    scale = max(1.0, t0 + t1,
                eps_u * np.sum(mesh.widths * (np.abs(u_new[1:-1]) + np.abs(u_old[1:-1]))) / dt)
    return float(abs(acc - inflow) / scale)


def _increment(new, old):
    # absolute for O(1) fields, relative once a field exceeds 1 in magnitude
    return np.max(np.abs(new - old)) / max(1.0, np.max(np.abs(new)))


class _Anderson:
    """Type-II Anderson mixing over the last ``depth`` map evaluations."""

    # singular values below rcond * largest are dropped from the mixing fit
    rcond = 1e-4

    def __init__(self, depth):
        self.depth = depth
        self.rcond = type(self).rcond
        self.xs = []
        self.fs = []

    def reset(self):
        self.xs.clear()
        self.fs.clear()

    def next(self, x, gx):
        f = gx - x
        self.xs.append(x)
        self.fs.append(f)
        if len(self.xs) > self.depth + 1:
            self.xs.pop(0)
            self.fs.pop(0)
        if len(self.xs) < 2:
            return gx
        dX = np.diff(np.array(self.xs), axis=0).T
        dF = np.diff(np.array(self.fs), axis=0).T
        coef = np.linalg.lstsq(dF, f, rcond=self.rcond)[0]
        return x + f - (dX + dF) @ coef


def advance(state: State, params: ModelParams, mesh: Mesh1D,
            opts: SolverOptions) -> tuple[State, StepInfo]:
    """One implicit Euler step; returns the new state and diagnostics.

    The relaxed map is iterated (Anderson-accelerated unless
    ``anderson_depth == 0``) until its increment is below ``fp_tol``. The
    converged potential is then frozen and both densities are solved once
    more without relaxation, so the returned state satisfies the transport
    rows and boundary closures of the scheme exactly.
    """
    dt = opts.dt
    mu = opts.effective_mu(params)
    eps = params.epsilon
    I = mesh.cells
    pk = state.p[1:-1]
    nk = state.n[1:-1]

    def relaxed_map(x):
        psi = system.solve_poisson(mesh, params, x[:I], x[I:])
        p_hat = system.solve_transport(mesh, params, "P", psi, EPS_P, mu, dt, pk, x[:I])
        n_hat = system.solve_transport(mesh, params, "N", psi, eps, mu, dt, nk, x[I:])
        return np.concatenate((p_hat[1:-1], n_hat[1:-1])), psi

    def polish(g):
        psi = system.solve_poisson(mesh, params, g[:I], g[I:])
        p = system.solve_transport(mesh, params, "P", psi, EPS_P, 0.0, dt, pk, pk)
        n = system.solve_transport(mesh, params, "N", psi, eps, 0.0, dt, nk, nk)
        new = State(p, n, psi, state.time + dt, state.step_index + 1)
        return new, system.scheme_residual(mesh, params, state, new, dt)

    accel = _Anderson(opts.anderson_depth) if opts.anderson_depth > 0 else None
    x = np.concatenate((pk, nk))
    psi_prev = state.psi
    inc = best = math.inf
    since_best = 0
    stalled = False
    gx = gx_best = x
    candidate = None
    for it in range(1, opts.fp_max_iters + 1):
        try:
            gx, psi = relaxed_map(x)
        except (ArithmeticError, ValueError):
            # an extrapolated iterate left the evaluable range; fall back
            if accel is None or not accel.xs:
                raise
            accel.reset()
            x = gx
            gx, psi = relaxed_map(x)
        inc = max(_increment(gx[:I], x[:I]), _increment(gx[I:], x[I:]),
                  _increment(psi, psi_prev))
        psi_prev = psi
        if not math.isfinite(inc) or inc < opts.fp_tol:
            break
        if inc < best:
            best, since_best, gx_best = inc, 0, gx
        else:
            since_best += 1
        # increments bouncing at a floor: accept the best iterate if it
        # verifies, otherwise let the mixing fit resolve finer directions
        if since_best >= STALL_ITERS and best <= STALL_FACTOR * opts.fp_tol:
            trial = polish(gx_best)
            if trial[1].max_scaled <= opts.residual_tol:
                stalled, candidate = True, trial
                break
            since_best = 0
            if accel is not None:
                accel.rcond *= 1e-2
        if accel is None:
            x = gx
        else:
            # the relaxed map preserves the box of admissible densities;
            # extrapolated iterates are projected back onto it
            x = accel.next(x, gx)
            np.clip(x[:I], 0.0, params.p_max, out=x[:I])
            np.clip(x[I:], 0.0, params.n_max, out=x[I:])
    if not (inc < opts.fp_tol or stalled):
        raise FixedPointNotConverged(it, inc)

    new, res = candidate if candidate is not None else polish(gx)
    p, n = new.p, new.n
    if res.max_scaled > opts.residual_tol:
        raise SchemeResidualError(
            f"step {new.step_index}: scheme residual {res.max_scaled:.3e} "
            f"exceeds {opts.residual_tol:.1e} ({res.scaled})")

    ok = True
    if opts.bound_policy != "off":
        ok = new.in_bounds(params)
        if not ok:
            msg = (f"step {new.step_index}: densities out of bounds "
                   f"(P in [{p.min():.3g}, {p.max():.3g}], N in [{n.min():.3g}, {n.max():.3g}])")
            if opts.bound_policy == "abort":
                raise BoundViolation(msg)
            warnings.warn(msg, BoundWarning, stacklevel=2)

    info = StepInfo(it, float(inc), stalled, res,
                    mass_defect(mesh, params, "P", state, new, dt),
                    mass_defect(mesh, params, "N", state, new, dt), ok)
    return new, info


def step(state: State, params: ModelParams, mesh: Mesh1D, opts: SolverOptions) -> State:
    return advance(state, params, mesh, opts)[0]


def detect_steady(state_prev: State, state_next: State, dt: float, threshold: float,
                  mesh: Mesh1D | None = None, params: ModelParams | None = None) -> bool:
    """True when both densities have stopped moving and the stationary
    scheme defect is below ``threshold``.

    The defect is only evaluated when ``mesh`` and ``params`` are given.
    """
    rate = max(np.max(np.abs(state_next.p - state_prev.p)),
               np.max(np.abs(state_next.n - state_prev.n))) / dt
    if not rate < threshold:
        return False
    if mesh is None or params is None:
        return True
    res = system.scheme_residual(mesh, params, state_prev, state_next, dt, time_terms=False)
    return res.max_scaled < threshold


@dataclass
class RunConfig:
    params: ModelParams
    mesh: Mesh1D
    options: SolverOptions
    t_final: float
    initial_p: float | Callable | None = None
    initial_n: float | Callable | None = None
    output_times: Sequence[float] | None = None
    steady_threshold: float = 1e-6

    def initial(self) -> State:
        p0 = self.params.p_max / 2 if self.initial_p is None else self.initial_p
        n0 = self.params.n_max / 2 if self.initial_n is None else self.initial_n
        return initial_state(self.params, self.mesh, p0, n0)


@dataclass
class Trajectory:
    """Sampled states plus per-step diagnostics (index k-1 describes step k)."""

    samples: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    mass_defects: list = field(default_factory=list)
    in_bounds: list = field(default_factory=list)
    norm_p: list = field(default_factory=list)
    norm_n: list = field(default_factory=list)
    all_in_bounds: bool = True
    steady: bool = False

    @property
    def final(self) -> State:
        return self.samples[-1]

    @property
    def times(self) -> list:
        return [s.time for s in self.samples]

    @property
    def max_residual(self) -> float:
        return max(self.residuals, default=0.0)

    @property
    def max_mass_defect(self) -> float:
        return max((max(m) for m in self.mass_defects), default=0.0)


def step_count(t_final: float, dt: float) -> int:
    """Number of steps K with K dt = T; falls back to floor(T/dt) with a warning."""
    if t_final < 0:
        raise ValueError("t_final must be nonnegative")
    ratio = t_final / dt
    k = round(ratio)
    if abs(k * dt - t_final) <= 1e-12 * max(1.0, t_final):
        return int(k)
    k = math.floor(ratio)
    warnings.warn(f"t_final={t_final:g} is not a multiple of dt={dt:g}; using K={k}",
                  stacklevel=2)
    return int(k)


def run(config: RunConfig, state: State | None = None) -> Trajectory:
    """March ``config`` to its final time, sampling at ``output_times``."""
    params, mesh, opts = config.params, config.mesh, config.options
    dt = opts.dt
    K = step_count(config.t_final, dt)
    if state is None:
        state = config.initial()
    wanted = [config.t_final] if config.output_times is None else list(config.output_times)
    sample_steps = sorted({min(K, max(0, round(t / dt))) for t in wanted})
    if K not in sample_steps:
        sample_steps.append(K)

    traj = Trajectory()
    if 0 in sample_steps:
        traj.samples.append(state)
    traj.all_in_bounds = state.in_bounds(params)
    prev = state
    for k in range(1, K + 1):
        new, info = advance(prev, params, mesh, opts)
        new = replace(new, time=k * dt)
        traj.iterations.append(info.iterations)
        traj.residuals.append(info.residual.max_scaled)
        traj.mass_defects.append((info.mass_defect_p, info.mass_defect_n))
        traj.in_bounds.append(info.in_bounds)
        traj.all_in_bounds &= new.in_bounds(params)
        traj.norm_p.append(norm_1T(new.p, mesh))
        traj.norm_n.append(norm_1T(new.n, mesh))
        if k in sample_steps:
            traj.samples.append(new)
        if k == K:
            traj.steady = detect_steady(prev, new, dt, config.steady_threshold, mesh, params)
        prev = new
    logger.info("run finished: K=%d, mean iterations %.1f", K,
                float(np.mean(traj.iterations)) if traj.iterations else 0.0)
    return traj
