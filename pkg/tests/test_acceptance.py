"""Acceptance gate: the seven numbered criteria, one test each.

Every test records a ``PASS``/``FAIL`` line (printed at the end of the
session by ``conftest.py``) before asserting. Runs are cached per
(parameters, cells, dt, final time) so that references shared between
criteria are computed once, and every cached trajectory is checked again by
the bound and residual criteria.

Run only this file with ``pytest -m acceptance -v``.
"""

import math
import time
from dataclasses import dataclass

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from sgcorrosion import experiments as ex, mesh, system, timeloop as T
from sgcorrosion.numerics import bernoulli, flux_scale, norm_1T, norm_l2, sg_flux, sg_flux_coth
from sgcorrosion.params import STRICT, TABLE1

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

EPS_ALL = (0.0, 1e-6, 1e-4, 1e-2)
T_SHORT = 1e-3
RANDOM_CASES = 10_000


@dataclass
class RunRecord:
    label: str
    final: T.State
    steps: int
    all_in_bounds: bool
    max_residual: float
    max_mass_defect: float
    seconds: float


_RUNS = {}


def run_cached(params, cells, dt, t_final, label=""):
    key = (params, cells, dt, t_final)
    if key not in _RUNS:
        t0 = time.perf_counter()
        cfg = T.RunConfig(params, mesh.uniform(cells), T.SolverOptions(dt=dt), t_final)
        tr = T.run(cfg)
        _RUNS[key] = RunRecord(label or f"eps={params.epsilon:g} I={cells} dt={dt:g}",
                               tr.final, len(tr.iterations), tr.all_in_bounds,
                               tr.max_residual, tr.max_mass_defect,
                               time.perf_counter() - t0)
    return _RUNS[key]


def record(n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n} ({title}): {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return ok


def table1(eps):
    return TABLE1.replace(epsilon=eps)


# -- criterion 1 -----------------------------------------------------------

SPACE_RES = (32, 64, 128, 256)
SPACE_REF = 1024
SPACE_DT = 1e-6


def space_table(eps):
    prm = table1(eps)
    ref = run_cached(prm, SPACE_REF, SPACE_DT, T_SHORT)
    rows = []
    for i in SPACE_RES:
        r = run_cached(prm, i, SPACE_DT, T_SHORT)
        e = ex.l2_error_projected(r.final, mesh.uniform(i), ref.final, mesh.uniform(SPACE_REF))
        rows.append(ex.ConvergenceRow(i, 1.0 / i, e.as_tuple()))
    ex.fill_rates(rows)
    return ex.ConvergenceTable("space", rows)


def test_criterion_1_spatial_order():
    parts, ok = [], True
    for eps in EPS_ALL:
        t = space_table(eps)
        rates = [t.headline_rate(f) for f in ex.FIELDS]
        ok &= all(1.7 <= r <= 2.3 for r in rates)
        parts.append(f"eps={eps:g} " + "/".join(f"{r:.3f}" for r in rates))
    record(1, "spatial order 2, mean rate P/N/Psi in [1.7, 2.3]", ok, "; ".join(parts))
    assert ok


# -- criterion 2 -----------------------------------------------------------

TIME_I = 512
TIME_STEPS = (1e-4, 5e-5, 2.5e-5, 1.25e-5)
TIME_REF = 1e-6


def time_table(eps):
    prm = table1(eps)
    ref = run_cached(prm, TIME_I, TIME_REF, T_SHORT)
    m = mesh.uniform(TIME_I)
    rows = []
    for dt in TIME_STEPS:
        r = run_cached(prm, TIME_I, dt, T_SHORT)
        rows.append(ex.ConvergenceRow(dt, dt, ex.l2_error_same_mesh(r.final, ref.final, m)
                                      .as_tuple()))
    ex.fill_rates(rows)
    return ex.ConvergenceTable("time", rows)


def test_criterion_2_temporal_order():
    parts, ok = [], True
    for eps in (0.0, 1e-2):
        t = time_table(eps)
        rates = [t.headline_rate(f) for f in ex.FIELDS]
        ok &= all(0.8 <= r <= 1.2 for r in rates)
        parts.append(f"eps={eps:g} " + "/".join(f"{r:.3f}" for r in rates))
    record(2, "temporal order 1, rate P/N/Psi in [0.8, 1.2]", ok, "; ".join(parts))
    assert ok


# -- criterion 3 -----------------------------------------------------------

AP_I = 256
AP_DT = 1e-5


def test_criterion_3_asymptotic_preserving():
    m, ref_m = mesh.uniform(AP_I), mesh.uniform(SPACE_REF)
    errs, finals = {}, {}
    for eps in EPS_ALL:
        prm = table1(eps)
        ref = run_cached(prm, SPACE_REF, SPACE_DT, T_SHORT)
        r = run_cached(prm, AP_I, AP_DT, T_SHORT)
        errs[eps] = ex.l2_error_projected(r.final, m, ref.final, ref_m).as_tuple()
        finals[eps] = r.final
    flat = [ex.flatness([errs[e][k] for e in EPS_ALL]) for k in range(3)]
    dist = ex.l2_error_same_mesh(finals[1e-6], finals[0.0], m).as_tuple()
    ok_flat = all(f < 0.10 for f in flat)
    ok_dist = all(d < e for d, e in zip(dist, errs[0.0]))
    detail = ("spread P/N/Psi " + "/".join(f"{f:.2%}" for f in flat)
              + "; |u(1e-6)-u(0)| " + "/".join(f"{d:.2e}" for d in dist)
              + " vs err(0) " + "/".join(f"{e:.2e}" for e in errs[0.0]))
    ok = record(3, "AP flatness < 10% and eps->0 distance below error", ok_flat and ok_dist,
                detail)
    assert ok


# -- criterion 5 (before 4 and 7, which re-check its runs) -----------------

STEADY_I = 2000
STEADY_DT = 1e-3
STEADY_T = 1.0


def test_criterion_5_steady_state(tmp_path):
    cfg = T.RunConfig(table1(0.0), mesh.uniform(STEADY_I), T.SolverOptions(dt=STEADY_DT),
                      STEADY_T)
    t0 = time.perf_counter()
    a = ex.profile_run(cfg, tmp_path / "a")
    secs = time.perf_counter() - t0
    b = ex.profile_run(cfg, tmp_path / "b")
    tr = a.trajectory
    _RUNS[("steady", STEADY_I)] = RunRecord(
        "steady I=2000", tr.final, len(tr.iterations), tr.all_in_bounds,
        tr.max_residual, tr.max_mass_defect, secs)
    same = (a.paths[-1].read_bytes() == b.paths[-1].read_bytes()
            and (tmp_path / "a" / "profile_index.csv").read_bytes()
            == (tmp_path / "b" / "profile_index.csv").read_bytes())
    ok = a.steady and b.steady and same
    record(5, "steady state at T=1 and byte-stable profile", ok,
           f"steady={a.steady}/{b.steady} identical_csv={same} steps={len(tr.iterations)} "
           f"mean_iters={np.mean(tr.iterations):.1f}")
    assert ok


# -- criterion 4 -----------------------------------------------------------

STRICT_RUNS = ((64, 1e-4, 1e-2), (256, 1e-5, 1e-3), (256, 1e-3, 0.1), (1024, 1e-4, 1e-3))


def _ensure_table1_runs():
    for eps in EPS_ALL:
        space_table(eps)
        run_cached(table1(eps), AP_I, AP_DT, T_SHORT)
    for eps in (0.0, 1e-2):
        time_table(eps)


def test_criterion_4_linf_stability():
    _ensure_table1_runs()
    table1_runs = [r for k, r in _RUNS.items() if k[0] != STRICT]
    strict_runs = [run_cached(STRICT, i, dt, tf, f"strict I={i} dt={dt:g} T={tf:g}")
                   for i, dt, tf in STRICT_RUNS]
    bad = [r.label for r in table1_runs + strict_runs if not r.all_in_bounds]
    ok = not bad
    record(4, "0 <= P <= 2 and 0 <= N <= 1 at every step, no tolerance", ok,
           f"{len(table1_runs)} table1 runs, {len(strict_runs)} strict runs"
           + (f"; violations in {bad}" if bad else ""))
    assert ok


# -- criterion 6 -----------------------------------------------------------

def _random_mesh(rng):
    I = int(rng.integers(1, 65))
    kind = rng.integers(3)
    if kind == 0:
        return mesh.uniform(I)
    if kind == 1:
        return mesh.tchebychev(I)
    inner = np.sort(rng.uniform(0, 1, I - 1))
    pts = np.concatenate(([0.0], inner, [1.0]))
    if np.any(np.diff(pts) <= 1e-9):
        return mesh.uniform(I)
    return mesh.from_interfaces(pts)


def _flux_suite(rng, n):
    z = rng.choice([3, -1], n)
    gap = 10 ** rng.uniform(-4, 0, n)
    dpsi = np.where(rng.random(n) < 0.1, rng.uniform(-1e-6, 1e-6, n), rng.uniform(-50, 50, n))
    ul, ur = rng.uniform(0, 2, n), rng.uniform(0, 2, n)
    a = sg_flux(z, gap, dpsi, ul, ur)
    b = sg_flux_coth(z, gap, dpsi, ul, ur)
    return float(np.max(np.abs(a - b) / np.maximum(flux_scale(z, gap, dpsi, ul, ur), 1e-300)))


def _bernoulli_suite(rng, n):
    x = np.concatenate([rng.uniform(-60, 60, n), rng.uniform(-1e-4, 1e-4, n // 10)])
    bx, bm = bernoulli(x), bernoulli(-x)
    add = np.abs(bm - (bx + x)) / np.maximum(np.abs(bx) + np.abs(x), np.abs(bm))
    mul = np.abs(bm - bx * np.exp(x)) / bm
    return float(add.max()), float(mul.max())


def _poincare_suite(rng, n):
    worst = 0.0
    for _ in range(n):
        m = _random_mesh(rng)
        w = rng.normal(size=m.cells + 2) * 10 ** rng.uniform(-3, 3)
        n1 = norm_1T(w, m)
        worst = max(worst, norm_l2(w, m) / (math.sqrt(2) * n1),
                    float(np.max(w[1:-1] ** 2)) / (2 * n1**2))
    return worst


def _poisson_suite(rng, n):
    affine = gauss = 0.0
    for _ in range(n):
        m = _random_mesh(rng)
        prm = TABLE1.replace(alpha0=float(rng.uniform(0.01, 1)), alpha1=float(rng.uniform(0.01, 1)),
                             lambda_sq=float(10 ** rng.uniform(-4, 0)),
                             dpsi0_pzc=float(rng.uniform(-1, 1)),
                             dpsi1_pzc=float(rng.uniform(-1, 1)),
                             v_applied=float(rng.uniform(-1, 1)))
        # neutral densities: the potential is affine
        p = rng.uniform(0, prm.p_max, m.cells)
        psi = system.solve_poisson(m, prm, p, 3 * p + prm.rho_hl)
        B = (prm.v_applied - prm.dpsi1_pzc - prm.dpsi0_pzc) / (1 + prm.alpha0 + prm.alpha1)
        A = prm.dpsi0_pzc + prm.alpha0 * B
        affine = max(affine, float(np.max(np.abs(psi - (A + B * m.centers)))))
        # charged densities: summed rows balance the boundary fluxes
        pc, nc = rng.uniform(0, prm.p_max, m.cells), rng.uniform(0, prm.n_max, m.cells)
        psi = system.solve_poisson(m, prm, pc, nc)
        gauss = max(gauss, system.gauss_defect(m, prm, psi, pc, nc))
    return affine, gauss


def test_criterion_6_oracle_identities():
    rng = np.random.default_rng(20240601)
    n = RANDOM_CASES
    flux = _flux_suite(rng, 10 * n)
    b_add, b_mul = _bernoulli_suite(rng, 10 * n)
    poinc = _poincare_suite(rng, n)
    affine, gauss = _poisson_suite(rng, n)
    _ensure_table1_runs()
    runs = list(_RUNS.values())
    steps = sum(r.steps for r in runs)
    mass = max(r.max_mass_defect for r in runs)
    checks = {
        "sg=coth": (flux, 1e-12),
        "B(-x)=B(x)+x": (b_add, 1e-12),
        "B(-x)=B(x)e^x": (b_mul, 1e-12),
        "poincare/sup bound ratio": (poinc, 1.0 + 1e-14),
        "affine psi": (affine, 1e-11),
        "gauss": (gauss, 1e-10),
        "mass balance": (mass, 1e-9),
    }
    ok = all(v <= tol for v, tol in checks.values()) and steps >= n
    detail = ", ".join(f"{k} {v:.1e}" for k, (v, _) in checks.items())
    record(6, f"oracle identities over >= {n} cases each", ok,
           detail + f", mass-balance steps {steps}")
    assert ok


# -- criterion 7 -----------------------------------------------------------

def test_criterion_7_scheme_residual():
    _ensure_table1_runs()
    for i, dt, tf in STRICT_RUNS:
        run_cached(STRICT, i, dt, tf, f"strict I={i} dt={dt:g} T={tf:g}")
    if ("steady", STEADY_I) not in _RUNS:
        run_cached(table1(0.0), STEADY_I, STEADY_DT, STEADY_T, "steady I=2000")
    runs = list(_RUNS.values())
    worst = max(runs, key=lambda r: r.max_residual)
    ok = worst.max_residual <= 1e-9
    record(7, "scheme residual <= 1e-9 on every step of criteria 1-5", ok,
           f"max {worst.max_residual:.2e} ({worst.label}) over {len(runs)} runs, "
           f"{sum(r.steps for r in runs)} steps")
    assert ok
