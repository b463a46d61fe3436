import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgcorrosion import experiments as ex, mesh, timeloop as T
from sgcorrosion.params import STRICT, TABLE1
from sgcorrosion.timeloop import State


def const_state(I, p, n=None, psi=None):
    def full(v):
        a = np.empty(I + 2)
        a[1:-1] = v
        a[0], a[-1] = a[1], a[-2]
        return a
    return State(full(p), full(p if n is None else n), full(p if psi is None else psi))


def test_nested_examples():
    a = const_state(4, np.array([0.3, 0.1, 0.9, 0.2]))
    assert ex.l2_error_nested(a, mesh.uniform(4), a, mesh.uniform(4)).as_tuple() == (0, 0, 0)
    e = ex.l2_error_nested(const_state(2, 1.0), mesh.uniform(2),
                           const_state(4, 0.0), mesh.uniform(4))
    assert e.as_tuple() == pytest.approx((1.0, 1.0, 1.0), rel=1e-15)
    e = ex.l2_error_nested(const_state(1, 0.0), mesh.uniform(1),
                           const_state(4, np.array([1.0, 0, 0, 0])), mesh.uniform(4))
    assert e.p == pytest.approx(0.5, rel=1e-15)


def test_nested_rejects_non_nested():
    with pytest.raises(ValueError):
        ex.l2_error_nested(const_state(3, 0.0), mesh.uniform(3),
                           const_state(4, 0.0), mesh.uniform(4))
    with pytest.raises(ValueError):
        ex.l2_error_projected(const_state(2, 0.0), mesh.tchebychev(2),
                              const_state(4, 0.0), mesh.tchebychev(4))


def test_projected_removes_reconstruction_gap():
    # the cell averages of the reference are reproduced exactly by the coarse state
    fine = const_state(4, np.array([1.0, 3.0, 2.0, 6.0]))
    coarse = const_state(2, np.array([2.0, 4.0]))
    assert ex.l2_error_projected(coarse, mesh.uniform(2), fine, mesh.uniform(4)).max() == 0.0
    assert ex.l2_error_nested(coarse, mesh.uniform(2), fine, mesh.uniform(4)).p > 0


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.integers(0, 4))
def test_nested_triangle_inequality(seed, k):
    rng = np.random.default_rng(seed)
    I = 2**k
    ma, mb, mc = mesh.uniform(I), mesh.uniform(2 * I), mesh.uniform(4 * I)
    a, b, c = (const_state(m.cells, rng.normal(size=m.cells)) for m in (ma, mb, mc))
    ac = ex.l2_error_nested(a, ma, c, mc).p
    ab = ex.l2_error_nested(a, ma, b, mb).p
    bc = ex.l2_error_nested(b, mb, c, mc).p
    assert ac <= ab + bc + 1e-12


@pytest.mark.parametrize("q", [1, 2])
@pytest.mark.parametrize("C", [1e-3, 7.5])
def test_rate_fit_synthetic(q, C):
    hs = [2.0**-k for k in range(3, 9)]
    rows = [ex.ConvergenceRow(1 / h, h, (C * h**q,) * 3) for h in hs]
    ex.fill_rates(rows)
    for r in rows[1:]:
        assert r.rates == pytest.approx((q, q, q), abs=1e-10)
        assert not r.flagged
    t = ex.ConvergenceTable("space", rows)
    assert t.headline_rate("n") == pytest.approx(q, abs=1e-10)


def test_rate_undefined_flagged():
    rows = [ex.ConvergenceRow(8, 0.125, (1.0, 0.0, 1.0)),
            ex.ConvergenceRow(8, 0.125, (1.0, 0.0, 1.0))]
    ex.fill_rates(rows)
    assert rows[1].flagged and all(math.isnan(r) for r in rows[1].rates)
    assert math.isnan(ex.observed_rate(0.0, 1.0, 0.5, 0.25))


def test_csv_round_trip(tmp_path):
    hs = [0.25, 0.125, 0.0625]
    rows = [ex.ConvergenceRow(int(1 / h), h, (math.pi * h**2, 1 / 3 * h, h**1.5)) for h in hs]
    ex.fill_rates(rows)
    t = ex.ConvergenceTable("space", rows)
    p = ex.emit_csv(t, tmp_path / "t.csv")
    header, recs = ex.read_csv(p)
    assert header == ex.SPACE_COLUMNS
    assert len(recs) == 3
    for got, want in zip(recs, t.records()):
        assert got[0] == want[0] and isinstance(got[0], int)
        for g, w in zip(got[1:], want[1:]):
            assert (math.isnan(g) and math.isnan(w)) or g == w
    assert p.read_bytes().count(b"\r\n") == 4


def test_csv_empty_and_single_row(tmp_path):
    p = ex.emit_csv(ex.ConvergenceTable("time"), tmp_path / "e.csv")
    assert p.read_text().splitlines() == [",".join(ex.TIME_COLUMNS)]
    t = ex.ConvergenceTable("time", [ex.ConvergenceRow(1e-4, 1e-4, (1.0, 2.0, 3.0))])
    p = ex.emit_csv(t, tmp_path / "s.csv")
    lines = p.read_text().splitlines()
    assert len(lines) == 2 and lines[1] == "0.0001,1,2,3,nan,nan,nan"


def test_flatness():
    assert ex.flatness([1.0, 1.05, 1.1]) == pytest.approx(0.1)
    assert ex.flatness([2.0, 2.0]) == 0.0


def base(prm=TABLE1, I=8, dt=1e-4, tf=4e-4):
    return T.RunConfig(prm, mesh.uniform(I), T.SolverOptions(dt=dt), tf)


def test_convergence_space_small(tmp_path):
    t = ex.convergence_space(base(), [4, 8], reference_I=16, reference_dt=1e-4)
    assert [r.resolution for r in t.rows] == [4, 8]
    assert all(e >= 0 for r in t.rows for e in r.errors)
    assert t.complete and t.meta["reference_cells"] == 16
    a = ex.emit_csv(t, tmp_path / "a.csv").read_bytes()
    t2 = ex.convergence_space(base(), [8, 4], reference_I=16, reference_dt=1e-4)
    assert ex.emit_csv(t2, tmp_path / "b.csv").read_bytes() == a


def test_convergence_space_duplicate_flagged():
    t = ex.convergence_space(base(), [8, 8], reference_I=16, reference_dt=1e-4)
    assert t.rows[0].errors == t.rows[1].errors
    assert t.rows[1].flagged


def test_convergence_space_reference_equal_is_zero():
    t = ex.convergence_space(base(), [16], reference_I=16, reference_dt=1e-4)
    assert t.rows[0].errors == (0.0, 0.0, 0.0)


def test_convergence_space_rejects():
    with pytest.raises(ValueError):
        ex.convergence_space(base(), [3], reference_I=16, reference_dt=1e-4)
    with pytest.raises(ValueError):
        ex.convergence_space(base(), [8], reference_I=16, reference_dt=1e-4, norm="max")


def test_convergence_time_small():
    t = ex.convergence_time(base(), [2e-4, 1e-4], reference_dt=5e-5, mesh_I=8)
    assert [r.resolution for r in t.rows] == [2e-4, 1e-4]
    assert not math.isnan(t.rows[1].rates[0])
    one = ex.convergence_time(base(), [2e-4], reference_dt=5e-5, mesh_I=8)
    assert len(one.rows) == 1 and math.isnan(one.headline_rate("p"))
    with pytest.raises(ValueError):
        ex.convergence_time(base(), [3e-4], reference_dt=5e-5, mesh_I=8)


def test_study_failure_flags_partial_table():
    cfg = base()
    cfg = T.RunConfig(cfg.params, cfg.mesh, T.SolverOptions(dt=1e-4, fp_max_iters=1), 2e-4)
    with pytest.raises(ex.StudyError) as err:
        ex.convergence_space(cfg, [4], reference_I=8, reference_dt=1e-4)
    assert err.value.table is not None and not err.value.table.complete


def test_eps_sweep_small():
    assert ex.eps_sweep(base(), [], 8, 1e-4, 16, 1e-4).rows == []
    t = ex.eps_sweep(base(), [0.0, 1e-6], 8, 1e-4, 16, 1e-4)
    assert [r[0] for r in t.rows] == [0.0, 1e-6]
    assert t.rows[0][4:] == (0.0, 0.0, 0.0)
    assert all(d < e for d, e in zip(t.rows[1][4:], t.rows[0][1:4]))
    assert all(math.isnan(v) for v in ex.eps_sweep(base(), [1e-3], 8, 1e-4, 16, 1e-4).rows[0][4:])
    with pytest.raises(ValueError):
        ex.eps_sweep(base(), [-1.0], 8, 1e-4, 16, 1e-4)


def test_profile_run(tmp_path):
    cfg = T.RunConfig(STRICT, mesh.uniform(6), T.SolverOptions(dt=1e-4), 2e-4,
                      output_times=[0.0, 1e-4])
    res = ex.profile_run(cfg, tmp_path)
    assert [p.name for p in res.paths] == ["profile_0000.csv", "profile_0001.csv",
                                           "profile_0002.csv"]
    header, recs = ex.read_csv(res.paths[0])
    assert header == ex.PROFILE_COLUMNS and len(recs) == 8
    assert recs[0][0] == 0.0 and recs[-1][0] == 1.0
    idx = (tmp_path / "profile_index.csv").read_text().splitlines()
    assert idx[0] == "file,time,steady" and len(idx) == 4


def test_profile_zero_time(tmp_path):
    res = ex.profile_run(T.RunConfig(TABLE1, mesh.uniform(4), T.SolverOptions(dt=1e-4), 0.0),
                         tmp_path)
    _, recs = ex.read_csv(res.paths[0])
    assert [r[1] for r in recs[1:-1]] == [1.0] * 4
