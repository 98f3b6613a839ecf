import cmath
import math

import numpy as np
import pytest

from conekit import ma_solver as ms
from conekit import model_geometry as mg
from conekit.errors import DegreeMismatch, DomainError, NoConvergence, TooCoarse

W3 = cmath.exp(2j * math.pi / 3)
FOUR = [0, "inf", 1, -1]
FIVE = [0, "inf", 1, W3, W3 * W3]


@pytest.fixture(scope="module")
def four64():
    return ms.assemble_problem(mg.sphere_config(FOUR, 0.5), 0, resolution=64)


@pytest.fixture(scope="module")
def five64():
    return ms.assemble_problem(mg.sphere_config(FIVE, 0.5), 1, resolution=64)


def test_grid_area_and_laplacian_of_height():
    errs = []
    for n in (64, 128):
        grid = ms.SphereGrid(n)
        prob = ms.ProblemData(mg.sphere_config([], [], normalizer=1.0), 0, grid, np.zeros(grid.size))
        assert grid.integrate(np.ones(grid.size), prob.omega) == pytest.approx(4 * math.pi, rel=1e-3)
        x3 = grid.unit_vectors()[:, 2]
        # Delta_omega = Delta_{S^2} / 2 and Delta_{S^2} x3 = -2 x3
        errs.append(np.max(np.abs(prob.laplacian() @ x3 + x3)))
    assert errs[0] / errs[1] > 3.0


def test_grid_rejects_tiny_resolution():
    with pytest.raises(DomainError):
        ms.SphereGrid(16)


def test_degree_bookkeeping():
    assert ms.degree_k_plus_d(mg.sphere_config(FOUR, 0.5)) == 0.0
    assert ms.degree_k_plus_d(mg.sphere_config(FIVE, 0.5)) == pytest.approx(0.5)
    with pytest.raises(DegreeMismatch):
        ms.assemble_problem(mg.sphere_config([], [], normalizer=1.0), 0, resolution=48)
    with pytest.raises(DegreeMismatch):
        ms.assemble_problem(mg.sphere_config(FOUR[:3], 0.5), 1, resolution=48)
    with pytest.raises(DomainError):
        ms.assemble_problem(mg.local_config([0.5]), 0)
    with pytest.raises(DomainError):
        ms.assemble_problem(mg.sphere_config(FOUR, 0.5), -1, resolution=48)


def test_twist_sign_must_match_degree():
    tw = ms.Twist(lambda z, c: np.ones(np.shape(z)), sign=1)
    with pytest.raises(DegreeMismatch):
        ms.assemble_problem(mg.sphere_config(FOUR[:3], 0.5), 0, twist=tw, resolution=48)
    tw.sign = -1
    prob = ms.assemble_problem(mg.sphere_config(FOUR[:3], 0.5), 0, twist=tw, resolution=48)
    assert prob.poisson_residual < 1e-9


def test_four_point_assembly(four64):
    assert four64.poisson_residual < 1e-9
    assert four64.config.background_scale == 1.0


def test_five_point_assembly_rescales_background(five64):
    assert five64.config.background_scale == pytest.approx(0.25)
    assert five64.poisson_residual < 1e-9
    # with the rescaled round background the datum is constant
    assert np.ptp(five64.f) < 1e-9


def test_empty_solve_is_zero():
    prob = ms.assemble_problem(mg.sphere_config([], [], normalizer=1.0), 0, resolution=48, f="zero")
    fld = ms.solve_star_epsilon(prob, 0.1)
    assert np.all(fld.phi == 0.0)
    assert fld.residual_sup == 0.0
    trace, _ = ms.continuation_run(prob, (1.0, 0.1), record_timing=False)
    for row in trace.rows:
        assert row["osc_rho"] == 0.0 and row["A_min"] == 1.0 and row["A_max"] == 1.0
    K, _ = ms.gauss_curvature_nodes(fld, prob)
    assert np.max(np.abs(K - 1.0)) < 1e-2


def test_linear_solve_gauge_and_positivity(four64):
    fld = ms.solve_star_epsilon(four64, 0.1)
    assert abs(fld.normalization) <= 1e-10
    assert fld.residual_sup <= 1e-8
    assert np.all(fld.density_ratio(four64) > 0)


def test_newton_solve_and_max_principle(five64):
    fld = ms.solve_star_epsilon(five64, 0.1)
    assert fld.residual_sup <= 1e-8
    assert fld.newton_iters >= 1
    assert np.all(fld.density_ratio(five64) > 0)
    assert fld.phi.max() <= ms.max_principle_bound(five64, fld)


def test_solver_errors(five64):
    with pytest.raises(DomainError):
        ms.solve_star_epsilon(five64, 0.0)
    with pytest.raises(NoConvergence) as info:
        ms.solve_star_epsilon(five64, 0.1, ms.SolverParams(max_iter=0))
    assert info.value.epsilon == 0.1
    with pytest.raises(DomainError):
        ms.continuation_run(five64, (0.1, 0.3))


def test_continuation_is_deterministic(four64):
    a, _ = ms.continuation_run(four64, (1.0, 0.3, 0.1), record_timing=False)
    b, _ = ms.continuation_run(four64, (1.0, 0.3, 0.1), record_timing=False)
    assert a.rows == b.rows
    assert list(a.rows[0]) == list(ms.TRACE_COLUMNS)
    assert all(np.isfinite(list(r.values())).all() for r in a.rows)


def test_cone_angles_coarse(four64):
    fld = ms.solve_star_epsilon(four64, 0.01)
    rep = ms.cone_asymptotics_check(fld, four64, radii=np.geomspace(5 * fld.grid.h, 0.45, 5))
    # coarse grid: only a loose sanity window here, the pinned check is at 256
    assert np.all(np.abs(rep.angle_estimate / rep.taus - 1) < 0.1)
    with pytest.raises(TooCoarse):
        ms.cone_asymptotics_check(fld, four64, radii=[0.5 * fld.grid.h, 0.1])
    with pytest.raises(TooCoarse):
        ms.cone_asymptotics_check(fld, four64)  # default annuli reach the next point at 64


def test_empty_cone_report():
    prob = ms.assemble_problem(mg.sphere_config([], [], normalizer=1.0), 0, resolution=48, f="zero")
    rep = ms.cone_asymptotics_check(ms.solve_star_epsilon(prob, 0.5), prob)
    assert np.all(rep.angle_ratio == 1.0)


def test_refinement_is_second_order():
    cfg = mg.sphere_config(FOUR, 0.5)
    probe = np.array([0.45 + 0.3j, -0.2 + 0.55j, 0.6j, 0.35 - 0.4j])
    vals = []
    for n in (64, 128, 256):
        prob = ms.assemble_problem(cfg, 0, resolution=n)
        fld = ms.solve_star_epsilon(prob, 0.3)
        w = fld.grid.pou * prob.omega * fld.grid.cell
        vals.append(fld.grid.interpolate(fld.phi - (w @ fld.phi) / w.sum(), probe))
    d1 = np.max(np.abs(vals[0] - vals[1]))
    d2 = np.max(np.abs(vals[1] - vals[2]))
    assert d1 / d2 > 3.0


def test_dump_field(tmp_path, four64):
    fld = ms.solve_star_epsilon(four64, 0.3)
    paths = ms.dump_field(fld, str(tmp_path / "phi"))
    lines = open(paths[0]).read().splitlines()
    assert lines[:2] == ["resolution = 64", "chart = N"]
    assert len(lines) == 2 + 64
    row = np.array([float(x) for x in lines[2 + 32].split()])
    np.testing.assert_array_equal(row, fld.grid.chart_array(fld.phi, "N")[32])
