import math

import numpy as np
import pytest

from bergerflow.profile import (
    FS_BOUND,
    Boundary,
    ClosenessFlags,
    InvalidProfileError,
    MetricProfile,
    Parity,
    ParityError,
    SpatialGrid,
    arclength,
    closeness,
    compute_curvatures,
    compute_diagnostics,
    d_ds,
    diff_x,
    diff_xx,
    extend,
    pole_limit,
    psi_field,
)


def test_grid_too_small():
    with pytest.raises(ValueError, match="at least 33"):
        SpatialGrid(32)


def test_grid_nodes():
    grid = SpatialGrid(65)
    assert grid.x[0] == -1.0
    assert grid.x[-1] == 1.0
    assert grid.h == pytest.approx(1 / 32)
    assert grid.tol == pytest.approx(10 / 32**2)
    assert grid.center == 32
    assert grid.x[grid.center] == 0.0
    assert SpatialGrid(64).center is None


def test_grid_read_only():
    with pytest.raises(ValueError):
        SpatialGrid(33).x[0] = 2.0


def test_profile_shape_mismatch(grid):
    with pytest.raises(InvalidProfileError, match="shape"):
        MetricProfile(grid, np.zeros(3), np.ones(grid.node_count), np.ones(grid.node_count))


def test_validate_open_pole(kahler):
    f = np.array(kahler.f)
    f[0] = 1e-3
    with pytest.raises(InvalidProfileError, match="vanish"):
        kahler.replace(f=f).validate()


def test_validate_negative_g(kahler):
    g = np.array(kahler.g)
    g[10] = -1.0
    with pytest.raises(InvalidProfileError, match="node 10"):
        kahler.replace(g=g).validate()


def test_validate_non_finite(kahler):
    jac = np.array(kahler.jac)
    jac[3] = math.nan
    with pytest.raises(InvalidProfileError, match="non-finite"):
        kahler.replace(jac=jac).validate()


def test_extend_unknown_parity():
    with pytest.raises(ParityError):
        extend(np.zeros(10), "even")


def test_d_ds_unknown_order(kahler):
    with pytest.raises(ValueError, match="order"):
        d_ds(kahler.g, kahler, 4, parity=Parity.EVEN)


def test_d_ds_unknown_parity(kahler):
    with pytest.raises(ParityError):
        d_ds(kahler.g, kahler, 1, parity=None)


def test_diff_free_exact_for_quartic(grid):
    x = grid.x
    np.testing.assert_allclose(diff_x(x**4 - x**3, grid.h, Parity.FREE), 4 * x**3 - 3 * x**2, atol=1e-9)
    np.testing.assert_allclose(diff_xx(x**3, grid.h, Parity.FREE), 6 * x, atol=1e-7)


def test_diff_even(grid):
    x = grid.x
    u = np.cos(math.pi * (x + 1))
    np.testing.assert_allclose(
        diff_x(u, grid.h, Parity.EVEN), -math.pi * np.sin(math.pi * (x + 1)), atol=1e-5
    )
    np.testing.assert_allclose(
        diff_xx(u, grid.h, Parity.EVEN), -(math.pi**2) * u, atol=1e-4
    )


def test_diff_odd(grid):
    x = grid.x
    u = np.sin(math.pi * (x + 1))
    np.testing.assert_allclose(
        diff_x(u, grid.h, Parity.ODD), math.pi * np.cos(math.pi * (x + 1)), atol=1e-5
    )
    assert diff_xx(u, grid.h, Parity.ODD)[0] == pytest.approx(0.0, abs=1e-12)


def test_pole_limit_even_quadratic(grid):
    u = 1.0 + (grid.x + 1.0) ** 2 * (grid.x - 1.0) ** 2
    u[0] = u[-1] = math.nan
    res = pole_limit(u)
    assert res[0] == pytest.approx(1.0, abs=1e-3)
    assert res[-1] == pytest.approx(1.0, abs=1e-3)
    assert np.array_equal(res[1:-1], u[1:-1])


def test_arclength_uniform(kahler):
    np.testing.assert_allclose(arclength(kahler), kahler.grid.x * math.pi / 2, atol=1e-12)


def test_arclength_negative_jac(kahler):
    with pytest.raises(InvalidProfileError, match="Jacobian"):
        arclength(kahler.replace(jac=-np.array(kahler.jac)))


def test_kahler_closeness(kahler):
    report = closeness(kahler, 0.5)
    assert report.ok
    assert report.failed == []
    assert report["b"].margin == pytest.approx(0.0, abs=kahler.grid.tol)
    assert report["c"].margin == pytest.approx(FS_BOUND - 1.0, abs=kahler.grid.tol)
    assert report["d"].margin == pytest.approx(2.0 - 0.25, abs=1e-6)
    assert set(report.dump()) == {"a", "b", "c", "d", "e"}
    assert ClosenessFlags.of(report).all


def test_closeness_threshold_fails(kahler):
    report = closeness(kahler, 1.5)
    assert report.failed == ["d"]
    assert report["d"].margin == pytest.approx(2.0 - 2.25, abs=1e-6)


def test_closeness_decreasing_g(kahler):
    g = np.array(kahler.g)
    g[40:60] -= 0.3 * np.sin(np.linspace(0.0, math.pi, 20))
    report = closeness(kahler.replace(g=g), 0.5)
    assert not report["e"].ok
    assert 40 <= report["e"].node < 60


def test_closeness_unknown_key(kahler):
    with pytest.raises(KeyError):
        closeness(kahler, 0.5)["f"]


def test_psi_kahler(kahler):
    psi = psi_field(kahler)
    assert np.max(np.abs(psi)) <= kahler.grid.tol


def test_psi_constant_phi(constant_phi):
    np.testing.assert_allclose(psi_field(constant_phi), 0.95**2 - 1.0, atol=constant_phi.grid.tol)


def test_psi_bump_window(seeded):
    psi = psi_field(seeded)
    tol = seeded.grid.tol
    assert np.max(psi) <= tol
    assert np.min(psi) >= -2 * 0.05 + 0.05**2 - tol


def test_curvatures_pole_limits(kahler):
    curv = compute_curvatures(kahler)
    for i in (0, -1):
        assert curv.k12[i] == curv.k02[i]
        assert curv.k23[i] == pytest.approx(4.0 / kahler.g[i] ** 2)
    np.testing.assert_allclose(
        curv.R, curv.k01 + 2 * curv.k02 + 2 * curv.k12 + curv.k23
    )
    assert np.all(np.isfinite(curv.R))
    assert curv.sup_abs() > 0.0


def test_curvatures_interior_k01(kahler):
    # f = sin on the half sine shape has constant κ01 = 1
    curv = compute_curvatures(kahler)
    np.testing.assert_allclose(curv.k01, 1.0, atol=1e-4)


def test_diagnostics_kahler(kahler):
    rec = compute_diagnostics(kahler, 0.5)
    assert rec.t == 0.0
    assert rec.mu == pytest.approx(1.0)
    assert rec.mu_argmin == 0
    assert rec.g_plus == pytest.approx(math.sqrt(5.0), rel=1e-6)
    assert rec.threshold == pytest.approx(2.0, abs=1e-6)
    assert rec.F_max_abs <= kahler.grid.tol
    assert rec.fs_min == pytest.approx(-1.0, abs=1e-6)
    assert rec.fs_max == pytest.approx(1.0, abs=1e-6)
    assert rec.dg2_minus == pytest.approx(-4.0, abs=1e-3)
    assert rec.fs_pole_drift <= 1e-6
    assert rec.flags.all


def test_diagnostics_constant_phi_pole_rate(constant_phi):
    rec = compute_diagnostics(constant_phi, 0.5)
    assert rec.dg2_minus == pytest.approx(-4.2, abs=1e-3)
    assert rec.threshold == pytest.approx(1.8, abs=1e-6)
    assert rec.g_plus**2 == pytest.approx(4.8, abs=1e-6)


def test_diagnostics_open_window(kahler):
    with pytest.raises(InvalidProfileError, match="closed"):
        compute_diagnostics(kahler.replace(boundary=Boundary.OPEN), 0.5)
