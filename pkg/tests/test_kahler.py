import numpy as np
import pytest

from bergerflow.flow import ricci_rhs, stable_dt, step
from bergerflow.initial import construct_initial_metric
from bergerflow.kahler import (
    BandError,
    CalabiState,
    advance_calabi,
    calabi_rhs,
    evolve_calabi_v,
    psi_residual,
    rho_drift,
    theta_field,
    theta_residual,
    twin_run,
    u_consistency,
)
from bergerflow.profile import InvalidProfileError, SpatialGrid

from .conftest import bump_params, kahler_params


def test_state_round_trip(kahler):
    res = CalabiState.from_profile(kahler).to_profile()
    assert res.f[0] == res.f[-1] == 0.0
    assert np.max(np.abs(res.f - kahler.f)) <= kahler.grid.tol
    np.testing.assert_allclose(res.g, kahler.g)
    np.testing.assert_array_equal(res.jac, kahler.jac)


def test_state_validate(kahler):
    CalabiState.from_profile(kahler).validate()
    state = CalabiState.from_profile(kahler)
    with pytest.raises(InvalidProfileError, match="positive"):
        CalabiState(state.grid, -state.v, state.jac).validate()
    with pytest.raises(InvalidProfileError, match="increasing"):
        CalabiState(state.grid, state.v[::-1], state.jac).validate()


def test_rhs_matches_full_system(kahler):
    v_t, jac_t = calabi_rhs(CalabiState.from_profile(kahler))
    rates = ricci_rhs(kahler)
    full_v_t = 2 * kahler.g * rates.g_t
    assert np.max(np.abs(v_t - full_v_t)) <= 1e-3 * np.max(np.abs(full_v_t))
    assert np.max(np.abs(jac_t - rates.jac_t)) <= 1e-3 * np.max(np.abs(rates.jac_t))
    assert v_t[0] == pytest.approx(-4.0, abs=1e-3)


def test_evolve_zero(kahler):
    state = CalabiState.from_profile(kahler)
    assert evolve_calabi_v(state, 0.0) is state


def test_evolve_negative(kahler):
    with pytest.raises(ValueError, match="Negative"):
        evolve_calabi_v(CalabiState.from_profile(kahler), -1.0)


def test_advance_calabi(kahler):
    state = advance_calabi(CalabiState.from_profile(kahler), 1e-3)
    assert state.t == pytest.approx(1e-3)
    assert state.v[0] == pytest.approx(1.0 - 4e-3, abs=1e-4)
    state.validate()


def test_u_consistency(kahler):
    before = CalabiState.from_profile(kahler)
    after = evolve_calabi_v(before, stable_dt(kahler))
    assert u_consistency(before, after, edge=2) <= 0.05


def _u_residual(nodes):
    profile = construct_initial_metric(kahler_params(), SpatialGrid(nodes))
    before = CalabiState.from_profile(profile)
    return u_consistency(before, evolve_calabi_v(before, stable_dt(profile)), edge=2)


def test_u_consistency_converges():
    coarse, fine = _u_residual(65), _u_residual(129)
    assert fine > 0.0
    assert coarse / fine >= 3.0


def test_twin_run():
    profile = construct_initial_metric(kahler_params(), SpatialGrid(65))
    t_end = 20 * stable_dt(profile)
    res = twin_run(profile, t_end)
    assert res.times[0] == 0.0
    assert res.times[-1] == pytest.approx(t_end)
    assert len(res.times) == len(res.deviations) == len(res.u_residuals) + 1
    assert res.max_deviation <= 1e-3
    assert res.full.t == pytest.approx(res.scalar.t)


def test_twin_deviation_order():
    deviations = [
        twin_run(construct_initial_metric(kahler_params(), SpatialGrid(n)), 0.05).max_deviation
        for n in (65, 129)
    ]
    assert deviations[1] > 0.0
    assert np.log2(deviations[0] / deviations[1]) >= 1.8


def test_theta_kahler(kahler):
    theta, band = theta_field(kahler)
    assert not band[0]
    assert band[kahler.grid.center]
    assert np.max(np.abs(theta[band] - 1.0)) <= kahler.grid.tol
    assert theta[0] == pytest.approx(1.0, abs=kahler.grid.tol)


def test_theta_constant_phi(constant_phi):
    theta, band = theta_field(constant_phi)
    np.testing.assert_allclose(theta[band], 1 / 0.95, atol=constant_phi.grid.tol)


def test_theta_empty_band(kahler):
    with pytest.raises(BandError):
        theta_field(kahler, cutoff=2.0)


def test_theta_residual_kahler(kahler):
    after = step(kahler, stable_dt(kahler))
    res = theta_residual(kahler, after)
    assert res.nodes > 0
    assert res.residual <= 1e-2


def test_psi_residual_kahler(kahler):
    after = step(kahler, stable_dt(kahler))
    assert psi_residual(kahler, after) <= 1e-2


def test_psi_residual_constant_phi(constant_phi):
    after = step(constant_phi, stable_dt(constant_phi))
    assert psi_residual(constant_phi, after) <= 0.05


def test_rho_drift_kahler(kahler):
    res = rho_drift(kahler)
    assert np.max(np.abs(res.integrand)) <= kahler.grid.tol
    assert res.drift[kahler.grid.center] == 0.0
    assert np.max(np.abs(res.drift)) <= 10 * kahler.grid.tol


def test_rho_drift_constant_phi(constant_phi):
    res = rho_drift(constant_phi)
    f, g = constant_phi.f, constant_phi.g
    inner = slice(10, -10)
    expected = (1 - 0.95**2) * f**2 / g**4
    np.testing.assert_allclose(res.integrand[inner], expected[inner], atol=1e-3)
    assert np.all(np.diff(res.drift[inner]) > 0.0)


def _bump_step(nodes):
    profile = construct_initial_metric(bump_params(), SpatialGrid(nodes))
    return profile, step(profile, stable_dt(profile))


@pytest.fixture(name="bump_steps", scope="module")
def fixture_bump_steps():
    return [_bump_step(n) for n in (65, 129, 257)]


def test_theta_residual_converges(bump_steps):
    res = [theta_residual(before, after) for before, after in bump_steps]
    assert all(r.nodes > 0 for r in res)
    residuals = [r.residual for r in res]
    assert residuals[0] <= 1e-2
    assert residuals[0] / residuals[1] >= 2.0
    assert residuals[1] / residuals[2] >= 2.0


def test_psi_residual_converges(bump_steps):
    residuals = [psi_residual(before, after) for before, after in bump_steps]
    assert residuals[0] > residuals[1] > residuals[2]
