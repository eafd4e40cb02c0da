import math

import pytest
import xdg.BaseDirectory
from prompt_toolkit.application import create_app_session

from bergerflow.initial import BumpPhi, ConstantPhi, HalfSine, SeedParams, construct_initial_metric
from bergerflow.profile import ClosenessFlags, DiagnosticRecord, MetricProfile, SpatialGrid


@pytest.fixture(autouse=True)
def isolated_environment(monkeypatch):
    """No configuration or output location of the host leaks into tests."""
    monkeypatch.setattr(xdg.BaseDirectory, "xdg_config_dirs", [])
    monkeypatch.delenv("BERGERFLOW_OUT", raising=False)


@pytest.fixture(autouse=True)
def fresh_app_session():
    """Bind prompt_toolkit output to this test's captured stdout, not a stale one."""
    with create_app_session():
        yield


@pytest.fixture(name="grid")
def fixture_grid() -> SpatialGrid:
    return SpatialGrid(129)


def kahler_params() -> SeedParams:
    return SeedParams(HalfSine(), alpha=1.0, delta=0.5, epsilon=0.0, phi_shape=ConstantPhi())


def constant_phi_params(epsilon: float = 0.05) -> SeedParams:
    return SeedParams(HalfSine(), alpha=1.0, delta=0.5, epsilon=epsilon, phi_shape=ConstantPhi())


def bump_params() -> SeedParams:
    return SeedParams(HalfSine(), alpha=1.0, delta=0.5, epsilon=0.05, phi_shape=BumpPhi())


@pytest.fixture(name="kahler")
def fixture_kahler(grid) -> MetricProfile:
    return construct_initial_metric(kahler_params(), grid)


@pytest.fixture(name="constant_phi")
def fixture_constant_phi(grid) -> MetricProfile:
    return construct_initial_metric(constant_phi_params(), grid)


@pytest.fixture(name="seeded")
def fixture_seeded(grid) -> MetricProfile:
    return construct_initial_metric(bump_params(), grid)


def record(t: float, mu: float, **kwargs) -> DiagnosticRecord:
    """Diagnostic record with only the given values meaningful."""
    values = {
        "mu_argmin": 0,
        "g_plus": 2.0,
        "psi_min": -0.1,
        "psi_max": 0.0,
        "F_max_abs": 0.0,
        "fs_min": -1.0,
        "fs_max": 1.0,
        "sup_curv": 1.0,
        "Q_min": 0.0,
        "threshold": 1.0,
        "flags": ClosenessFlags(True, True, True, True, True),
        "g_minus": mu,
        "dg2_minus": -4.0,
        "dg2_plus": -4.0,
        "gs_max_abs": 0.5,
        "curv_mu2": 1.0,
        "R_min": 0.0,
        "fs_pole_drift": 0.0,
    }
    values.update(kwargs)
    return DiagnosticRecord(t=t, mu=mu, **values)


def linear_series(slope: float, count: int = 50, mu0: float = 1.0) -> list[DiagnosticRecord]:
    """Records with ``μ² = μ0² + slope·t`` up to 90% of the zero crossing."""
    T = -(mu0**2) / slope
    return [
        record(t, math.sqrt(mu0**2 + slope * t))
        for t in (0.9 * T * i / (count - 1) for i in range(count))
    ]
