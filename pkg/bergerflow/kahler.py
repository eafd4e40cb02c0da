"""Scalar reduction of the flow on Kähler metrics and Kähler consistency checks.

A Kähler metric of the ansatz satisfies ``f = g·g_s`` and is determined by
``v = g²`` alone, which then evolves by::

    v_t = 2v_ss + v_s²/v - 8

in the same arclength gauge as the full system.
"""

import dataclasses
import functools
import logging
import typing

import numpy as np
import numpy.typing as npt
from scipy import integrate

from .flow import BlowThroughError, Stepping, stable_dt, step
from .profile import (
    Boundary,
    FloatArray,
    InvalidProfileError,
    MetricProfile,
    Parity,
    SpatialGrid,
    d_ds,
    pole_limit,
    psi_field,
)

logger = logging.getLogger(__name__)

BoolArray = npt.NDArray[np.bool_]


class BandError(RuntimeError):
    """No node is left where ``g`` is sufficiently increasing."""


@dataclasses.dataclass(frozen=True, eq=False)
class CalabiState:
    """Potential ``v = g²`` with its arclength Jacobian."""

    grid: SpatialGrid
    v: FloatArray
    jac: FloatArray
    t: float = 0.0
    boundary: Boundary = Boundary.POLES

    def __post_init__(self) -> None:
        for name in ("v", "jac"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_profile(cls, profile: MetricProfile) -> "CalabiState":
        """Potential of the profile, ``f`` is discarded."""
        return cls(profile.grid, profile.g**2, profile.jac, profile.t, profile.boundary)

    def validate(self) -> None:
        """Check that the state describes a metric.

        :raise InvalidProfileError: for non-positive ``v`` or ``f = v_s/2``.
        """
        if not (np.all(np.isfinite(self.v)) and np.all(self.v > 0.0)):
            raise InvalidProfileError("Potential v must be finite and positive")
        if np.any(self.jac <= 0.0):
            raise InvalidProfileError("Non-positive Jacobian")
        inner = self.v_s[1:-1] if self.boundary is Boundary.POLES else self.v_s
        if np.any(inner <= 0.0):
            raise InvalidProfileError("Potential must be strictly increasing (f = v_s/2 > 0)")

    @functools.cached_property
    def v_s(self) -> FloatArray:  # noqa: D102
        return d_ds(self.v, self, 1, parity=Parity.EVEN)

    @functools.cached_property
    def v_ss(self) -> FloatArray:  # noqa: D102
        return d_ds(self.v, self, 2, parity=Parity.EVEN)

    @functools.cached_property
    def v_sss(self) -> FloatArray:  # noqa: D102
        return d_ds(self.v, self, 3, parity=Parity.EVEN)

    @property
    def u(self) -> FloatArray:
        """``u = f² = v_s²/4``."""
        return self.v_s**2 / 4.0

    def to_profile(self) -> MetricProfile:
        """Metric with ``f = v_s/2`` and ``g = √v``."""
        f = self.v_s / 2.0
        if self.boundary is Boundary.POLES:
            f[0] = f[-1] = 0.0
        return MetricProfile(self.grid, f, np.sqrt(self.v), self.jac, self.t, self.boundary)


def calabi_rhs(state: CalabiState) -> tuple[FloatArray, FloatArray]:
    """``v_t`` and ``jac_t`` of the scalar flow."""
    v, v_s, v_ss, v_sss = state.v, state.v_s, state.v_ss, state.v_sss
    v_t = 2.0 * v_ss + v_s**2 / v - 8.0
    with np.errstate(divide="ignore", invalid="ignore"):
        fss_f = v_sss / v_s
    if state.boundary is Boundary.POLES:
        fss_f = pole_limit(fss_f)
    rate = fss_f + v_ss / v - v_s**2 / (2.0 * v**2)
    return v_t, rate * state.jac


def evolve_calabi_v(state: CalabiState, dt: float) -> CalabiState:
    """Advance the scalar flow by a single RK4 step.

    :raise BlowThroughError: when ``v`` stops being positive.
    """
    if dt < 0.0:
        raise ValueError(f"Negative time step: {dt}")
    if dt == 0.0:
        return state

    def shifted(k: tuple[FloatArray, FloatArray], a: float) -> CalabiState:
        return dataclasses.replace(state, v=state.v + a * k[0], jac=state.jac + a * k[1])

    k1 = calabi_rhs(state)
    k2 = calabi_rhs(shifted(k1, dt / 2.0))
    k3 = calabi_rhs(shifted(k2, dt / 2.0))
    k4 = calabi_rhs(shifted(k3, dt))
    v, jac = (
        base + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)
        for base, a, b, c, d in zip((state.v, state.jac), k1, k2, k3, k4, strict=True)
    )
    if not (np.all(np.isfinite(v)) and np.all(v > 0.0) and np.all(jac > 0.0)):
        raise BlowThroughError(
            f"Scalar flow collapsed at t={state.t + dt:.6e}", state.to_profile()
        )
    return dataclasses.replace(state, v=v, jac=jac, t=state.t + dt)


def advance_calabi(
    state: CalabiState,
    duration: float,
    stepping: Stepping = Stepping(),  # noqa: B008
) -> CalabiState:
    """Advance the scalar flow by ``duration`` with stable steps."""
    end = state.t + duration
    while state.t < end:
        dt = min(stable_dt(state.to_profile(), stepping), end - state.t)
        state = evolve_calabi_v(state, dt)
    return state


def u_rhs(state: CalabiState) -> FloatArray:
    """``½v_s·v_sss + ½v_ss·v_s²/v - ¼v_s⁴/v²``."""
    v, v_s, v_ss, v_sss = state.v, state.v_s, state.v_ss, state.v_sss
    return 0.5 * v_s * v_sss + 0.5 * v_ss * v_s**2 / v - 0.25 * v_s**4 / v**2


def _trimmed(values: FloatArray, edge: int) -> FloatArray:
    return values[edge : len(values) - edge] if edge else values


def u_consistency(before: CalabiState, after: CalabiState, edge: int = 0) -> float:
    """Largest mismatch of the measured ``u_t`` and its evolution equation.

    :param edge: nodes excluded at each end.
    """
    dt = after.t - before.t
    measured = (after.u - before.u) / dt
    predicted = 0.5 * (u_rhs(before) + u_rhs(after))
    return float(np.max(_trimmed(np.abs(measured - predicted), edge)))


def _eroded(mask: BoolArray, radius: int = 2) -> BoolArray:
    width = 2 * radius + 1
    hits = np.convolve(mask.astype(np.int64), np.ones(width, dtype=np.int64), mode="same")
    return hits == width


class ThetaBand(typing.NamedTuple):
    """``θ = f/(g·g_s)`` with the mask of nodes where it is meaningful."""

    theta: FloatArray
    band: BoolArray


def theta_field(profile: MetricProfile, cutoff: float = 0.05) -> ThetaBand:
    """Ratio ``θ = f/(g·g_s)`` on nodes with ``g_s ≥ cutoff·max g_s``.

    Outside the band the values are computed but not meaningful. Pole values
    use the limit ``f_s/(g·g_ss)``.

    :raise BandError: if the band is empty.
    """
    d = profile.derivatives
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = profile.f / (profile.g * d.g_s)
    if profile.boundary is Boundary.POLES:
        for i in (0, -1):
            theta[i] = d.f_s[i] / (profile.g[i] * d.g_ss[i])
    gs_max = float(np.max(d.g_s))
    band = d.g_s >= cutoff * gs_max if gs_max > 0.0 else np.zeros_like(theta, dtype=bool)
    if not np.any(band):
        raise BandError(f"No node with g_s ≥ {cutoff}·max g_s at t={profile.t:.6e}")
    logger.debug("θ band covers %d of %d nodes", int(np.count_nonzero(band)), len(band))
    return ThetaBand(theta, band)


def theta_rhs(profile: MetricProfile, theta: FloatArray) -> FloatArray:
    """Right hand side of the evolution of ``θ``."""
    f, g = profile.f, profile.g
    d = profile.derivatives
    th_s = d_ds(theta, profile, 1, parity=Parity.EVEN)
    th_ss = d_ds(theta, profile, 2, parity=Parity.EVEN)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (
            th_ss
            + (3.0 * d.f_s / f - 2.0 * d.g_s / g) * th_s
            - 2.0 * th_s**2 / theta
            + 2.0 * (f * d.g_s - 2.0 * d.f_s * g) / g**3 * (theta**2 - 1.0)
        )


class BandResidual(typing.NamedTuple):
    """Residual of an evolution equation restricted to a band of nodes."""

    residual: float
    nodes: int


def theta_residual(
    before: MetricProfile, after: MetricProfile, cutoff: float = 0.05
) -> BandResidual:
    """Measured ``θ_t`` against its evolution equation on the common band.

    :raise BandError: if the band eroded by two nodes is empty.
    """
    dt = after.t - before.t
    tb, band_b = theta_field(before, cutoff)
    ta, band_a = theta_field(after, cutoff)
    band = _eroded(band_a & band_b)
    if not np.any(band):
        raise BandError("θ band is empty after erosion")
    measured = (ta - tb) / dt
    predicted = 0.5 * (theta_rhs(before, tb) + theta_rhs(after, ta))
    return BandResidual(
        float(np.max(np.abs(measured - predicted)[band])), int(np.count_nonzero(band))
    )


def psi_rhs(profile: MetricProfile, psi: FloatArray) -> FloatArray:
    """Right hand side of the evolution of ``ψ`` with the pole limit."""
    f, g = profile.f, profile.g
    d = profile.derivatives
    p_s = d_ds(psi, profile, 1, parity=Parity.EVEN)
    p_ss = d_ds(psi, profile, 2, parity=Parity.EVEN)
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = (
            p_ss
            + (3.0 * d.f_s / f - 2.0 * d.g_s / g) * p_s
            - p_s**2 / (2.0 * (psi + 1.0))
            + (4.0 * d.g_s**2 / g**2 - 8.0 * d.f_s * d.g_s / (f * g)) * psi
        )
    if profile.boundary is Boundary.POLES:
        for i in (0, -1):
            rhs[i] = 4.0 * p_ss[i] - 8.0 * d.g_ss[i] / g[i] * psi[i]
    return rhs


def psi_residual(before: MetricProfile, after: MetricProfile, edge: int = 4) -> float:
    """Measured ``ψ_t`` against its evolution equation.

    Nodes near the poles where ``ψ`` is blended are excluded except for the
    pole nodes themselves.
    """
    dt = after.t - before.t
    pb, pa = psi_field(before), psi_field(after)
    measured = (pa - pb) / dt
    predicted = 0.5 * (psi_rhs(before, pb) + psi_rhs(after, pa))
    err = np.abs(measured - predicted)
    keep = np.zeros_like(err, dtype=bool)
    keep[edge : len(err) - edge] = True
    if before.boundary is Boundary.POLES:
        keep[0] = keep[-1] = True
    return float(np.max(err[keep]))


class RhoDrift(typing.NamedTuple):
    """Integrand of the Calabi coordinate evolution and the resulting drift."""

    integrand: FloatArray
    drift: FloatArray
    """``∂_t ρ`` at fixed ``x`` with ``ρ`` anchored at ``x = 0``."""


def rho_drift(profile: MetricProfile) -> RhoDrift:
    """``I = g_ss/g - f_s·g_s/(f·g) + f²/g⁴`` and ``ρ_t = 2∫_0^ρ I dρ``."""
    f, g = profile.f, profile.g
    d = profile.derivatives
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = d.g_ss / g - d.f_s * d.g_s / (f * g) + f**2 / g**4
        density = 4.0 * integrand * profile.jac / f
    if profile.boundary is Boundary.POLES:
        integrand[0] = integrand[-1] = 0.0
        density[0] = density[-1] = 0.0
    x = profile.grid.x
    drift = integrate.cumulative_simpson(density, x=x, initial=0.0)
    if (c := profile.grid.center) is not None:
        drift -= drift[c]
        drift[c] = 0.0
    else:
        drift -= float(np.interp(0.0, x, drift))
    return RhoDrift(integrand, drift)


@dataclasses.dataclass
class TwinResult:
    """Full and scalar flow advanced with identical steps."""

    times: list[float] = dataclasses.field(default_factory=list)
    deviations: list[float] = dataclasses.field(default_factory=list)
    """Largest relative deviation of ``g²`` from ``v``."""
    u_residuals: list[float] = dataclasses.field(default_factory=list)
    full: MetricProfile | None = None
    scalar: CalabiState | None = None

    @property
    def max_deviation(self) -> float:
        """Largest deviation over the whole run."""
        return max(self.deviations, default=0.0)


def twin_run(
    profile: MetricProfile,
    t_end: float,
    stepping: Stepping = Stepping(),  # noqa: B008
) -> TwinResult:
    """Evolve Kähler data by both the full system and the scalar flow.

    Both systems use the step sizes of the full system so the comparison
    isolates the equations.
    """
    full = profile
    scalar = CalabiState.from_profile(profile)
    scalar.validate()
    result = TwinResult(times=[full.t], deviations=[0.0], u_residuals=[])
    steps = 0
    while full.t < t_end:
        dt = min(stable_dt(full, stepping), t_end - full.t)
        full = step(full, dt)
        before, scalar = scalar, evolve_calabi_v(scalar, dt)
        steps += 1
        if steps % stepping.stride == 0 or full.t >= t_end:
            result.times.append(full.t)
            result.deviations.append(float(np.max(np.abs(full.g**2 - scalar.v) / scalar.v)))
            result.u_residuals.append(u_consistency(before, scalar))
    result.full, result.scalar = full, scalar
    logger.info(
        "Twin run to t=%.6e: max relative g² deviation %.3e",
        full.t,
        result.max_deviation,
    )
    return result
