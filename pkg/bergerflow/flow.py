"""Ricci flow of warped Berger metrics on the fixed ``x`` grid.

The profile functions evolve at fixed ``x`` by::

    f_t = f_ss + 2(g_s/g) f_s - 2f³/g⁴
    g_t = g_ss + (f_s/f + g_s/g) g_s + 2(f² - 2g²)/g³

and the arclength gauge follows ``jac_t = (f_ss/f + 2g_ss/g)·jac``. At the
poles ``f`` stays pinned to zero and ``g`` follows ``g_t = 2g_ss - 4/g``.
"""

import collections.abc
import dataclasses
import enum
import logging
import math
import typing

import numpy as np
from scipy import interpolate

from .profile import (
    Boundary,
    DiagnosticRecord,
    FloatArray,
    InvalidProfileError,
    MetricProfile,
    arclength,
    closeness,
    compute_diagnostics,
    pole_limit,
)

logger = logging.getLogger(__name__)


class BlowThroughError(RuntimeError):
    """Integration produced non-finite or non-positive values."""

    def __init__(self, msg: str, last_valid: MetricProfile) -> None:
        super().__init__(msg)
        self.last_valid = last_valid
        """The last profile that passed the checks."""
        self.trajectory: FlowTrajectory | None = None
        """Partial trajectory when raised from :func:`run`."""


class EstimationError(RuntimeError):
    """Singular time can't be estimated from the given records."""


class Rates(typing.NamedTuple):
    """Time derivatives at fixed ``x``."""

    f_t: FloatArray
    g_t: FloatArray
    jac_t: FloatArray


def gauge_rate(profile: MetricProfile) -> FloatArray:
    """Logarithmic rate ``f_ss/f + 2g_ss/g`` of the arclength Jacobian."""
    d = profile.derivatives
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = d.f_ss / profile.f + 2.0 * d.g_ss / profile.g
    return pole_limit(rate) if profile.boundary is Boundary.POLES else rate


def ricci_rhs(profile: MetricProfile) -> Rates:
    """Right hand sides of the flow for the profile and its Jacobian."""
    f, g = profile.f, profile.g
    d = profile.derivatives
    with np.errstate(divide="ignore", invalid="ignore"):
        f_t = d.f_ss + 2.0 * (d.g_s / g) * d.f_s - 2.0 * f**3 / g**4
        g_t = d.g_ss + (d.f_s / f + d.g_s / g) * d.g_s + 2.0 * (f**2 - 2.0 * g**2) / g**3
    if profile.boundary is Boundary.POLES:
        for i in (0, -1):
            f_t[i] = 0.0
            g_t[i] = 2.0 * d.g_ss[i] - 4.0 / g[i]
    return Rates(f_t, g_t, gauge_rate(profile) * profile.jac)


@dataclasses.dataclass(frozen=True)
class Stepping:
    """Time step policy shared by every integrator in this package."""

    cfl: float = 0.2
    """Parabolic Courant number."""
    c_curv: float = 0.01
    """Curvature scale (length²) below which ``dt`` follows ``μ²``."""
    stride: int = 10
    """Steps between recorded diagnostics."""
    snapshot_every: int = 10
    """Recorded diagnostics between stored snapshots."""
    remesh: bool = False
    """Resample to uniform arclength when the spacing degenerates."""
    remesh_ratio: float = 10.0
    """Ratio of largest to smallest node spacing that triggers remesh."""


def stable_dt(profile: MetricProfile, stepping: Stepping = Stepping()) -> float:  # noqa: B008
    """Explicit step size ``cfl·ds_min² / max(1, c_curv/μ²)``."""
    ds_min = float(np.min(profile.jac)) * profile.grid.h
    mu = float(np.min(profile.g))
    return stepping.cfl * ds_min**2 / max(1.0, stepping.c_curv / mu**2)


def _shifted(profile: MetricProfile, rates: Rates, a: float) -> MetricProfile:
    return profile.replace(
        f=profile.f + a * rates.f_t,
        g=profile.g + a * rates.g_t,
        jac=profile.jac + a * rates.jac_t,
    )


def step(profile: MetricProfile, dt: float) -> MetricProfile:
    """Advance the profile by a single classic RK4 step.

    :raise BlowThroughError: when the result is not a valid profile.
    """
    if dt < 0.0:
        raise ValueError(f"Negative time step: {dt}")
    if dt == 0.0:
        return profile
    k1 = ricci_rhs(profile)
    k2 = ricci_rhs(_shifted(profile, k1, dt / 2.0))
    k3 = ricci_rhs(_shifted(profile, k2, dt / 2.0))
    k4 = ricci_rhs(_shifted(profile, k3, dt))
    f, g, jac = (
        getattr(profile, name) + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)
        for name, a, b, c, d in zip(("f", "g", "jac"), k1, k2, k3, k4, strict=True)
    )
    if profile.boundary is Boundary.POLES:
        f[0] = f[-1] = 0.0
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g)) and np.all(np.isfinite(jac))):
        raise BlowThroughError(f"Non-finite values at t={profile.t + dt:.6e}", profile)
    if np.any(g <= 0.0) or np.any(jac <= 0.0):
        raise BlowThroughError(f"Collapsed profile at t={profile.t + dt:.6e}", profile)
    return profile.replace(f=f, g=g, jac=jac, t=profile.t + dt)


def advance(
    profile: MetricProfile,
    duration: float,
    stepping: Stepping = Stepping(),  # noqa: B008
) -> MetricProfile:
    """Advance by ``duration`` using as many stable steps as needed."""
    end = profile.t + duration
    while profile.t < end:
        dt = min(stable_dt(profile, stepping), end - profile.t)
        profile = step(profile, dt)
    return profile


def needs_remesh(profile: MetricProfile, ratio: float) -> bool:
    """Node spacing in ``s`` degenerated by more than ``ratio``."""
    return float(np.max(profile.jac) / np.min(profile.jac)) > ratio


def remesh(profile: MetricProfile) -> MetricProfile:
    """Resample ``f`` and ``g`` monotonically to uniform arclength."""
    s = arclength(profile)
    s_new = np.linspace(s[0], s[-1], profile.grid.node_count)
    f = interpolate.PchipInterpolator(s, profile.f)(s_new)
    g = interpolate.PchipInterpolator(s, profile.g)(s_new)
    if profile.boundary is Boundary.POLES:
        f[0] = f[-1] = 0.0
    jac = np.full_like(s, (s[-1] - s[0]) / 2.0)
    return profile.replace(f=f, g=g, jac=jac)


class StopReason(enum.Enum):
    """Reason the run terminated."""

    MU_STOP = "mu_stop"
    DT_FLOOR = "dt_floor"
    T_MAX = "t_max"
    MAX_STEPS = "max_steps"


@dataclasses.dataclass(frozen=True)
class StopCriteria:
    """Termination criteria of a run.

    Unset ``mu_stop`` and ``t_max`` are derived from ``μ(0)``.
    """

    mu_stop_fraction: float = 0.02
    mu_stop: float | None = None
    dt_floor: float = 1e-12
    t_max: float | None = None
    max_steps: int | None = None

    def resolve(self, mu0: float) -> tuple[float, float]:
        """Absolute ``μ_stop`` and ``t_max`` for the initial ``μ(0)``."""
        return (
            self.mu_stop if self.mu_stop is not None else self.mu_stop_fraction * mu0,
            self.t_max if self.t_max is not None else 10.0 * mu0**2 / 4.0,
        )


@dataclasses.dataclass(frozen=True)
class FitQuality:
    """Quality of the linear ``μ²`` fit."""

    slope: float
    residual: float
    """Largest fit residual relative to the largest fitted ``μ²``."""
    slope_ok: bool
    """Slope inside the admissible pole rate window."""
    points: int


@dataclasses.dataclass(frozen=True)
class Type1Ratios:
    """Scale invariant curvature and ``μ²`` ratios near the singular time."""

    T_est: float  # noqa: N815
    series: list[tuple[float, float]]
    """``(t, sup|κ|·(T_est - t))`` over the last two decades of ``T_est - t``."""
    mu2_series: list[tuple[float, float]]
    """``(t, μ²/(T_est - t))`` over the same records."""

    @property
    def tail_max(self) -> float:
        """Largest curvature ratio."""
        return max((r for _, r in self.series), default=math.nan)

    @property
    def tail_min(self) -> float:
        """Smallest curvature ratio."""
        return min((r for _, r in self.series), default=math.nan)

    @property
    def mu2_limit(self) -> float:
        """Last ``μ²/(T_est - t)`` value."""
        return self.mu2_series[-1][1] if self.mu2_series else math.nan


@dataclasses.dataclass
class FlowTrajectory:
    """Result of a run."""

    delta: float
    snapshots: list[MetricProfile] = dataclasses.field(default_factory=list)
    series: list[DiagnosticRecord] = dataclasses.field(default_factory=list)
    stop_reason: StopReason | None = None
    T_est: float | None = None  # noqa: N815
    fit: FitQuality | None = None
    type1: Type1Ratios | None = None
    e_failed_at: float | None = None
    """Time of the first recorded failure of monotonicity of ``g``."""

    @property
    def type1_ratio_series(self) -> list[tuple[float, float]]:
        """``(t, sup|κ|·(T_est - t))`` pairs."""
        return self.type1.series if self.type1 is not None else []


@dataclasses.dataclass
class RunState:
    """Complete mutable state of a run, sufficient for exact resume."""

    profile: MetricProfile
    delta: float
    mu0: float
    step: int = 0
    series: list[DiagnosticRecord] = dataclasses.field(default_factory=list)
    snapshots: list[MetricProfile] = dataclasses.field(default_factory=list)
    e_failed_at: float | None = None

    def trajectory(self, reason: StopReason | None = None) -> FlowTrajectory:
        """Trajectory built from the state so far."""
        return FlowTrajectory(
            delta=self.delta,
            snapshots=list(self.snapshots),
            series=list(self.series),
            stop_reason=reason,
            e_failed_at=self.e_failed_at,
        )


def _record(state: RunState, stepping: Stepping, dt: float, final: bool = False) -> None:
    rec = dataclasses.replace(
        compute_diagnostics(state.profile, state.delta), step=state.step, dt=dt
    )
    state.series.append(rec)
    if (len(state.series) - 1) % stepping.snapshot_every == 0 or final:
        state.snapshots.append(state.profile)
    if not rec.flags.e and state.e_failed_at is None:
        state.e_failed_at = rec.t
        logger.warning("Monotonicity of g first fails at t=%.6e", rec.t)


def run(  # noqa: PLR0917
    profile: MetricProfile,
    delta: float,
    stop: StopCriteria = StopCriteria(),  # noqa: B008
    stepping: Stepping = Stepping(),  # noqa: B008
    *,
    override: bool = False,
    state: RunState | None = None,
    on_record: collections.abc.Callable[[RunState], None] | None = None,
) -> FlowTrajectory:
    """Run the flow until one of the stop criteria is met.

    :param profile: initial profile, ignored when ``state`` is given.
    :param delta: threshold parameter used by the diagnostics.
    :param override: run even if the Closeness Assumptions fail.
    :param state: state to resume from.
    :param on_record: called after every recorded diagnostic row.
    :raise InvalidProfileError: if the initial data is not admissible.
    :raise BlowThroughError: with the partial trajectory attached.
    """
    if state is None:
        profile.validate()
        report = closeness(profile, delta)
        if not report.ok:
            if not override:
                raise InvalidProfileError(
                    f"Closeness Assumptions {', '.join(report.failed)} fail for the initial data"
                )
            logger.warning("Running unvalidated data, failed: %s", ", ".join(report.failed))
        state = RunState(profile=profile, delta=delta, mu0=float(np.min(profile.g)))
        _record(state, stepping, 0.0)
        if on_record is not None:
            on_record(state)
    mu_stop, t_max = stop.resolve(state.mu0)
    dt = state.series[-1].dt if state.series else 0.0
    reason: StopReason
    while True:
        p = state.profile
        if np.min(p.g) <= mu_stop:
            reason = StopReason.MU_STOP
            break
        if p.t >= t_max:
            reason = StopReason.T_MAX
            break
        if stop.max_steps is not None and state.step >= stop.max_steps:
            reason = StopReason.MAX_STEPS
            break
        dt = stable_dt(p, stepping)
        if dt < stop.dt_floor:
            reason = StopReason.DT_FLOOR
            break
        try:
            new = step(p, dt)
        except BlowThroughError as exc:
            logger.error("Blow-through after step %d: %s", state.step, exc)
            exc.trajectory = state.trajectory()
            raise
        if stepping.remesh and needs_remesh(new, stepping.remesh_ratio):
            logger.info("Remeshing at t=%.6e (step %d)", new.t, state.step + 1)
            new = remesh(new)
        state.profile = new
        state.step += 1
        if state.step % stepping.stride == 0:
            _record(state, stepping, dt)
            if on_record is not None:
                on_record(state)
    if state.series[-1].step != state.step:
        _record(state, stepping, dt, final=True)
    elif state.snapshots[-1].t != state.profile.t:
        state.snapshots.append(state.profile)
    logger.info("Run stopped by %s at t=%.6e", reason.value, state.profile.t)

    trajectory = state.trajectory(reason)
    try:
        trajectory.T_est, trajectory.fit = estimate_T(trajectory.series)
    except EstimationError as exc:
        logger.warning("Singular time not estimated: %s", exc)
    else:
        if not trajectory.fit.slope_ok:
            logger.warning(
                "Fitted μ² slope %.3f outside the pole rate window", trajectory.fit.slope
            )
        trajectory.type1 = type1_ratios(trajectory)
    return trajectory


SLOPE_WINDOW = (-12.0, -4.0)


def estimate_T(  # noqa: N802
    series: collections.abc.Sequence[DiagnosticRecord],
    *,
    tail: float = 0.2,
    slope_tol: float = 0.2,
) -> tuple[float, FitQuality]:
    """Extrapolate ``μ²`` linearly to zero over the final records.

    :raise EstimationError: too few records or non-monotone ``μ``.
    """
    if len(series) < 10:
        raise EstimationError(f"Needs at least 10 records, got {len(series)}")
    n = max(math.ceil(tail * len(series)), 3)
    t = np.array([r.t for r in series[-n:]])
    mu2 = np.array([r.mu for r in series[-n:]]) ** 2
    if not np.all(np.diff(mu2) < 0.0):
        raise EstimationError("μ is not decreasing over the fitted tail")
    slope, intercept = np.polyfit(t, mu2, 1)
    if slope >= 0.0:
        raise EstimationError(f"Non-negative μ² slope {slope:.3e}")
    resid = mu2 - (slope * t + intercept)
    lo, hi = SLOPE_WINDOW
    return -intercept / slope, FitQuality(
        slope=float(slope),
        residual=float(np.max(np.abs(resid)) / np.max(mu2)),
        slope_ok=bool(lo - slope_tol <= slope <= hi + slope_tol),
        points=n,
    )


def type1_ratios(trajectory: FlowTrajectory, decades: float = 2.0) -> Type1Ratios:
    """Curvature and ``μ²`` ratios against ``T_est - t`` near the end.

    :raise EstimationError: if the trajectory has no ``T_est``.
    """
    if trajectory.T_est is None:
        raise EstimationError("Trajectory has no singular time estimate")
    T = trajectory.T_est  # noqa: N806
    recs = [r for r in trajectory.series if T - r.t > 0.0]
    if not recs:
        return Type1Ratios(T, [], [])
    floor = min(T - r.t for r in recs)
    recs = [r for r in recs if T - r.t <= floor * 10.0**decades]
    return Type1Ratios(
        T,
        [(r.t, r.sup_curv * (T - r.t)) for r in recs],
        [(r.t, r.mu**2 / (T - r.t)) for r in recs],
    )
