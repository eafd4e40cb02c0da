"""Parabolic blow-up of the collapsing pole and comparison with the soliton."""

import dataclasses
import logging
import math

import numpy as np
from scipy import integrate, interpolate, optimize

from .flow import FlowTrajectory
from .profile import Boundary, FloatArray, MetricProfile, psi_field
from .soliton import PhiProfile

logger = logging.getLogger(__name__)


class ExtractionError(RuntimeError):
    """Trajectory doesn't contain suitable snapshots for the blow-up sequence."""


class AlignmentError(RuntimeError):
    """Frame doesn't cover the comparison window."""


def parabolic_rescale(
    profile: MetricProfile,
    K: float,  # noqa: N803
    t_center: float = 0.0,
) -> MetricProfile:
    """Metric scaled by ``K`` with time ``K·(t - t_center)``."""
    if K <= 0.0:
        raise ValueError(f"Rescale factor must be positive, got {K}")
    root = math.sqrt(K)
    return profile.replace(
        f=root * profile.f,
        g=root * profile.g,
        jac=root * profile.jac,
        t=K * (profile.t - t_center),
    )


def calabi_coordinate(profile: MetricProfile) -> FloatArray:
    """``ρ = 2∫ds/f`` measured from ``x = 0``, infinite at the poles."""
    x = profile.grid.x
    sl = slice(1, -1) if profile.boundary is Boundary.POLES else slice(None)
    rho = np.empty_like(x)
    rho[sl] = integrate.cumulative_simpson(
        2.0 * profile.jac[sl] / profile.f[sl], x=x[sl], initial=0.0
    )
    if profile.boundary is Boundary.POLES:
        rho[0], rho[-1] = -np.inf, np.inf
    if (c := profile.grid.center) is not None:
        return rho - rho[c]
    return rho - float(np.interp(0.0, x[sl], rho[sl]))


@dataclasses.dataclass(frozen=True, eq=False)
class RescaledFrame:
    """Snapshot rescaled to ``μ = 1`` with its anchored Calabi coordinate."""

    K: float
    t_center: float
    profile: MetricProfile
    r_window: FloatArray
    """``ρ`` shifted to zero where ``g² = 2μ²``."""

    @property
    def psi(self) -> FloatArray:
        """Kähler deviation of the rescaled profile."""
        return psi_field(self.profile)

    @property
    def inner_rho(self) -> float:
        """Innermost finite anchored ``ρ``, the first node off the pole."""
        return float(self.r_window[np.isfinite(self.r_window)][0])


ANCHOR_RATIO = 2.0


def rescaled_frame(profile: MetricProfile) -> RescaledFrame:
    """Rescale the profile by ``K = 1/μ²`` about its own time.

    :raise ExtractionError: if ``g²`` never reaches the anchor level.
    """
    mu = float(np.min(profile.g))
    K = 1.0 / mu**2  # noqa: N806
    scaled = parabolic_rescale(profile, K, profile.t)
    rho = calabi_coordinate(scaled)
    g2 = scaled.g**2
    above = np.flatnonzero(g2 >= ANCHOR_RATIO)
    above = above[above > np.argmin(g2)]
    if not above.size or not np.isfinite(rho[above[0] - 1]):
        raise ExtractionError(
            f"g² does not reach {ANCHOR_RATIO}μ² away from the pole"
        )
    i = int(above[0])
    w = (ANCHOR_RATIO - g2[i - 1]) / (g2[i] - g2[i - 1])
    anchor = rho[i - 1] + w * (rho[i] - rho[i - 1])
    return RescaledFrame(K=K, t_center=profile.t, profile=scaled, r_window=rho - anchor)


def extract_blowup_sequence(
    trajectory: FlowTrajectory,
    count: int = 5,
    window: float = 5.0,
    margin: float = 0.5,
) -> list[RescaledFrame]:
    """Frames at ``T_est - t`` decreasing geometrically by a factor of two.

    Only snapshots whose grid still resolves the pole are used: the first node
    off the pole must lie at ``ρ ≤ -window - margin``. Snapshots after the
    first unresolved one are discarded. The last resolved snapshot is the
    last frame.

    :raise ExtractionError: when fewer than ``count`` snapshots resolve the
        pole or no distinct snapshot is close to a target.
    """
    if count < 3:
        raise ValueError(f"Blow-up sequence needs at least 3 frames, got {count}")
    T = trajectory.T_est  # noqa: N806
    if T is None:
        raise ExtractionError("Trajectory has no singular time estimate")
    frames: list[RescaledFrame] = []
    for snap in trajectory.snapshots:
        if snap.t >= T:
            break
        try:
            frame = rescaled_frame(snap)
        except ExtractionError:
            continue
        if frame.inner_rho > -window - margin:
            logger.debug("Pole unresolved at t = %.6g, ρ₁ = %.3f", snap.t, frame.inner_rho)
            break
        frames.append(frame)
    if len(frames) < count:
        raise ExtractionError(
            f"Only {len(frames)} snapshots before T_est resolve the pole, "
            "use a denser output stride or more nodes"
        )
    log_tau = np.log([T - fr.t_center for fr in frames])
    picks: list[int] = []
    for k in range(count):
        target = log_tau[-1] + (count - 1 - k) * math.log(2.0)
        i = int(np.argmin(np.abs(log_tau - target)))
        if abs(log_tau[i] - target) > math.log(2.0) / 2.0 or i in picks:
            raise ExtractionError(
                f"No distinct snapshot near T_est - t = {math.exp(target):.3e}, "
                "use a denser output stride"
            )
        picks.append(i)
    logger.debug("Blow-up frames at snapshots %s", picks)
    return [frames[i] for i in picks]


@dataclasses.dataclass(frozen=True)
class Alignment:
    """Optimal gauge between a frame and the soliton."""

    chi: float
    scale: float
    dist: float
    """Relative sup-distance of ``g²``."""
    f2_dist: float
    """Relative sup-distance of ``f²`` at the optimal gauge."""


def align_distance(
    frame: RescaledFrame,
    soliton: PhiProfile,
    window: tuple[float, float] = (-5.0, 5.0),
    samples: int = 401,
    step: float = 0.05,
    chi_range: float = 3.0,
) -> Alignment:
    """Minimize the relative distance of ``σ·g²(ρ+χ)`` to ``φ(ρ)``.

    For a fixed ``χ`` the optimal ``σ`` is closed form; ``χ`` is found on a
    grid of ``step`` within ``|χ| ≤ chi_range`` and refined by golden-section
    search. The anchor ``g² = 2μ²`` keeps the optimal shift close to zero.

    :raise AlignmentError: if the frame doesn't cover the window.
    """
    rho = frame.r_window
    ok = np.isfinite(rho)
    g2 = interpolate.CubicSpline(rho[ok], frame.profile.g[ok] ** 2)
    f2 = interpolate.CubicSpline(rho[ok], frame.profile.f[ok] ** 2)
    first, last = float(rho[ok][0]), float(rho[ok][-1])
    lo = max(first - window[0], -chi_range)
    hi = min(last - window[1], chi_range)
    if first > window[0] or last < window[1] or lo > hi:
        raise AlignmentError(
            f"Frame covers ρ ∈ [{rho[ok][0]:.3f}, {rho[ok][-1]:.3f}], "
            f"too short for the window {window}"
        )
    target = PhiProfile.solve(np.linspace(*window, samples), soliton.chi)
    phi = target.phi

    def ratios(chi: float) -> tuple[float, float]:
        q = g2(target.r + chi) / phi
        return float(np.min(q)), float(np.max(q))

    def dist(chi: float) -> float:
        qmin, qmax = ratios(chi)
        return (qmax - qmin) / (qmax + qmin)

    grid = np.arange(lo, hi + step / 2.0, step)
    grid = np.minimum(grid, hi)
    coarse = np.array([dist(c) for c in grid])
    i = int(np.argmin(coarse))
    chi = float(grid[i])
    if len(grid) > 1:
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        try:
            if not 0 < i < len(grid) - 1:
                raise ValueError("minimum at the edge of the admissible range")
            res = optimize.minimize_scalar(
                dist, bracket=(a, chi, b), method="golden", options={"xtol": 1e-12}
            )
        except ValueError:
            res = optimize.minimize_scalar(
                dist, bounds=(a, b), method="bounded", options={"xatol": 1e-12}
            )
        if lo <= res.x <= hi and dist(float(res.x)) <= coarse[i]:
            chi = float(res.x)
    qmin, qmax = ratios(chi)
    sigma = 2.0 / (qmax + qmin)
    f2d = np.abs(sigma * f2(target.r + chi) - target.phi_r) / target.phi_r
    return Alignment(
        chi=chi,
        scale=sigma,
        dist=(qmax - qmin) / (qmax + qmin),
        f2_dist=float(np.max(f2d)),
    )
