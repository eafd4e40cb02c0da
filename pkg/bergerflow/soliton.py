"""U(2)-invariant shrinking Kähler–Ricci soliton on the blowup of ``C²``.

In the Calabi coordinate ``r`` the potential ``φ = g²`` of the soliton solves
the separable first order equation::

    φ_r = φ/√2 - (√2 - 1) - (1 - 1/√2)/φ = (φ - 1)(φ + √2 - 1)/(√2·φ)

which integrates to ``e^{r+χ} = (φ - 1)(φ + √2 - 1)^{√2-1}``. The metric
follows from ``g² = φ``, ``f² = φ_r`` and ``ds = ½f dr``.
"""

import dataclasses
import functools
import logging
import math

import numpy as np
import numpy.typing as npt
from scipy import integrate, optimize

from .flow import Stepping, advance, ricci_rhs
from .profile import (
    Boundary,
    FloatArray,
    InvalidProfileError,
    MetricProfile,
    Parity,
    SpatialGrid,
    diff_x,
)

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
POWER = SQRT2 - 1.0
C2 = 1.0 - 1.0 / SQRT2
NATIVE_LAMBDA = -2.0
"""Soliton constant of the native metric in the Ricci flow time of this package."""


class SolverError(RuntimeError):
    """Root finding for the soliton potential failed."""


class ConfigurationError(ValueError):
    """Soliton checks can't be evaluated for the requested setup."""


def _log_excess(rc: float) -> float:
    """Solve ``y + (√2-1)·log(e^y + √2) = rc`` for ``y = log(φ - 1)``."""

    def fun(y: float) -> float:
        return y + POWER * float(np.logaddexp(y, math.log(SQRT2))) - rc

    lo = rc - POWER * float(np.logaddexp(rc, math.log(SQRT2)))
    try:
        return float(optimize.brentq(fun, lo, rc, xtol=1e-15, rtol=4 * np.finfo(float).eps))
    except (ValueError, RuntimeError) as exc:
        raise SolverError(f"Root bracketing failed for r+χ={rc}: {exc}") from exc


def solve_excess(r: npt.ArrayLike, chi: float = 0.0) -> FloatArray:
    """``φ - 1`` at every ``r`` without cancellation near ``φ = 1``."""
    rr = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(rr)):
        raise SolverError("Non-finite r value")
    w = np.exp([_log_excess(float(v) + chi) for v in rr.ravel()]).reshape(rr.shape)
    order = np.argsort(rr.ravel(), kind="stable")
    if np.any(np.diff(w.ravel()[order]) < 0.0):
        raise SolverError("Solved potential is not monotone in r")
    return w


def solve_phi(r: npt.ArrayLike, chi: float = 0.0) -> FloatArray:
    """Soliton potential ``φ(r + χ) > 1``.

    :raise SolverError: if the root can't be bracketed.
    """
    return 1.0 + solve_excess(r, chi)


def ode1_rhs(phi: FloatArray) -> FloatArray:
    """``φ/√2 - (√2-1) - (1-1/√2)/φ``."""
    return phi / SQRT2 - POWER - C2 / phi


@dataclasses.dataclass(frozen=True, eq=False)
class PhiProfile:
    """Soliton potential sampled on increasing ``r`` nodes."""

    r: FloatArray
    chi: float
    excess: FloatArray
    """``φ - 1`` kept separately for accuracy near the pole."""

    @classmethod
    def solve(cls, r: npt.ArrayLike, chi: float = 0.0) -> "PhiProfile":
        """Solve the potential on the given nodes."""
        rr = np.asarray(r, dtype=np.float64)
        if rr.ndim != 1 or rr.size < 5 or np.any(np.diff(rr) <= 0.0):
            raise ConfigurationError("r nodes must be strictly increasing, at least 5")
        return cls(rr, chi, solve_excess(rr, chi))

    @property
    def phi(self) -> FloatArray:
        """Potential ``φ``."""
        return 1.0 + self.excess

    @functools.cached_property
    def phi_r(self) -> FloatArray:
        """First derivative from the implicit relation, ``1/(dr/dφ)``."""
        w = self.excess
        return 1.0 / (1.0 / w + POWER / (w + SQRT2))

    @functools.cached_property
    def phi_rr(self) -> FloatArray:
        """Second derivative implied by the first order equation."""
        return self.phi_r * (1.0 / SQRT2 + C2 / self.phi**2)

    @functools.cached_property
    def phi_rrr(self) -> FloatArray:
        """Third derivative implied by the first order equation."""
        phi = self.phi
        a = 1.0 / SQRT2 + C2 / phi**2
        return self.phi_rr * a - 2.0 * C2 * self.phi_r**2 / phi**3


@dataclasses.dataclass(frozen=True)
class OdeResiduals:
    """Residuals of the soliton ODEs."""

    res1_max: float
    """First order equation with the implicit derivative, relative to ``1 + |φ_r|``."""
    res2_max: float
    """Second order equation, relative to ``1 + φ``."""
    fd_res1_max: float
    """First order equation with a 4th-order finite difference ``φ_r``."""


def ode_residuals(profile: PhiProfile) -> OdeResiduals:
    """Check the potential against both soliton ODEs."""
    phi, phi_r, phi_rr = profile.phi, profile.phi_r, profile.phi_rr
    rhs1 = ode1_rhs(phi)
    res1 = np.abs(phi_r - rhs1) / (1.0 + np.abs(rhs1))
    res2 = np.abs(phi_rr / phi_r + phi_r / phi - SQRT2 * phi_r + phi - 2.0) / (1.0 + phi)
    dr = np.diff(profile.r)
    fd = math.nan
    if np.allclose(dr, dr[0], rtol=1e-10, atol=0.0):
        fd_phi_r = diff_x(phi, float(dr[0]), Parity.FREE)
        fd = float(np.max(np.abs(fd_phi_r - rhs1) / (1.0 + np.abs(rhs1))))
    return OdeResiduals(float(np.max(res1)), float(np.max(res2)), fd)


@dataclasses.dataclass(frozen=True, eq=False)
class SolitonProfile(PhiProfile):
    """Soliton potential together with its metric ``(s, f, g)``."""

    s: FloatArray = dataclasses.field(default_factory=lambda: np.empty(0))
    f: FloatArray = dataclasses.field(default_factory=lambda: np.empty(0))
    g: FloatArray = dataclasses.field(default_factory=lambda: np.empty(0))

    @property
    def F(self) -> FloatArray:  # noqa: N802
        """Kähler defect ``f - g·g_s`` with ``g_s = 2g_r/f`` from a 4th-order difference.

        Non-uniform ``r`` falls back to a 2nd-order :func:`numpy.gradient`.
        """
        dr = np.diff(self.r)
        if np.allclose(dr, dr[0], rtol=1e-10, atol=0.0):
            g_r = diff_x(self.g, float(dr[0]), Parity.FREE)
        else:
            g_r = np.gradient(self.g, self.r, edge_order=2)
        return self.f - self.g * (2.0 * g_r / self.f)

    def s_derivatives(self) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
        """Closed form ``f_s``, ``f_ss``, ``g_s`` and ``g_ss`` of the native metric."""
        f, g = self.f, self.g
        phi_r, phi_rr, phi_rrr = self.phi_r, self.phi_rr, self.phi_rrr
        f_s = phi_rr / phi_r
        f_ss = 2.0 / f * (phi_rrr / phi_r - (phi_rr / phi_r) ** 2)
        g_s = f / g
        g_ss = phi_rr / (phi_r * g) - phi_r / g**3
        return f_s, f_ss, g_s, g_ss

    def metric_profile(self, scale: float = 1.0) -> MetricProfile:
        """Open window profile on ``x ∈ [-1, 1]`` mapped linearly to ``r``.

        :param scale: factor applied to the metric, lengths scale by its root.
        :raise ConfigurationError: for non-uniform ``r`` nodes.
        """
        dr = np.diff(self.r)
        if not np.allclose(dr, dr[0], rtol=1e-10, atol=0.0):
            raise ConfigurationError("Open window profile needs uniformly spaced r")
        root = math.sqrt(scale)
        half = (self.r[-1] - self.r[0]) / 2.0
        return MetricProfile(
            grid=SpatialGrid(len(self.r)),
            f=root * self.f,
            g=root * self.g,
            jac=root * 0.5 * self.f * half,
            boundary=Boundary.OPEN,
        )


def soliton_metric_profile(profile: PhiProfile) -> SolitonProfile:
    """Metric of the soliton from its potential.

    Arclength is anchored so that ``s(r_min) = f(r_min)``, matching ``f ≈ s``
    near the pole.
    """
    phi_r = profile.phi_r
    if np.any(phi_r <= 0.0):
        raise InvalidProfileError("Soliton potential is not strictly increasing")
    f = np.sqrt(phi_r)
    g = np.sqrt(profile.phi)
    s = f[0] + integrate.cumulative_simpson(0.5 * f, x=profile.r, initial=0.0)
    return SolitonProfile(profile.r, profile.chi, profile.excess, s=s, f=f, g=g)


def soliton_profile(r: npt.ArrayLike, chi: float = 0.0) -> SolitonProfile:
    """Solve the potential and build the metric in one go."""
    return soliton_metric_profile(PhiProfile.solve(r, chi))


@dataclasses.dataclass(frozen=True)
class SystemResiduals:
    """Residuals of the soliton system evaluated on the retained band."""

    h1d: float
    g2d: float
    F_max: float  # noqa: N815
    retained: int
    """Number of nodes where the potential function was recovered."""
    rhs_defect: float
    """Instantaneous ``v_t`` of the flow against the self-similar rate."""
    step_defect: float
    """``g²`` after stepping the flow by ``dt`` against the prediction."""
    dt: float


def self_similar_rate(profile: PhiProfile) -> FloatArray:
    """``∂_t g²`` of the native soliton at fixed ``r`` in the engine's time."""
    return 4.0 * (SQRT2 * profile.phi_r - profile.phi)


def soliton_system_residuals(
    profile: SolitonProfile,
    lam: float = -1.0,
    *,
    band_cutoff: float = 0.05,
    edge: int = 4,
    trim: float = 0.1,
    dt: float = 1e-6,
    stepping: Stepping = Stepping(),  # noqa: B008
) -> SystemResiduals:
    """Verify the soliton system and its self-similar evolution.

    The metric is scaled by ``-2/λ`` so that it solves the system with the
    requested ``λ``. The potential function is recovered from the ``f``
    equation on nodes with ``|f_s| ≥ band_cutoff·max|f_s|``.

    :param edge: nodes at each end excluded from derivative based residuals.
    :param trim: fraction of nodes at each end excluded from the flow check.
    :raise ConfigurationError: for ``λ ≥ 0`` or an empty retained band.
    """
    if lam >= 0.0:
        raise ConfigurationError(f"Shrinking soliton needs λ < 0, got {lam}")
    c = NATIVE_LAMBDA / lam
    root = math.sqrt(c)
    f0, g0 = profile.f, profile.g
    f_s, f_ss, g_s, g_ss = profile.s_derivatives()
    f, g = root * f0, root * g0
    f_ss, g_ss = f_ss / root, g_ss / root

    n = len(f)
    band = np.abs(f_s) >= band_cutoff * np.max(np.abs(f_s))
    band[:edge] = band[n - edge :] = False
    if not np.any(band):
        raise ConfigurationError("Retained band for the potential function is empty")
    if excluded := int(np.count_nonzero(~band[edge : n - edge])):
        logger.info("Potential function excluded on %d nodes with small f_s", excluded)

    gamma = (f_ss / f + 2.0 * f_s * g_s / (f * g) - 2.0 * f**2 / g**4 - lam) * f / f_s
    dr = float(profile.r[1] - profile.r[0])
    gamma_s = 2.0 / f * diff_x(gamma, dr, Parity.FREE)
    h1d = gamma_s - (f_ss / f + 2.0 * g_ss / g - lam)
    g2d = g_ss / g - (
        g_s * gamma / g
        - f_s * g_s / (f * g)
        - g_s**2 / g**2
        - 2.0 * f**2 / g**4
        + 4.0 / g**2
        + lam
    )

    native = profile.metric_profile()
    k = max(int(trim * n), edge)
    keep = slice(k, n - k)
    predicted = self_similar_rate(profile)
    rates = ricci_rhs(native)
    v_t = 2.0 * native.g * rates.g_t
    rhs_defect = np.abs(v_t - predicted)[keep] / (1.0 + np.abs(predicted[keep]))
    stepped = advance(native, dt, stepping)
    step_defect = np.abs(stepped.g**2 - (profile.phi + dt * predicted))[keep]

    return SystemResiduals(
        h1d=float(np.max(np.abs(h1d[band]))),
        g2d=float(np.max(np.abs(g2d[band]))),
        F_max=float(np.max(np.abs(profile.F))),
        retained=int(np.count_nonzero(band)),
        rhs_defect=float(np.max(rhs_defect)),
        step_defect=float(np.max(step_defect)),
        dt=dt,
    )
