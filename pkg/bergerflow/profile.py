"""Warped Berger metric profiles on a fixed computational grid.

A metric of the form ``ds² + f²ω¹² + g²(ω²² + ω³²)`` is stored as samples of
``f`` and ``g`` on uniformly spaced nodes ``x ∈ [-1, 1]`` together with the
arclength Jacobian ``jac = ∂s/∂x``. Derivatives in ``s`` are obtained by the
chain rule from 4th-order centered stencils in ``x``. At the poles ``x = ±1``
the stencils reach into ghost nodes that are filled according to the parity
class of the differentiated field, which realizes the smooth closing
conditions of the metric over the distinguished 2-spheres.
"""

import collections.abc
import dataclasses
import enum
import functools
import math
import typing

import numpy as np
import numpy.typing as npt
from scipy import integrate

FloatArray = npt.NDArray[np.float64]


class InvalidProfileError(ValueError):
    """Profile violates positivity or closing invariants."""


class ParityError(ValueError):
    """Differentiation was requested with an unknown parity class."""


class Parity(enum.Enum):
    """Parity class of a field with respect to the poles."""

    ODD = enum.auto()
    """Point reflection about the pole value (``f``, ``s``)."""
    EVEN = enum.auto()
    """Mirror about the pole (``g``, ``jac``, ``ψ``, ``θ``)."""
    FREE = enum.auto()
    """No symmetry, ghosts are polynomially extrapolated."""


class Boundary(enum.Enum):
    """Kind of the profile ends."""

    POLES = enum.auto()
    """Closed manifold, ``f`` vanishes at both ends."""
    OPEN = enum.auto()
    """Finite window of a noncompact geometry."""


@dataclasses.dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid on the computational coordinate ``x ∈ [-1, 1]``."""

    node_count: int

    MIN_NODES: typing.ClassVar[int] = 33

    def __post_init__(self) -> None:
        if self.node_count < self.MIN_NODES:
            raise ValueError(
                f"Grid needs at least {self.MIN_NODES} nodes, got {self.node_count}"
            )

    @functools.cached_property
    def x(self) -> FloatArray:
        """Node coordinates with exact endpoints."""
        x = np.linspace(-1.0, 1.0, self.node_count)
        x.flags.writeable = False
        return x

    @property
    def h(self) -> float:
        """Node spacing in ``x``."""
        return 2.0 / (self.node_count - 1)

    @property
    def tol(self) -> float:
        """Discretization tolerance used by the invariant checks."""
        return 10.0 * self.h**2

    @property
    def center(self) -> int | None:
        """Index of the node at ``x = 0`` if there is one."""
        return (self.node_count - 1) // 2 if self.node_count % 2 else None


def _frozen(values: npt.ArrayLike) -> FloatArray:
    arr = np.array(values, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclasses.dataclass(frozen=True, eq=False)
class MetricProfile:
    """Discretized ``(f, g)`` pair with its arclength Jacobian at time ``t``."""

    grid: SpatialGrid
    f: FloatArray
    g: FloatArray
    jac: FloatArray
    t: float = 0.0
    boundary: Boundary = Boundary.POLES

    def __post_init__(self) -> None:
        for name in ("f", "g", "jac"):
            arr = _frozen(getattr(self, name))
            if arr.shape != (self.grid.node_count,):
                raise InvalidProfileError(
                    f"Field {name} has shape {arr.shape}, expected ({self.grid.node_count},)"
                )
            object.__setattr__(self, name, arr)

    def replace(self, **changes: typing.Any) -> "MetricProfile":  # noqa: ANN401
        """Copy of this profile with some fields replaced."""
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        """Check positivity invariants.

        :raise InvalidProfileError: when any of them does not hold.
        """
        if not (
            np.all(np.isfinite(self.f))
            and np.all(np.isfinite(self.g))
            and np.all(np.isfinite(self.jac))
        ):
            raise InvalidProfileError("Profile contains non-finite values")
        if np.any(self.jac <= 0.0):
            raise InvalidProfileError(
                f"Non-positive Jacobian at node {int(np.argmin(self.jac))}"
            )
        if np.any(self.g <= 0.0):
            raise InvalidProfileError(f"Non-positive g at node {int(np.argmin(self.g))}")
        if self.boundary is Boundary.POLES:
            if self.f[0] != 0.0 or self.f[-1] != 0.0:
                raise InvalidProfileError("f must vanish exactly at both poles")
            if np.any(self.f[1:-1] <= 0.0):
                idx = 1 + int(np.argmin(self.f[1:-1]))
                raise InvalidProfileError(f"Non-positive f at interior node {idx}")
        elif np.any(self.f <= 0.0):
            raise InvalidProfileError(f"Non-positive f at node {int(np.argmin(self.f))}")

    @functools.cached_property
    def derivatives(self) -> "ProfileDerivatives":
        """First and second arclength derivatives of ``f`` and ``g``."""
        return ProfileDerivatives(
            f_s=d_ds(self.f, self, 1, parity=Parity.ODD),
            f_ss=d_ds(self.f, self, 2, parity=Parity.ODD),
            g_s=d_ds(self.g, self, 1, parity=Parity.EVEN),
            g_ss=d_ds(self.g, self, 2, parity=Parity.EVEN),
        )

    def closing_defects(self) -> tuple[float, float]:
        """Deviation of the pole slopes from the closing conditions.

        :return: ``max(|f_s(s_-) - 1|, |f_s(s_+) + 1|)`` and the largest
          ``|g_s|`` over both poles.
        """
        d = self.derivatives
        return (
            max(abs(d.f_s[0] - 1.0), abs(d.f_s[-1] + 1.0)),
            max(abs(d.g_s[0]), abs(d.g_s[-1])),
        )


class ProfileDerivatives(typing.NamedTuple):
    """Arclength derivatives sampled on the profile nodes."""

    f_s: FloatArray
    f_ss: FloatArray
    g_s: FloatArray
    g_ss: FloatArray


class Gauge(typing.Protocol):
    """Anything that carries a grid, a Jacobian and a boundary kind."""

    @property
    def grid(self) -> SpatialGrid: ...  # noqa: D102
    @property
    def jac(self) -> FloatArray: ...  # noqa: D102
    @property
    def boundary(self) -> Boundary: ...  # noqa: D102


GHOSTS = 2
# Quartic extrapolation weights for the first ghost node.
_EXTRAP = np.array([5.0, -10.0, 10.0, -5.0, 1.0])


def _ghosts(edge: FloatArray, parity: Parity) -> tuple[float, float]:
    """Ghost values for the edge that starts at ``edge[0]`` (outermost first)."""
    match parity:
        case Parity.EVEN:
            return edge[2], edge[1]
        case Parity.ODD:
            return 2.0 * edge[0] - edge[2], 2.0 * edge[0] - edge[1]
        case Parity.FREE:
            g1 = float(_EXTRAP @ edge[:5])
            g2 = float(_EXTRAP @ np.concatenate(([g1], edge[:4])))
            return g2, g1
        case _:
            raise ParityError(f"Unknown parity class: {parity!r}")


def extend(field: FloatArray, parity: Parity) -> FloatArray:
    """Pad the field with two ghost nodes on both sides."""
    if not isinstance(parity, Parity):
        raise ParityError(f"Unknown parity class: {parity!r}")
    left = _ghosts(field, parity)
    right = _ghosts(field[::-1], parity)
    return np.concatenate((left, field, right[::-1]))


def diff_x(field: FloatArray, h: float, parity: Parity) -> FloatArray:
    """4th-order centered first derivative on a uniform grid."""
    u = extend(field, parity)
    return (-u[4:] + 8.0 * u[3:-1] - 8.0 * u[1:-3] + u[:-4]) / (12.0 * h)


def diff_xx(field: FloatArray, h: float, parity: Parity) -> FloatArray:
    """4th-order centered second derivative on a uniform grid."""
    u = extend(field, parity)
    return (-u[4:] + 16.0 * u[3:-1] - 30.0 * u[2:-2] + 16.0 * u[1:-3] - u[:-4]) / (
        12.0 * h**2
    )


def d_ds(field: npt.ArrayLike, gauge: Gauge, order: int, *, parity: Parity) -> FloatArray:
    """Arclength derivative of a field sampled on the gauge's grid.

    The chain rule ``∂_s = jac⁻¹ ∂_x`` is applied to 4th-order ``x`` stencils.
    Open windows always use extrapolated ghosts regardless of ``parity``.

    :param order: 1, 2 or 3.
    :param parity: parity class of the field at the poles.
    :raise ParityError: for parity that is not :class:`Parity`.
    """
    if not isinstance(parity, Parity):
        raise ParityError(f"Unknown parity class: {parity!r}")
    if order not in {1, 2, 3}:
        raise ValueError(f"Unsupported derivative order: {order}")
    u = np.asarray(field, dtype=np.float64)
    if gauge.boundary is Boundary.OPEN:
        parity = Parity.FREE
    jparity = Parity.FREE if gauge.boundary is Boundary.OPEN else Parity.EVEN
    h = gauge.grid.h
    jac = gauge.jac
    u_x = diff_x(u, h, parity)
    if order == 1:
        return u_x / jac
    jac_x = diff_x(jac, h, jparity)
    u_ss = diff_xx(u, h, parity) / jac**2 - u_x * jac_x / jac**3
    if order == 2:
        return u_ss
    return d_ds(u_ss, gauge, 1, parity=parity)


def pole_limit(values: FloatArray) -> FloatArray:
    """Replace pole entries by the even extrapolation of their neighbours.

    Suitable for quotients that are even about the pole but evaluate to 0/0
    there, such as ``f_ss/f``.
    """
    res = np.array(values, dtype=np.float64)
    res[0] = (4.0 * res[1] - res[2]) / 3.0
    res[-1] = (4.0 * res[-2] - res[-3]) / 3.0
    return res


def arclength(profile: MetricProfile) -> FloatArray:
    """Arclength ``s`` of every node measured from ``x = 0``.

    :raise InvalidProfileError: for non-positive Jacobian.
    """
    if np.any(profile.jac <= 0.0):
        raise InvalidProfileError(
            f"Non-positive Jacobian at node {int(np.argmin(profile.jac))}"
        )
    x = profile.grid.x
    s = integrate.cumulative_simpson(profile.jac, x=x, initial=0.0)
    if (c := profile.grid.center) is not None:
        return s - s[c]
    return s - float(np.interp(0.0, x, s))


@dataclasses.dataclass(frozen=True, eq=False)
class CurvatureField:
    """The four distinct sectional curvatures and the scalar curvature."""

    k01: FloatArray
    k02: FloatArray
    k12: FloatArray
    k23: FloatArray

    @functools.cached_property
    def R(self) -> FloatArray:  # noqa: N802
        """Scalar curvature ``κ01 + 2κ02 + 2κ12 + κ23``."""
        return self.k01 + 2.0 * self.k02 + 2.0 * self.k12 + self.k23

    def sup_abs(self) -> float:
        """Largest absolute sectional curvature over all nodes."""
        return float(
            max(np.max(np.abs(k)) for k in (self.k01, self.k02, self.k12, self.k23))
        )


def compute_curvatures(profile: MetricProfile) -> CurvatureField:
    """Sectional curvatures with l'Hôpital limits at the poles.

    :raise InvalidProfileError: for non-positive ``g`` or interior ``f``.
    """
    profile.validate()
    f, g = profile.f, profile.g
    d = profile.derivatives
    with np.errstate(divide="ignore", invalid="ignore"):
        k12 = f**2 / g**4 - d.f_s * d.g_s / (f * g)
        k23 = (4.0 * g**2 - 3.0 * f**2) / g**4 - d.g_s**2 / g**2
        k01 = -d.f_ss / f
    k02 = -d.g_ss / g
    if profile.boundary is Boundary.POLES:
        for i in (0, -1):
            k12[i] = k02[i]
            k23[i] = 4.0 / g[i] ** 2
        k01 = pole_limit(k01)
    return CurvatureField(k01=k01, k02=k02, k12=k12, k23=k23)


@dataclasses.dataclass(frozen=True)
class Margin:
    """Worst case of a single Closeness Assumption."""

    ok: bool
    margin: float
    """Signed distance from violation (negative means violated)."""
    node: int


@dataclasses.dataclass(frozen=True)
class ClosenessReport(collections.abc.Mapping[str, Margin]):
    """Closeness Assumptions (a)–(e) with their margins."""

    a: Margin
    """``f ≤ g``"""
    b: Margin
    """``g|g_s| ≤ f``"""
    c: Margin
    """``|f_s| ≤ 2/√3``"""
    d: Margin
    """``g²(s_+) - 3g²(s_-) ≥ δ²``"""
    e: Margin
    """``g_s ≥ 0`` with strict interior positivity"""

    def __getitem__(self, key: str) -> Margin:
        if key not in self.NAMES:
            raise KeyError(key)
        return typing.cast(Margin, getattr(self, key))

    def __iter__(self) -> collections.abc.Iterator[str]:
        return iter(self.NAMES)

    def __len__(self) -> int:
        return len(self.NAMES)

    NAMES: typing.ClassVar[tuple[str, ...]] = ("a", "b", "c", "d", "e")

    @property
    def ok(self) -> bool:
        """All assumptions hold."""
        return all(m.ok for m in self.values())

    @property
    def failed(self) -> list[str]:
        """Names of the violated assumptions."""
        return [n for n, m in self.items() if not m.ok]

    def dump(self) -> dict[str, dict[str, object]]:
        """Dump the report to basic types."""
        return {n: dataclasses.asdict(m) for n, m in self.items()}


FS_BOUND = 2.0 / math.sqrt(3.0)


def closeness(profile: MetricProfile, delta: float) -> ClosenessReport:
    """Evaluate the Closeness Assumptions with tolerance ``10·h²``."""
    tol = profile.grid.tol
    f, g = profile.f, profile.g
    d = profile.derivatives

    def worst(values: FloatArray, offset: int = 0) -> tuple[float, int]:
        i = int(np.argmin(values))
        return float(values[i]), i + offset

    a, ia = worst(g - f)
    b, ib = worst(f[1:-1] - g[1:-1] * np.abs(d.g_s[1:-1]), 1)
    c, ic = worst(FS_BOUND - np.abs(d.f_s))
    threshold = g[-1] ** 2 - 3.0 * g[0] ** 2
    dd = threshold - delta**2
    e, ie = worst(d.g_s)
    e_strict = bool(np.all(d.g_s[1:-1] > 0.0))
    return ClosenessReport(
        a=Margin(a >= -tol, a, ia),
        b=Margin(b >= -tol, b, ib),
        c=Margin(c >= -tol, c, ic),
        d=Margin(dd >= -tol, dd, len(g) - 1),
        e=Margin(e >= -tol and e_strict, e, ie),
    )


@dataclasses.dataclass(frozen=True)
class ClosenessFlags:
    """Boolean summary of the Closeness Assumptions."""

    a: bool
    b: bool
    c: bool
    d: bool
    e: bool

    @property
    def all(self) -> bool:
        """Every flag holds."""
        return self.a and self.b and self.c and self.d and self.e

    @classmethod
    def of(cls, report: ClosenessReport) -> "ClosenessFlags":
        """Flags of a full report."""
        return cls(*(report[n].ok for n in report.NAMES))


@dataclasses.dataclass(frozen=True)
class DiagnosticRecord:
    """Scalar diagnostics of a profile at a single time."""

    t: float
    mu: float
    mu_argmin: int
    g_plus: float
    psi_min: float
    psi_max: float
    F_max_abs: float  # noqa: N815
    fs_min: float
    fs_max: float
    sup_curv: float
    Q_min: float  # noqa: N815
    threshold: float
    flags: ClosenessFlags
    g_minus: float = math.nan
    dg2_minus: float = math.nan
    dg2_plus: float = math.nan
    gs_max_abs: float = math.nan
    curv_mu2: float = math.nan
    R_min: float = math.nan  # noqa: N815
    fs_pole_drift: float = math.nan
    step: int = 0
    dt: float = 0.0


PSI_BLEND = 2


def psi_field(profile: MetricProfile) -> FloatArray:
    """Kähler deviation ``ψ = (g·g_s/f)² - 1`` with blended pole limits."""
    f, g = profile.f, profile.g
    d = profile.derivatives
    with np.errstate(divide="ignore", invalid="ignore"):
        interior = (g * d.g_s / f) ** 2 - 1.0
    pole = (g * d.g_ss) ** 2 - 1.0
    psi = interior.copy()
    for end, step in ((0, 1), (len(f) - 1, -1)):
        psi[end] = pole[end]
        for k in range(1, PSI_BLEND + 1):
            w = k / (PSI_BLEND + 1)
            psi[end + step * k] = w * interior[end + step * k] + (1.0 - w) * pole[end]
    return psi


def compute_diagnostics(profile: MetricProfile, delta: float) -> DiagnosticRecord:
    """Scalar diagnostics of a closed profile, never raising on violations."""
    if profile.boundary is not Boundary.POLES:
        raise InvalidProfileError("Diagnostics are defined for closed profiles only")
    f, g = profile.f, profile.g
    d = profile.derivatives
    curv = compute_curvatures(profile)
    psi = psi_field(profile)
    F = f - g * d.g_s  # noqa: N806
    F[0] = F[-1] = 0.0
    Q = g * d.g_ss - d.g_s**2 - 2.0 * d.f_s**2  # noqa: N806
    i_mu = int(np.argmin(g))
    mu = float(g[i_mu])
    report = closeness(profile, delta)
    pole_rate = 4.0 * g * d.g_ss - 8.0
    f_drift, _ = profile.closing_defects()
    return DiagnosticRecord(
        t=profile.t,
        mu=mu,
        mu_argmin=i_mu,
        g_plus=float(g[-1]),
        psi_min=float(np.min(psi)),
        psi_max=float(np.max(psi)),
        F_max_abs=float(np.max(np.abs(F))),
        fs_min=float(np.min(d.f_s)),
        fs_max=float(np.max(d.f_s)),
        sup_curv=curv.sup_abs(),
        Q_min=float(np.min(Q)),
        threshold=float(g[-1] ** 2 - 3.0 * g[0] ** 2),
        flags=ClosenessFlags.of(report),
        g_minus=float(g[0]),
        dg2_minus=float(pole_rate[0]),
        dg2_plus=float(pole_rate[-1]),
        gs_max_abs=float(np.max(np.abs(d.g_s))),
        curv_mu2=float(np.max(np.abs(curv.k12) + np.abs(curv.k23) + np.abs(curv.k02)))
        * mu**2,
        R_min=float(np.min(curv.R)),
        fs_pole_drift=f_drift,
    )
