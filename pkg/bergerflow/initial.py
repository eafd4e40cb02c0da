"""Explicit family of initial metrics and the Closeness Assumptions check.

The initial metric is built from a profile ``f(s)`` that closes smoothly at
both poles and a weight ``φ(s) ∈ [1-ε, 1]``::

    g²(s) = α² + 2 ∫_{s_-}^{s} φ f ds

``ε = 0`` gives exactly Kähler data (``f = g·g_s``).
"""

import collections.abc
import dataclasses
import functools
import logging
import math
import typing

import numpy as np
from scipy import integrate

from .profile import (
    ClosenessReport,
    FloatArray,
    MetricProfile,
    SpatialGrid,
    closeness,
)

logger = logging.getLogger(__name__)


class ParameterError(ValueError):
    """Seed parameters violate one of the admissibility inequalities."""

    def __init__(self, inequality: str, detail: str) -> None:
        super().__init__(f"{inequality} violated: {detail}")
        self.inequality = inequality
        """The failed inequality in human readable form."""


class FShape(typing.Protocol):
    """Generator of the Hopf fiber profile ``f`` on ``[-L/2, L/2]``."""

    name: typing.ClassVar[str]

    @property
    def length(self) -> float:
        """Distance ``s_+ - s_-`` between the poles."""

    def sample(self, s: FloatArray) -> FloatArray:
        """Values of ``f`` at the given arclengths."""

    def integral(self) -> float:
        """Exact ``∫ f ds`` over the whole interval."""

    def options(self) -> dict[str, float]:
        """Shape specific configuration options."""


class PhiShape(typing.Protocol):
    """Generator of the weight ``φ`` with ``1-ε ≤ φ ≤ 1``."""

    name: typing.ClassVar[str]

    def sample(self, s: FloatArray, epsilon: float, length: float) -> FloatArray:
        """Values of ``φ`` at the given arclengths."""

    def options(self) -> dict[str, float]:
        """Shape specific configuration options."""


F_SHAPES: dict[str, collections.abc.Callable[..., FShape]] = {}
PHI_SHAPES: dict[str, collections.abc.Callable[..., PhiShape]] = {}

_T = typing.TypeVar("_T", bound=type)


def f_shape(name: str) -> collections.abc.Callable[[_T], _T]:
    """Decorate class to register it as named ``f`` generator."""

    def decorator(cls: _T) -> _T:
        cls.name = name
        F_SHAPES[name] = cls
        return cls

    return decorator


def phi_shape(name: str) -> collections.abc.Callable[[_T], _T]:
    """Decorate class to register it as named ``φ`` generator."""

    def decorator(cls: _T) -> _T:
        cls.name = name
        PHI_SHAPES[name] = cls
        return cls

    return decorator


@f_shape("half_sine")
@dataclasses.dataclass(frozen=True)
class HalfSine:
    """``f = L/π·sin(π(s - s_-)/L)``."""

    name: typing.ClassVar[str]

    length: float = math.pi

    def sample(self, s: FloatArray) -> FloatArray:  # noqa: D102
        L = self.length  # noqa: N806
        return L / math.pi * np.sin(math.pi * (s + L / 2.0) / L)

    def integral(self) -> float:  # noqa: D102
        return 2.0 * self.length**2 / math.pi**2

    def options(self) -> dict[str, float]:  # noqa: D102
        return {"length": self.length}


def _psi(x: float) -> float:
    return math.exp(-1.0 / x) if x > 0.0 else 0.0


def smoothstep(x: float) -> float:
    """Smooth transition from 0 (``x ≤ 0``) to 1 (``x ≥ 1``)."""
    a = _psi(x)
    return a / (a + _psi(1.0 - x))


@f_shape("plateau")
@dataclasses.dataclass(frozen=True)
class Plateau:
    """Linear growth at both poles turning smoothly into a constant band.

    ``cap_width`` is the width of each cap as a fraction of ``length``.
    """

    name: typing.ClassVar[str]

    length: float = math.pi
    cap_width: float = 0.25

    def __post_init__(self) -> None:
        if not 0.0 < self.cap_width <= 0.5:
            raise ParameterError("0 < cap_width ≤ 1/2", f"cap_width={self.cap_width}")

    @property
    def width(self) -> float:
        """Cap width in length units."""
        return self.cap_width * self.length

    def _slope(self, d: float) -> float:
        return 1.0 - smoothstep(d / self.width)

    @functools.cache  # noqa: B019
    def _cap(self, d: float) -> float:
        return float(integrate.quad(self._slope, 0.0, min(d, self.width))[0])

    def sample(self, s: FloatArray) -> FloatArray:  # noqa: D102
        d = np.clip(self.length / 2.0 - np.abs(s), 0.0, None)
        return np.array([self._cap(float(v)) for v in d])

    def integral(self) -> float:  # noqa: D102
        w = self.width
        cap = integrate.quad(lambda d: (w - d) * self._slope(d), 0.0, w)[0]
        return 2.0 * (cap + (self.length / 2.0 - w) * self._cap(w))

    def options(self) -> dict[str, float]:  # noqa: D102
        return {"length": self.length, "cap_width": self.cap_width}


@phi_shape("constant")
@dataclasses.dataclass(frozen=True)
class ConstantPhi:
    """``φ ≡ 1 - ε``."""

    name: typing.ClassVar[str]

    def sample(self, s: FloatArray, epsilon: float, length: float) -> FloatArray:  # noqa: D102, PLR6301
        return np.full_like(s, 1.0 - epsilon)

    def options(self) -> dict[str, float]:  # noqa: D102, PLR6301
        return {}


@phi_shape("bump")
@dataclasses.dataclass(frozen=True)
class BumpPhi:
    """``φ = 1 - ε·b((s - c)/r)`` with compactly supported bump ``b(0) = 1``.

    Center and radius are fractions of the interval length measured from
    ``s = 0``.
    """

    name: typing.ClassVar[str]

    bump_center: float = 0.0
    bump_radius: float = 0.25

    def __post_init__(self) -> None:
        if self.bump_radius <= 0.0:
            raise ParameterError("bump_radius > 0", f"bump_radius={self.bump_radius}")
        if abs(self.bump_center) + self.bump_radius >= 0.5:
            raise ParameterError(
                "|bump_center| + bump_radius < 1/2",
                "bump support must stay away from the poles",
            )

    def sample(self, s: FloatArray, epsilon: float, length: float) -> FloatArray:  # noqa: D102
        z = (s - self.bump_center * length) / (self.bump_radius * length)
        bump = np.zeros_like(s)
        inside = np.abs(z) < 1.0
        bump[inside] = np.exp(1.0 - 1.0 / (1.0 - z[inside] ** 2))
        return 1.0 - epsilon * bump

    def options(self) -> dict[str, float]:  # noqa: D102
        return {"bump_center": self.bump_center, "bump_radius": self.bump_radius}


@dataclasses.dataclass(frozen=True)
class SeedParams:
    """Parameters of the initial data family."""

    f_shape: FShape = dataclasses.field(default_factory=HalfSine)
    alpha: float = 1.0
    delta: float = 0.5
    epsilon: float = 0.05
    phi_shape: PhiShape = dataclasses.field(default_factory=BumpPhi)

    @property
    def A2(self) -> float:  # noqa: N802
        """``A² = 2∫f ds``."""
        return 2.0 * self.f_shape.integral()

    def check(self) -> None:
        """Verify admissibility of the parameters.

        :raise ParameterError: naming the first violated inequality.
        """
        if not self.alpha > 0.0:
            raise ParameterError("α > 0", f"α={self.alpha}")
        if not self.delta > 0.0:
            raise ParameterError("δ > 0", f"δ={self.delta}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ParameterError("0 ≤ ε < 1", f"ε={self.epsilon}")
        a2 = self.A2
        lhs = self.alpha**2 + self.delta**2
        if lhs > a2 / 2.0:
            raise ParameterError(
                "α² + δ² ≤ A²/2", f"α² + δ² = {lhs:.6g} > A²/2 = {a2 / 2.0:.6g}"
            )
        if self.epsilon > self.alpha**2 / a2:
            raise ParameterError(
                "ε ≤ α²/A²",
                f"ε = {self.epsilon:.6g} > α²/A² = {self.alpha**2 / a2:.6g}",
            )
        if self.epsilon > self.delta**2 / a2:
            raise ParameterError(
                "ε ≤ δ²/A²",
                f"ε = {self.epsilon:.6g} > δ²/A² = {self.delta**2 / a2:.6g}",
            )

    def to_config(self) -> dict[str, str | float]:
        """Options of the ``[seed]`` configuration section."""
        return {
            "f_shape": self.f_shape.name,
            **self.f_shape.options(),
            "alpha": self.alpha,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "phi_shape": self.phi_shape.name,
            **self.phi_shape.options(),
        }

    @classmethod
    def from_config(cls, opts: collections.abc.Mapping[str, typing.Any]) -> "SeedParams":
        """Create parameters from typed ``[seed]`` section options.

        Options not used by the selected shapes are ignored.
        """
        try:
            fcls = F_SHAPES[opts["f_shape"]]
        except KeyError:
            raise ParameterError(
                f"f_shape ∈ {{{', '.join(F_SHAPES)}}}", f"got {opts.get('f_shape')!r}"
            ) from None
        try:
            pcls = PHI_SHAPES[opts["phi_shape"]]
        except KeyError:
            raise ParameterError(
                f"phi_shape ∈ {{{', '.join(PHI_SHAPES)}}}",
                f"got {opts.get('phi_shape')!r}",
            ) from None

        def kwargs(cls: typing.Any) -> dict[str, float]:  # noqa: ANN401
            names = {f.name for f in dataclasses.fields(cls)}
            return {k: float(v) for k, v in opts.items() if k in names}

        return cls(
            f_shape=fcls(**kwargs(fcls)),
            alpha=float(opts["alpha"]),
            delta=float(opts["delta"]),
            epsilon=float(opts["epsilon"]),
            phi_shape=pcls(**kwargs(pcls)),
        )


def compute_A2(f: FloatArray, s: FloatArray) -> float:  # noqa: N802
    """``A² = 2∫f ds`` by composite Simpson quadrature."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0.0):
        raise ValueError(f"Negative f at node {int(np.argmin(f))}")
    return 2.0 * float(integrate.simpson(f, x=s))


def construct_initial_metric(params: SeedParams, grid: SpatialGrid) -> MetricProfile:
    """Build the initial metric on the grid with ``s(x) = x·L/2``.

    :raise ParameterError: if the parameters are not admissible.
    """
    params.check()
    if isinstance(params.phi_shape, ConstantPhi) and params.epsilon > 0.0:
        logger.warning(
            "Constant φ with ε=%g: the data is not of the required nonconstant form",
            params.epsilon,
        )
    half = params.f_shape.length / 2.0
    s = grid.x * half
    f = params.f_shape.sample(s)
    f[0] = f[-1] = 0.0
    logger.debug("A² = %.12g, on the grid %.12g", params.A2, compute_A2(f, s))
    phi = params.phi_shape.sample(s, params.epsilon, params.f_shape.length)
    g2 = params.alpha**2 + 2.0 * integrate.cumulative_simpson(phi * f, x=s, initial=0.0)
    profile = MetricProfile(grid=grid, f=f, g=np.sqrt(g2), jac=np.full_like(s, half))
    report = closeness(profile, params.delta)
    if not report.ok:
        logger.warning(
            "Initial metric fails Closeness Assumptions %s", ", ".join(report.failed)
        )
    return profile


def validate_closeness(profile: MetricProfile, delta: float) -> ClosenessReport:
    """Evaluate the five Closeness Assumptions with margins and worst nodes."""
    report = closeness(profile, delta)
    for name, margin in report.items():
        logger.debug(
            "Assumption (%s): %s margin=%.3e node=%d",
            name,
            "pass" if margin.ok else "FAIL",
            margin.margin,
            margin.node,
        )
    return report
