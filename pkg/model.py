"""
Model Module
Coefficient functions, drift and diffusion fields, hypothesis classification
and closed-form constants for the stochastic ratio-dependent predator-prey system
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Tolerance on sup{a1 - sigma1^2/2} for the critical (mean extinction) case
EPS_CRITICAL = 1e-12

# Dense time grid used for suprema of mixed time-varying expressions
POINTS_PER_PERIOD = 10_000
MAX_GRID_POINTS = 2_000_000

COEFFICIENT_NAMES = ("a1", "a2", "b1", "b2", "c1", "c2", "e", "sigma1", "sigma2", "rho1", "rho2")
RATE_NAMES = COEFFICIENT_NAMES[:7]
NOISE_NAMES = COEFFICIENT_NAMES[7:]


class ModelError(Exception):
    """Base class for model errors"""


class CoefficientError(ModelError):
    """Raised when a coefficient function is structurally malformed"""


class NotH1Error(ModelError):
    """Raised when an operation needs hypothesis H1"""


class NotH2Error(ModelError):
    """Raised when an operation needs hypothesis H2"""


class CoefficientKind(str, Enum):
    CONSTANT = "constant"
    PIECEWISE = "piecewise-constant"
    SINUSOIDAL = "sinusoidal"


class Hypothesis(str, Enum):
    H1 = "H1"
    H2 = "H2"
    NEITHER = "NEITHER"


class Species(str, Enum):
    PREY = "PREY"
    PREDATOR = "PREDATOR"


class PreySoloCase(str, Enum):
    EXTINCTION_EXPONENTIAL = "EXTINCTION_EXPONENTIAL"
    EXTINCTION_MEAN = "EXTINCTION_MEAN"
    LOGGROWTH = "LOGGROWTH"


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


def _as_output(values, t):
    """Scalars in, floats out; arrays in, arrays out."""
    if np.ndim(t) == 0:
        return float(values)
    return values


@dataclass(frozen=True)
class CoefficientFn:
    """
    A bounded coefficient g(t) of one of three analytic kinds.

    constant:            g(t) = value
    piecewise-constant:  g(t) = values[i] on [breakpoints[i-1], breakpoints[i]),
                         values[0] before the first breakpoint, values[-1] after the last
    sinusoidal:          g(t) = mean + amplitude * sin(2*pi*t/period + phase)
    """

    kind: CoefficientKind
    value: float = 0.0
    breakpoints: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()
    mean: float = 0.0
    amplitude: float = 0.0
    period: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        try:
            kind = CoefficientKind(self.kind)
        except ValueError:
            raise CoefficientError(f"unknown coefficient kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)

        if kind is CoefficientKind.CONSTANT:
            if not _finite(float(self.value)):
                raise CoefficientError("constant value must be finite")
            object.__setattr__(self, "value", float(self.value))

        elif kind is CoefficientKind.PIECEWISE:
            breakpoints = tuple(float(b) for b in self.breakpoints)
            values = tuple(float(v) for v in self.values)
            if len(values) != len(breakpoints) + 1:
                raise CoefficientError(
                    f"piecewise-constant needs one more value than breakpoints "
                    f"(got {len(breakpoints)} breakpoints, {len(values)} values)"
                )
            if not _finite(*breakpoints, *values):
                raise CoefficientError("piecewise-constant breakpoints and values must be finite")
            if breakpoints and breakpoints[0] <= 0:
                raise CoefficientError("breakpoints must be positive")
            if any(b2 <= b1 for b1, b2 in zip(breakpoints, breakpoints[1:])):
                raise CoefficientError("breakpoints must be strictly increasing")
            object.__setattr__(self, "breakpoints", breakpoints)
            object.__setattr__(self, "values", values)

        else:
            for name in ("mean", "amplitude", "period", "phase"):
                object.__setattr__(self, name, float(getattr(self, name)))
            if not _finite(self.mean, self.amplitude, self.period, self.phase):
                raise CoefficientError("sinusoid parameters must be finite")
            if self.period <= 0:
                raise CoefficientError("sinusoid period must be positive")

    @classmethod
    def constant(cls, value: float) -> "CoefficientFn":
        return cls(CoefficientKind.CONSTANT, value=value)

    @classmethod
    def piecewise(cls, breakpoints: Sequence[float], values: Sequence[float]) -> "CoefficientFn":
        return cls(CoefficientKind.PIECEWISE, breakpoints=tuple(breakpoints), values=tuple(values))

    @classmethod
    def sinusoidal(cls, mean: float, amplitude: float, period: float, phase: float = 0.0) -> "CoefficientFn":
        return cls(CoefficientKind.SINUSOIDAL, mean=mean, amplitude=amplitude, period=period, phase=phase)

    @property
    def declared_inf(self) -> float:
        if self.kind is CoefficientKind.CONSTANT:
            return self.value
        if self.kind is CoefficientKind.PIECEWISE:
            return min(self.values)
        return self.mean - abs(self.amplitude)

    @property
    def declared_sup(self) -> float:
        if self.kind is CoefficientKind.CONSTANT:
            return self.value
        if self.kind is CoefficientKind.PIECEWISE:
            return max(self.values)
        return self.mean + abs(self.amplitude)

    @property
    def is_constant(self) -> bool:
        return self.declared_inf == self.declared_sup

    @property
    def vanishes(self) -> bool:
        """True when g(t) = 0 for every t."""
        return self.declared_inf == 0.0 and self.declared_sup == 0.0

    def __call__(self, t: ArrayLike) -> ArrayLike:
        if self.kind is CoefficientKind.CONSTANT:
            return _as_output(np.full(np.shape(t), self.value), t)
        if self.kind is CoefficientKind.PIECEWISE:
            index = np.searchsorted(np.asarray(self.breakpoints), t, side="right")
            return _as_output(np.asarray(self.values)[index], t)
        angle = 2.0 * np.pi * np.asarray(t, dtype=float) / self.period + self.phase
        return _as_output(self.mean + self.amplitude * np.sin(angle), t)


ZERO = CoefficientFn.constant(0.0)


class CoefficientValues(NamedTuple):
    """The eleven coefficients evaluated at one time (or a vector of times)."""

    a1: ArrayLike
    a2: ArrayLike
    b1: ArrayLike
    b2: ArrayLike
    c1: ArrayLike
    c2: ArrayLike
    e: ArrayLike
    sigma1: ArrayLike
    sigma2: ArrayLike
    rho1: ArrayLike
    rho2: ArrayLike


@dataclass(frozen=True)
class CoefficientSet:
    a1: CoefficientFn
    a2: CoefficientFn
    b1: CoefficientFn
    b2: CoefficientFn
    c1: CoefficientFn
    c2: CoefficientFn
    e: CoefficientFn
    sigma1: CoefficientFn = ZERO
    sigma2: CoefficientFn = ZERO
    rho1: CoefficientFn = ZERO
    rho2: CoefficientFn = ZERO

    @classmethod
    def from_constants(cls, **values: float) -> "CoefficientSet":
        """Build a set of constant coefficients; omitted noise terms are zero."""
        unknown = set(values) - set(COEFFICIENT_NAMES)
        if unknown:
            raise CoefficientError(f"unknown coefficients: {', '.join(sorted(unknown))}")
        return cls(**{name: CoefficientFn.constant(v) for name, v in values.items()})

    def replace(self, **changes) -> "CoefficientSet":
        """Copy with some coefficients swapped; floats are taken as constants."""
        current = {name: getattr(self, name) for name in COEFFICIENT_NAMES}
        for name, fn in changes.items():
            if name not in current:
                raise CoefficientError(f"unknown coefficient {name!r}")
            current[name] = fn if isinstance(fn, CoefficientFn) else CoefficientFn.constant(fn)
        return CoefficientSet(**current)

    def items(self):
        return [(name, getattr(self, name)) for name in COEFFICIENT_NAMES]

    @property
    def noise_free(self) -> bool:
        return all(getattr(self, name).vanishes for name in NOISE_NAMES)

    def at(self, t: ArrayLike) -> CoefficientValues:
        return CoefficientValues(*(getattr(self, name)(t) for name in COEFFICIENT_NAMES))

    def time_grid(
        self,
        names: Sequence[str] = COEFFICIENT_NAMES,
        points_per_period: int = POINTS_PER_PERIOD,
    ) -> Tuple[np.ndarray, Optional[float]]:
        """
        Time points on which an expression of the named coefficients is extremised.

        Returns:
            (grid, spacing) where spacing is None when the grid is exact
            (only constant or piecewise-constant coefficients involved)
        """
        varying = [getattr(self, name) for name in names if not getattr(self, name).is_constant]
        if not varying:
            return np.zeros(1), None

        periods = [fn.period for fn in varying if fn.kind is CoefficientKind.SINUSOIDAL]
        breakpoints = sorted({b for fn in varying if fn.kind is CoefficientKind.PIECEWISE for b in fn.breakpoints})
        last_breakpoint = breakpoints[-1] if breakpoints else 0.0

        spacing = None
        grid = np.zeros(1)
        if periods:
            horizon = last_breakpoint + max(periods)
            n_points = int(math.ceil(horizon * points_per_period / min(periods))) + 1
            n_points = min(n_points, MAX_GRID_POINTS)
            grid = np.linspace(0.0, horizon, n_points)
            spacing = horizon / (n_points - 1)
        return np.union1d(grid, np.asarray(breakpoints, dtype=float)), spacing


def extremum_over_time(
    c: CoefficientSet,
    expr: Callable[[CoefficientValues], ArrayLike],
    names: Sequence[str],
    largest: bool = True,
) -> Tuple[float, Optional[float]]:
    """
    Supremum (or infimum) over t >= 0 of an expression of the coefficients.

    Exact when the named coefficients are constant or piecewise-constant; otherwise
    evaluated on the dense grid of CoefficientSet.time_grid.

    Returns:
        (value, grid spacing or None)
    """
    grid, spacing = c.time_grid(names)
    values = np.asarray(expr(c.at(grid)), dtype=float)
    value = float(np.max(values) if largest else np.min(values))
    return value, spacing


@dataclass(frozen=True)
class Violation:
    coefficient: str
    bound: str
    value: float
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.ok:
            return "OK"
        return "; ".join(v.message for v in self.violations)


def validate_coefficients(c: CoefficientSet) -> ValidationReport:
    """
    Check the standing assumptions on the coefficients.

    Growth, inhibition, interaction and saturation coefficients need a positive
    infimum; the four noise intensities must be nonnegative. All bounds must be finite.
    """
    violations = []
    for name, fn in c.items():
        low, high = fn.declared_inf, fn.declared_sup
        if not _finite(low, high):
            violations.append(Violation(name, "bounds", low, f"{name} bounds are not finite"))
            continue
        if name in RATE_NAMES and low <= 0:
            violations.append(Violation(name, "inf", low, f"{name} infimum ≤ 0"))
        elif name in NOISE_NAMES and low < 0:
            violations.append(Violation(name, "inf", low, f"{name} infimum < 0"))
    return ValidationReport(tuple(violations))


def classify_hypothesis(c: CoefficientSet) -> Hypothesis:
    if (
        c.sigma2.vanishes
        and c.rho2.vanishes
        and c.sigma1.declared_inf > 0
        and c.rho1.declared_inf > 0
    ):
        return Hypothesis.H1
    if all(getattr(c, name).declared_inf > 0 for name in NOISE_NAMES):
        return Hypothesis.H2
    return Hypothesis.NEITHER


def require_h1(c: CoefficientSet, operation: str) -> None:
    hypothesis = classify_hypothesis(c)
    if hypothesis is not Hypothesis.H1:
        raise NotH1Error(f"{operation} needs hypothesis H1, coefficients classify as {hypothesis.value}")


def require_h2(c: CoefficientSet, operation: str) -> None:
    hypothesis = classify_hypothesis(c)
    if hypothesis is not Hypothesis.H2:
        raise NotH2Error(f"{operation} needs hypothesis H2, coefficients classify as {hypothesis.value}")


@dataclass(frozen=True)
class State:
    x: ArrayLike
    y: ArrayLike


@dataclass(frozen=True)
class LogState:
    xi: ArrayLike
    eta: ArrayLike


def _ratio(numerator: ArrayLike, x: ArrayLike, y: ArrayLike, e: ArrayLike) -> ArrayLike:
    """numerator / (x + e*y), defined as 0 where both densities vanish."""
    denominator = x + e * y
    positive = denominator > 0
    return np.where(positive, numerator / np.where(positive, denominator, 1.0), 0.0)


def log_drift_values(X: ArrayLike, Y: ArrayLike, v: CoefficientValues) -> Tuple[ArrayLike, ArrayLike]:
    """Drift of (ln x, ln y) at densities (X, Y); an absent species enters as 0."""
    dxi = v.a1 - 0.5 * (v.sigma1 + v.sigma2 * X) ** 2 - v.b1 * X - _ratio(v.c1 * Y, X, Y, v.e)
    deta = -v.a2 - 0.5 * (v.rho1 + v.rho2 * Y) ** 2 - v.b2 * Y + _ratio(v.c2 * X, X, Y, v.e)
    return dxi, deta


def log_diffusion_values(X: ArrayLike, Y: ArrayLike, v: CoefficientValues) -> Tuple[ArrayLike, ArrayLike]:
    return v.sigma1 + v.sigma2 * X, v.rho1 + v.rho2 * Y


def drift_xy(s: State, t: ArrayLike, c: CoefficientSet) -> Tuple[ArrayLike, ArrayLike]:
    v = c.at(t)
    x, y = s.x, s.y
    dx = (v.a1 - v.b1 * x - _ratio(v.c1 * y, x, y, v.e)) * x
    dy = (-v.a2 - v.b2 * y + _ratio(v.c2 * x, x, y, v.e)) * y
    return _as_output(dx, dx), _as_output(dy, dy)


def diffusion_xy(s: State, t: ArrayLike, c: CoefficientSet) -> Tuple[ArrayLike, ArrayLike]:
    v = c.at(t)
    gx = (v.sigma1 + v.sigma2 * s.x) * s.x
    gy = (v.rho1 + v.rho2 * s.y) * s.y
    return _as_output(gx, gx), _as_output(gy, gy)


def drift_log(ls: LogState, t: ArrayLike, c: CoefficientSet) -> Tuple[ArrayLike, ArrayLike]:
    dxi, deta = log_drift_values(np.exp(ls.xi), np.exp(ls.eta), c.at(t))
    return _as_output(dxi, dxi), _as_output(deta, deta)


def diffusion_log(ls: LogState, t: ArrayLike, c: CoefficientSet) -> Tuple[ArrayLike, ArrayLike]:
    hxi, heta = log_diffusion_values(np.exp(ls.xi), np.exp(ls.eta), c.at(t))
    return _as_output(hxi, hxi), _as_output(heta, heta)


@dataclass(frozen=True)
class Theorem2Constants:
    theta1: float
    theta2: float
    x0: float
    y0: float
    d1: float
    d2: float
    theta: float
    lambda1: float
    lambda2: float
    grid_spacing: Optional[float] = None

    def envelope(self, t: ArrayLike) -> ArrayLike:
        """exp{lambda1 + lambda2 * exp(-d2 t)}, the H1 moment envelope."""
        return np.exp(self.lambda1 + self.lambda2 * np.exp(-self.d2 * np.asarray(t, dtype=float)))

    @property
    def asymptotic_bound(self) -> float:
        return math.exp(self.lambda1)

    def gronwall_bound(self, t: ArrayLike) -> ArrayLike:
        """x0^theta1 y0^theta2 exp{d1 t}, the cruder bound that precedes the envelope."""
        start = self.x0 ** self.theta1 * self.y0 ** self.theta2
        return start * np.exp(self.d1 * np.asarray(t, dtype=float))


def theorem2_constants(
    c: CoefficientSet,
    theta1: float,
    theta2: float,
    x0: float,
    y0: float,
) -> Theorem2Constants:
    """
    Constants d1, d2, theta, lambda1, lambda2 of the H1 moment envelope.

    Args:
        c: coefficient set classified H1
        theta1, theta2: positive moment exponents
        x0, y0: positive initial densities (lambda2 depends on them)

    Returns:
        Theorem2Constants; grid_spacing is set when d1 came from a time grid
    """
    require_h1(c, "theorem2_constants")
    if theta1 <= 0 or theta2 <= 0:
        raise ModelError(f"exponents must be positive, got theta1={theta1}, theta2={theta2}")
    if x0 <= 0 or y0 <= 0:
        raise ModelError(f"initial densities must be positive, got x0={x0}, y0={y0}")

    d2 = min(theta1 * c.b1.declared_inf, theta2 * c.b2.declared_inf)

    def d1_integrand(v: CoefficientValues) -> ArrayLike:
        return (
            0.5 * v.sigma1 ** 2 * theta1 * (theta1 - 1.0)
            + 0.5 * v.rho1 ** 2 * theta2 * (theta2 - 1.0)
            + v.sigma1 * v.rho1 * theta1 * theta2
            + theta1 * v.a1
            + (v.c2 - v.a2) * theta2
        )

    d1, spacing = extremum_over_time(c, d1_integrand, ("sigma1", "rho1", "a1", "a2", "c2"))
    total = theta1 + theta2
    shift = total * (1.0 - math.log(total))
    lambda1 = d1 / d2 - shift
    lambda2 = theta1 * math.log(x0) + theta2 * math.log(y0) + shift - d1 / d2
    return Theorem2Constants(
        theta1=theta1,
        theta2=theta2,
        x0=x0,
        y0=y0,
        d1=d1,
        d2=d2,
        theta=1.0 / total,
        lambda1=lambda1,
        lambda2=lambda2,
        grid_spacing=spacing,
    )


def predator_extinction_rate(c: CoefficientSet) -> float:
    """-inf_t [a2(t) + rho1(t)^2 / 2], the almost-sure bound on ln y_t / t without prey."""
    require_h1(c, "predator_extinction_rate")
    low, _ = extremum_over_time(c, lambda v: v.a2 + 0.5 * v.rho1 ** 2, ("a2", "rho1"), largest=False)
    return -low


def prey_solo_criterion(c: CoefficientSet) -> Tuple[float, PreySoloCase]:
    require_h1(c, "prey_solo_criterion")
    value, _ = extremum_over_time(c, lambda v: v.a1 - 0.5 * v.sigma1 ** 2, ("a1", "sigma1"))
    if abs(value) <= EPS_CRITICAL:
        return value, PreySoloCase.EXTINCTION_MEAN
    if value < 0:
        return value, PreySoloCase.EXTINCTION_EXPONENTIAL
    return value, PreySoloCase.LOGGROWTH


@dataclass(frozen=True)
class MomentSpec:
    theta1: float = 1.0
    theta2: float = 1.0
    varsigma1: float = 1.0
    varsigma2: float = 1.0
    varrho1: float = 0.5
    varrho2: float = 0.5

    def problems(self, unit_interval: bool = True) -> list:
        """Range violations; unit_interval additionally asks theta_i in (0, 1]."""
        found = []
        for name in ("theta1", "theta2"):
            value = getattr(self, name)
            if value < 0:
                found.append(f"{name}={value} must be ≥ 0")
            elif unit_interval and not 0 < value <= 1:
                found.append(f"{name}={value} outside (0,1]")
        for name in ("varsigma1", "varsigma2"):
            if getattr(self, name) <= 0:
                found.append(f"{name}={getattr(self, name)} must be positive")
        for name in ("varrho1", "varrho2"):
            if not 0 <= getattr(self, name) < 3:
                found.append(f"{name}={getattr(self, name)} outside [0,3)")
        return found
