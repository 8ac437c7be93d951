"""
Integrate Module
Handles path integration of the predator-prey system in log coordinates.
One Brownian motion drives both species; increments come from a counter-based
generator so any path can be reproduced from (master_seed, path_index) alone
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats

from model import (
    CoefficientSet,
    CoefficientValues,
    LogState,
    Species,
    log_diffusion_values,
    log_drift_values,
    validate_coefficients,
)

logger = logging.getLogger(__name__)

DEFAULT_BLOWUP_GUARD = 400.0
CHUNK_STEPS = 2048
MAX_STEPS = 10 ** 9

# Strong-order reference runs this many halvings below the coarsest step
REFERENCE_DEPTH = 6
MIN_LEVELS = 3

SEED_LIMIT = 2 ** 64
_UNIFORM_SCALE = 2.0 ** -53


class IntegrationError(Exception):
    """Base class for integration errors"""


class InvalidConfigError(IntegrationError):
    """Raised when a SimConfig or coefficient set cannot be integrated"""


class BlowUpError(IntegrationError):
    """Raised when a log-coordinate leaves the blow-up guard"""

    def __init__(self, message: str, state: Optional[LogState] = None, time: Optional[float] = None):
        super().__init__(message)
        self.state = state
        self.time = time


class InsufficientLevelsError(IntegrationError):
    """Raised when a convergence study cannot fit a slope"""


class Scheme(str, Enum):
    EULER_MARUYAMA_LOG = "EULER_MARUYAMA_LOG"
    MILSTEIN_LOG = "MILSTEIN_LOG"
    RK4_DETERMINISTIC = "RK4_DETERMINISTIC"


class Mode(str, Enum):
    FULL = "FULL"
    PREY_ABSENT = "PREY_ABSENT"
    PREDATOR_ABSENT = "PREDATOR_ABSENT"


def steps_for(t_end: float, dt: float) -> int:
    """t_end/dt when it is an integer to 1e-9 relative, floor otherwise."""
    ratio = t_end / dt
    nearest = round(ratio)
    if abs(nearest - ratio) <= 1e-9 * max(1.0, ratio):
        return int(nearest)
    return int(math.floor(ratio))


@dataclass(frozen=True)
class SimConfig:
    t_end: float
    dt: float = 1e-3
    save_every: int = 100
    x0: float = 1.0
    y0: float = 1.0
    scheme: Scheme = Scheme.EULER_MARUYAMA_LOG
    mode: Mode = Mode.FULL
    blowup_guard: float = DEFAULT_BLOWUP_GUARD

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "mode", Mode(self.mode))

    def validate(self) -> None:
        problems = []
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            problems.append(f"t_end={self.t_end} must be positive")
        if not (math.isfinite(self.dt) and self.dt > 0):
            problems.append(f"dt={self.dt} must be positive")
        elif self.t_end > 0 and self.dt > self.t_end:
            problems.append(f"dt={self.dt} exceeds t_end={self.t_end}")
        if int(self.save_every) != self.save_every or self.save_every < 1:
            problems.append(f"save_every={self.save_every} must be a positive integer")
        if not (math.isfinite(self.x0) and self.x0 > 0):
            problems.append(f"x0={self.x0} must be positive")
        if not (math.isfinite(self.y0) and self.y0 > 0):
            problems.append(f"y0={self.y0} must be positive")
        if not (math.isfinite(self.blowup_guard) and self.blowup_guard > 0):
            problems.append(f"blowup_guard={self.blowup_guard} must be positive")
        if not problems and self.n_steps > MAX_STEPS:
            problems.append(f"{self.n_steps} steps exceeds the limit of {MAX_STEPS}")
        if not problems and abs(math.log(self.x0)) > self.blowup_guard:
            problems.append("ln x0 lies outside the blow-up guard")
        if not problems and abs(math.log(self.y0)) > self.blowup_guard:
            problems.append("ln y0 lies outside the blow-up guard")
        if problems:
            raise InvalidConfigError("; ".join(problems))

    @property
    def n_steps(self) -> int:
        return steps_for(self.t_end, self.dt)

    @property
    def n_saves(self) -> int:
        return self.n_steps // self.save_every + 1

    def save_times(self) -> np.ndarray:
        return (np.arange(self.n_saves) * self.save_every) * self.dt

    def present(self, species: Species) -> bool:
        if species is Species.PREY:
            return self.mode is not Mode.PREY_ABSENT
        return self.mode is not Mode.PREDATOR_ABSENT


@dataclass(frozen=True)
class BrownianDriver:
    """
    Increments of the Brownian motion for one path.

    The k-th increment is a pure function of (master_seed, path_index, k, dt):
    a Philox stream keyed by (master_seed, path_index) is positioned at block k//4
    and the uniform is mapped through the inverse normal CDF.
    """

    master_seed: int
    path_index: int
    dt: float

    def __post_init__(self):
        if not 0 <= self.master_seed < SEED_LIMIT:
            raise InvalidConfigError(f"master_seed={self.master_seed} outside [0, 2^64)")
        if not 0 <= self.path_index < SEED_LIMIT:
            raise InvalidConfigError(f"path_index={self.path_index} outside [0, 2^64)")
        if not self.dt > 0:
            raise InvalidConfigError(f"dt={self.dt} must be positive")

    @property
    def key(self) -> int:
        return (int(self.master_seed) << 64) | int(self.path_index)

    def uniforms(self, start_step: int, n_steps: int, component: int = 0) -> np.ndarray:
        """Open-interval uniforms for steps start_step .. start_step + n_steps - 1."""
        block, skip = divmod(int(start_step), 4)
        counter = block | (int(component) << 192)
        bit_generator = np.random.Philox(counter=counter, key=self.key)
        raw = bit_generator.random_raw(skip + int(n_steps))[skip:]
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _UNIFORM_SCALE

    def increments(self, start_step: int, n_steps: int) -> np.ndarray:
        return math.sqrt(self.dt) * special.ndtri(self.uniforms(start_step, n_steps))


def coarsen_increments(dw: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive groups of `factor` increments along the last axis."""
    dw = np.asarray(dw)
    n_coarse = dw.shape[-1] // factor
    trimmed = dw[..., : n_coarse * factor]
    return trimmed.reshape(dw.shape[:-1] + (n_coarse, factor)).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class PathRecord:
    """One recorded trajectory; the density of an absent species is None."""

    times: np.ndarray
    xs: Optional[np.ndarray]
    ys: Optional[np.ndarray]
    blew_up: bool = False
    blowup_time: Optional[float] = None
    terminal: Optional[LogState] = None
    path_index: int = 0
    mode: Mode = Mode.FULL

    def density(self, species: Species) -> np.ndarray:
        values = self.xs if species is Species.PREY else self.ys
        if values is None:
            return np.zeros_like(self.times, dtype=float)
        return values


@dataclass(frozen=True, eq=False)
class BatchResult:
    path_indices: np.ndarray
    times: np.ndarray
    xs: Optional[np.ndarray]
    ys: Optional[np.ndarray]
    blew_up: np.ndarray
    blowup_times: np.ndarray
    terminal_xi: np.ndarray
    terminal_eta: np.ndarray
    mode: Mode

    def records(self) -> List[PathRecord]:
        records = []
        for row, index in enumerate(self.path_indices):
            blew_up = bool(self.blew_up[row])
            records.append(
                PathRecord(
                    times=self.times,
                    xs=None if self.xs is None else self.xs[row],
                    ys=None if self.ys is None else self.ys[row],
                    blew_up=blew_up,
                    blowup_time=float(self.blowup_times[row]) if blew_up else None,
                    terminal=LogState(float(self.terminal_xi[row]), float(self.terminal_eta[row])),
                    path_index=int(index),
                    mode=self.mode,
                )
            )
        return records


def _densities(xi, eta, mode: Mode):
    X = 0.0 if mode is Mode.PREY_ABSENT else np.exp(xi)
    Y = 0.0 if mode is Mode.PREDATOR_ABSENT else np.exp(eta)
    return X, Y


def _stochastic_step(xi, eta, v: CoefficientValues, dt: float, dw, milstein: bool, mode: Mode):
    X, Y = _densities(xi, eta, mode)
    f_xi, f_eta = log_drift_values(X, Y, v)
    h_xi, h_eta = log_diffusion_values(X, Y, v)
    new_xi = xi + f_xi * dt + h_xi * dw
    new_eta = eta + f_eta * dt + h_eta * dw
    if milstein:
        correction = 0.5 * (dw * dw - dt)
        new_xi = new_xi + h_xi * (v.sigma2 * X) * correction
        new_eta = new_eta + h_eta * (v.rho2 * Y) * correction
    if mode is Mode.PREY_ABSENT:
        new_xi = xi
    elif mode is Mode.PREDATOR_ABSENT:
        new_eta = eta
    return new_xi, new_eta


def _rk4_step(xi, eta, v0: CoefficientValues, v_half: CoefficientValues, v1: CoefficientValues, dt: float, mode: Mode):
    def rhs(a, b, v):
        return log_drift_values(*_densities(a, b, mode), v)

    k1 = rhs(xi, eta, v0)
    k2 = rhs(xi + 0.5 * dt * k1[0], eta + 0.5 * dt * k1[1], v_half)
    k3 = rhs(xi + 0.5 * dt * k2[0], eta + 0.5 * dt * k2[1], v_half)
    k4 = rhs(xi + dt * k3[0], eta + dt * k3[1], v1)
    new_xi = xi + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    new_eta = eta + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    if mode is Mode.PREY_ABSENT:
        new_xi = xi
    elif mode is Mode.PREDATOR_ABSENT:
        new_eta = eta
    return new_xi, new_eta


def _within_guard(value, guard: float):
    return np.isfinite(value) & (np.abs(value) <= guard)


def _uses_milstein(scheme: Scheme, c: CoefficientSet) -> bool:
    # with sigma2 = rho2 = 0 the correction is identically zero
    return scheme is Scheme.MILSTEIN_LOG and not (c.sigma2.vanishes and c.rho2.vanishes)


def _single_step(ls: LogState, t: float, dt: float, dw: float, c: CoefficientSet, guard: float, mode: Mode, milstein: bool) -> LogState:
    for value in (ls.xi, ls.eta):
        if not _within_guard(value, guard):
            raise BlowUpError(f"state ({ls.xi}, {ls.eta}) already outside guard {guard}", ls, t)
    with np.errstate(over="ignore", invalid="ignore"):
        xi, eta = _stochastic_step(float(ls.xi), float(ls.eta), c.at(float(t)), dt, dw, milstein, mode)
    new_state = LogState(float(xi), float(eta))
    if not (_within_guard(xi, guard) and _within_guard(eta, guard)):
        raise BlowUpError(f"log-state ({xi}, {eta}) left guard {guard} at t={t + dt}", new_state, t + dt)
    return new_state


def em_step_log(
    ls: LogState,
    t: float,
    dt: float,
    dw: float,
    c: CoefficientSet,
    guard: float = DEFAULT_BLOWUP_GUARD,
    mode: Mode = Mode.FULL,
) -> LogState:
    """One Euler-Maruyama step of (ln x, ln y) with the Itô-corrected drift."""
    return _single_step(ls, t, dt, dw, c, guard, Mode(mode), milstein=False)


def milstein_step_log(
    ls: LogState,
    t: float,
    dt: float,
    dw: float,
    c: CoefficientSet,
    guard: float = DEFAULT_BLOWUP_GUARD,
    mode: Mode = Mode.FULL,
) -> LogState:
    """Euler-Maruyama step plus 1/2 h h' (dW^2 - dt) per component."""
    return _single_step(ls, t, dt, dw, c, guard, Mode(mode), milstein=_uses_milstein(Scheme.MILSTEIN_LOG, c))


def check_inputs(cfg: SimConfig, c: CoefficientSet, strict: bool = True) -> None:
    """Validate a run before any step is taken."""
    cfg.validate()
    report = validate_coefficients(c)
    if not report.ok:
        if strict:
            raise InvalidConfigError(f"coefficients violate standing assumptions: {report.summary()}")
        logger.warning("[Integrate] relaxed validation, continuing despite: %s", report.summary())
    if cfg.scheme is Scheme.RK4_DETERMINISTIC and not c.noise_free:
        raise InvalidConfigError("RK4_DETERMINISTIC needs all four noise coefficients identically zero")


def _coefficient_rows(c: CoefficientSet, times: np.ndarray) -> List[CoefficientValues]:
    columns = [np.asarray(col, dtype=float).tolist() for col in c.at(times)]
    return [CoefficientValues(*row) for row in zip(*columns)]


def _integrate(
    cfg: SimConfig,
    c: CoefficientSet,
    path_indices: Sequence[int],
    dt: float,
    n_steps: int,
    save_every: int,
    draw: Optional[Callable[[int, int], np.ndarray]],
) -> BatchResult:
    """
    Advance a batch of paths together.

    Args:
        draw: draw(start, count) -> (n_paths, count) increments, None for RK4

    Returns:
        BatchResult with densities saved every `save_every` steps
    """
    n_paths = len(path_indices)
    n_saves = n_steps // save_every + 1
    mode = cfg.mode
    guard = cfg.blowup_guard
    deterministic = cfg.scheme is Scheme.RK4_DETERMINISTIC
    milstein = _uses_milstein(cfg.scheme, c)

    xi = np.full(n_paths, math.log(cfg.x0))
    eta = np.full(n_paths, math.log(cfg.y0))
    xs = np.empty((n_paths, n_saves))
    ys = np.empty((n_paths, n_saves))
    xs[:, 0] = np.exp(xi)
    ys[:, 0] = np.exp(eta)
    alive = np.ones(n_paths, dtype=bool)
    blowup_times = np.full(n_paths, np.nan)

    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, n_steps, CHUNK_STEPS):
            count = min(CHUNK_STEPS, n_steps - start)
            t = np.arange(start, start + count) * dt
            rows = _coefficient_rows(c, t)
            if deterministic:
                half_rows = _coefficient_rows(c, t + 0.5 * dt)
                end_rows = _coefficient_rows(c, t + dt)
            else:
                dw = draw(start, count)

            for j in range(count):
                if deterministic:
                    new_xi, new_eta = _rk4_step(xi, eta, rows[j], half_rows[j], end_rows[j], dt, mode)
                else:
                    new_xi, new_eta = _stochastic_step(xi, eta, rows[j], dt, dw[:, j], milstein, mode)

                step = start + j + 1
                escaped = alive & ~(_within_guard(new_xi, guard) & _within_guard(new_eta, guard))
                if escaped.any():
                    blowup_times[escaped] = step * dt
                    alive &= ~escaped
                    logger.debug("[Integrate] %d path(s) left the guard at t=%g", int(escaped.sum()), step * dt)
                xi = np.where(alive, new_xi, xi)
                eta = np.where(alive, new_eta, eta)

                if step % save_every == 0:
                    xs[:, step // save_every] = np.exp(xi)
                    ys[:, step // save_every] = np.exp(eta)

    return BatchResult(
        path_indices=np.asarray(path_indices, dtype=np.int64),
        times=(np.arange(n_saves) * save_every) * dt,
        xs=None if mode is Mode.PREY_ABSENT else xs,
        ys=None if mode is Mode.PREDATOR_ABSENT else ys,
        blew_up=~alive,
        blowup_times=blowup_times,
        terminal_xi=xi,
        terminal_eta=eta,
        mode=mode,
    )


def simulate_batch(cfg: SimConfig, c: CoefficientSet, drivers: Sequence[BrownianDriver]) -> BatchResult:
    """Integrate one driver per path; inputs are assumed checked by check_inputs."""
    for driver in drivers:
        if driver.dt != cfg.dt:
            raise InvalidConfigError(f"driver dt={driver.dt} does not match config dt={cfg.dt}")

    def draw(start: int, count: int) -> np.ndarray:
        return np.stack([driver.increments(start, count) for driver in drivers])

    indices = [driver.path_index for driver in drivers]
    return _integrate(cfg, c, indices, cfg.dt, cfg.n_steps, cfg.save_every, draw)


def simulate_path(
    cfg: SimConfig,
    c: CoefficientSet,
    driver: Optional[BrownianDriver],
    strict: bool = True,
) -> PathRecord:
    """
    Simulate a single path.

    Args:
        cfg: run configuration
        c: coefficient set
        driver: Brownian driver, may be None for RK4_DETERMINISTIC
        strict: reject coefficients that violate the standing assumptions

    Returns:
        PathRecord; a path that leaves the guard is flagged and frozen
    """
    check_inputs(cfg, c, strict)
    if cfg.scheme is Scheme.RK4_DETERMINISTIC:
        index = 0 if driver is None else driver.path_index
        batch = _integrate(cfg, c, [index], cfg.dt, cfg.n_steps, cfg.save_every, None)
    else:
        if driver is None:
            raise InvalidConfigError(f"{cfg.scheme.value} needs a BrownianDriver")
        batch = simulate_batch(cfg, c, [driver])
    record = batch.records()[0]
    if record.blew_up:
        logger.warning("[Integrate] path %d blew up at t=%g", record.path_index, record.blowup_time)
    return record


@dataclass(frozen=True)
class StrongOrderEstimate:
    order: float
    residual: float
    dts: Tuple[float, ...]
    errors: Tuple[float, ...]
    n_paths: int = 0


def estimate_strong_order(
    cfg: SimConfig,
    c: CoefficientSet,
    n_paths: int,
    dt_coarse: float,
    n_levels: int = 4,
    master_seed: int = 0,
    strict: bool = True,
) -> StrongOrderEstimate:
    """
    Fit the strong order of cfg.scheme from coupled paths at dt_coarse / 2^l.

    Every level and the reference at dt_coarse / 2^6 use sums of the same finest
    increments. The error at a level is the mean Euclidean distance between the
    terminal densities of the present species and the reference.
    """
    if cfg.scheme is Scheme.RK4_DETERMINISTIC:
        raise InvalidConfigError("strong order is estimated for the stochastic schemes only")
    if n_levels < MIN_LEVELS:
        raise InsufficientLevelsError(f"need at least {MIN_LEVELS} levels, got {n_levels}")
    if n_levels >= REFERENCE_DEPTH:
        raise InsufficientLevelsError(f"levels must stay below the reference depth {REFERENCE_DEPTH}, got {n_levels}")
    if n_paths < 1:
        raise InvalidConfigError(f"n_paths={n_paths} must be positive")
    if not dt_coarse > 0:
        raise InvalidConfigError(f"dt_coarse={dt_coarse} must be positive")

    n_coarse = steps_for(cfg.t_end, dt_coarse)
    if n_coarse < 1 or abs(n_coarse * dt_coarse - cfg.t_end) > 1e-9 * cfg.t_end:
        raise InsufficientLevelsError(f"t_end={cfg.t_end} is not a multiple of dt_coarse={dt_coarse}")

    base = replace(cfg, dt=dt_coarse, save_every=1)
    check_inputs(base, c, strict)

    dt_reference = dt_coarse / 2 ** REFERENCE_DEPTH
    n_reference = n_coarse * 2 ** REFERENCE_DEPTH
    drivers = [BrownianDriver(master_seed, index, dt_reference) for index in range(n_paths)]
    finest = np.stack([driver.increments(0, n_reference) for driver in drivers])
    indices = list(range(n_paths))

    def terminal(level_dt: float, dw: np.ndarray) -> BatchResult:
        n_steps = dw.shape[1]

        def draw(start: int, count: int) -> np.ndarray:
            return dw[:, start:start + count]

        return _integrate(cfg, c, indices, level_dt, n_steps, n_steps, draw)

    reference = terminal(dt_reference, finest)
    levels = []
    for level in range(n_levels):
        factor = 2 ** (REFERENCE_DEPTH - level)
        levels.append((dt_coarse / 2 ** level, terminal(dt_coarse / 2 ** level, coarsen_increments(finest, factor))))

    usable = ~reference.blew_up
    for _, result in levels:
        usable &= ~result.blew_up
    if not usable.any():
        raise InsufficientLevelsError("every path blew up at some level")
    if not usable.all():
        logger.warning("[Convergence] %d path(s) blew up and are left out", int((~usable).sum()))

    def terminal_densities(result: BatchResult) -> np.ndarray:
        columns = [values[:, -1] for values in (result.xs, result.ys) if values is not None]
        return np.stack(columns, axis=1)[usable]

    target = terminal_densities(reference)
    dts, errors = [], []
    for level_dt, result in levels:
        distance = np.linalg.norm(terminal_densities(result) - target, axis=1)
        dts.append(level_dt)
        errors.append(float(np.mean(distance)))
        logger.info("[Convergence] dt=%g strong error=%.6g", level_dt, errors[-1])

    if min(errors) <= 0 or not all(math.isfinite(err) for err in errors):
        raise InsufficientLevelsError(f"strong errors must be positive and finite, got {errors}")

    log_dts, log_errors = np.log2(dts), np.log2(errors)
    fit = stats.linregress(log_dts, log_errors)
    residuals = log_errors - (fit.intercept + fit.slope * log_dts)
    return StrongOrderEstimate(
        order=float(fit.slope),
        residual=float(np.sqrt(np.mean(residuals ** 2))),
        dts=tuple(dts),
        errors=tuple(errors),
        n_paths=int(usable.sum()),
    )
