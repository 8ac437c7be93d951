"""
Monte Carlo Module
Runs path ensembles in parallel and provides the estimators the theorem
harnesses are built on: moments with confidence intervals, time averages,
log-slopes, log-growth statistics and order-statistic quantiles
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import integrate as sp_integrate
from scipy import stats

from integrate import (
    BatchResult,
    BrownianDriver,
    InvalidConfigError,
    PathRecord,
    SimConfig,
    check_inputs,
    simulate_batch,
)
from model import CoefficientSet, Species

logger = logging.getLogger(__name__)

Z_95 = float(stats.norm.ppf(0.975))
DEFAULT_BLOCK_SIZE = 512
TIME_TOLERANCE = 1e-9


class EstimationError(Exception):
    """Base class for estimation errors"""


class UnknownFunctionalError(EstimationError):
    pass


class OffGridError(EstimationError):
    pass


class BlownUpPathError(EstimationError):
    pass


class EmptyWindowError(EstimationError):
    pass


@dataclass(frozen=True)
class Functional:
    name: str
    fn: Callable[[PathRecord], np.ndarray]


def moment_name(theta1: float, theta2: float) -> str:
    return f"moment[{float(theta1)!r},{float(theta2)!r}]"


def moment_functional(theta1: float, theta2: float) -> Functional:
    """x^theta1 y^theta2 along a path; an absent species is a density of 0 (0^0 = 1)."""

    def fn(path: PathRecord) -> np.ndarray:
        return np.power(path.density(Species.PREY), theta1) * np.power(path.density(Species.PREDATOR), theta2)

    return Functional(moment_name(theta1, theta2), fn)


def weighted_functional(name: str, varsigma1: float, exponent1: float, varsigma2: float, exponent2: float) -> Functional:
    """varsigma1 x^exponent1 + varsigma2 y^exponent2 along a path."""

    def fn(path: PathRecord) -> np.ndarray:
        return (
            varsigma1 * np.power(path.density(Species.PREY), exponent1)
            + varsigma2 * np.power(path.density(Species.PREDATOR), exponent2)
        )

    return Functional(name, fn)


def log_density_functional(species: Species) -> Functional:
    def fn(path: PathRecord) -> np.ndarray:
        return np.log(path.density(species))

    return Functional(f"log[{species.value}]", fn)


@dataclass(frozen=True, eq=False)
class FunctionalStats:
    mean: np.ndarray
    variance: np.ndarray
    n: int


@dataclass(eq=False)
class EnsembleSummary:
    times: np.ndarray
    n_paths: int
    n_blowups: int
    stats: Dict[str, FunctionalStats]
    blown_up: np.ndarray
    wall_time: float = 0.0
    paths: List[PathRecord] = field(default_factory=list)

    @property
    def n_effective(self) -> int:
        return self.n_paths - self.n_blowups

    @property
    def blowup_fraction(self) -> float:
        return self.n_blowups / self.n_paths if self.n_paths else 0.0

    def surviving_paths(self) -> List[PathRecord]:
        return [path for path in self.paths if not path.blew_up]


def aggregate(paths: Sequence[PathRecord], functionals: Sequence[Functional], wall_time: float = 0.0) -> EnsembleSummary:
    """
    Welford mean and variance per save time, accumulated in path-index order.

    Blown-up paths are counted but take no part in any statistic.
    """
    if not paths:
        raise EstimationError("cannot aggregate an empty ensemble")
    ordered = sorted(paths, key=lambda path: path.path_index)
    times = ordered[0].times
    blown_up = np.array([path.blew_up for path in ordered], dtype=bool)

    summary_stats = {}
    for functional in functionals:
        if functional.name in summary_stats:
            continue
        mean = np.zeros(len(times))
        m2 = np.zeros(len(times))
        n = 0
        for path in ordered:
            if path.blew_up:
                continue
            sample = np.asarray(functional.fn(path), dtype=float)
            n += 1
            delta = sample - mean
            mean += delta / n
            m2 += delta * (sample - mean)
        variance = m2 / (n - 1) if n > 1 else np.zeros(len(times))
        summary_stats[functional.name] = FunctionalStats(mean=mean, variance=variance, n=n)

    return EnsembleSummary(
        times=times,
        n_paths=len(ordered),
        n_blowups=int(blown_up.sum()),
        stats=summary_stats,
        blown_up=blown_up,
        wall_time=wall_time,
        paths=list(ordered),
    )


def _run_block(cfg: SimConfig, c: CoefficientSet, master_seed: int, first: int, stop: int) -> BatchResult:
    drivers = [BrownianDriver(master_seed, index, cfg.dt) for index in range(first, stop)]
    return simulate_batch(cfg, c, drivers)


def run_ensemble(
    cfg: SimConfig,
    c: CoefficientSet,
    n_paths: int,
    functionals: Sequence[Functional],
    master_seed: int = 0,
    n_jobs: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    strict: bool = True,
    keep_paths: bool = True,
) -> EnsembleSummary:
    """
    Simulate paths 0 .. n_paths-1 and aggregate the functionals.

    Paths are split into fixed index blocks; blocks run in parallel through joblib
    and each block is integrated as one vectorised batch. Results do not depend on
    n_jobs or block_size.

    Args:
        n_jobs: joblib worker count, 0 means every core
        keep_paths: retain the PathRecords on the summary
    """
    if n_paths < 1:
        raise InvalidConfigError(f"n_paths={n_paths} must be positive")
    if block_size < 1:
        raise InvalidConfigError(f"block_size={block_size} must be positive")
    check_inputs(cfg, c, strict)
    BrownianDriver(master_seed, 0, cfg.dt)  # fails fast on an out-of-range seed

    blocks = [(first, min(first + block_size, n_paths)) for first in range(0, n_paths, block_size)]
    workers = -1 if n_jobs == 0 else n_jobs
    logger.info("[Ensemble] %d paths in %d block(s), n_jobs=%d", n_paths, len(blocks), workers)

    started = time.perf_counter()
    batches = Parallel(n_jobs=workers)(
        delayed(_run_block)(cfg, c, master_seed, first, stop) for first, stop in blocks
    )
    records = [record for batch in batches for record in batch.records()]
    summary = aggregate(records, functionals, wall_time=time.perf_counter() - started)

    if summary.n_blowups:
        logger.warning("[Ensemble] %d of %d paths blew up", summary.n_blowups, n_paths)
    logger.info("[Ensemble] finished in %.2fs", summary.wall_time)
    if not keep_paths:
        summary.paths = []
    return summary


@dataclass(frozen=True)
class MomentEstimate:
    time: float
    point_estimate: float
    standard_error: float
    ci_low: float
    ci_high: float
    n_effective: int


def _normal_interval(mean: float, variance: float, n: int, t: float) -> MomentEstimate:
    se = math.sqrt(max(variance, 0.0) / n) if n > 1 else 0.0
    return MomentEstimate(
        time=t,
        point_estimate=float(mean),
        standard_error=se,
        ci_low=float(mean - Z_95 * se),
        ci_high=float(mean + Z_95 * se),
        n_effective=n,
    )


def estimate_mean(samples: Sequence[float], t: float = float("nan")) -> MomentEstimate:
    """Sample mean with a normal 95% interval."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise EstimationError("no samples to average")
    variance = float(np.var(samples, ddof=1)) if samples.size > 1 else 0.0
    return _normal_interval(float(np.mean(samples)), variance, int(samples.size), t)


def time_index(times: np.ndarray, t: float) -> int:
    index = int(np.argmin(np.abs(times - t)))
    if not math.isclose(times[index], t, rel_tol=TIME_TOLERANCE, abs_tol=TIME_TOLERANCE):
        raise OffGridError(f"t={t} is not a save time")
    return index


def _stats_for(summary: EnsembleSummary, theta1: float, theta2: float) -> FunctionalStats:
    name = moment_name(theta1, theta2)
    if name not in summary.stats:
        raise UnknownFunctionalError(f"{name} was not aggregated")
    found = summary.stats[name]
    if found.n == 0:
        raise EstimationError(f"{name}: every path blew up")
    return found


def estimate_moment(summary: EnsembleSummary, theta1: float, theta2: float, t: float) -> MomentEstimate:
    found = _stats_for(summary, theta1, theta2)
    index = time_index(summary.times, t)
    return _normal_interval(found.mean[index], found.variance[index], found.n, float(summary.times[index]))


def moment_series(summary: EnsembleSummary, theta1: float, theta2: float) -> List[MomentEstimate]:
    found = _stats_for(summary, theta1, theta2)
    return [
        _normal_interval(found.mean[i], found.variance[i], found.n, float(t))
        for i, t in enumerate(summary.times)
    ]


def stat_series(summary: EnsembleSummary, name: str) -> List[MomentEstimate]:
    if name not in summary.stats:
        raise UnknownFunctionalError(f"{name} was not aggregated")
    found = summary.stats[name]
    if found.n == 0:
        raise EstimationError(f"{name}: every path blew up")
    return [
        _normal_interval(found.mean[i], found.variance[i], found.n, float(t))
        for i, t in enumerate(summary.times)
    ]


def time_average_moment(
    path: PathRecord,
    varrho1: float,
    varrho2: float,
    varsigma1: float = 1.0,
    varsigma2: float = 1.0,
) -> float:
    """(1/t_end) * integral of varsigma1 x^varrho1 + varsigma2 y^varrho2, trapezoidal on save times."""
    if path.blew_up:
        raise BlownUpPathError(f"path {path.path_index} blew up at t={path.blowup_time}")
    if len(path.times) < 2:
        raise EmptyWindowError("time average needs at least two save times")
    values = weighted_functional("time-average", varsigma1, varrho1, varsigma2, varrho2).fn(path)
    horizon = path.times[-1] - path.times[0]
    return float(sp_integrate.trapezoid(values, path.times) / horizon)


def tail_window(t_end: float) -> Tuple[float, float]:
    return 0.5 * t_end, t_end


def _window_mask(times: np.ndarray, window: Tuple[float, float]) -> np.ndarray:
    low, high = window
    if not low < high:
        raise EmptyWindowError(f"window ({low}, {high}) is empty")
    slack = TIME_TOLERANCE * max(1.0, abs(high))
    if low > times[-1] + slack or high < times[0] - slack:
        raise EmptyWindowError(f"window ({low}, {high}) lies outside the recorded horizon")
    return (times >= low - slack) & (times <= high + slack)


@dataclass(frozen=True)
class SlopeEstimate:
    slope: float
    intercept: float
    fit_window: Tuple[float, float]
    r_squared: float
    stderr: float = 0.0
    n_points: int = 0


def log_slope(path: PathRecord, species: Species, window: Optional[Tuple[float, float]] = None) -> SlopeEstimate:
    """Least-squares slope of ln(density) against t over the window."""
    if path.blew_up:
        raise BlownUpPathError(f"path {path.path_index} blew up at t={path.blowup_time}")
    window = window or tail_window(float(path.times[-1]))
    mask = _window_mask(path.times, window)
    if mask.sum() < 2:
        raise EmptyWindowError(f"window {window} holds fewer than two save times")
    values = path.density(species)[mask]
    if np.any(values <= 0):
        raise EstimationError(f"{species.value} density is not positive on path {path.path_index}")
    t = path.times[mask]
    log_values = np.log(values)
    fit = stats.linregress(t, log_values)
    total = float(np.sum((log_values - log_values.mean()) ** 2))
    if total == 0.0:
        r_squared = 1.0
    else:
        residual = float(np.sum((log_values - (fit.intercept + fit.slope * t)) ** 2))
        r_squared = 1.0 - residual / total
    return SlopeEstimate(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        fit_window=(float(window[0]), float(window[1])),
        r_squared=r_squared,
        stderr=float(fit.stderr),
        n_points=int(mask.sum()),
    )


def loggrowth_stat(
    path: PathRecord,
    theta1: float,
    theta2: float,
    window: Optional[Tuple[float, float]] = None,
) -> float:
    """max over the window (restricted to t >= e) of (theta1 ln x_t + theta2 ln y_t) / ln t."""
    if path.blew_up:
        raise BlownUpPathError(f"path {path.path_index} blew up at t={path.blowup_time}")
    low, high = window or tail_window(float(path.times[-1]))
    if high < math.e:
        raise EmptyWindowError(f"window ends at {high}, before t = e")
    mask = _window_mask(path.times, (max(low, math.e), high))
    mask &= path.times >= math.e
    if not mask.any():
        raise EmptyWindowError(f"no save time in [{max(low, math.e)}, {high}]")
    t = path.times[mask]
    total = np.zeros(len(t))
    for species, theta in ((Species.PREY, theta1), (Species.PREDATOR, theta2)):
        if theta == 0:
            continue
        values = path.density(species)[mask]
        if np.any(values <= 0):
            raise EstimationError(f"{species.value} is absent or extinct on path {path.path_index}")
        total += theta * np.log(values)
    return float(np.max(total / np.log(t)))


@dataclass(frozen=True)
class QuantileEstimate:
    q: float
    value: float
    ci_low: float
    ci_high: float
    n: int


def quantile_estimate(samples: Sequence[float], q: float, confidence: float = 0.95) -> QuantileEstimate:
    """
    Empirical quantile with a distribution-free interval from order statistics.

    The bracketing order statistics sit n*q -/+ z*sqrt(n*q*(1-q)) positions apart.
    """
    if not 0 < q < 1:
        raise EstimationError(f"quantile level {q} outside (0,1)")
    ordered = np.sort(np.asarray(samples, dtype=float))
    n = ordered.size
    if n == 0:
        raise EstimationError("no samples for a quantile")
    value = float(np.quantile(ordered, q))
    z = float(stats.norm.ppf(0.5 + 0.5 * confidence))
    half = z * math.sqrt(n * q * (1.0 - q))
    low_index = max(int(math.floor(n * q - half)) - 1, 0)
    high_index = min(int(math.ceil(n * q + half)), n - 1)
    return QuantileEstimate(
        q=q,
        value=value,
        ci_low=min(float(ordered[low_index]), value),
        ci_high=max(float(ordered[high_index]), value),
        n=n,
    )
