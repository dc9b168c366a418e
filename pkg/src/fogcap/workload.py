"""Per-slot workload processes, trace ingestion and moment statistics.

All quantities are in Gigacycles per slot, with a slot of one second, so a
capacity in Gigacycles/s is numerically the per-slot service.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import stoploss
from .errors import DomainError, EmptyTraceError, ParameterError, TraceParseError

# pre-clamp negative fraction above which generation reports a warning
CLAMP_WARN_FRACTION = 1e-6


class ClampWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GaussianIID:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ParameterError(f"variance must be > 0, got {self.variance}")


@dataclass(frozen=True)
class GaussianAR1:
    """Stationary Gaussian AR(1) input.

    By default the innovations are scaled so that the lag-0 autocovariance
    equals ``variance`` and ``C(l) = variance * phi**l``.  With
    ``literal_autocov=True`` the innovation variance is ``variance`` itself,
    giving ``C(l) = variance * phi**l / (1 - phi**2)``.
    """

    mean: float
    variance: float
    phi: float
    literal_autocov: bool = False

    def __post_init__(self):
        if not self.variance > 0:
            raise ParameterError(f"variance must be > 0, got {self.variance}")
        if not abs(self.phi) < 1:
            raise ParameterError(f"|phi| must be < 1, got {self.phi}")

    @property
    def stationary_variance(self) -> float:
        if self.literal_autocov:
            return self.variance / (1.0 - self.phi**2)
        return self.variance

    @property
    def innovation_variance(self) -> float:
        return self.stationary_variance * (1.0 - self.phi**2)


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        # low == high allowed: a constant input
        if not self.low <= self.high:
            raise ParameterError(f"need low <= high, got [{self.low}, {self.high}]")

    @classmethod
    def matched(cls, mean: float, variance: float) -> "Uniform":
        """Uniform law with the given mean and variance."""
        half = math.sqrt(3.0 * variance)
        return cls(mean - half, mean + half)


@dataclass(frozen=True, eq=False)
class EmpiricalTrace:
    samples: np.ndarray
    cycles_per_task: float = 1.0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ParameterError("a trace needs at least 2 samples")
        if np.any(x < 0) or not np.all(np.isfinite(x)):
            raise ParameterError("trace samples must be finite and non-negative")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)


WorkloadModel = GaussianIID | GaussianAR1 | Uniform | EmpiricalTrace


@dataclass(frozen=True, eq=False)
class WorkloadStats:
    mean: float
    variance: float
    autocov: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.autocov, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ParameterError("autocov must hold at least C(0)")
        if not math.isclose(c[0], self.variance, rel_tol=1e-12, abs_tol=0.0):
            raise ParameterError("autocov[0] must equal the variance")
        if self.variance < 0:
            raise ParameterError("variance must be non-negative")
        object.__setattr__(self, "autocov", c)

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def max_lag(self) -> int:
        return self.autocov.size - 1


def mean_of(model: WorkloadModel) -> float:
    if isinstance(model, (GaussianIID, GaussianAR1)):
        return float(model.mean)
    if isinstance(model, Uniform):
        return 0.5 * (model.low + model.high)
    if isinstance(model, EmpiricalTrace):
        return float(model.samples.mean())
    raise TypeError(f"unknown workload model {type(model).__name__}")


def marginal(model: WorkloadModel) -> stoploss.ScalarDistribution:
    """One-slot marginal law of the model, as a stop-loss distribution."""
    if isinstance(model, GaussianIID):
        return stoploss.Gaussian(model.mean, model.variance)
    if isinstance(model, GaussianAR1):
        return stoploss.Gaussian(model.mean, model.stationary_variance)
    if isinstance(model, Uniform):
        return stoploss.Uniform(model.low, model.high)
    if isinstance(model, EmpiricalTrace):
        return stoploss.Empirical(model.samples)
    raise TypeError(f"unknown workload model {type(model).__name__}")


def _draw(model: WorkloadModel, n_slots: int, seed: int) -> tuple[np.ndarray, float]:
    """Series plus the fraction of slots clamped from below at zero."""
    if n_slots < 1:
        raise ParameterError(f"n_slots must be >= 1, got {n_slots}")
    rng = np.random.default_rng(seed)
    if isinstance(model, GaussianIID):
        x = rng.normal(model.mean, math.sqrt(model.variance), size=n_slots)
    elif isinstance(model, GaussianAR1):
        e = rng.standard_normal(n_slots)
        e[0] *= math.sqrt(model.stationary_variance)
        e[1:] *= math.sqrt(model.innovation_variance)
        x = lfilter([1.0], [1.0, -model.phi], e) + model.mean
    elif isinstance(model, Uniform):
        if model.low == model.high:
            return np.full(n_slots, float(model.low)), 0.0
        x = rng.uniform(model.low, model.high, size=n_slots)
    elif isinstance(model, EmpiricalTrace):
        idx = np.arange(n_slots) % model.samples.size
        return model.samples[idx].copy(), 0.0
    else:
        raise TypeError(f"unknown workload model {type(model).__name__}")
    neg = x < 0
    frac = float(neg.mean())
    if frac > 0:
        x[neg] = 0.0
    return x, frac


def generate(model: WorkloadModel, n_slots: int, seed: int = 0) -> np.ndarray:
    """Per-slot workload series of length ``n_slots``.

    Gaussian draws below zero are clamped to zero; a :class:`ClampWarning`
    is issued when more than ``CLAMP_WARN_FRACTION`` of slots were clamped.
    Traces are replayed from the start and wrap around.
    """
    x, frac = _draw(model, n_slots, seed)
    if frac > CLAMP_WARN_FRACTION:
        warnings.warn(f"{frac:.3g} of Gaussian samples clamped at 0", ClampWarning, stacklevel=2)
    return x


def empirical_autocov(x, max_lag: int) -> np.ndarray:
    """``C(l) = 1/(N-l) * sum_n (x_n - xbar)(x_{n+l} - xbar)`` for l = 0..max_lag."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if max_lag < 0:
        raise DomainError("max_lag must be >= 0")
    if max_lag >= n:
        raise DomainError(f"max_lag={max_lag} must be smaller than the series length {n}")
    d = x - x.mean()
    return np.array([d[: n - l] @ d[l:] / (n - l) for l in range(max_lag + 1)])


def stats_of_model(model: WorkloadModel, max_lag: int = 0) -> WorkloadStats:
    if max_lag < 0:
        raise DomainError("max_lag must be >= 0")
    lags = np.arange(max_lag + 1)
    if isinstance(model, GaussianIID):
        autocov = np.where(lags == 0, model.variance, 0.0)
        return WorkloadStats(model.mean, model.variance, autocov)
    if isinstance(model, GaussianAR1):
        var = model.stationary_variance
        return WorkloadStats(model.mean, var, var * model.phi**lags)
    if isinstance(model, Uniform):
        var = (model.high - model.low) ** 2 / 12.0
        autocov = np.where(lags == 0, var, 0.0)
        return WorkloadStats(0.5 * (model.low + model.high), var, autocov)
    if isinstance(model, EmpiricalTrace):
        autocov = empirical_autocov(model.samples, max_lag)
        return WorkloadStats(float(model.samples.mean()), float(autocov[0]), autocov)
    raise TypeError(f"unknown workload model {type(model).__name__}")


def load_trace(path, bucket: int = 1, cycles_per_task: float = 1.0) -> EmpiricalTrace:
    """Read a ``timestamp_s,count`` request trace into per-bucket workload.

    Buckets are counted from the first timestamp; empty buckets inside the
    trace contribute zero requests.
    """
    path = Path(path)
    if bucket < 1 or int(bucket) != bucket:
        raise ParameterError("bucket must be a positive whole number of seconds")
    bucket = int(bucket)
    times, counts = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyTraceError(f"{path}: empty trace file")
        if [h.strip() for h in header] != ["timestamp_s", "count"]:
            raise TraceParseError(path, 1, "expected header 'timestamp_s,count'")
        prev = None
        for row in reader:
            lineno = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise TraceParseError(path, lineno, f"expected 2 fields, got {len(row)}")
            try:
                t, c = int(row[0]), int(row[1])
            except ValueError:
                raise TraceParseError(path, lineno, f"non-integer field in {row!r}") from None
            if c < 0:
                raise TraceParseError(path, lineno, "negative count")
            if prev is not None and t < prev:
                raise TraceParseError(path, lineno, "timestamps must be non-decreasing")
            prev = t
            times.append(t)
            counts.append(c)
    if not times:
        raise EmptyTraceError(f"{path}: trace has no data rows")
    t = np.asarray(times, dtype=np.int64)
    idx = (t - t[0]) // bucket
    per_bucket = np.bincount(idx, weights=np.asarray(counts, dtype=float))
    return EmpiricalTrace(per_bucket * cycles_per_task, cycles_per_task=cycles_per_task)


def write_trace(path, counts, start: int = 0) -> None:
    """Write per-second request counts in the ``timestamp_s,count`` format."""
    counts = np.asarray(counts)
    if np.any(counts != np.round(counts)) or np.any(counts < 0):
        raise ParameterError("trace counts must be non-negative integers")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp_s", "count"])
        for k, c in enumerate(counts.astype(np.int64)):
            w.writerow([start + k, int(c)])


def synthetic_request_counts(
    n_seconds: int = 3600, mean_rate: float = 6.0, seed: int = 0, phi: float = 0.95, burstiness: float = 0.3
) -> np.ndarray:
    """Bursty per-second request counts, a stand-in for a busy web-server hour.

    Poisson counts whose log-rate follows an AR(1) path, which gives the
    positive short-range correlation seen in real request logs.
    """
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n_seconds) * burstiness * math.sqrt(1 - phi**2)
    e[0] = rng.standard_normal() * burstiness
    log_rate = lfilter([1.0], [1.0, -phi], e)
    rate = mean_rate * np.exp(log_rate - 0.5 * burstiness**2)
    return rng.poisson(rate)
