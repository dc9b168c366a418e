"""Stop-loss expectations E(X - t)+ for the scalar laws used by the planner."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, ParameterError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Gaussian:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ParameterError(f"Gaussian variance must be > 0, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(self.mean, self.std, size=n)


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        # low == high is a point mass; used for deterministic inputs
        if not self.low <= self.high:
            raise ParameterError(f"Uniform needs low <= high, got [{self.low}, {self.high}]")

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=n)


@dataclass(frozen=True, eq=False)
class Empirical:
    samples: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1 or x.size == 0:
            raise ParameterError("Empirical distribution needs a non-empty 1-D sample")
        object.__setattr__(self, "samples", x)

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.samples, size=n, replace=True)


ScalarDistribution = Gaussian | Uniform | Empirical


def stop_loss(dist: ScalarDistribution, t):
    """Expected excess ``E(X - t)+`` of ``dist`` over the retention ``t``.

    ``t`` may be a scalar or an array; the result has the same shape.
    """
    t_arr = np.asarray(t, dtype=float)
    if isinstance(dist, Gaussian):
        sigma = dist.std
        z = (dist.mean - t_arr) / sigma
        out = (dist.mean - t_arr) * ndtr(z) + sigma * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    elif isinstance(dist, Uniform):
        lo, hi = dist.low, dist.high
        width = hi - lo
        out = np.where(t_arr <= lo, dist.mean - t_arr, 0.0)
        if width > 0:
            inside = (t_arr > lo) & (t_arr < hi)
            out = np.where(inside, (hi - t_arr) ** 2 / (2.0 * width), out)
    elif isinstance(dist, Empirical):
        x = np.sort(dist.samples)
        n = x.size
        # suffix sums give mean((x - t)+) in O(log n) per threshold
        suffix = np.concatenate([np.cumsum(x[::-1])[::-1], [0.0]])
        k = np.searchsorted(x, t_arr, side="right")
        out = (suffix[k] - (n - k) * t_arr) / n
    else:
        raise TypeError(f"unsupported distribution {type(dist).__name__}")
    return float(out) if out.ndim == 0 else out


class MCEstimate(NamedTuple):
    value: float
    stderr: float


def max_mix_loss_mc(
    dists: Sequence[ScalarDistribution],
    rho: Sequence[float],
    alpha: float,
    C: float,
    n_samples: int,
    seed: int = 0,
) -> MCEstimate:
    """Monte Carlo estimate of ``E((sum_i max(X_i, rho_i*alpha) - C)+)``.

    Draws for component ``i`` come from ``default_rng(seed + i)``, so repeated
    calls with the same seed share their samples across ``alpha``.
    """
    if n_samples <= 0:
        raise DomainError("n_samples must be positive")
    if not 0 <= alpha <= C:
        raise DomainError(f"alpha={alpha} outside [0, {C}]")
    if len(dists) != len(rho):
        raise ParameterError("dists and rho differ in length")
    total = np.zeros(n_samples)
    for i, (dist, r) in enumerate(zip(dists, rho)):
        x = dist.sample(n_samples, np.random.default_rng(seed + i))
        total += np.maximum(x, r * alpha)
    loss = np.maximum(total - C, 0.0)
    stderr = float(loss.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else math.inf
    return MCEstimate(float(loss.mean()), stderr)
