"""Slotted fluid simulation of M finite-buffer shallow queues feeding one bufferless deep server.

Per slot, cloudlet ``i`` with service ``s = rho_i*alpha`` and buffer
``B = rho_i*alpha*D`` does::

    x        = Q + lambda - s
    overflow = (x - B)+
    Q        = min(B, x+)

and the deep cloudlet loses ``(sum_i overflow_i - (C - alpha))+``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
from numba import njit

from . import workload as wl
from .errors import DomainError, ParameterError

DEFAULT_WARMUP = 0.01
N_BATCHES = 50


@dataclass(frozen=True)
class Scenario:
    """A planning instance: budget ``C`` (Gigacycles/s), deadline ``D`` (s) and one model per cloudlet."""

    budget: float
    deadline: float
    models: tuple
    require_stable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        if not self.models:
            raise ParameterError("a scenario needs at least one cloudlet")
        if not self.budget > 0:
            raise ParameterError(f"budget must be positive, got {self.budget}")
        if self.deadline < 0:
            raise ParameterError(f"deadline must be >= 0, got {self.deadline}")
        if np.any(self.means <= 0):
            raise ParameterError("every cloudlet needs a positive mean workload")
        if self.require_stable and self.total_mean > self.budget:
            raise ParameterError(
                f"unstable scenario: total mean workload {self.total_mean:g} exceeds budget {self.budget:g}"
            )

    @property
    def num_cloudlets(self) -> int:
        return len(self.models)

    @cached_property
    def means(self) -> np.ndarray:
        return np.array([wl.mean_of(m) for m in self.models])

    @property
    def total_mean(self) -> float:
        return float(self.means.sum())

    @cached_property
    def rho(self) -> np.ndarray:
        return self.means / self.means.sum()

    @cached_property
    def marginals(self) -> tuple:
        return tuple(wl.marginal(m) for m in self.models)

    def stats(self, max_lag: int = 0) -> tuple:
        return tuple(_stats(m, max_lag) for m in self.models)

    def with_deadline(self, deadline: float) -> "Scenario":
        return replace(self, deadline=deadline)

    def realize(self, n_slots: int, seed: int = 0) -> tuple[np.ndarray, tuple]:
        """Workload matrix (M x n_slots); cloudlet i uses stream ``seed + i``."""
        rows, notes = [], []
        for i, model in enumerate(self.models):
            x, frac = wl._draw(model, n_slots, seed + i)
            if frac > wl.CLAMP_WARN_FRACTION:
                notes.append(f"cloudlet {i}: {frac:.3g} of samples clamped at 0")
            rows.append(x)
        return np.vstack(rows), tuple(notes)


@lru_cache(maxsize=256)
def _stats(model, max_lag):
    return wl.stats_of_model(model, max_lag)


@dataclass(frozen=True, eq=False)
class SimOutput:
    alpha: float
    avg_loss: float
    loss_probability: float
    per_cloudlet_overflow_mean: np.ndarray
    per_cloudlet_avg_queue: np.ndarray
    stderr: float
    n_slots: int
    clamp_warnings: tuple = ()
    traces: dict | None = field(default=None, repr=False)

    @property
    def overflow_sum(self) -> float:
        return float(self.per_cloudlet_overflow_mean.sum())


@njit(cache=True)
def _recursion(lam, service, buffer, overflow, queue):
    m, n = lam.shape
    for i in range(m):
        s = service[i]
        b = buffer[i]
        q = 0.0
        for k in range(n):
            x = q + lam[i, k] - s
            if x > b:
                overflow[i, k] = x - b
                q = b
            elif x > 0.0:
                overflow[i, k] = 0.0
                q = x
            else:
                overflow[i, k] = 0.0
                q = 0.0
            queue[i, k] = q


def _batch_stderr(x: np.ndarray) -> float:
    n_batches = min(N_BATCHES, x.size)
    if n_batches < 2:
        return math.nan
    size = x.size // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def simulate_series(
    lam: np.ndarray,
    rho: Sequence[float],
    alpha: float,
    budget: float,
    deadline: float,
    total_mean: float | None = None,
    warmup_slots: int = 0,
    keep_traces: bool = False,
    clamp_warnings: tuple = (),
) -> SimOutput:
    """Run the recursion on a given workload matrix ``lam`` (M x N)."""
    lam = np.ascontiguousarray(lam, dtype=float)
    if lam.ndim != 2:
        raise ParameterError("lam must be a 2-D (cloudlets x slots) array")
    if not 0 <= alpha <= budget:
        raise DomainError(f"alpha={alpha} outside [0, {budget}]")
    rho = np.asarray(rho, dtype=float)
    m, n = lam.shape
    if not 0 <= warmup_slots < n:
        raise ParameterError("warm-up must leave at least one slot")
    service = rho * alpha
    buffer = service * deadline
    if deadline == 0:
        queue = np.zeros_like(lam)
        overflow = np.maximum(lam - service[:, None], 0.0)
    else:
        overflow = np.empty_like(lam)
        queue = np.empty_like(lam)
        _recursion(lam, service, buffer, overflow, queue)
    loss = np.maximum(overflow.sum(axis=0) - (budget - alpha), 0.0)
    w = slice(warmup_slots, None)
    avg_loss = float(loss[w].mean())
    if total_mean is None:
        total_mean = float(lam.mean(axis=1).sum())
    traces = None
    if keep_traces:
        traces = {"lam": lam, "overflow": overflow, "queue": queue, "loss": loss}
    return SimOutput(
        alpha=float(alpha),
        avg_loss=avg_loss,
        loss_probability=avg_loss / total_mean,
        per_cloudlet_overflow_mean=overflow[:, w].mean(axis=1),
        per_cloudlet_avg_queue=queue[:, w].mean(axis=1),
        stderr=_batch_stderr(loss[w]),
        n_slots=n - warmup_slots,
        clamp_warnings=clamp_warnings,
        traces=traces,
    )


def warmup_slots_for(n_slots: int, warmup: float = DEFAULT_WARMUP) -> int:
    if not 0 <= warmup < 1:
        raise ParameterError("warm-up fraction must lie in [0, 1)")
    return int(n_slots * warmup)


def simulate(
    scenario: Scenario,
    alpha: float,
    n_slots: int,
    seed: int = 0,
    warmup: float = DEFAULT_WARMUP,
    keep_traces: bool = False,
) -> SimOutput:
    """Simulate ``n_slots`` slots at capacity split ``alpha`` and return time averages."""
    if not 0 <= alpha <= scenario.budget:
        raise DomainError(f"alpha={alpha} outside [0, {scenario.budget}]")
    lam, notes = scenario.realize(n_slots, seed)
    return simulate_series(
        lam,
        scenario.rho,
        alpha,
        scenario.budget,
        scenario.deadline,
        total_mean=scenario.total_mean,
        warmup_slots=warmup_slots_for(n_slots, warmup),
        keep_traces=keep_traces,
        clamp_warnings=notes,
    )


def sweep(
    scenario: Scenario,
    alpha_grid: Sequence[float],
    n_slots: int,
    seed: int = 0,
    warmup: float = DEFAULT_WARMUP,
) -> list[tuple[float, SimOutput]]:
    """Simulate every grid point on one shared workload realization."""
    for a in alpha_grid:
        if not 0 <= a <= scenario.budget:
            raise DomainError(f"alpha={a} outside [0, {scenario.budget}]")
    lam, notes = scenario.realize(n_slots, seed)
    skip = warmup_slots_for(n_slots, warmup)
    return [
        (
            float(a),
            simulate_series(
                lam,
                scenario.rho,
                a,
                scenario.budget,
                scenario.deadline,
                total_mean=scenario.total_mean,
                warmup_slots=skip,
                clamp_warnings=notes,
            ),
        )
        for a in alpha_grid
    ]
