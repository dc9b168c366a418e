"""Objectives and solvers for choosing the shallow capacity ``alpha``.

Three ways of estimating the expected shallow overflow are supported
(:class:`GD1`, :class:`QLE`, :class:`Sim`).  On top of them sit the
fractional objective ``overflow/(C - alpha)``, its Markov upper bound on the
average loss, the iterative ratio algorithm and a plain grid search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import fluid_sim, gd1, qle
from .errors import DomainError, ParameterError, ValidityError
from .fluid_sim import Scenario

# Gaussian loss-probability convexity window, in units of sigma above the mean
CONVEX_LO_SIGMAS = 0.07071
CONVEX_HI_SIGMAS = 1.4477

DEFAULT_GRID = 10_000
# feasible objectives are at most 1, so the relative gap to the grid optimum is at most eps/(1 - eps)
DEFAULT_EPSILON = 1e-3


@dataclass(frozen=True)
class GD1:
    n_max: int = gd1.N_MAX
    max_lag: int = 200

    name = "gd1"


@dataclass(frozen=True)
class QLE:
    config: qle.QleConfig = qle.QleConfig()

    name = "qle"


@dataclass(frozen=True, eq=False)
class Sim:
    """Simulated overflow; every call with the same scenario models reuses one workload realization."""

    n_slots: int = 1_000_000
    seed: int = 0
    warmup: float = fluid_sim.DEFAULT_WARMUP
    _cache: dict = field(default_factory=dict, repr=False)

    name = "sim"

    def workload(self, scenario: Scenario):
        key = scenario.models
        if key not in self._cache:
            if len(self._cache) >= 4:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = scenario.realize(self.n_slots, self.seed)
        return self._cache[key]

    def run(self, scenario: Scenario, alpha: float) -> fluid_sim.SimOutput:
        lam, notes = self.workload(scenario)
        return fluid_sim.simulate_series(
            lam,
            scenario.rho,
            alpha,
            scenario.budget,
            scenario.deadline,
            total_mean=scenario.total_mean,
            warmup_slots=fluid_sim.warmup_slots_for(self.n_slots, self.warmup),
            clamp_warnings=notes,
        )


OverflowMethod = GD1 | QLE | Sim


@dataclass
class OptimizationResult:
    alpha_star: float
    objective: float
    method: OverflowMethod
    iterations: list = field(default_factory=list)
    feasible: bool = True
    certificate: dict | None = None


class ConvexityRange(NamedTuple):
    lo: float
    hi: float
    # True when hi was clipped to the budget and is itself excluded
    hi_open: bool

    @property
    def empty(self) -> bool:
        return self.lo > self.hi or (self.hi_open and self.lo >= self.hi)

    def grid(self, n: int) -> np.ndarray:
        if self.empty:
            return np.empty(0)
        return np.linspace(self.lo, self.hi, n, endpoint=not self.hi_open)


def overflow_by_cloudlet(scenario: Scenario, alpha: float, method: OverflowMethod) -> np.ndarray:
    """Expected per-slot overflow of each shallow cloudlet at split ``alpha``."""
    if not 0 <= alpha <= scenario.budget:
        raise DomainError(f"alpha={alpha} outside [0, {scenario.budget}]")
    if isinstance(method, GD1):
        stats = scenario.stats(_lag_for(scenario, method))
        return np.array(
            [
                gd1.expected_overflow(st, r, alpha, scenario.deadline, method.n_max)
                for st, r in zip(stats, scenario.rho)
            ]
        )
    if isinstance(method, QLE):
        return np.array([qle.g(scenario, i, alpha, method.config) for i in range(scenario.num_cloudlets)])
    if isinstance(method, Sim):
        return method.run(scenario, alpha).per_cloudlet_overflow_mean
    raise TypeError(f"unknown overflow method {method!r}")


def _lag_for(scenario: Scenario, method: GD1) -> int:
    lag = method.max_lag
    for m in scenario.models:
        n = getattr(m, "samples", None)
        if n is not None:
            lag = min(lag, n.size - 1)
    return lag


def expected_overflow_sum(scenario: Scenario, alpha: float, method: OverflowMethod) -> float:
    return float(overflow_by_cloudlet(scenario, alpha, method).sum())


def fractional_objective(scenario: Scenario, alpha: float, method: OverflowMethod) -> float:
    if alpha >= scenario.budget:
        raise DomainError("fractional objective is undefined at alpha >= C")
    return expected_overflow_sum(scenario, alpha, method) / (scenario.budget - alpha)


def tail_cutoff(scenario: Scenario, epsilon_tail: float, n_slots: int = 100_000, seed: int = 0, lam=None) -> float:
    """Upper tail cutoff for the forwarded load, taken from an alpha = 0 run.

    At alpha = 0 every shallow buffer is empty, so the load reaching the deep
    cloudlet is the total input; the cutoff is its ``1 - epsilon_tail`` quantile.
    """
    if not 0 < epsilon_tail < 1:
        raise DomainError("epsilon_tail must lie in (0, 1)")
    if lam is None:
        lam, _ = scenario.realize(n_slots, seed)
    return float(np.quantile(lam.sum(axis=0), 1.0 - epsilon_tail))


def markov_bound(
    scenario: Scenario,
    alpha: float,
    method: OverflowMethod,
    epsilon_tail: float = 1e-3,
    tau: float | None = None,
    calib_slots: int = 100_000,
    calib_seed: int = 0,
) -> float:
    """Markov upper bound ``(tau - C) * overflow_sum / (C - alpha)`` on the average loss.

    ``tau`` is held fixed across alpha; pass it explicitly to skip the
    calibration run.  A cutoff below the budget gives a zero bound.
    """
    if alpha >= scenario.budget:
        raise DomainError("Markov bound is undefined at alpha >= C")
    if tau is None:
        if isinstance(method, Sim):
            tau = tail_cutoff(scenario, epsilon_tail, lam=method.workload(scenario)[0])
        else:
            tau = tail_cutoff(scenario, epsilon_tail, calib_slots, calib_seed)
    span = tau - scenario.budget
    if span <= 0:
        return 0.0
    return span * expected_overflow_sum(scenario, alpha, method) / (scenario.budget - alpha)


def convexity_range(scenario: Scenario) -> ConvexityRange:
    sigma = np.sqrt([st.variance for st in scenario.stats()])
    rho = scenario.rho
    lo = scenario.total_mean + float(np.max(CONVEX_LO_SIGMAS * sigma / rho))
    hi = scenario.total_mean + float(np.min(CONVEX_HI_SIGMAS * sigma / rho))
    lo = max(lo, 0.0)
    if hi >= scenario.budget:
        return ConvexityRange(lo, float(scenario.budget), True)
    return ConvexityRange(lo, hi, False)


def search_domain(scenario: Scenario, method: OverflowMethod, n_grid: int = DEFAULT_GRID) -> np.ndarray:
    """Grid the iterative solver scans: the convexity window for GD1, ``[0, C)`` otherwise."""
    if isinstance(method, GD1):
        return convexity_range(scenario).grid(n_grid)
    return np.linspace(0.0, scenario.budget, n_grid, endpoint=False)


class Landscape:
    """Per-cloudlet overflow tabulated on an alpha grid; GD1-invalid points hold NaN."""

    def __init__(self, scenario: Scenario, method: OverflowMethod, alphas: Sequence[float]):
        self.scenario = scenario
        self.method = method
        self.alphas = np.asarray(alphas, dtype=float)
        if np.any(self.alphas < 0) or np.any(self.alphas > scenario.budget):
            raise DomainError("grid values must lie in [0, C]")
        m = scenario.num_cloudlets
        if isinstance(method, QLE):
            # g is vectorized over alpha
            cols = [np.atleast_1d(qle.g(scenario, i, self.alphas, method.config)) for i in range(m)]
            self.per_cloudlet = np.column_stack(cols) if self.alphas.size else np.empty((0, m))
        else:
            rows = []
            for a in self.alphas:
                try:
                    rows.append(overflow_by_cloudlet(scenario, a, method))
                except ValidityError:
                    rows.append(np.full(m, np.nan))
            self.per_cloudlet = np.array(rows).reshape(len(self.alphas), m)
        self.total = self.per_cloudlet.sum(axis=1)
        self.valid = ~np.isnan(self.total)

    def feasible(self, r: float = 1.0, thresholds: Sequence[float] | None = None) -> np.ndarray:
        """Points meeting ``overflow <= (C - alpha)/r`` and the optional per-cloudlet caps."""
        C = self.scenario.budget
        ok = self.valid.copy()
        with np.errstate(invalid="ignore"):
            ok &= self.total <= (C - self.alphas) / r
            if thresholds is not None:
                th = np.asarray(thresholds, dtype=float)
                if th.shape != (self.scenario.num_cloudlets,):
                    raise ParameterError("one threshold per cloudlet required")
                prob = self.per_cloudlet / self.scenario.means
                ok &= np.all(prob <= th, axis=1)
        return ok

    def objective(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.alphas < self.scenario.budget, self.total / (self.scenario.budget - self.alphas), np.inf)


def _argmin_first(values: np.ndarray, mask: np.ndarray) -> int | None:
    if not mask.any():
        return None
    v = np.where(mask, values, np.inf)
    return int(np.argmin(v))


def solve_subproblem(
    scenario: Scenario,
    r: float,
    method: OverflowMethod,
    thresholds: Sequence[float] | None = None,
    n_grid: int = DEFAULT_GRID,
    landscape: Landscape | None = None,
) -> float | None:
    """Minimize the overflow sum subject to ``overflow <= (C - alpha)/r``; ``None`` if infeasible."""
    if not r > 0:
        raise DomainError("r must be positive")
    if landscape is None:
        landscape = Landscape(scenario, method, search_domain(scenario, method, n_grid))
    k = _argmin_first(landscape.total, landscape.feasible(r, thresholds))
    return None if k is None else float(landscape.alphas[k])


def algorithm1(
    scenario: Scenario,
    method: OverflowMethod,
    epsilon_step: float = DEFAULT_EPSILON,
    thresholds: Sequence[float] | None = None,
    n_grid: int = DEFAULT_GRID,
) -> OptimizationResult:
    """Iterative ratio method for ``min overflow/(C - alpha)``.

    Starts from ``alpha = C`` and ``r = 1 + eps``.  Each round solves the
    constrained subproblem at the current ``r`` and raises ``r`` to the
    reciprocal of the achieved ratio plus ``eps``; it stops when the
    subproblem becomes infeasible.  ``iterations`` lists the ``(r, alpha)``
    pair of every accepted round.
    """
    if not epsilon_step > 0:
        raise DomainError("epsilon_step must be positive")
    land = Landscape(scenario, method, search_domain(scenario, method, n_grid))
    C = scenario.budget
    r = 1.0 + epsilon_step
    alpha_hat = float(C)
    trace = []
    # the ratio strictly improves each round, so the grid bounds the loop
    for _ in range(land.alphas.size + 1):
        k = _argmin_first(land.total, land.feasible(r, thresholds))
        if k is None:
            break
        alpha_hat = float(land.alphas[k])
        trace.append((r, alpha_hat))
        total = float(land.total[k])
        if total <= 0:
            break
        r = (C - alpha_hat) / total + epsilon_step
    if not trace:
        return OptimizationResult(float(C), math.inf, method, [], feasible=False)
    return OptimizationResult(alpha_hat, total / (C - alpha_hat), method, trace, feasible=True)


def grid_search(
    scenario: Scenario,
    method: OverflowMethod,
    grid: Sequence[float],
    objective: str = "fractional",
    thresholds: Sequence[float] | None = None,
) -> OptimizationResult:
    """Best C1-feasible grid point; ties go to the smaller alpha.

    ``objective="avg_loss"`` ranks points by simulated average loss and
    needs a :class:`Sim` method.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ParameterError("grid must be non-empty")
    if np.any(grid < 0) or np.any(grid >= scenario.budget):
        raise DomainError("grid values must lie in [0, C)")
    order = np.argsort(grid, kind="stable")
    land = Landscape(scenario, method, grid[order])
    if objective == "fractional":
        values = land.objective()
    elif objective == "avg_loss":
        if not isinstance(method, Sim):
            raise ParameterError("avg_loss objective needs the sim method")
        values = np.array([method.run(scenario, a).avg_loss for a in land.alphas])
    else:
        raise ParameterError(f"unknown objective {objective!r}")
    feasible = land.feasible(1.0, thresholds)
    k = _argmin_first(values, feasible)
    if k is None:
        k = _argmin_first(values, land.valid)
        if k is None:
            return OptimizationResult(float(land.alphas[0]), math.inf, method, [], feasible=False)
        return OptimizationResult(float(land.alphas[k]), float(values[k]), method, [], feasible=False)
    return OptimizationResult(float(land.alphas[k]), float(values[k]), method, [], feasible=True)


def optimize_bufferless(
    scenario: Scenario,
    n_slots: int = 100_000,
    seed: int = 0,
    grid: Sequence[float] | None = None,
) -> OptimizationResult:
    """With no shallow buffers, put all capacity at the deep cloudlet.

    The answer ``alpha = 0`` is analytic; the attached certificate is a
    common-random-number sweep showing the loss does not decrease in alpha
    (steps down are allowed up to two standard errors).
    """
    if scenario.deadline != 0:
        raise DomainError("bufferless optimum needs deadline D = 0")
    if grid is None:
        grid = np.linspace(0.0, scenario.budget, 41)
    points = fluid_sim.sweep(scenario, grid, n_slots, seed)
    loss = np.array([out.avg_loss for _, out in points])
    se = np.array([out.stderr for _, out in points])
    drops = loss[:-1] - loss[1:]
    allowance = 2.0 * np.maximum(se[:-1], se[1:])
    certificate = {
        "alphas": np.asarray(grid, dtype=float),
        "avg_loss": loss,
        "stderr": se,
        "max_drop": float(drops.max()) if drops.size else 0.0,
        "non_decreasing": bool(np.all(drops <= allowance + 1e-12)),
    }
    method = Sim(n_slots, seed)
    zero = points[0][1] if grid[0] == 0 else fluid_sim.simulate(scenario, 0.0, n_slots, seed)
    return OptimizationResult(0.0, zero.avg_loss, method, [], feasible=True, certificate=certificate)
