"""Experiment drivers behind the CLI: sweeps, optimizations over D and the paper-style figures.

Each driver returns a list of row dicts; writing files is left to the caller.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from . import optimizer as opt
from . import qle
from . import workload as wl
from .fluid_sim import Scenario

PAPER_BUDGET = 20.0
PAPER_MEANS = (4.0, 8.0, 6.0)
PAPER_VARIANCE = 1.0
PAPER_PHI = 0.3
PROCESSES = ("ar", "gaussian", "uniform")
PAPER_D_LIST = (0.0, 0.05, 0.1, 0.15, 0.2)


def paper_models(process: str, literal_autocov: bool = False) -> tuple:
    if process == "gaussian":
        return tuple(wl.GaussianIID(m, PAPER_VARIANCE) for m in PAPER_MEANS)
    if process == "ar":
        return tuple(wl.GaussianAR1(m, PAPER_VARIANCE, PAPER_PHI, literal_autocov) for m in PAPER_MEANS)
    if process == "uniform":
        return tuple(wl.Uniform.matched(m, PAPER_VARIANCE) for m in PAPER_MEANS)
    raise ValueError(f"unknown process {process!r}")


def paper_scenario(process: str, deadline: float = 0.0) -> Scenario:
    return Scenario(PAPER_BUDGET, deadline, paper_models(process))


def make_method(name: str, n_slots: int, seed: int, kappa_coeff: float = 0.0) -> opt.OverflowMethod:
    if name == "gd1":
        return opt.GD1()
    if name == "qle":
        return opt.QLE(qle.QleConfig(kappa_coeff=kappa_coeff))
    if name == "sim":
        return opt.Sim(n_slots, seed)
    raise ValueError(f"unknown method {name!r}")


def sweep_rows(
    scenario: Scenario, alpha_grid: Sequence[float], n_slots: int, seed: int, epsilon_tail: float = 1e-3
) -> list[dict]:
    """Simulated loss and the Markov bound (simulated numerator) along ``alpha_grid``."""
    sim = opt.Sim(n_slots, seed)
    lam, _ = sim.workload(scenario)
    tau = opt.tail_cutoff(scenario, epsilon_tail, lam=lam)
    rows = []
    for a in alpha_grid:
        out = sim.run(scenario, float(a))
        ub = opt.markov_bound(scenario, a, sim, tau=tau) if a < scenario.budget else math.nan
        rows.append(
            {
                "alpha": float(a),
                "avg_loss": out.avg_loss,
                "loss_probability": out.loss_probability,
                "ub_markov": ub,
                "stderr": out.stderr,
            }
        )
    return rows


def optimize(
    scenario: Scenario,
    method: opt.OverflowMethod,
    solver: str = "algorithm1",
    epsilon_step: float = opt.DEFAULT_EPSILON,
    thresholds: Sequence[float] | None = None,
    grid_points: int = opt.DEFAULT_GRID,
    grid_step: float | None = None,
) -> opt.OptimizationResult:
    if solver == "algorithm1":
        return opt.algorithm1(scenario, method, epsilon_step, thresholds, grid_points)
    if solver == "grid":
        if grid_step is not None:
            grid = np.arange(0.0, scenario.budget, grid_step)
        else:
            grid = np.linspace(0.0, scenario.budget, grid_points, endpoint=False)
        return opt.grid_search(scenario, method, grid, thresholds=thresholds)
    raise ValueError(f"unknown solver {solver!r}")


def d_sweep_rows(
    scenario: Scenario,
    d_list: Iterable[float],
    methods: Sequence[str],
    n_slots: int,
    seed: int,
    kappa_coeff: float = 0.0,
    sim_grid_step: float = 0.05,
    epsilon_step: float = opt.DEFAULT_EPSILON,
) -> tuple[list[dict], bool]:
    """Optimum alpha per (D, method); the simulated loss at each optimum uses one shared realization.

    The simulation method is solved by grid search, the analytic methods by
    the iterative ratio algorithm.  Returns the rows and whether every
    optimization found a feasible point.
    """
    judge = opt.Sim(n_slots, seed)
    rows, all_feasible = [], True
    for d in d_list:
        sc = scenario.with_deadline(float(d))
        for name in methods:
            method = judge if name == "sim" else make_method(name, n_slots, seed, kappa_coeff)
            if name == "sim":
                res = optimize(sc, method, "grid", grid_step=sim_grid_step)
            else:
                res = optimize(sc, method, "algorithm1", epsilon_step)
            all_feasible &= res.feasible
            a = min(res.alpha_star, sc.budget)
            rows.append(
                {
                    "D": float(d),
                    "method": name,
                    "alpha_star": res.alpha_star,
                    "objective": res.objective,
                    "loss_probability_at_star": judge.run(sc, a).loss_probability,
                }
            )
    return rows, all_feasible


def trace_stats_rows(model: wl.EmpiricalTrace, max_lag: int) -> tuple[list[dict], dict]:
    st = wl.stats_of_model(model, max_lag)
    rows = [{"lag": lag, "autocov": float(c)} for lag, c in enumerate(st.autocov)]
    summary = {"n_samples": int(model.samples.size), "mean": st.mean, "variance": st.variance}
    return rows, summary


def fig2_rows(n_slots: int, seed: int, kappa_coeff: float = 0.0, step: float = 0.25, deadline: float = 0.1) -> list[dict]:
    """Loss probability against the two upper bounds (simulated and QLE numerators), all over the total mean."""
    rows = []
    grid = np.arange(0.0, PAPER_BUDGET, step)
    for process in PROCESSES:
        sc = paper_scenario(process, deadline)
        sim = opt.Sim(n_slots, seed)
        est = opt.QLE(qle.QleConfig(kappa_coeff=kappa_coeff))
        tau = opt.tail_cutoff(sc, 1e-3, lam=sim.workload(sc)[0])
        for a in grid:
            out = sim.run(sc, float(a))
            rows.append(
                {
                    "process": process,
                    "alpha": float(a),
                    "loss_probability": out.loss_probability,
                    "stderr": out.stderr / sc.total_mean,
                    "ub_sim": opt.markov_bound(sc, a, sim, tau=tau) / sc.total_mean,
                    "ub_qle": opt.markov_bound(sc, a, est, tau=tau) / sc.total_mean,
                }
            )
    return rows


def fig3_rows(n_slots: int, seed: int, n_points: int = 41) -> list[dict]:
    rows = []
    grid = np.linspace(0.0, PAPER_BUDGET, n_points)
    for process in PROCESSES:
        sc = paper_scenario(process, 0.0)
        sim = opt.Sim(n_slots, seed)
        for a in grid:
            out = sim.run(sc, float(a))
            rows.append(
                {
                    "process": process,
                    "alpha": float(a),
                    "loss_probability": out.loss_probability,
                    "stderr": out.stderr / sc.total_mean,
                }
            )
    return rows


def fig45_rows(
    n_slots: int,
    seed: int,
    d_list: Sequence[float] = PAPER_D_LIST,
    kappa_coeff: float = 0.0,
    sim_grid_step: float = 0.1,
    epsilon_step: float = opt.DEFAULT_EPSILON,
) -> tuple[list[dict], bool]:
    rows, ok = [], True
    for process in PROCESSES:
        sub, feasible = d_sweep_rows(
            paper_scenario(process),
            d_list,
            ("sim", "gd1", "qle"),
            n_slots,
            seed,
            kappa_coeff,
            sim_grid_step,
            epsilon_step,
        )
        ok &= feasible
        rows += [{"process": process, **r} for r in sub]
    return rows, ok


# requests/s per cloudlet for the synthetic stand-in traces, one Gigacycle each
TRACE_RATES = (400.0, 800.0, 600.0)


def synthetic_traces(seconds: int = 3600, seed: int = 0, rates: Sequence[float] = TRACE_RATES) -> list[np.ndarray]:
    """Per-second request counts, one hour per cloudlet, from independent streams."""
    return [
        wl.synthetic_request_counts(seconds, mean_rate=m, seed=seed + i, burstiness=0.05)
        for i, m in enumerate(rates)
    ]


def fig6(
    models: Sequence[wl.EmpiricalTrace],
    budget: float | None,
    n_slots: int,
    seed: int,
    d_list: Sequence[float] = PAPER_D_LIST,
    kappa_coeff: float = 0.0,
    sim_grid_step: float | None = None,
    epsilon_step: float = opt.DEFAULT_EPSILON,
    n_points: int = 41,
) -> tuple[list[dict], list[dict], bool]:
    """Trace-driven loss curve at D = 0 and optima against D.

    Without an explicit budget the random-input headroom is reused:
    ``C = total_mean * 20/18``.  The simulation grid defaults to 200 points.
    """
    if budget is None:
        total = sum(wl.mean_of(m) for m in models)
        budget = total * PAPER_BUDGET / sum(PAPER_MEANS)
    if sim_grid_step is None:
        sim_grid_step = budget / 200
    sc = Scenario(budget, 0.0, models)
    sim = opt.Sim(n_slots, seed)
    curve = []
    for a in np.linspace(0.0, budget, n_points):
        out = sim.run(sc, float(a))
        curve.append({"alpha": float(a), "loss_probability": out.loss_probability, "stderr": out.stderr / sc.total_mean})
    rows, ok = d_sweep_rows(sc, d_list, ("sim", "gd1", "qle"), n_slots, seed, kappa_coeff, sim_grid_step, epsilon_step)
    return curve, rows, ok
