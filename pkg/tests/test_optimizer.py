import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogcap import experiments as ex
from fogcap import optimizer as opt
from fogcap import qle
from fogcap import workload as wl
from fogcap.errors import DomainError, ModelError, ParameterError, ValidityError
from fogcap.fluid_sim import Scenario

QLE0 = opt.QLE(qle.PLAIN)


@pytest.fixture(scope="module")
def paper():
    return ex.paper_scenario("gaussian", 0.1)


def test_qle_zero_alpha_forwards_total(paper):
    assert opt.expected_overflow_sum(paper, 0.0, QLE0) == pytest.approx(18.0)


def test_gd1_large_alpha_vanishes():
    sc = Scenario(100, 0.1, (wl.GaussianIID(4, 1), wl.GaussianIID(8, 1)))
    assert opt.expected_overflow_sum(sc, 99.0, opt.GD1()) < 1e-30


def test_gd1_invalid_below_total_mean(paper):
    with pytest.raises(ValidityError):
        opt.expected_overflow_sum(paper, 17.0, opt.GD1())


@pytest.mark.xfail(
    strict=True,
    reason="the linear queue estimate is zero at alpha >= total mean + kappa, while the simulated "
    "queues at alpha = 19 are not, so qle undershoots the simulated overflow by about a third",
)
@pytest.mark.parametrize("kappa_coeff", [0.0, 1.0])
def test_sim_vs_qle_at_19(paper, kappa_coeff):
    sim = opt.Sim(10**6, 0)
    out = sim.run(paper, 19.0)
    est = opt.expected_overflow_sum(paper, 19.0, opt.QLE(qle.QleConfig(kappa_coeff)))
    se = out.stderr  # batch-means error of the loss; the overflow error is of the same order
    assert abs(out.overflow_sum - est) <= 3 * se + 0.1 * out.overflow_sum


def test_fractional_objective_hand_value():
    sc = Scenario(20, 0.1, (wl.Uniform(7, 9),))
    assert opt.fractional_objective(sc, 8.0, QLE0) == pytest.approx(0.01 / 12)
    with pytest.raises(DomainError):
        opt.fractional_objective(sc, 20.0, QLE0)


def test_zero_overflow_objective_and_bound():
    sc = Scenario(20, 0.1, (wl.Uniform(4, 4), wl.Uniform(8, 8)))
    assert opt.fractional_objective(sc, 15.0, QLE0) == 0.0
    assert opt.markov_bound(sc, 15.0, QLE0) == 0.0


def test_markov_bound_zero_when_cutoff_below_budget(paper):
    assert opt.markov_bound(paper, 10.0, QLE0, tau=19.0) == 0.0


def test_tail_cutoff_validation(paper):
    with pytest.raises(DomainError):
        opt.tail_cutoff(paper, 0.0)
    tau = opt.tail_cutoff(paper, 1e-3, n_slots=200_000)
    # total input is N(18, 3); its 0.999 quantile is 18 + 3.09*sqrt(3)
    assert tau == pytest.approx(18 + 3.0902 * math.sqrt(3), abs=0.1)


@given(tau=st.floats(20.5, 40), step=st.sampled_from([0.1, 0.25, 0.5]))
@settings(max_examples=20, deadline=None)
def test_bound_and_fractional_share_argmin(paper, tau, step):
    grid = np.arange(0, 20, step)
    b = [opt.markov_bound(paper, a, QLE0, tau=tau) for a in grid]
    f = [opt.fractional_objective(paper, a, QLE0) for a in grid]
    assert int(np.argmin(b)) == int(np.argmin(f))


def test_convexity_range_paper(paper):
    r = opt.convexity_range(paper)
    assert r.lo == pytest.approx(18 + 0.07071 / (4 / 18))
    assert r.hi == 20 and r.hi_open


def test_convexity_range_single_cloudlet():
    r = opt.convexity_range(Scenario(20, 0, (wl.GaussianIID(8, 1),)))
    assert (r.lo, r.hi, r.hi_open) == (pytest.approx(8.07071), pytest.approx(9.4477), False)


def test_convexity_range_collapses_with_sigma():
    widths = []
    for var in (1.0, 1e-2, 1e-4):
        r = opt.convexity_range(Scenario(20, 0, (wl.GaussianIID(8, var),)))
        widths.append(r.hi - 8)
        assert r.lo >= 8
    assert widths[2] < widths[1] < widths[0] and widths[2] < 0.02


def test_convexity_range_can_be_empty():
    # very unequal sigma/rho makes the lower offset exceed the upper one
    sc = Scenario(100, 0, (wl.GaussianIID(1, 25.0), wl.GaussianIID(50, 1e-4)))
    r = opt.convexity_range(sc)
    assert r.empty and r.grid(10).size == 0


def test_gd1_numerator_convex_on_range(paper):
    grid = opt.convexity_range(paper).grid(201)
    total = opt.Landscape(paper, opt.GD1(), grid).total
    assert np.min(np.diff(total, 2)) >= -1e-6


def test_subproblem_infeasible_for_huge_r(paper):
    assert opt.solve_subproblem(paper, 1e12, QLE0, n_grid=2000) is None
    with pytest.raises(DomainError):
        opt.solve_subproblem(paper, 0.0, QLE0)


def test_subproblem_unit_thresholds_vacuous(paper):
    a = opt.solve_subproblem(paper, 1.001, QLE0, n_grid=2000)
    b = opt.solve_subproblem(paper, 1.001, QLE0, thresholds=[1, 1, 1], n_grid=2000)
    assert a == b is not None


def test_subproblem_gd1_first_iterate_on_feasibility_boundary(paper):
    r = 1.001
    land = opt.Landscape(paper, opt.GD1(), opt.search_domain(paper, opt.GD1(), 10_000))
    feas = land.feasible(r)
    a = opt.solve_subproblem(paper, r, opt.GD1(), landscape=land)
    # numerator is non-increasing, so the minimizer is the largest feasible grid point
    assert a == land.alphas[feas].max()


def test_thresholds_restrict(paper):
    loose = opt.algorithm1(paper, QLE0, n_grid=2000)
    prob = opt.Landscape(paper, QLE0, [loose.alpha_star]).per_cloudlet[0] / paper.means
    th = 0.8 * prob
    tight = opt.algorithm1(paper, QLE0, thresholds=th, n_grid=2000)
    assert tight.feasible and tight.alpha_star > loose.alpha_star
    assert np.all(opt.Landscape(paper, QLE0, [tight.alpha_star]).per_cloudlet[0] / paper.means <= th)
    # caps nobody can meet leave the problem infeasible
    assert not opt.algorithm1(paper, QLE0, thresholds=0.3 * prob, n_grid=2000).feasible
    with pytest.raises(ParameterError):
        opt.algorithm1(paper, QLE0, thresholds=[0.1, 0.1])


@pytest.mark.parametrize("method", [opt.GD1(), QLE0], ids=["gd1", "qle"])
@pytest.mark.parametrize("d", [0.05, 0.1, 0.2])
def test_algorithm1_near_grid_optimum(method, d):
    sc = ex.paper_scenario("ar", d)
    res = opt.algorithm1(sc, method)
    oracle = opt.grid_search(sc, method, opt.search_domain(sc, method, 10_000))
    assert res.feasible and oracle.feasible
    assert res.objective <= oracle.objective * (1 + opt.DEFAULT_EPSILON)
    rs = [r for r, _ in res.iterations]
    assert all(b > a for a, b in zip(rs, rs[1:]))
    total = opt.expected_overflow_sum(sc, res.alpha_star, method)
    assert total <= sc.budget - res.alpha_star


def test_algorithm1_coarse_step_gap(paper):
    eps = 0.01
    res = opt.algorithm1(paper, QLE0, epsilon_step=eps)
    oracle = opt.grid_search(paper, QLE0, opt.search_domain(paper, QLE0, 10_000))
    # on stopping no grid point beats 1/(1/objective + eps), so objective < best/(1 - eps*best)
    assert res.objective <= oracle.objective / (1 - eps * oracle.objective)


@pytest.mark.xfail(strict=True, reason="with eps = 0.01 the ratio gap can reach eps*objective, above 1e-3 here")
def test_algorithm1_coarse_step_within_tenth_percent(paper):
    res = opt.algorithm1(paper, QLE0, epsilon_step=0.01)
    oracle = opt.grid_search(paper, QLE0, opt.search_domain(paper, QLE0, 10_000))
    assert res.objective <= 1.001 * oracle.objective


def test_algorithm1_infeasible_from_start():
    # C barely above the total mean: even alpha = 0 forwards more than C/(1+eps)
    sc = Scenario(18.01, 0.0, (wl.GaussianIID(4, 4), wl.GaussianIID(8, 4), wl.GaussianIID(6, 4)))
    res = opt.algorithm1(sc, QLE0, n_grid=2000)
    assert not res.feasible and res.alpha_star == sc.budget and res.iterations == []
    assert math.isinf(res.objective)
    with pytest.raises(DomainError):
        opt.algorithm1(sc, QLE0, epsilon_step=0)


def test_grid_search_basics(paper):
    one = opt.grid_search(paper, QLE0, [18.5])
    assert one.alpha_star == 18.5 and one.feasible
    with pytest.raises(DomainError):
        opt.grid_search(paper, QLE0, [20.0])
    with pytest.raises(ParameterError):
        opt.grid_search(paper, QLE0, [])
    with pytest.raises(ParameterError):
        opt.grid_search(paper, QLE0, [1.0], objective="avg_loss")


def test_grid_search_all_infeasible_best_effort():
    sc = Scenario(18.01, 0.0, (wl.GaussianIID(4, 4), wl.GaussianIID(8, 4), wl.GaussianIID(6, 4)))
    res = opt.grid_search(sc, QLE0, np.linspace(0, 18, 50))
    assert not res.feasible and 0 <= res.alpha_star < sc.budget and math.isfinite(res.objective)


def test_grid_search_ties_to_smaller_alpha():
    sc = Scenario(20, 0.1, (wl.Uniform(4, 4), wl.Uniform(8, 8)))
    res = opt.grid_search(sc, QLE0, [19.0, 13.0, 15.0])
    assert res.alpha_star == 13.0 and res.objective == 0.0


def test_bufferless_avg_loss_argmin_zero():
    sc = ex.paper_scenario("uniform", 0.0)
    res = opt.grid_search(sc, opt.Sim(100_000, 0), np.linspace(0, 19.5, 40), objective="avg_loss")
    assert res.alpha_star == 0.0 or res.objective == pytest.approx(
        opt.Sim(100_000, 0).run(sc, 0.0).avg_loss, rel=1e-12
    )


def test_optimize_bufferless(paper):
    res = opt.optimize_bufferless(ex.paper_scenario("gaussian", 0.0), n_slots=50_000)
    assert res.alpha_star == 0.0 and res.certificate["non_decreasing"]
    with pytest.raises(DomainError):
        opt.optimize_bufferless(paper)


def test_landscape_marks_gd1_invalid(paper):
    land = opt.Landscape(paper, opt.GD1(), [10.0, 18.5])
    assert land.valid.tolist() == [False, True]
    assert not land.feasible(1.0)[0]


def test_trace_gd1_lag_clipped():
    tr = wl.EmpiricalTrace(np.array([5.0, 7.0, 6.0, 9.0, 4.0]))
    sc = Scenario(40, 0.1, (tr,))
    assert opt._lag_for(sc, opt.GD1()) == 4
    # five samples give an autocovariance whose variance sums go negative
    with pytest.raises(ModelError):
        opt.expected_overflow_sum(sc, 20.0, opt.GD1())
    long = wl.EmpiricalTrace(wl.synthetic_request_counts(3600, 400, seed=1, burstiness=0.05).astype(float))
    sc = Scenario(500, 0.1, (long,))
    assert opt._lag_for(sc, opt.GD1()) == 200
    ovf = [opt.expected_overflow_sum(sc, a, opt.GD1()) for a in (420.0, 450.0, 499.0)]
    assert 0 < ovf[2] < ovf[1] < ovf[0] < long.samples.mean()
