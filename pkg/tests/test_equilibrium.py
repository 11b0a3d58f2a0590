import math

import numpy as np
import pytest

from refequil.bestresponse import Strategy, best_response
from refequil.equilibrium import (
    EquilibriumConfig,
    certify_equilibrium,
    evaluate_self_value,
    find_equilibria,
    iterate_fixed_point,
    reference_distribution,
)

from conftest import zero_strategy


# ---------------------------------------------------------------------------
# reference distributions from strategies
# ---------------------------------------------------------------------------

def test_zero_strategy_reference_is_degenerate(symmetric_market):
    ref = reference_distribution(symmetric_market.tree,
                                 symmetric_market.prices,
                                 zero_strategy(symmetric_market), 1.7)
    assert ref.atoms() == [(1.7, 1.0)]


def test_one_period_unit_strategy_reference(skewed_market):
    ref = reference_distribution(skewed_market.tree, skewed_market.prices,
                                 Strategy.constant(skewed_market.tree, 1.0),
                                 0.0)
    assert ref.atoms() == [(-0.5, pytest.approx(0.3)),
                           (0.5, pytest.approx(0.7))]


def test_two_period_reference_merges_middle_paths(symmetric_market):
    ref = reference_distribution(symmetric_market.tree,
                                 symmetric_market.prices,
                                 Strategy.constant(symmetric_market.tree, 1.0),
                                 0.0)
    assert [(w, pytest.approx(q)) for w, q in ref.atoms()] == \
        [(-1.0, pytest.approx(0.25)), (0.0, pytest.approx(0.5)),
         (1.0, pytest.approx(0.25))]


# ---------------------------------------------------------------------------
# self-value
# ---------------------------------------------------------------------------

def test_self_value_of_zero_strategy_is_direct_utility(symmetric_market,
                                                       desk_prefs):
    got = evaluate_self_value(symmetric_market, desk_prefs,
                              zero_strategy(symmetric_market), 0.4)
    assert got == pytest.approx(float(desk_prefs.utility.u(0.4)), abs=1e-15)


def test_self_value_four_term_hand_sum():
    # T=1 fair +-0.5 with unit position: exact double sum over the two
    # terminal wealths and the two reference atoms, written out by hand
    from refequil.market import (FactorDistribution, Market, TablePriceModel,
                                 build_tree)
    from refequil.preferences import (ArctanGainLoss, ExponentialUtility,
                                      Preferences)

    dist = FactorDistribution.from_atoms([(0.5, 0.5), (-0.5, 0.5)])
    tree = build_tree([dist])
    market = Market.assemble(tree, TablePriceModel(1.0, 0.5, 1.0,
                                                   func=lambda e: e[-1]))
    prefs = Preferences(ExponentialUtility(1.0, c_u=1.0),
                        ArctanGainLoss(2.0, 1.0))

    u = lambda y: -math.exp(-y)
    nu = lambda z: 2.0 * math.atan(z) if z > 0 else 2.0 * z
    hand = 0.0
    for w, pw in ((0.5, 0.5), (-0.5, 0.5)):
        for b, qb in ((0.5, 0.5), (-0.5, 0.5)):
            hand += pw * qb * (u(w) + nu(u(w) - u(b)))
    got = evaluate_self_value(market, prefs,
                              Strategy.constant(tree, 1.0), 0.0)
    assert got == pytest.approx(hand, abs=1e-14)
    assert got == pytest.approx(-1.2456939146040686, abs=1e-12)


def test_self_value_bounded_by_cap(symmetric_market, desk_prefs):
    rng = np.random.default_rng(2)
    cap = desk_prefs.satisfaction_cap
    tree = symmetric_market.tree
    for _ in range(50):
        strategy = Strategy({n.id: float(rng.uniform(-3, 3))
                             for n in tree.interior})
        val = evaluate_self_value(symmetric_market, desk_prefs, strategy,
                                  float(rng.uniform(-1, 1)))
        assert val <= cap


# ---------------------------------------------------------------------------
# fixed-point iteration
# ---------------------------------------------------------------------------

def test_symmetric_zero_start_converges_immediately(symmetric_market,
                                                    desk_prefs,
                                                    symmetric_stack):
    report = iterate_fixed_point(symmetric_market, desk_prefs,
                                 EquilibriumConfig(),
                                 zero_strategy(symmetric_market), 0.0,
                                 stack=symmetric_stack)
    assert report.converged
    assert report.iterations == 1
    assert report.residual == 0.0
    assert report.value == pytest.approx(float(desk_prefs.utility.u(0.0)),
                                         abs=1e-15)


def test_far_start_converges_to_zero(symmetric_market, desk_prefs,
                                     symmetric_stack):
    report = iterate_fixed_point(symmetric_market, desk_prefs,
                                 EquilibriumConfig(),
                                 Strategy.constant(symmetric_market.tree, 5.0),
                                 0.0, stack=symmetric_stack)
    assert report.converged
    assert report.residual <= 1e-8
    assert report.strategy.max_abs() <= 1e-7


def test_non_convergence_is_reported_not_raised(symmetric_market, desk_prefs,
                                                symmetric_stack):
    config = EquilibriumConfig(max_iterations=2, damping=0.25)
    report = iterate_fixed_point(symmetric_market, desk_prefs, config,
                                 Strategy.constant(symmetric_market.tree,
                                                   40.0),
                                 0.0, stack=symmetric_stack)
    assert not report.converged
    assert report.residual > config.tolerance
    assert len(report.residual_trace) == 2


def test_residual_trace_decays_under_damping(symmetric_market, desk_prefs,
                                             symmetric_stack):
    config = EquilibriumConfig(max_iterations=20)
    report = iterate_fixed_point(symmetric_market, desk_prefs, config,
                                 Strategy.constant(symmetric_market.tree, 4.0),
                                 0.0, stack=symmetric_stack)
    trace = report.residual_trace
    # the response is identically zero, so damping halves the iterate
    for earlier, later in zip(trace, trace[1:]):
        assert later == pytest.approx(earlier / 2.0, rel=1e-9)


# ---------------------------------------------------------------------------
# certification
# ---------------------------------------------------------------------------

def test_certify_true_equilibrium(symmetric_market, desk_prefs,
                                  symmetric_stack):
    report = certify_equilibrium(symmetric_market, desk_prefs,
                                 zero_strategy(symmetric_market), 0.0,
                                 grid_resolution=21,
                                 config=EquilibriumConfig(oracle_radius=2.0),
                                 stack=symmetric_stack)
    assert report.certified
    assert report.analytic_residual == 0.0
    assert not report.oracle_skipped
    assert report.oracle_margin <= 1e-12


def test_certify_rejects_perturbed_candidate(symmetric_market, desk_prefs,
                                             symmetric_stack):
    candidate = Strategy.constant(symmetric_market.tree, 0.1)
    report = certify_equilibrium(symmetric_market, desk_prefs, candidate, 0.0,
                                 grid_resolution=21,
                                 config=EquilibriumConfig(oracle_radius=2.0),
                                 stack=symmetric_stack)
    assert not report.certified
    # the best response to any reference here is zero, so the analytic
    # residual equals the perturbation itself
    assert report.analytic_residual == pytest.approx(0.1, abs=1e-12)
    assert report.oracle_margin > 0.0


def test_certify_oracle_margin_within_quadratic_slack(skewed_market,
                                                      desk_prefs,
                                                      skewed_stack):
    config = EquilibriumConfig(oracle_radius=3.0)
    eq = iterate_fixed_point(skewed_market, desk_prefs, config,
                             zero_strategy(skewed_market), 0.0,
                             stack=skewed_stack)
    assert eq.converged
    report = certify_equilibrium(skewed_market, desk_prefs, eq.strategy, 0.0,
                                 grid_resolution=41, config=config,
                                 stack=skewed_stack)
    assert not report.oracle_skipped
    assert report.grid_resolution == 41
    assert report.oracle_margin <= report.oracle_slack
    assert report.certified


def test_certify_skips_oversized_oracle(symmetric_market, desk_prefs,
                                        symmetric_stack):
    config = EquilibriumConfig(oracle_cap=10)
    report = certify_equilibrium(symmetric_market, desk_prefs,
                                 zero_strategy(symmetric_market), 0.0,
                                 grid_resolution=41, config=config,
                                 stack=symmetric_stack)
    assert report.oracle_skipped
    assert report.oracle_margin is None
    assert "analytic check only" in report.notice
    assert report.certified  # analytic residual alone still certifies


# ---------------------------------------------------------------------------
# multistart search
# ---------------------------------------------------------------------------

def test_multistart_finds_the_symmetric_equilibrium(symmetric_market,
                                                    desk_prefs,
                                                    symmetric_stack):
    config = EquilibriumConfig(starts=5)
    result = find_equilibria(symmetric_market, desk_prefs, config, 0.0,
                             seed=11, stack=symmetric_stack)
    assert len(result.reports) == 5
    assert all(r.converged for r in result.reports)
    # every start lands on the same equilibrium
    assert result.distinct == (0,)
    assert result.preferred == 0
    pref = result.preferred_report
    assert pref.residual == 0.0
    assert pref.strategy.max_abs() == 0.0


def test_single_converged_start_is_preferred(skewed_market, desk_prefs,
                                             skewed_stack):
    config = EquilibriumConfig(starts=1)
    result = find_equilibria(skewed_market, desk_prefs, config, 0.0,
                             seed=1, stack=skewed_stack)
    assert result.preferred == 0
    assert result.preferred_report is result.reports[0]


def test_preferred_weakly_dominates_converged(symmetric_market, desk_prefs,
                                              symmetric_stack):
    result = find_equilibria(symmetric_market, desk_prefs,
                             EquilibriumConfig(starts=6), 0.0, seed=4,
                             stack=symmetric_stack)
    best = result.preferred_report.value
    for report in result.converged_reports:
        assert best >= report.value - 1e-12


def test_explicit_starts_are_used(symmetric_market, desk_prefs,
                                  symmetric_stack):
    explicit = Strategy.constant(symmetric_market.tree, 1.5)
    config = EquilibriumConfig(starts=2, explicit_starts=(explicit,))
    result = find_equilibria(symmetric_market, desk_prefs, config, 0.0,
                             seed=0, stack=symmetric_stack)
    assert len(result.reports) == 2  # zero start + the explicit one
    assert all(r.converged for r in result.reports)


def test_damping_invariance_on_symmetric_model(symmetric_market, desk_prefs,
                                               symmetric_stack):
    limits = []
    for damping in (0.25, 0.5, 1.0):
        config = EquilibriumConfig(damping=damping, max_iterations=80)
        report = iterate_fixed_point(symmetric_market, desk_prefs, config,
                                     zero_strategy(symmetric_market), 0.0,
                                     stack=symmetric_stack)
        assert report.converged
        limits.append(report.strategy)
    for i, a in enumerate(limits):
        for b in limits[i + 1:]:
            assert a.sup_distance(b) <= 10.0 * 1e-8


def test_equilibria_stay_inside_certified_ball(symmetric_market, desk_prefs,
                                               symmetric_stack):
    from refequil.preferences import strategy_bound
    result = find_equilibria(symmetric_market, desk_prefs,
                             EquilibriumConfig(starts=4), 0.0, seed=9,
                             stack=symmetric_stack)
    ball = strategy_bound(symmetric_stack, symmetric_market.prices.c_f, 0.0)
    for report in result.converged_reports:
        assert report.strategy.max_abs() <= ball


def test_fixed_point_idempotence(skewed_market, desk_prefs, skewed_stack):
    config = EquilibriumConfig(starts=2)
    result = find_equilibria(skewed_market, desk_prefs, config, 0.0, seed=5,
                             stack=skewed_stack)
    for report in result.converged_reports:
        again, _ = best_response(skewed_market, desk_prefs, report.strategy,
                                 0.0, stack=skewed_stack)
        assert again.sup_distance(report.strategy) <= config.tolerance


def test_config_validation():
    with pytest.raises(ValueError):
        EquilibriumConfig(damping=0.0)
    with pytest.raises(ValueError):
        EquilibriumConfig(tolerance=-1.0)
    with pytest.raises(ValueError):
        EquilibriumConfig(starts=0)
