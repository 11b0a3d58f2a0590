"""Cross-module paths not covered by the per-module suites."""

import numpy as np
import pytest

from refequil.bestresponse import Strategy, best_response
from refequil.config import fixture_path, load_config
from refequil.equilibrium import EquilibriumConfig, find_equilibria
from refequil.market import (
    FactorDistribution,
    Market,
    TablePriceModel,
    build_tree,
)
from refequil.preferences import (
    ArctanGainLoss,
    ExponentialUtility,
    Preferences,
    ReferenceDistribution,
    TabulatedUtility,
    build_envelope_stack,
    satisfaction,
    validate_preferences,
)
from refequil.verify import run_suite


def test_vector_factor_market_end_to_end():
    # two-dimensional factors: the price reacts to the first coordinate,
    # the second only widens the history geometry
    dist = FactorDistribution.from_atoms([
        ((1.0, 0.5), 0.45), ((-1.0, 0.5), 0.45), ((0.0, -1.0), 0.1)])
    tree = build_tree([dist, dist])
    assert tree.nodes[1].point.shape == (2,)
    assert tree.leaves[0].point.shape == (4,)
    prices = TablePriceModel(10.0, 0.5, 1.0,
                             func=lambda history: 0.5 * history[-2])
    market = Market.assemble(tree, prices)
    assert market.certificate.certified
    assert market.certificate.alpha_star == pytest.approx(0.45)

    prefs = Preferences(ExponentialUtility(0.8, c_u=0.03),
                        ArctanGainLoss.tight(0.2))
    stack = build_envelope_stack(prefs, market.certificate.alpha_star,
                                 prices.c_f, prices.chi, 2)
    psi, values = best_response(market, prefs,
                                Strategy.constant(tree, 0.3), 0.1,
                                stack=stack)
    assert psi.covers(tree)
    for node in tree.interior:
        sol = values[node.depth].solution(
            node, 0.1 if node.depth == 0 else 0.0)
        assert sol.residual <= 1e-10


def test_full_suite_passes_on_drift_vol_fixture():
    config = load_config(fixture_path("asymmetric_eex_t2"))
    reports = run_suite(config.market, config.preferences,
                        config.initial_capital, suite="all", samples=80,
                        seed=17,
                        config=EquilibriumConfig(starts=3,
                                                 max_iterations=60))
    failed = [r.name for r in reports if not r.passed]
    assert failed == []


def test_tabulated_utility_tracks_its_source():
    # tabulating the exponential on a knot grid reproduces satisfaction
    # and validates, within interpolation accuracy
    source = ExponentialUtility(1.0, c_u=0.05)
    # dense where the curvature lives, coarse along the flat tail
    knots = np.concatenate([np.linspace(-6.0, 6.0, 481),
                            np.linspace(6.5, 90.0, 168)])
    tabulated = TabulatedUtility(knots, source.u(knots), source.du(knots),
                                 source.d2u(knots), c_u=0.05)
    nu = ArctanGainLoss.tight(0.25)
    ref = ReferenceDistribution([(0.0, 0.5), (1.0, 0.5)])
    for x in (-1.0, 0.3, 2.0):
        assert satisfaction(tabulated, nu, x, ref) == pytest.approx(
            satisfaction(source, nu, x, ref), abs=1e-6)
    report = validate_preferences(tabulated, nu,
                                  np.linspace(-5.0, 80.0, 600))
    assert report.passed, [c.name for c in report.failed()]


def test_stress_fixture_regression_pin():
    # frozen from two independent deterministic runs; guards numerical
    # drift in the deep (three-period) path
    config = load_config(fixture_path("stress_t3"))
    result = find_equilibria(config.market, config.preferences,
                             config.solver, config.initial_capital,
                             seed=config.seed)
    pref = result.preferred_report
    assert pref.converged
    assert pref.residual <= 1e-8
    assert pref.value == pytest.approx(-0.8161887867031362, abs=1e-9)
    assert len(result.distinct) == 1
