"""Personal equilibria for reference-dependent investors on scenario trees.

A solver library for discrete-time, finite-scenario incomplete markets:
best responses by backward dynamic programming, personal equilibria as
fixed points of the best-response map, and runtime-checkable certificates
for the explicit optimizer/derivative/continuity bounds the construction
guarantees.
"""

from .bestresponse import (
    OneStepSolution,
    Strategy,
    best_response,
    gamma_big,
    gamma_small,
    solve_one_step,
    terminal_value,
    value_recursion,
)
from .equilibrium import (
    EquilibriumConfig,
    EquilibriumReport,
    EquilibriumSet,
    certify_equilibrium,
    evaluate_self_value,
    find_equilibria,
    iterate_fixed_point,
    reference_distribution,
)
from .market import (
    FactorDistribution,
    Market,
    NoArbitrageCertificate,
    PriceModel,
    ScenarioTree,
    TablePriceModel,
    DriftVolPriceModel,
    WealthPath,
    build_eex_model,
    build_tree,
    check_uniform_no_arbitrage,
    estimate_hoelder_constant,
    hoelder_extend,
    wealth,
)
from .preferences import (
    ArctanGainLoss,
    ExponentialUtility,
    GainLoss,
    Preferences,
    ReferenceDistribution,
    StageEnvelopes,
    TabulatedUtility,
    Utility,
    build_envelope_stack,
    fold_hoelder,
    propagate_envelopes,
    satisfaction,
    strategy_bound,
    terminal_envelopes,
    validate_preferences,
)
from .verify import CheckReport, run_suite

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
