"""Personal equilibria: fixed points of the best-response map.

The existence theory is nonconstructive, so equilibria are searched for by
damped Picard iteration from multiple starts; non-convergence is reported
honestly, never raised.  Converged candidates can be certified two ways:
analytically (the best-response residual) and, on small trees, against a
brute-force grid oracle whose tolerance follows from the curvature
envelope.

Multistart runs are independent (each owns its iteration state and warm
caches) and could execute in parallel; the search here runs them in a
deterministic sequence so that equal seeds give equal reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bestresponse import Strategy, best_response, terminal_wealth_law
from .market import Market
from .preferences import (
    Preferences,
    ReferenceDistribution,
    build_envelope_stack,
)

#: resolution of self-value comparisons (exact double sums of unit-scale terms)
VALUE_TOL = 1e-12


def reference_distribution(tree, prices, strategy, x0: float
                           ) -> ReferenceDistribution:
    """Law of the independent terminal-wealth copy generated by a strategy.

    Atoms are (leaf wealth, path probability) with equal wealths merged;
    exact on the finite tree.
    """
    return terminal_wealth_law(tree, prices, strategy, x0)


def evaluate_self_value(market: Market, preferences: Preferences,
                        strategy, x0: float) -> float:
    """Expected satisfaction of a strategy against its own wealth copy.

    Exact double sum over the terminal-wealth law and the reference atoms.
    """
    tree, prices = market.tree, market.prices
    law = terminal_wealth_law(tree, prices, strategy, x0)
    u = preferences.utility
    nu = preferences.gain_loss
    wealths = law.wealths
    utilities = u.u(wealths)
    gaps = utilities[:, None] - utilities[None, :]
    inner = nu.nu(gaps) @ law.probs
    return float(np.dot(law.probs, utilities + inner))


@dataclass(frozen=True)
class EquilibriumConfig:
    """Search controls for the fixed-point iteration."""

    damping: float = 0.5
    tolerance: float = 1e-8
    max_iterations: int = 50
    starts: int = 8
    #: radius of the uniform multistart draws; None uses the stage-0
    #: optimizer bracket at x0, capped at 50 so that wild references do not
    #: burn the iteration budget
    start_radius: float | None = None
    explicit_starts: tuple = ()
    foc_tolerance: float = 1e-10
    oracle_resolution: int = 41
    #: skip the brute-force oracle above this many grid strategies
    oracle_cap: int = 300_000
    oracle_radius: float | None = None
    dedup_factor: float = 10.0

    def __post_init__(self) -> None:
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")
        if self.starts < 1 and not self.explicit_starts:
            raise ValueError("at least one start is required")


@dataclass(frozen=True)
class EquilibriumReport:
    """Outcome of one damped Picard run."""

    strategy: Strategy
    residual: float
    value: float
    iterations: int
    converged: bool
    start_id: int = 0
    residual_trace: tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class EquilibriumSet:
    """All runs, the distinct converged strategies, and the preferred one."""

    reports: tuple[EquilibriumReport, ...]
    distinct: tuple[int, ...]
    preferred: int | None

    @property
    def converged_reports(self) -> list[EquilibriumReport]:
        return [r for r in self.reports if r.converged]

    @property
    def preferred_report(self) -> EquilibriumReport | None:
        return None if self.preferred is None else self.reports[self.preferred]


def _default_stack(market: Market, preferences: Preferences):
    return build_envelope_stack(preferences, market.certificate.alpha_star,
                                market.prices.c_f, market.prices.chi,
                                market.tree.horizon)


def iterate_fixed_point(market: Market, preferences: Preferences,
                        config: EquilibriumConfig, start: Strategy,
                        x0: float, stack=None, start_id: int = 0,
                        ) -> EquilibriumReport:
    """Damped Picard iteration on the best-response map.

    Stops once the sup-norm residual reaches the tolerance or the iteration
    budget runs out; always returns the lowest-residual iterate seen, with
    the converged flag telling the two outcomes apart.
    """
    market.require_certified()
    if stack is None:
        stack = _default_stack(market, preferences)
    current = start
    best: tuple[float, Strategy] | None = None
    trace: list[float] = []
    iterations = 0
    converged = False
    warm: dict[int, float] = {}
    for _ in range(config.max_iterations):
        response, _ = best_response(market, preferences, current, x0,
                                    stack=stack,
                                    foc_tolerance=config.foc_tolerance,
                                    warm=warm)
        iterations += 1
        residual = response.sup_distance(current)
        trace.append(residual)
        if best is None or residual < best[0]:
            best = (residual, current)
        if residual <= config.tolerance:
            converged = True
            break
        current = current.blend(response, config.damping)
    residual, strategy = best
    value = evaluate_self_value(market, preferences, strategy, x0)
    return EquilibriumReport(strategy, residual, value, iterations,
                             converged, start_id, tuple(trace))


@dataclass(frozen=True)
class CertificationReport:
    """Two-sided check that a candidate is (epsilon-)optimal against itself."""

    analytic_residual: float
    oracle_margin: float | None
    oracle_slack: float | None
    oracle_skipped: bool
    grid_resolution: int
    certified: bool
    notice: str = ""


def _oracle_sweep(market: Market, preferences: Preferences,
                  reference: ReferenceDistribution, x0: float,
                  radius: float, resolution: int, cap: int):
    """Best self-value over the full grid of strategies, or None if too big."""
    tree, prices = market.tree, market.prices
    interior = tree.interior
    combos = resolution ** len(interior)
    if combos > cap:
        return None
    grids = [np.linspace(-radius, radius, resolution) for _ in interior]
    mesh = np.meshgrid(*grids, indexing="ij")
    positions = np.stack([m.ravel() for m in mesh], axis=-1)  # (combos, N)
    index = {node.id: k for k, node in enumerate(interior)}
    leaf_wealth = np.full((positions.shape[0], len(tree.leaves)), float(x0))
    for j, leaf in enumerate(tree.leaves):
        node = leaf
        while node.depth > 0:
            f = prices.increment(node)
            leaf_wealth[:, j] += positions[:, index[node.parent.id]] * f
            node = node.parent
    probs = np.asarray([leaf.prob for leaf in tree.leaves])
    u = preferences.utility
    nu = preferences.gain_loss
    ref_u = u.u(reference.wealths)
    wealth_u = u.u(leaf_wealth)
    inner = np.zeros_like(wealth_u)
    for b_u, q in zip(ref_u, reference.probs):
        inner += q * nu.nu(wealth_u - b_u)
    values = (wealth_u + inner) @ probs
    k = int(np.argmax(values))
    best_positions = {node.id: float(positions[k, index[node.id]])
                      for node in interior}
    return float(values[k]), Strategy(best_positions)


def certify_equilibrium(market: Market, preferences: Preferences,
                        candidate: Strategy, x0: float,
                        grid_resolution: int = 41,
                        config: EquilibriumConfig | None = None,
                        stack=None) -> CertificationReport:
    """Check the equilibrium condition analytically and by enumeration.

    The analytic side measures the best-response residual at the candidate.
    The oracle side enumerates every strategy on a per-node position grid
    and verifies that none improves the candidate's self-value by more than
    the quadratic slack (half the curvature cap times the squared grid
    spacing times the horizon).  Trees whose grid would exceed the
    configured cap get the analytic check only.
    """
    config = config or EquilibriumConfig()
    market.require_certified()
    if stack is None:
        stack = _default_stack(market, preferences)
    response, _ = best_response(market, preferences, candidate, x0,
                                stack=stack,
                                foc_tolerance=config.foc_tolerance)
    analytic = response.sup_distance(candidate)

    radius = config.oracle_radius
    if radius is None:
        radius = min(float(stack[0].position_bound(x0)), 50.0)
    resolution = int(grid_resolution)
    spacing = 2.0 * radius / (resolution - 1)
    with np.errstate(over="ignore"):
        curve_cap = max(float(np.asarray(stack[t].curve_cap(x0)))
                        for t in range(market.horizon))
    slack = 0.5 * curve_cap * spacing ** 2 * market.horizon

    reference = terminal_wealth_law(market.tree, market.prices, candidate, x0)
    sweep = _oracle_sweep(market, preferences, reference, x0, radius,
                          resolution, config.oracle_cap)
    self_value = evaluate_self_value(market, preferences, candidate, x0)
    if sweep is None:
        certified = analytic <= config.tolerance
        return CertificationReport(analytic, None, None, True, resolution,
                                   certified,
                                   "grid too large; analytic check only")
    best_value, _ = sweep
    margin = best_value - self_value
    certified = analytic <= config.tolerance and margin <= slack
    return CertificationReport(analytic, margin, slack, False, resolution,
                               certified)


def find_equilibria(market: Market, preferences: Preferences,
                    config: EquilibriumConfig, x0: float,
                    seed: int = 0, stack=None) -> EquilibriumSet:
    """Multistart search: zero strategy, explicit starts, then random draws.

    Converged strategies within ``dedup_factor * tolerance`` of each other
    in sup-norm count as one equilibrium; the preferred index maximises the
    self-value among converged reports, with values within the 1e-12
    arithmetic tolerance tied and broken toward the lowest residual.  An
    empty converged set is a valid (honest) outcome.
    """
    market.require_certified()
    if stack is None:
        stack = _default_stack(market, preferences)
    tree = market.tree
    rng = np.random.default_rng(seed)
    radius = config.start_radius
    if radius is None:
        radius = min(float(stack[0].position_bound(x0)), 50.0)

    starts: list[Strategy] = [Strategy.constant(tree, 0.0)]
    starts.extend(config.explicit_starts)
    while len(starts) < max(config.starts, len(starts)):
        draw = rng.uniform(-radius, radius, size=len(tree.interior))
        starts.append(Strategy({node.id: float(h) for node, h
                                in zip(tree.interior, draw)}))

    reports = [iterate_fixed_point(market, preferences, config, start, x0,
                                   stack=stack, start_id=k)
               for k, start in enumerate(starts)]

    distinct: list[int] = []
    for k, report in enumerate(reports):
        if not report.converged:
            continue
        if all(report.strategy.sup_distance(reports[j].strategy)
               > config.dedup_factor * config.tolerance for j in distinct):
            distinct.append(k)

    preferred = None
    converged = [k for k, r in enumerate(reports) if r.converged]
    if converged:
        # maximise the self-value; values within the 1e-12 arithmetic
        # tolerance count as tied and the cleanest (lowest-residual) run wins
        top = max(reports[k].value for k in converged)
        tied = [k for k in converged if reports[k].value >= top - VALUE_TOL]
        preferred = min(tied, key=lambda k: (reports[k].residual, k))
    return EquilibriumSet(tuple(reports), tuple(distinct), preferred)
