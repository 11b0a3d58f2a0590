"""Backward dynamic programming and the best-response strategy.

One-step strictly concave maximization over the position (solved on the
first-order condition with a safeguarded Newton iteration), the backward
value recursion with exact envelope derivatives, and the forward pass that
turns the stage optimizers into a node-indexed strategy.

Evaluators are pure in (node, wealth); their memo tables are private per
solve instance, so distinct solves never share mutable state.  Grid caches
are filled at construction and read-only afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .market import Market, PriceModel, ScenarioTree, TreeNode, wealth
from .preferences import (
    Preferences,
    ReferenceDistribution,
    StageEnvelopes,
    build_envelope_stack,
)


class SolveError(RuntimeError):
    """Raised when the one-step solver cannot run as contracted."""


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------

class Strategy:
    """A position per non-terminal tree node."""

    def __init__(self, positions: Mapping[int, float]) -> None:
        self.positions = {int(k): float(v) for k, v in positions.items()}
        for h in self.positions.values():
            if not math.isfinite(h):
                raise SolveError("positions must be finite")

    @classmethod
    def constant(cls, tree: ScenarioTree, h: float) -> "Strategy":
        return cls({node.id: h for node in tree.interior})

    def at(self, node: TreeNode) -> float:
        return self.positions[node.id]

    def __getitem__(self, node_id: int) -> float:
        return self.positions[node_id]

    def covers(self, tree: ScenarioTree) -> bool:
        return all(node.id in self.positions for node in tree.interior)

    def sup_distance(self, other: "Strategy") -> float:
        keys = self.positions.keys() | other.positions.keys()
        return max(abs(self.positions.get(k, 0.0) - other.positions.get(k, 0.0))
                   for k in keys)

    def max_abs(self) -> float:
        return max(abs(h) for h in self.positions.values())

    def blend(self, other: "Strategy", weight: float) -> "Strategy":
        """(1 - weight) * self + weight * other, node-wise."""
        keys = self.positions.keys() | other.positions.keys()
        return Strategy({k: (1.0 - weight) * self.positions.get(k, 0.0)
                         + weight * other.positions.get(k, 0.0)
                         for k in keys})

    def shift(self, delta: Mapping[int, float] | float) -> "Strategy":
        if np.isscalar(delta):
            return Strategy({k: h + float(delta)
                             for k, h in self.positions.items()})
        return Strategy({k: h + float(delta.get(k, 0.0))
                         for k, h in self.positions.items()})

    def in_position_ball(self, tree: ScenarioTree, bound: float,
                         chi: float) -> bool:
        """Membership in the bounded Hoelder strategy ball.

        Positions at depth t (held for period t + 1) must be at most
        ``bound`` in absolute value and have Hoelder modulus ``bound`` at
        exponent chi / 2^(T - t) over same-depth node pairs.
        """
        if self.max_abs() > bound:
            return False
        for t, level in enumerate(tree.levels[:-1]):
            exponent = chi / 2.0 ** (tree.horizon - t)
            for i, node in enumerate(level):
                for other in level[i + 1:]:
                    gap = abs(self.at(node) - self.at(other))
                    if gap > bound * node.distance(other) ** exponent + 1e-12:
                        return False
        return True

    def rows(self, tree: ScenarioTree) -> list[list]:
        """CSV rows: node id, depth, position."""
        return [[node.id, node.depth, repr(self.at(node))]
                for node in tree.interior]

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Strategy({self.positions})"


# ---------------------------------------------------------------------------
# one-step objective and its derivative
# ---------------------------------------------------------------------------

def gamma_big(v_next, prices: PriceModel, node: TreeNode, x: float,
              h: float) -> float:
    """Expected next-stage value of holding ``h`` at ``node`` with wealth x."""
    if node.is_terminal:
        raise SolveError("the one-step objective needs a non-terminal node")
    total = 0.0
    for child in node.children:
        f = prices.increment(child)
        total += child.edge_prob * v_next.evaluate(child, x + h * f)[0]
    return total


def gamma_small(v_next, prices: PriceModel, node: TreeNode, x: float,
                h: float) -> float:
    """Derivative of the one-step objective in the position."""
    if node.is_terminal:
        raise SolveError("the one-step objective needs a non-terminal node")
    total = 0.0
    for child in node.children:
        f = prices.increment(child)
        total += child.edge_prob * v_next.evaluate(child, x + h * f)[1] * f
    return total


def _gamma_with_slope(v_next, prices, node, x, h) -> tuple[float, float]:
    g = 0.0
    slope = 0.0
    for child in node.children:
        f = prices.increment(child)
        _, v1, v2 = v_next.evaluate(child, x + h * f)
        g += child.edge_prob * v1 * f
        slope += child.edge_prob * v2 * f * f
    return g, slope


def gamma_small_slope(v_next, prices: PriceModel, node: TreeNode, x: float,
                      h: float) -> float:
    """d(gamma_small)/dh; strictly negative on certified models."""
    return _gamma_with_slope(v_next, prices, node, x, h)[1]


# ---------------------------------------------------------------------------
# one-step solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OneStepSolution:
    """Root of the one-step first-order condition."""

    position: float
    residual: float
    bracket: tuple[float, float]
    iterations: int
    #: set when the derivative kept one sign on the whole bracket, which
    #: cannot happen on a certified model; the returned position is the
    #: better bracket endpoint
    clamped: bool = False


def _sign(value: float) -> int:
    if value > 0.0:
        return 1
    if value < 0.0:
        return -1
    return 0


def solve_one_step(v_next, prices: PriceModel, node: TreeNode, x: float,
                   bracket: float, foc_tolerance: float = 1e-10,
                   max_iterations: int = 100,
                   initial: float | None = None) -> OneStepSolution:
    """Unique maximizer of the one-step objective at ``(node, x)``.

    The first-order condition is strictly decreasing in the position, so a
    sign-change interval inside ``[-bracket, bracket]`` pins the root; the
    interval is located by doubling outward from the origin and the root is
    polished by Newton steps safeguarded with bisection.  The target is as
    far below ``foc_tolerance`` as double precision allows.  ``initial``
    seeds a short unsafeguarded Newton burst (worth it when a nearby
    problem was just solved); the bracketed flow is the fallback.
    """
    if not bracket > 0.0:
        raise SolveError(f"degenerate position bracket {bracket!r}")
    target = min(foc_tolerance * 1e-3, foc_tolerance)

    def g(h: float) -> tuple[float, float]:
        return _gamma_with_slope(v_next, prices, node, x, h)

    evals = 0
    if initial is not None and abs(initial) < bracket and initial != 0.0:
        h, previous = float(initial), math.inf
        for _ in range(8):
            g_h, s_h = g(h)
            evals += 1
            if not (math.isfinite(g_h) and math.isfinite(s_h) and s_h < 0.0):
                break
            if abs(g_h) <= target:
                return OneStepSolution(h, abs(g_h), (-bracket, bracket),
                                       evals)
            if abs(g_h) > 0.5 * previous:
                break
            previous = abs(g_h)
            step = h - g_h / s_h
            if not abs(step) < bracket:
                break
            h = step

    g0, _ = g(0.0)
    evals += 1
    if abs(g0) <= target or g0 == 0.0:
        return OneStepSolution(0.0, abs(g0), (-bracket, bracket), evals)

    # expand toward the root by doubling: the derivative is strictly
    # decreasing, so the root sits past any probe sharing the sign of g(0)
    direction = 1.0 if g0 > 0.0 else -1.0
    near, g_near = 0.0, g0
    probe = direction * min(1.0, bracket)
    far = None
    while far is None:
        g_probe, _ = g(probe)
        evals += 1
        if math.isnan(g_probe):
            probe *= 0.5
            if abs(probe) < 1e-12:
                raise SolveError("the first-order condition is not finite "
                                 f"near node {node.id}, x={x!r}")
            continue
        if g_probe == 0.0:
            return OneStepSolution(probe, 0.0, (-bracket, bracket), evals)
        if _sign(g_probe) != _sign(g0):
            far = probe
            break
        near, g_near = probe, g_probe
        if abs(probe) >= bracket:
            # constant sign up to the bracket edge: the model violates its
            # certificate; clamp and flag
            return OneStepSolution(probe, abs(g_probe), (-bracket, bracket),
                                   evals, clamped=True)
        probe = direction * min(abs(probe) * 2.0, bracket)

    # orient so that g(lo) > 0 > g(hi)
    if g_near > 0.0:
        lo, hi = near, far
    else:
        lo, hi = far, near

    h = 0.5 * (lo + hi)
    best_h, best_res = 0.0, abs(g0)
    for _ in range(max_iterations):
        g_h, s_h = g(h)
        evals += 1
        if math.isfinite(g_h) and abs(g_h) < best_res:
            best_h, best_res = h, abs(g_h)
        if not math.isfinite(g_h):
            h = 0.5 * (lo + hi)
            continue
        if abs(g_h) <= target or g_h == 0.0:
            break
        if g_h > 0.0:
            lo = h
        else:
            hi = h
        if abs(hi - lo) <= 4.0 * abs(h) * 2.3e-16 + 5e-324:
            break
        newton = h - g_h / s_h if (math.isfinite(s_h) and s_h < 0.0) else None
        lo_, hi_ = min(lo, hi), max(lo, hi)
        if newton is not None and lo_ < newton < hi_:
            h = newton
        else:
            h = 0.5 * (lo + hi)
    return OneStepSolution(best_h, best_res, (-bracket, bracket), evals)


# ---------------------------------------------------------------------------
# value functions
# ---------------------------------------------------------------------------

class TerminalValue:
    """Stage-T value: expected satisfaction against a fixed reference law.

    Independent of the history; the evaluator returns the value and its
    first two derivatives in wealth as exact sums over the reference atoms.
    """

    stage: int | None = None

    def __init__(self, preferences: Preferences,
                 reference: ReferenceDistribution) -> None:
        self.preferences = preferences
        self.reference = reference
        self._ref_u = np.asarray(preferences.utility.u(reference.wealths),
                                 dtype=float)
        self._probs = reference.probs

    def evaluate(self, node: TreeNode | None, x: float
                 ) -> tuple[float, float, float]:
        u = self.preferences.utility
        nu = self.preferences.gain_loss
        ux = float(u.u(float(x)))
        dux = float(u.du(float(x)))
        d2ux = float(u.d2u(float(x)))
        gaps = ux - self._ref_u
        value = ux + float(np.dot(self._probs, nu.nu(gaps)))
        factor = 1.0 + float(np.dot(self._probs, nu.dnu(gaps)))
        curve = float(np.dot(self._probs, nu.d2nu(gaps)))
        return (value, dux * factor, d2ux * factor + dux * dux * curve)


class RecursiveValue:
    """Stage-t value backed by on-demand exact recursion.

    Each evaluation solves the one-step problem against the next stage's
    evaluator and returns the optimal value together with its derivatives
    from the envelope identities: the first derivative is the expected
    next-stage slope at the optimizer, the second combines the expected
    curvature with the optimizer's wealth sensitivity (implicit function
    rule on the first-order condition).
    """

    def __init__(self, prices: PriceModel, next_value,
                 bracket_fn: Callable[[float], float],
                 foc_tolerance: float = 1e-10, stage: int | None = None,
                 warm: dict[int, float] | None = None) -> None:
        self.prices = prices
        self.next_value = next_value
        self.bracket_fn = bracket_fn
        self.foc_tolerance = foc_tolerance
        self.stage = stage
        #: last optimizer per node, shared across rebuilds to seed Newton
        self.warm = warm if warm is not None else {}
        self._solutions: dict[tuple[int, float], OneStepSolution] = {}
        self._values: dict[tuple[int, float], tuple[float, float, float]] = {}

    def solution(self, node: TreeNode, x: float) -> OneStepSolution:
        key = (node.id, float(x))
        hit = self._solutions.get(key)
        if hit is None:
            hit = solve_one_step(self.next_value, self.prices, node, x,
                                 float(self.bracket_fn(x)),
                                 self.foc_tolerance,
                                 initial=self.warm.get(node.id))
            self._solutions[key] = hit
            self.warm[node.id] = hit.position
        return hit

    def evaluate(self, node: TreeNode, x: float) -> tuple[float, float, float]:
        key = (node.id, float(x))
        hit = self._values.get(key)
        if hit is not None:
            return hit
        h = self.solution(node, x).position
        value = 0.0
        slope = 0.0
        dgam_dx = 0.0
        dgam_dh = 0.0
        triples = []
        for child in node.children:
            f = self.prices.increment(child)
            v, v1, v2 = self.next_value.evaluate(child, x + h * f)
            p = child.edge_prob
            value += p * v
            slope += p * v1
            dgam_dx += p * v2 * f
            dgam_dh += p * v2 * f * f
            triples.append((p, v2, f))
        if dgam_dh == 0.0:
            raise SolveError(f"flat first-order condition at node {node.id}; "
                             "the increment law is degenerate")
        dh_dx = -dgam_dx / dgam_dh
        curve = math.fsum(p * v2 * (1.0 + f * dh_dx) for p, v2, f in triples)
        hit = (value, slope, curve)
        self._values[key] = hit
        return hit


class GridValue:
    """Grid-cached stage value with monotone-cubic interpolation.

    An accelerator behind the same evaluator interface; its values must be
    spot-checked against the exact backing (see ``value_recursion``).
    """

    def __init__(self, exact: RecursiveValue, nodes: Sequence[TreeNode],
                 x_grid: np.ndarray) -> None:
        from scipy.interpolate import PchipInterpolator

        self.exact = exact
        self.stage = exact.stage
        self.x_grid = np.asarray(x_grid, dtype=float)
        self._interp: dict[int, tuple] = {}
        for node in nodes:
            triples = [exact.evaluate(node, float(x)) for x in self.x_grid]
            arr = np.asarray(triples)
            self._interp[node.id] = tuple(
                PchipInterpolator(self.x_grid, arr[:, k], extrapolate=True)
                for k in range(3))

    def evaluate(self, node: TreeNode, x: float) -> tuple[float, float, float]:
        v, v1, v2 = self._interp[node.id]
        return float(v(x)), float(v1(x)), float(v2(x))


def terminal_value(preferences: Preferences,
                   reference: ReferenceDistribution) -> TerminalValue:
    """Stage-T evaluator for the given reference law."""
    return TerminalValue(preferences, reference)


def value_recursion(tree: ScenarioTree, prices: PriceModel,
                    terminal: TerminalValue,
                    stack: Sequence[StageEnvelopes],
                    foc_tolerance: float = 1e-10,
                    backing: str = "exact",
                    grid_points: int = 129,
                    grid_radius: float | None = None,
                    x0: float = 0.0,
                    warm: dict[int, float] | None = None) -> list:
    """Evaluators for stages 0..T (index = stage).

    ``backing='exact'`` chains on-demand recursion (the ground truth);
    ``backing='grid'`` caches each stage on a per-node wealth grid spanning
    ``x0 +- grid_radius`` and interpolates.  Grid stages still solve their
    one-step problems exactly; only next-stage evaluations interpolate.
    """
    if backing not in ("exact", "grid"):
        raise SolveError(f"unknown backing {backing!r}")
    values: list = [None] * (tree.horizon + 1)
    values[tree.horizon] = terminal
    if backing == "grid":
        if grid_radius is None:
            grid_radius = 2.0 * tree.horizon * prices.c_f
        x_grid = np.linspace(x0 - grid_radius, x0 + grid_radius,
                             int(grid_points))
    for t in range(tree.horizon - 1, -1, -1):
        exact = RecursiveValue(prices, values[t + 1],
                               stack[t].position_bound, foc_tolerance,
                               stage=t, warm=warm)
        if backing == "grid":
            values[t] = GridValue(exact, tree.levels[t], x_grid)
        else:
            values[t] = exact
    return values


# ---------------------------------------------------------------------------
# the best response
# ---------------------------------------------------------------------------

def terminal_wealth_law(tree: ScenarioTree, prices: PriceModel, strategy,
                        x0: float) -> ReferenceDistribution:
    """Law of terminal wealth under a strategy, equal wealths merged."""
    path = wealth(tree, prices, strategy, x0)
    return ReferenceDistribution.from_weights(path.leaf_law(tree))


def best_response(market: Market, preferences: Preferences,
                  reference_strategy, x0: float,
                  stack: Sequence[StageEnvelopes] | None = None,
                  foc_tolerance: float = 1e-10,
                  backing: str = "exact", grid_points: int = 129,
                  warm: dict[int, float] | None = None,
                  ) -> tuple[Strategy, list]:
    """Optimal strategy against the reference generated by another strategy.

    Builds the reference law from the reference strategy's terminal wealth,
    runs the backward recursion, then substitutes forward from the root.
    Returns the strategy and the stage evaluators (stage 0 holds the
    optimal value at ``x0``).
    """
    market.require_certified()
    tree, prices = market.tree, market.prices
    if stack is None:
        stack = build_envelope_stack(preferences,
                                     market.certificate.alpha_star,
                                     prices.c_f, prices.chi, tree.horizon)
    reference = terminal_wealth_law(tree, prices, reference_strategy, x0)
    values = value_recursion(tree, prices,
                             terminal_value(preferences, reference), stack,
                             foc_tolerance, backing=backing,
                             grid_points=grid_points, x0=x0, warm=warm)
    positions: dict[int, float] = {}
    node_wealth = {tree.root.id: float(x0)}
    for node in tree.interior:
        x = node_wealth[node.id]
        stage_value = values[node.depth]
        if isinstance(stage_value, GridValue):
            sol = stage_value.exact.solution(node, x)
        else:
            sol = stage_value.solution(node, x)
        positions[node.id] = sol.position
        for child in node.children:
            node_wealth[child.id] = x + sol.position * prices.increment(child)
    return Strategy(positions), values
