"""Centralized optimum of ``min sum_i f_i(x_i)  s.t.  sum_i x_i = K``.

At an optimum every node has the same slope ``lambda*``; the solver bisects
on that common slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .objectives import QUADRATIC, CostBank, CostFunction


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class OptimalSolution:
    x_star: np.ndarray
    F_star: float
    lambda_star: float
    tolerance_achieved: float


def objective(costs: Sequence[CostFunction], x) -> float:
    return math.fsum(float(f.value(xi)) for f, xi in zip(costs, x))


def default_tolerance(K: float) -> float:
    return 1e-12 * max(1.0, abs(K))


def solve_optimal(
    costs: Sequence[CostFunction], K: float, tol: float | None = None, x0=None, max_doublings: int = 200
) -> OptimalSolution:
    """Bisection on the common slope ``lambda`` until ``sum_i x_i(lambda)`` hits ``K``.

    The bracket starts one unit outside the slope range at ``x0`` (default: the
    uniform split ``K/n``) and is doubled outward until it straddles ``K``.
    Constant-cost nodes force ``lambda* = 0``; they absorb the residual
    resource in equal shares.
    """
    costs = list(costs)
    n = len(costs)
    if n == 0:
        raise OracleError("no costs given")
    K = float(K)
    tol = default_tolerance(K) if tol is None else tol
    missing = [i for i, f in enumerate(costs) if not f.has_inverse and not f.constant]
    if missing:
        raise OracleError(
            f"nodes {missing} have no derivative inverse; use a closed-form or grid solver instead"
        )
    if n == 1:
        f = costs[0]
        return OptimalSolution(np.array([K]), float(f.value(K)), float(f.derivative(K)), 0.0)

    active = [f for f in costs if not f.constant]
    flat = [i for i, f in enumerate(costs) if f.constant]
    if flat:
        x = np.empty(n)
        rest = [i for i, f in enumerate(costs) if not f.constant]
        for i in rest:
            x[i] = costs[i].inverse_derivative(0.0)
        x[flat] = (K - math.fsum(x[rest])) / len(flat)
        return OptimalSolution(x, objective(costs, x), 0.0, abs(math.fsum(x) - K))

    def supply(lam: float) -> float:
        return math.fsum(float(f.inverse_derivative(lam)) for f in active)

    x_init = np.full(n, K / n) if x0 is None else np.asarray(x0, dtype=float)
    slopes = [float(f.derivative(xi)) for f, xi in zip(costs, x_init)]
    lo, hi = min(slopes) - 1.0, max(slopes) + 1.0
    width = hi - lo
    for _ in range(max_doublings):
        if supply(lo) <= K:
            break
        width *= 2.0
        lo -= width
    else:
        raise OracleError(f"bracket not found: supply({lo:.3e}) still above K={K}")
    width = hi - lo
    for _ in range(max_doublings):
        if supply(hi) >= K:
            break
        width *= 2.0
        hi += width
    else:
        raise OracleError(f"bracket not found: supply({hi:.3e}) still below K={K}")

    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        r = supply(mid) - K
        if r == 0.0:
            lo = hi = mid
            break
        if r < 0:
            lo = mid
        else:
            hi = mid
    lam = lo if abs(supply(lo) - K) <= abs(supply(hi) - K) else hi
    x = np.array([float(f.inverse_derivative(lam)) for f in costs])
    achieved = abs(math.fsum(x) - K)
    if achieved > max(tol, 1e-12 * float(np.abs(x).sum())):
        raise OracleError(f"bisection stalled at |sum x - K| = {achieved:.3e} > tol {tol:.3e}")
    return OptimalSolution(x, objective(costs, x), lam, achieved)


def solve_quadratic_closed_form(costs: Sequence[CostFunction], K: float) -> OptimalSolution:
    """``lambda* = (K + sum b_i/c_i) / sum 1/c_i`` and ``x*_i = (lambda* - b_i)/c_i``."""
    if any(f.kind != QUADRATIC for f in costs):
        raise OracleError("closed form needs quadratic costs only")
    c = np.array([f.params[0] for f in costs])
    b = np.array([f.params[1] for f in costs])
    if np.any(c <= 0):
        raise OracleError("quadratic curvatures must be positive")
    lam = (K + math.fsum(b / c)) / math.fsum(1.0 / c)
    x = (lam - b) / c
    return OptimalSolution(x, objective(costs, x), float(lam), abs(math.fsum(x) - K))


def sublevel_radius_bound(
    costs: Sequence[CostFunction], x0, K: float, solution: OptimalSolution | None = None
) -> float:
    """Upper bound ``sqrt(2 (F(x0) - F*) / mu)`` on the distance from the initial sublevel set to ``x*``."""
    mus = [f.strong_convexity for f in costs]
    if any(m is None for m in mus) or min(mus) <= 0:
        raise OracleError("sublevel radius bound needs every cost strongly convex (mu > 0)")
    sol = solution if solution is not None else solve_optimal(costs, K, x0=x0)
    gap = max(objective(costs, x0) - sol.F_star, 0.0)
    return math.sqrt(2.0 * gap / min(mus))


def gaps(bank: CostBank, states: np.ndarray, F_star: float) -> np.ndarray:
    """``F(x(k)) - F*`` for every row of ``states``."""
    return bank.total(states) - F_star
