"""Runtime certificates, theoretical bounds and convergence-time measurement.

Every certificate reports a normalized slack: the amount by which its
inequality is violated, divided by a problem scale (``1 + |F|`` for objective
inequalities, ``1 + max|f'|`` for slope inequalities). A certificate passes
when its worst slack is at most ``tol``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .objectives import CostBank
from .oracle import OptimalSolution, sublevel_radius_bound
from .protocol import Trajectory, feasibility_tolerance

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class CertificateReport:
    name: str
    rounds_checked: int
    worst_slack: float
    passed: bool
    first_violation: int | None = None
    tolerance: float = DEFAULT_TOL
    skipped: str | None = None

    def line(self) -> str:
        status = "skip" if self.skipped else ("pass" if self.passed else "FAIL")
        first = "-" if self.first_violation is None else str(self.first_violation)
        text = f"{self.name}\t{status}\tworst_slack={self.worst_slack:.3e}\tfirst_violation={first}"
        if self.skipped:
            text += f"\treason={self.skipped}"
        return text


def _report(name: str, slack: np.ndarray, tol: float, index: np.ndarray | None = None) -> CertificateReport:
    """Fold per-item slacks into a report; ``index`` maps items to round numbers."""
    slack = np.asarray(slack, dtype=float)
    if slack.size == 0:
        return CertificateReport(name, 0, 0.0, True, None, tol)
    worst = float(np.max(slack))
    bad = np.flatnonzero(~(slack <= tol))
    first = None
    if bad.size:
        first = int(bad[0] if index is None else index[bad[0]])
    return CertificateReport(name, int(slack.size), worst, bad.size == 0, first, tol)


def _skipped(name: str, reason: str) -> CertificateReport:
    return CertificateReport(name, 0, 0.0, True, None, DEFAULT_TOL, skipped=reason)


def _bank(costs) -> CostBank:
    return costs if isinstance(costs, CostBank) else CostBank(costs)


def conservation_certificate(traj: Trajectory) -> CertificateReport:
    """``|sum x(k) - K|`` against ``1e-9 max(1, |K|, sum|x|)``, reported as a ratio to that bound."""
    resid = np.abs(traj.states.sum(axis=1) - traj.K)
    bound = np.array([feasibility_tolerance(x, traj.K) for x in traj.states])
    return _report("conservation", resid / bound, 1.0)


def descent_terms(traj: Trajectory) -> np.ndarray:
    """Per-round guaranteed decrease ``sum_{matched} (f_i' - f_j')^2 / (4 (L_i + L_j))``."""
    k, s, t = traj.matched_arrays()
    D, L = traj.derivatives, traj.lipschitz
    terms = (D[k, s] - D[k, t]) ** 2 / (4.0 * (L[s] + L[t]))
    return np.bincount(k, weights=terms, minlength=len(traj.traces))


def descent_certificate(traj: Trajectory, costs, tol: float = DEFAULT_TOL) -> CertificateReport:
    bank = _bank(costs)
    if not bank.has_value:
        return _skipped("descent", "costs carry no value function")
    if traj.rounds == 0:
        return _report("descent", [], tol)
    F = bank.total(traj.states)
    T = len(traj.traces)
    viol = F[1 : T + 1] - F[:T] + descent_terms(traj)
    return _report("descent", viol / (1.0 + np.abs(F[:T])), tol)


def envelope_certificate(traj: Trajectory, tol: float = DEFAULT_TOL) -> CertificateReport:
    D = traj.derivatives
    if D.shape[0] < 2:
        return _report("envelope", [], tol)
    lo, hi = D.min(axis=1), D.max(axis=1)
    viol = np.maximum(lo[:-1] - lo[1:], hi[1:] - hi[:-1])
    scale = 1.0 + np.abs(D[:-1]).max(axis=1)
    return _report("envelope", viol / scale, tol)


def _windows(traj: Trajectory, B: int):
    """Full windows covered by recorded rounds, with the nonincreasing relabel at each start."""
    W = len(traj.traces) // B
    starts = np.arange(W) * B
    D0 = traj.derivatives[starts]
    order = np.argsort(-D0, axis=1, kind="stable")
    pos = np.empty_like(order)
    np.put_along_axis(pos, order, np.arange(traj.n)[None, :].repeat(W, axis=0), axis=1)
    ranked = np.take_along_axis(D0, order, axis=1)
    cut_gaps = ranked[:, :-1] - ranked[:, 1:]
    return W, starts, pos, cut_gaps


def cut_crossing_certificate(traj: Trajectory, B: int, tol: float = DEFAULT_TOL) -> CertificateReport:
    """Each cut with a positive slope gap at ``lB`` is crossed by a matched edge within the window.

    The slack of an uncrossed cut is its (normalized) slope gap; crossed cuts
    contribute zero.
    """
    W, starts, pos, cut_gaps = _windows(traj, B)
    if W == 0:
        return _skipped("cut_crossing", f"fewer than B={B} recorded rounds")
    n = traj.n
    k, s, t = traj.matched_arrays()
    inside = k < W * B
    w = k[inside] // B
    p, q = pos[w, s[inside]], pos[w, t[inside]]
    lo, hi = np.minimum(p, q), np.maximum(p, q)
    cover = np.zeros((W, n + 1), dtype=np.int64)
    np.add.at(cover, (w, lo), 1)
    np.add.at(cover, (w, hi), -1)
    crossed = np.cumsum(cover, axis=1)[:, : n - 1] > 0
    scale = 1.0 + np.abs(traj.derivatives[starts]).max(axis=1)
    viol = np.where(crossed, 0.0, cut_gaps / scale[:, None]).max(axis=1)
    return _report("cut_crossing", viol, tol, index=starts)


@dataclass(frozen=True)
class WindowSums:
    """Per-window quantities; ``matched`` is the left side shared by both lower bounds."""

    matched: np.ndarray
    sorted_gaps: np.ndarray
    to_optimum: np.ndarray


def window_sums(traj: Trajectory, B: int, optimal_slopes: np.ndarray) -> WindowSums:
    W, starts, _, cut_gaps = _windows(traj, B)
    k, s, t = traj.matched_arrays()
    inside = k < W * B
    D = traj.derivatives
    sq = (D[k[inside], s[inside]] - D[k[inside], t[inside]]) ** 2
    matched = np.bincount(k[inside] // B, weights=sq, minlength=W)
    to_opt = ((D[starts] - optimal_slopes[None, :]) ** 2).sum(axis=1) / traj.n**2
    return WindowSums(matched, (cut_gaps**2).sum(axis=1), to_opt)


def _window_report(name, lhs, rhs, B, tol) -> CertificateReport:
    viol = (rhs - lhs) / (1.0 + rhs)
    return _report(name, viol, tol, index=np.arange(viol.size) * B)


def window_lower_bound_certificate(
    traj: Trajectory, B: int, costs, solution: OptimalSolution, tol: float = DEFAULT_TOL, which: str = "both"
) -> CertificateReport:
    """Window sum of squared matched slope gaps against its two lower bounds.

    ``which="sorted_gaps"`` checks only the sum of squared consecutive gaps of
    the sorted slopes at ``lB``; ``which="to_optimum"`` only
    ``(1/n^2) sum_i (f_i'(x_i(lB)) - f_i'(x*_i))^2``; ``"both"`` takes the
    larger of the two right-hand sides.
    """
    bank = _bank(costs)
    name = {"both": "window_lower_bound", "sorted_gaps": "window_sorted_gaps", "to_optimum": "window_to_optimum"}[which]
    sums = window_sums(traj, B, bank.derivative(solution.x_star))
    if sums.matched.size == 0:
        return _skipped(name, f"fewer than B={B} recorded rounds")
    rhs = {
        "both": np.maximum(sums.sorted_gaps, sums.to_optimum),
        "sorted_gaps": sums.sorted_gaps,
        "to_optimum": sums.to_optimum,
    }[which]
    return _window_report(name, sums.matched, rhs, B, tol)


class VacuousBound(ValueError):
    """The sublinear bound is undefined before the first full window (``k < B``)."""


@dataclass(frozen=True)
class BoundParams:
    L: float
    B: int
    n: int
    F0_gap: float
    mu: float | None = None
    R0_ub: float | None = None

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be a positive integer")
        if self.mu is not None and not 0 <= self.mu <= self.L:
            raise ValueError(f"need 0 <= mu <= L, got mu={self.mu}, L={self.L}")
        if self.L < 0 or self.F0_gap < 0 or (self.R0_ub is not None and self.R0_ub < 0):
            raise ValueError("bound parameters must be nonnegative")


def bound_params(costs, x0, K: float, B: int, solution: OptimalSolution) -> BoundParams:
    costs = list(costs)
    bank = CostBank(costs)
    mus = [f.strong_convexity for f in costs]
    mu = None if any(m is None for m in mus) else float(min(mus))
    r0 = sublevel_radius_bound(costs, x0, K, solution) if mu else None
    gap0 = max(float(bank.total(np.asarray(x0, dtype=float))) - solution.F_star, 0.0)
    return BoundParams(float(bank.lipschitz.max()), B, len(costs), gap0, mu, r0)


def bound_sublinear(params: BoundParams, k: int) -> float:
    """``8 L R0^2 n^2 / floor(k/B)``."""
    if params.R0_ub is None:
        raise ValueError("sublinear bound needs the sublevel radius bound R0_ub")
    windows = k // params.B
    if windows < 1:
        raise VacuousBound(f"k={k} < B={params.B}: bound is vacuous")
    return 8.0 * params.L * params.R0_ub**2 * params.n**2 / windows


def bound_geometric(params: BoundParams, k: int) -> float:
    """``(1 - mu / (4 L n^2))^floor(k/B) * (F(x(0)) - F*)``."""
    if params.mu is None or params.mu <= 0:
        raise ValueError("geometric bound needs strong convexity mu > 0")
    rate = 1.0 - params.mu / (4.0 * params.L * params.n**2)
    return rate ** (k // params.B) * params.F0_gap


def gap_series(traj: Trajectory, costs, solution: OptimalSolution) -> np.ndarray:
    return _bank(costs).total(traj.states) - solution.F_star


def theorem_bound_certificates(
    traj: Trajectory, costs, solution: OptimalSolution, B: int, tol: float = DEFAULT_TOL
) -> list[CertificateReport]:
    """Check the optimality gap against both rate bounds at every recorded round.

    Slack is normalized by ``1 + |F(x(k))|``: the gap is a difference of two
    objective values and cannot be resolved more finely than that.
    """
    costs = list(costs)
    mus = [f.strong_convexity for f in costs]
    if any(m is None for m in mus) or min(mus) <= 0:
        reason = "costs are not strongly convex"
        return [_skipped("theorem_sublinear", reason), _skipped("theorem_geometric", reason)]
    bank = CostBank(costs)
    F = bank.total(traj.states)
    gap = F - solution.F_star
    params = bound_params(costs, traj.states[0], traj.K, B, solution)
    scale = 1.0 + np.abs(F)
    ks = np.arange(gap.size)
    late = ks >= B
    sub = np.array([bound_sublinear(params, int(k)) for k in ks[late]])
    geo = np.array([bound_geometric(params, int(k)) for k in ks])
    return [
        _report("theorem_sublinear", (gap[late] - sub) / scale[late], tol, index=ks[late]),
        _report("theorem_geometric", (gap - geo) / scale, tol, index=ks),
    ]


def convergence_time(gaps: Sequence[float], epsilon: float) -> int | None:
    """First ``k`` with ``gap(k) < epsilon``, or ``None``."""
    hits = np.flatnonzero(np.asarray(gaps, dtype=float) < epsilon)
    return int(hits[0]) if hits.size else None


def all_certificates(
    traj: Trajectory, costs, B: int, solution: OptimalSolution | None = None, tol: float = DEFAULT_TOL
) -> list[CertificateReport]:
    bank = _bank(costs)
    reports = [
        conservation_certificate(traj),
        descent_certificate(traj, bank, tol),
        envelope_certificate(traj, tol),
        cut_crossing_certificate(traj, B, tol),
    ]
    if solution is None:
        reports.append(_skipped("window_sorted_gaps", "no optimal solution available"))
        reports.append(_skipped("window_to_optimum", "no optimal solution available"))
    else:
        for which in ("sorted_gaps", "to_optimum"):
            reports.append(window_lower_bound_certificate(traj, B, bank, solution, tol, which))
        reports.extend(theorem_bound_certificates(traj, bank.costs, solution, B, tol))
    return reports
