"""Synchronous rounds of the gradient balancing protocol.

One round, for every node at once:

1. broadcast the current derivative and Lipschitz constant;
2. offer ``(d_i - d_p) / (2 (L_i + L_p))`` to the neighbour ``p`` with the
   smallest derivative strictly below one's own;
3. accept the largest offer received, reject the rest;
4. settle: receivers add the accepted amount, offerers subtract it.

Ties are broken by the smallest vertex index in both steps 2 and 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import Graph, GraphSchedule
from .objectives import CostBank, CostFunction

_EMPTY_I = np.empty(0, dtype=np.intp)
_EMPTY_F = np.empty(0, dtype=float)


class ProtocolError(RuntimeError):
    """Raised when a run cannot continue (infeasible state, non-finite slopes)."""


def feasibility_tolerance(x: np.ndarray, K: float) -> float:
    return 1e-9 * max(1.0, abs(K), float(np.abs(x).sum()))


@dataclass(frozen=True)
class AllocationState:
    x: np.ndarray
    K: float
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def residual(self) -> float:
        return float(self.x.sum()) - self.K

    def check_feasible(self) -> None:
        if abs(self.residual) > feasibility_tolerance(self.x, self.K):
            raise ProtocolError(
                f"infeasible allocation at round {self.k}: sum(x) - K = {self.residual:.3e}"
            )


@dataclass(frozen=True)
class Offer:
    src: int
    dst: int
    delta: float

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError("a node cannot make an offer to itself")
        if not self.delta > 0:
            raise ValueError(f"offer size must be positive, got {self.delta}")


@dataclass(frozen=True)
class RoundTrace:
    """Everything exchanged in one round, stored as index arrays.

    ``offer_src/offer_dst/offer_delta`` list every offer (sorted by offerer);
    ``accepted`` flags the ones that were taken.
    """

    derivatives: np.ndarray
    offer_src: np.ndarray
    offer_dst: np.ndarray
    offer_delta: np.ndarray
    accepted: np.ndarray

    def _offers(self, mask) -> list[Offer]:
        return [
            Offer(int(s), int(t), float(d))
            for s, t, d in zip(self.offer_src[mask], self.offer_dst[mask], self.offer_delta[mask])
        ]

    @property
    def offers(self) -> list[Offer]:
        return self._offers(slice(None))

    @property
    def accepted_offers(self) -> list[Offer]:
        return self._offers(self.accepted)

    @property
    def rejected_offers(self) -> list[Offer]:
        return self._offers(~self.accepted)

    @property
    def matched_edges(self) -> set[tuple[int, int]]:
        """Accepted ``(offerer, receiver)`` pairs."""
        return {(o.src, o.dst) for o in self.accepted_offers}

    @property
    def n_offers(self) -> int:
        return int(self.offer_src.size)

    @property
    def n_accepted(self) -> int:
        return int(self.accepted.sum())


def compute_offer(d_i: float, d_p: float, L_i: float, L_p: float) -> float:
    if not d_p < d_i:
        raise ValueError(f"no offer: receiver slope {d_p} is not strictly below {d_i}")
    if not L_i + L_p > 0:
        raise ValueError("degenerate costs: L_i + L_p must be positive")
    return (d_i - d_p) / (2.0 * (L_i + L_p))


def select_offer_target(i: int, neighbor_derivs: Sequence[tuple[int, float]], d_i: float) -> int | None:
    best = None
    for j, d_j in neighbor_derivs:
        if j == i or not d_j < d_i:
            continue
        if best is None or (d_j, j) < best:
            best = (d_j, j)
    return None if best is None else best[1]


def accept_largest(offers_to_i: Sequence[Offer]) -> tuple[Offer | None, list[Offer]]:
    """Winner is the largest offer, ties to the smallest offerer; everything else is rejected."""
    if not offers_to_i:
        return None, []
    winner = min(offers_to_i, key=lambda o: (-o.delta, o.src))
    return winner, [o for o in offers_to_i if o is not winner]


def match(d: np.ndarray, L: np.ndarray, graph: Graph, tol: float = 0.0):
    """Steps 2 and 3 for all nodes at once.

    Returns ``(src, dst, delta, accepted)`` over every offer made. ``tol``
    requires a receiver slope below ``d_i - tol``; the default compares exactly.
    """
    src, dst = graph.directed
    cand = d[dst] < d[src] - tol
    s, t = src[cand], dst[cand]
    if s.size == 0:
        return _EMPTY_I, _EMPTY_I, _EMPTY_F, np.empty(0, dtype=bool)
    order = np.lexsort((t, d[t], s))
    s, t = s[order], t[order]
    first = np.ones(s.size, dtype=bool)
    first[1:] = s[1:] != s[:-1]
    s, t = s[first], t[first]
    delta = (d[s] - d[t]) / (2.0 * (L[s] + L[t]))
    if not np.all(delta > 0) or not np.all(np.isfinite(delta)):
        raise ProtocolError("degenerate offer: L_i + L_p must be positive")
    order = np.lexsort((s, -delta, t))
    win = np.ones(s.size, dtype=bool)
    tt = t[order]
    win[1:] = tt[1:] != tt[:-1]
    accepted = np.zeros(s.size, dtype=bool)
    accepted[order[win]] = True
    return s, t, delta, accepted


def settle(x: np.ndarray, src, dst, delta, accepted) -> np.ndarray:
    """Step 4: receivers add first (``y_i``), then offerers subtract."""
    x_new = x.copy()
    x_new[dst[accepted]] += delta[accepted]
    x_new[src[accepted]] -= delta[accepted]
    return x_new


def _slopes(bank: CostBank, x: np.ndarray, k: int) -> np.ndarray:
    d = bank.derivative(x)
    if not np.all(np.isfinite(d)):
        bad = np.flatnonzero(~np.isfinite(d)).tolist()
        raise ProtocolError(f"non-finite derivative at round {k} for nodes {bad}")
    return d


def _bank(costs) -> CostBank:
    return costs if isinstance(costs, CostBank) else CostBank(costs)


def round(state: AllocationState, edges: Graph, costs, tol: float = 0.0) -> tuple[AllocationState, RoundTrace]:
    bank = _bank(costs)
    if bank.n != state.n or edges.n != state.n:
        raise ValueError("state, graph and costs disagree on the number of nodes")
    state.check_feasible()
    d = _slopes(bank, state.x, state.k)
    s, t, delta, acc = match(d, bank.lipschitz, edges, tol)
    trace = RoundTrace(d, s, t, delta, acc)
    return AllocationState(settle(state.x, s, t, delta, acc), state.K, state.k + 1), trace


def apply_matched(x: np.ndarray, d: np.ndarray, L: np.ndarray, matched: Sequence[tuple[int, int]]) -> np.ndarray:
    """Signed per-edge form: every matched endpoint moves by ``-(d_i - d_j) / (2 (L_i + L_j))``."""
    x_new = x.copy()
    for i, j in matched:
        step = (d[i] - d[j]) / (2.0 * (L[i] + L[j]))
        x_new[i] -= step
        x_new[j] += step
    return x_new


@dataclass
class Trajectory:
    """States, slopes and traces of a run; row ``k`` of ``states`` is ``x(k)``."""

    states: np.ndarray
    derivatives: np.ndarray
    lipschitz: np.ndarray
    K: float
    traces: list[RoundTrace] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def rounds(self) -> int:
        return self.states.shape[0] - 1

    @property
    def final(self) -> AllocationState:
        return AllocationState(self.states[-1], self.K, self.rounds)

    def matched_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened ``(round, offerer, receiver)`` over all accepted offers."""
        ks, ss, ts = [], [], []
        for k, tr in enumerate(self.traces):
            m = tr.accepted
            ks.append(np.full(int(m.sum()), k, dtype=np.intp))
            ss.append(tr.offer_src[m])
            ts.append(tr.offer_dst[m])
        if not ks:
            return _EMPTY_I, _EMPTY_I, _EMPTY_I
        return np.concatenate(ks), np.concatenate(ss), np.concatenate(ts)


def run(
    costs,
    schedule: GraphSchedule,
    x0,
    K: float,
    max_rounds: int,
    stop_spread: float = 0.0,
    stop_when: Callable[[int, np.ndarray, np.ndarray], bool] | None = None,
    tol: float = 0.0,
) -> Trajectory:
    """Iterate rounds until ``max_rounds`` or the slope spread drops below ``stop_spread``.

    ``stop_when(k, x, d)`` is an extra stopping test evaluated on every state.
    """
    bank = _bank(costs)
    state = AllocationState(np.array(x0, dtype=float), float(K))
    if state.n != bank.n or schedule.n != bank.n:
        raise ValueError("x0, schedule and costs disagree on the number of nodes")
    state.check_feasible()
    L = bank.lipschitz
    x = state.x
    xs, ds, traces = [x], [], []
    reason = "max_rounds"
    for k in range(max_rounds + 1):
        d = _slopes(bank, x, k)
        ds.append(d)
        if d.max() - d.min() < stop_spread:
            reason = "spread"
            break
        if stop_when is not None and stop_when(k, x, d):
            reason = "stop_when"
            break
        if k == max_rounds:
            break
        s, t, delta, acc = match(d, L, schedule.graph(k), tol)
        traces.append(RoundTrace(d, s, t, delta, acc))
        x = settle(x, s, t, delta, acc)
        xs.append(x)
    return Trajectory(np.array(xs), np.array(ds), L.copy(), float(K), traces, reason)


def default_center_free_weight(graph: Graph, L: np.ndarray) -> float:
    return 1.0 / (2.0 * float(np.max(L)) * (graph.max_degree + 1))


def _weight_matrix(graph: Graph, weights) -> np.ndarray:
    n = graph.n
    if np.isscalar(weights):
        W = np.zeros((n, n))
        for i, j in graph.edges:
            W[i, j] = W[j, i] = float(weights)
        return W
    if isinstance(weights, dict):
        W = np.zeros((n, n))
        for (i, j), w in weights.items():
            W[i, j] = w
        return W
    return np.asarray(weights, dtype=float)


def center_free_round(state: AllocationState, edges: Graph, costs, weights=None) -> AllocationState:
    """``x_i <- x_i - sum_j w_ij (f_i'(x_i) - f_j'(x_j))`` over current neighbours.

    ``weights`` may be a scalar (all edges), a ``{(i, j): w}`` dict or an
    ``n x n`` matrix; entries off the edge set are ignored.
    """
    bank = _bank(costs)
    if weights is None:
        weights = default_center_free_weight(edges, bank.lipschitz)
    W = _weight_matrix(edges, weights)
    if not np.array_equal(W, W.T):
        raise ValueError("center-free weights must be symmetric to conserve the resource")
    if np.any(W < 0):
        raise ValueError("center-free weights must be nonnegative")
    d = _slopes(bank, state.x, state.k)
    x = state.x.copy()
    for i, j in edges.edges:
        flow = W[i, j] * (d[i] - d[j])
        x[i] -= flow
        x[j] += flow
    return AllocationState(x, state.K, state.k + 1)
