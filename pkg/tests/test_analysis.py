import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradbalance.analysis import (
    BoundParams,
    VacuousBound,
    bound_geometric,
    bound_sublinear,
    convergence_time,
    cut_crossing_certificate,
    descent_certificate,
    descent_terms,
    envelope_certificate,
    window_lower_bound_certificate,
    window_sums,
)
from gradbalance.graph import make_line, schedule_static
from gradbalance.objectives import make_quadratic
from gradbalance.oracle import solve_quadratic_closed_form
from gradbalance.protocol import Trajectory, run


@pytest.fixture
def two_node():
    costs = [make_quadratic(1, 0), make_quadratic(1, 0)]
    traj = run(costs, schedule_static(make_line(2)), [2.0, 0.0], 2.0, max_rounds=1)
    return costs, traj


def test_descent_two_node_hand_values(two_node):
    costs, traj = two_node
    F = [sum(f.value(x) for f, x in zip(costs, row)) for row in traj.states]
    assert F == [2.0, 1.25]
    # guaranteed decrease (2 - 0)^2 / (4 (1 + 1)) = 0.5, so F(1) <= 1.5
    assert descent_terms(traj).tolist() == [0.5]
    rep = descent_certificate(traj, costs)
    assert rep.passed and rep.rounds_checked == 1
    assert rep.worst_slack == pytest.approx((1.25 - 1.5) / 3.0)


def test_descent_skips_table_costs(golden):
    g, costs, x = golden
    traj = run(costs, schedule_static(g), x, float(x.sum()), 1)
    rep = descent_certificate(traj, costs)
    assert rep.skipped and rep.passed


def test_zero_round_certificates_are_vacuous():
    costs = [make_quadratic(1, 0), make_quadratic(1, 0)]
    traj = run(costs, schedule_static(make_line(2)), [2.0, 0.0], 2.0, 0)
    assert descent_certificate(traj, costs).passed
    assert envelope_certificate(traj).passed


def test_envelope_on_golden(golden):
    g, costs, x = golden
    traj = run(costs, schedule_static(g), x, float(x.sum()), 1)
    assert envelope_certificate(traj).passed


def _handmade(D, matched=None):
    """Trajectory with given slope rows and optional matched edges per round."""
    from gradbalance.protocol import RoundTrace

    D = np.asarray(D, dtype=float)
    traces = []
    for k in range(D.shape[0] - 1):
        pairs = (matched or {}).get(k, [])
        s = np.array([p[0] for p in pairs], dtype=np.intp)
        t = np.array([p[1] for p in pairs], dtype=np.intp)
        traces.append(RoundTrace(D[k], s, t, np.ones(len(pairs)), np.ones(len(pairs), dtype=bool)))
    return Trajectory(np.zeros_like(D), D, np.ones(D.shape[1]), 0.0, traces)


def test_envelope_detects_violation():
    assert envelope_certificate(_handmade([[1, 2, 3]] * 4)).passed
    rep = envelope_certificate(_handmade([[1, 2, 3], [1, 2, 3], [0.5, 2, 3], [1, 2, 3]]))
    assert not rep.passed and rep.first_violation == 1


def test_cut_crossing_two_nodes():
    ok = _handmade([[2, 0], [1.5, 0.5], [1.25, 0.75]], {0: [(0, 1)], 1: [(0, 1)]})
    assert cut_crossing_certificate(ok, 1).passed
    missing = _handmade([[2, 0], [1.5, 0.5], [1.25, 0.75]], {0: [(0, 1)]})
    rep = cut_crossing_certificate(missing, 1)
    assert not rep.passed and rep.first_violation == 1
    flat = _handmade([[1, 1], [1, 1]])
    assert cut_crossing_certificate(flat, 1).passed


def test_cut_crossing_golden(golden):
    g, costs, x = golden
    traj = run(costs, schedule_static(g), x, float(x.sum()), 1)
    # sorted slopes (9, 9, 6, 3, 1): cut 1 has zero gap, cuts 2..4 are crossed by (B, D) or (D, E)
    assert cut_crossing_certificate(traj, 1).passed
    rep = cut_crossing_certificate(_handmade(traj.derivatives, {0: [(1, 3)]}), 1)
    assert not rep.passed


def test_window_sums_two_node_hand_values(two_node):
    costs, traj = two_node
    sol = solve_quadratic_closed_form(costs, 2.0)
    assert sol.lambda_star == 1.0
    sums = window_sums(traj, 1, np.array([1.0, 1.0]))
    assert sums.matched.tolist() == [4.0]
    assert sums.sorted_gaps.tolist() == [4.0]
    assert sums.to_optimum.tolist() == [0.5]
    assert window_lower_bound_certificate(traj, 1, costs, sol).passed


def test_window_with_nothing_to_do():
    sums = window_sums(_handmade([[1, 1, 1], [1, 1, 1]]), 1, np.ones(3))
    assert sums.matched.tolist() == [0.0] and sums.sorted_gaps.tolist() == [0.0]


def _shared_lipschitz(costs):
    L = max(f.lipschitz for f in costs)
    return [dataclasses.replace(f, lipschitz=L) for f in costs]


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 20), seed=st.integers(0, 10**6), B=st.integers(1, 3))
def test_window_lower_bounds_with_shared_lipschitz(n, seed, B):
    rng = np.random.default_rng(seed)
    costs = [make_quadratic(c, b) for c, b in zip(rng.uniform(0.5, 2, n), rng.uniform(-1, 1, n))]
    costs = _shared_lipschitz(costs)
    x0 = rng.normal(size=n)
    traj = run(costs, schedule_static(make_line(n), B), x0, float(x0.sum()), 30 * B)
    sol = solve_quadratic_closed_form(costs, float(x0.sum()))
    assert window_lower_bound_certificate(traj, B, costs, sol).passed
    assert cut_crossing_certificate(traj, B).passed


def test_uneven_lipschitz_constants_break_cut_crossing():
    # slopes (2, 0, 1) on the path 0-1-2; node 0's large L shrinks its offer below node 2's,
    # so node 1 accepts from node 2 and the cut isolating node 0 stays uncrossed
    costs = [make_quadratic(10.0, 2.0), make_quadratic(0.5, 0.0), make_quadratic(0.5, 1.0)]
    traj = run(costs, schedule_static(make_line(3)), [0.0, 0.0, 0.0], 0.0, max_rounds=1)
    assert traj.traces[0].matched_edges == {(2, 1)}
    rep = cut_crossing_certificate(traj, 1)
    assert not rep.passed and rep.first_violation == 0
    sol = solve_quadratic_closed_form(costs, 0.0)
    sums = window_sums(traj, 1, np.full(3, sol.lambda_star))
    assert sums.matched.tolist() == [1.0] and sums.sorted_gaps.tolist() == [2.0]
    assert not window_lower_bound_certificate(traj, 1, costs, sol, which="sorted_gaps").passed
    assert window_lower_bound_certificate(traj, 1, costs, sol, which="to_optimum").passed
    # with a shared constant the top node's offer wins and both certificates hold
    shared = _shared_lipschitz(costs)
    traj = run(shared, schedule_static(make_line(3)), [0.0, 0.0, 0.0], 0.0, max_rounds=1)
    assert traj.traces[0].matched_edges == {(0, 1)}
    assert cut_crossing_certificate(traj, 1).passed
    assert window_lower_bound_certificate(traj, 1, shared, sol).passed


def test_bound_sublinear():
    p = BoundParams(L=1.0, B=1, n=2, F0_gap=1.0, mu=None, R0_ub=1.0)
    assert bound_sublinear(p, 8) == 4.0
    assert bound_sublinear(p, 1) == 32.0
    p3 = BoundParams(L=1.0, B=3, n=2, F0_gap=1.0, R0_ub=1.0)
    assert bound_sublinear(p3, 3) == 32.0
    with pytest.raises(VacuousBound):
        bound_sublinear(p3, 2)


def test_bound_geometric():
    p = BoundParams(L=1.0, B=1, n=2, F0_gap=1.0, mu=1.0)
    assert bound_geometric(p, 0) == 1.0
    expected = math.exp(16 * math.log(15 / 16))
    assert bound_geometric(p, 16) == pytest.approx(expected, rel=1e-14)
    assert bound_geometric(p, 16) == pytest.approx(0.3561, abs=1e-4)
    with pytest.raises(ValueError):
        bound_geometric(BoundParams(L=1.0, B=1, n=2, F0_gap=1.0, mu=0.0), 3)
    with pytest.raises(ValueError):
        bound_geometric(BoundParams(L=1.0, B=1, n=2, F0_gap=1.0), 3)


@settings(max_examples=50, deadline=None)
@given(
    L=st.floats(0.1, 10), ratio=st.floats(0.01, 1), B=st.integers(1, 5), n=st.integers(2, 50),
    k=st.integers(0, 5000), R0=st.floats(0, 10), gap=st.floats(0, 100),
)
def test_bounds_nonincreasing(L, ratio, B, n, k, R0, gap):
    p = BoundParams(L=L, B=B, n=n, F0_gap=gap, mu=L * ratio, R0_ub=R0)
    assert bound_geometric(p, k + 1) <= bound_geometric(p, k)
    if k >= B:
        assert bound_sublinear(p, k + 1) <= bound_sublinear(p, k)


def test_convergence_time():
    assert convergence_time([1, 0.5, 0.005], 0.01) == 2
    assert convergence_time([1, 0.5, 0.2], 0.01) is None
    assert convergence_time([1, 0.5], 2.0) == 0
