"""Gradient balancing for distributed resource allocation on time-varying graphs."""

from .graph import (
    Graph,
    GraphSchedule,
    check_b_connectivity,
    make_complete,
    make_line,
    make_lollipop,
    make_ring,
    make_star,
    neighbors,
    schedule_periodic,
    schedule_static,
)
from .objectives import CostBank, CostFunction, CostTable, make_quadratic, make_quartic, sample_uniform_quartics
from .oracle import OptimalSolution, solve_optimal, solve_quadratic_closed_form, sublevel_radius_bound
from .protocol import AllocationState, Offer, RoundTrace, Trajectory, center_free_round, round, run

__version__ = "0.1.0"
