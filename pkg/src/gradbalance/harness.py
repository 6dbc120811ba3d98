"""Scenario configuration, single runs, node-count sweeps and result files."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import analysis, oracle
from .graph import (
    Graph,
    GraphSchedule,
    check_b_connectivity,
    make_complete,
    make_line,
    make_lollipop,
    make_ring,
    make_star,
    schedule_periodic,
    schedule_random,
    schedule_static,
)
from .objectives import (
    DEFAULT_ENVELOPE_SAFETY,
    CostBank,
    CostFunction,
    make_quadratic,
    make_quartic,
    make_table,
    quartic_envelope,
    sample_uniform_quartics,
)
from .protocol import (
    AllocationState,
    ProtocolError,
    Trajectory,
    center_free_round,
    default_center_free_weight,
    feasibility_tolerance,
    match,
    run,
    settle,
)

log = logging.getLogger(__name__)

METRICS_COLUMNS = (
    "k", "F", "gap", "min_deriv", "max_deriv", "spread",
    "n_offers", "n_accepted", "descent_slack", "sum_x",
)
SWEEP_COLUMNS = ("n", "seed", "convergence_time", "final_gap", "rounds_run", "wall_time_ms")
DEFAULT_N_LIST = (4, 8, 16, 32, 64)

_GENERATORS = {
    "line": make_line,
    "ring": make_ring,
    "star": make_star,
    "complete": make_complete,
    "lollipop": make_lollipop,
}


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    """One experiment.

    ``graph``: ``kind`` in line/ring/star/complete/lollipop/erdos_renyi/periodic,
    plus ``B``, ``seed``, ``p`` (erdos_renyi) or ``period`` (list of edge lists).
    ``costs``: ``family`` in quadratic/quartic/table with explicit parameter
    lists (``c``/``b``, ``w``/``a``, ``slopes``/``lipschitz``) or a ``seed``.
    ``x0``: ``"zeros"``, ``"uniform"`` or an explicit list.
    """

    n: int
    graph: dict[str, Any] = field(default_factory=lambda: {"kind": "line", "B": 1})
    costs: dict[str, Any] = field(default_factory=lambda: {"family": "quartic", "seed": 0})
    K: float = 0.0
    x0: Any = "zeros"
    epsilon: float | None = 0.01
    max_rounds: int = 10**6
    stop_spread: float = 0.0
    certificates: bool = True
    traces: bool = False
    seed: int | None = None
    out: str | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be positive, got {self.n}")
        if int(self.graph.get("B", 1)) < 1:
            raise ConfigError("graph.B must be a positive integer")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.max_rounds < 0:
            raise ConfigError("max_rounds must be nonnegative")

    @property
    def B(self) -> int:
        return int(self.graph.get("B", 1))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def load_config(path: str | Path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return ScenarioConfig.from_dict(data)


def _seed(cfg: ScenarioConfig, section: dict[str, Any]) -> int:
    return int(cfg.seed if cfg.seed is not None else section.get("seed", 0))


def build_schedule(cfg: ScenarioConfig) -> GraphSchedule:
    spec = cfg.graph
    kind, B = spec.get("kind", "line"), cfg.B
    if kind in _GENERATORS:
        return schedule_static(_GENERATORS[kind](cfg.n), B)
    if kind == "periodic":
        period = spec.get("period")
        if not period:
            raise ConfigError("periodic graph needs a nonempty 'period' list of edge lists")
        return schedule_periodic([Graph.from_edges(cfg.n, edges) for edges in period], B)
    if kind == "erdos_renyi":
        return schedule_random(cfg.n, float(spec.get("p", 0.5)), B, _seed(cfg, spec))
    raise ConfigError(f"unknown graph kind {kind!r}")


def build_x0(cfg: ScenarioConfig) -> np.ndarray:
    spec = cfg.x0
    if spec == "zeros":
        x0 = np.zeros(cfg.n)
    elif spec == "uniform":
        x0 = np.full(cfg.n, cfg.K / cfg.n)
    else:
        x0 = np.asarray(spec, dtype=float)
        if x0.shape != (cfg.n,):
            raise ConfigError(f"x0 has {x0.size} entries, expected n={cfg.n}")
    if abs(float(x0.sum()) - cfg.K) > 1e-12 * max(1.0, abs(cfg.K)):
        raise ConfigError(f"x0 sums to {x0.sum()!r}, not K={cfg.K!r}")
    return x0


def build_costs(cfg: ScenarioConfig, x0: np.ndarray) -> list[CostFunction]:
    spec = cfg.costs
    family = spec.get("family", "quartic")
    n = cfg.n
    if family == "quadratic":
        if "c" in spec:
            c = list(spec["c"])
            b = list(spec.get("b", [0.0] * n))
        else:
            rng = np.random.Generator(np.random.PCG64(_seed(cfg, spec)))
            lo, hi = spec.get("c_range", (0.5, 2.0))
            c = rng.uniform(lo, hi, n).tolist()
            b = rng.uniform(-1.0, 1.0, n).tolist() if spec.get("random_b", True) else [0.0] * n
        if len(c) != n or len(b) != n:
            raise ConfigError("quadratic c and b need one entry per node")
        return [make_quadratic(ci, bi) for ci, bi in zip(c, b)]
    if family == "quartic":
        if "w" in spec:
            params = list(zip(spec["w"], spec.get("a", [0.0] * n)))
        else:
            params = sample_uniform_quartics(n, _seed(cfg, spec))
        if len(params) != n:
            raise ConfigError("quartic w and a need one entry per node")
        env = quartic_envelope(params, x0, float(spec.get("safety", DEFAULT_ENVELOPE_SAFETY)))
        return [make_quartic(w, a, env) for w, a in params]
    if family == "table":
        slopes = spec.get("slopes")
        if slopes is None or len(slopes) != n:
            raise ConfigError("table costs need one slope per node")
        return make_table(slopes, float(spec.get("lipschitz", 1.0)))
    raise ConfigError(f"unknown cost family {family!r}")


def optimal_solution(costs: Sequence[CostFunction], K: float, x0=None) -> oracle.OptimalSolution | None:
    if all(f.kind == "quadratic" for f in costs):
        return oracle.solve_quadratic_closed_form(costs, K)
    try:
        return oracle.solve_optimal(costs, K, x0=x0)
    except oracle.OracleError as exc:
        log.warning("no optimal solution (%s); gap outputs fall back to slope spread", exc)
        return None


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    costs: list[CostFunction]
    trajectory: Trajectory
    solution: oracle.OptimalSolution | None
    reports: list[analysis.CertificateReport]
    metrics_path: Path | None = None

    @property
    def gaps(self) -> np.ndarray | None:
        if self.solution is None:
            return None
        return analysis.gap_series(self.trajectory, self.costs, self.solution)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def _require_connectivity(schedule: GraphSchedule, B: int, max_rounds: int) -> None:
    verdict = check_b_connectivity(schedule, B, max(B, max_rounds))
    if not verdict:
        raise ConfigError(
            f"schedule is not {B}-connected: window {verdict.first_failure} has a disconnected union"
        )


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> ScenarioResult:
    schedule = build_schedule(cfg)
    _require_connectivity(schedule, cfg.B, cfg.max_rounds)
    x0 = build_x0(cfg)
    costs = build_costs(cfg, x0)
    bank = CostBank(costs)
    solution = optimal_solution(costs, cfg.K, x0)

    stop_when = None
    if solution is not None and cfg.epsilon is not None and bank.has_value:
        F_star, eps = solution.F_star, cfg.epsilon
        stop_when = lambda k, x, d: float(bank.total(x)) - F_star < eps  # noqa: E731
    traj = run(bank, schedule, x0, cfg.K, cfg.max_rounds, cfg.stop_spread, stop_when)

    reports = []
    if cfg.certificates:
        reports = analysis.all_certificates(traj, bank, cfg.B, solution)
    result = ScenarioResult(cfg, costs, traj, solution, reports)

    out_dir = out_dir if out_dir is not None else cfg.out
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.metrics_path = out / "metrics.csv"
        result.metrics_path.write_text(metrics_csv(traj, bank, solution), encoding="utf-8")
        if reports:
            (out / "certificates.txt").write_text(certificates_text(reports), encoding="utf-8")
        if cfg.traces:
            (out / "traces.jsonl").write_text(traces_jsonl(traj), encoding="utf-8")
    return result


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metrics_rows(traj: Trajectory, bank: CostBank, solution: oracle.OptimalSolution | None) -> list[dict]:
    """One row per recorded state; per-round columns describe the transition out of state ``k``."""
    D = traj.derivatives
    F = bank.total(traj.states) if bank.has_value else None
    terms = analysis.descent_terms(traj)
    rows = []
    for k in range(traj.states.shape[0]):
        tr = traj.traces[k] if k < len(traj.traces) else None
        lo, hi = float(D[k].min()), float(D[k].max())
        row = {
            "k": k,
            "F": None if F is None else F[k],
            "gap": None if F is None or solution is None else F[k] - solution.F_star,
            "min_deriv": lo,
            "max_deriv": hi,
            "spread": hi - lo,
            "n_offers": None if tr is None else tr.n_offers,
            "n_accepted": None if tr is None else tr.n_accepted,
            "descent_slack": None if tr is None or F is None else F[k] - terms[k] - F[k + 1],
            "sum_x": float(traj.states[k].sum()),
        }
        rows.append(row)
    return rows


def metrics_csv(traj: Trajectory, bank: CostBank, solution: oracle.OptimalSolution | None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for row in metrics_rows(traj, bank, solution):
        writer.writerow([_fmt(row[c]) for c in METRICS_COLUMNS])
    return buf.getvalue()


def certificates_text(reports: Sequence[analysis.CertificateReport]) -> str:
    return "".join(r.line() + "\n" for r in reports)


def traces_jsonl(traj: Trajectory) -> str:
    lines = []
    for k, tr in enumerate(traj.traces):
        record = {
            "k": k,
            "offers": [[o.src, o.dst, o.delta] for o in tr.offers],
            "accepted": [[o.src, o.dst, o.delta] for o in tr.accepted_offers],
            "rejected": [[o.src, o.dst, o.delta] for o in tr.rejected_offers],
        }
        lines.append(json.dumps(record))
    return "".join(line + "\n" for line in lines)


@dataclass(frozen=True)
class GapRun:
    """Outcome of a streaming run to a gap threshold."""

    convergence_time: int | None
    final_gap: float
    rounds_run: int
    conservation_ok: bool
    descent_ok: bool


def run_to_gap(
    costs: Sequence[CostFunction],
    schedule: GraphSchedule,
    x0: np.ndarray,
    K: float,
    F_star: float,
    epsilon: float,
    max_rounds: int,
    tol: float = analysis.DEFAULT_TOL,
) -> GapRun:
    """Run without keeping history, checking conservation and descent on the fly."""
    bank = CostBank(costs)
    L = bank.lipschitz
    x = np.array(x0, dtype=float)
    F = float(bank.total(x))
    cons_ok = descent_ok = True
    k = 0
    while True:
        gap = F - F_star
        if gap < epsilon:
            return GapRun(k, gap, k, cons_ok, descent_ok)
        if k == max_rounds:
            return GapRun(None, gap, k, cons_ok, descent_ok)
        d = bank.derivative(x)
        s, t, delta, acc = match(d, L, schedule.graph(k))
        x = settle(x, s, t, delta, acc)
        F_next = float(bank.total(x))
        si, ti = s[acc], t[acc]
        drop = float(np.sum((d[si] - d[ti]) ** 2 / (4.0 * (L[si] + L[ti]))))
        if F_next - F + drop > tol * (1.0 + abs(F)):
            descent_ok = False
        if abs(float(x.sum()) - K) > feasibility_tolerance(x, K):
            cons_ok = False
        F = F_next
        k += 1


@dataclass
class SweepRow:
    n: int
    seed: int
    convergence_time: int | None
    final_gap: float
    rounds_run: int
    wall_time_ms: float
    conservation_ok: bool = True
    descent_ok: bool = True


@dataclass
class SweepResult:
    rows: list[SweepRow]
    slope: float | None
    medians: dict[int, float]

    @property
    def all_converged(self) -> bool:
        return all(r.convergence_time is not None for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for r in self.rows:
            writer.writerow([_fmt(getattr(r, c)) for c in SWEEP_COLUMNS])
        return buf.getvalue()


def _sweep_point(base: ScenarioConfig, n: int, seed: int) -> SweepRow:
    cfg = replace(
        base,
        n=n,
        K=0.0,
        x0="zeros",
        seed=seed,
        costs={"family": "quartic", "seed": seed, "safety": base.costs.get("safety", DEFAULT_ENVELOPE_SAFETY)},
    )
    schedule = build_schedule(cfg)
    _require_connectivity(schedule, cfg.B, cfg.max_rounds)
    x0 = build_x0(cfg)
    costs = build_costs(cfg, x0)
    sol = oracle.solve_optimal(costs, 0.0, x0=x0)
    eps = base.epsilon if base.epsilon is not None else 0.01
    start = time.perf_counter()
    res = run_to_gap(costs, schedule, x0, 0.0, sol.F_star, eps, cfg.max_rounds)
    wall = (time.perf_counter() - start) * 1000.0
    return SweepRow(
        n, seed, res.convergence_time, res.final_gap, res.rounds_run, wall, res.conservation_ok, res.descent_ok
    )


def fit_loglog_slope(rows: Sequence[SweepRow]) -> tuple[float | None, dict[int, float]]:
    """Least-squares slope of log(median time) on log(n), over n whose seeds all converged."""
    by_n: dict[int, list[SweepRow]] = {}
    for r in rows:
        by_n.setdefault(r.n, []).append(r)
    medians = {}
    for n, group in sorted(by_n.items()):
        if any(r.convergence_time is None for r in group):
            log.warning("n=%d has censored runs; excluded from the slope fit", n)
            continue
        medians[n] = float(np.median([r.convergence_time for r in group]))
    usable = {n: m for n, m in medians.items() if m > 0}
    if len(usable) < 2:
        return None, medians
    slope = np.polyfit(np.log(list(usable)), np.log(list(usable.values())), 1)[0]
    return float(slope), medians


def sweep_nodes(
    base: ScenarioConfig, n_list: Sequence[int] = DEFAULT_N_LIST, seeds_per_n: int = 10, workers: int = 1
) -> SweepResult:
    """Convergence time to ``epsilon`` for random quartic instances (``K = 0``, ``x0 = 0``) per node count."""
    n_list = list(n_list)
    if not n_list:
        raise ValueError("n_list must be nonempty")
    if n_list != sorted(n_list):
        raise ValueError("n_list must be ascending")
    points = [(n, s) for n in n_list for s in range(seeds_per_n)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_sweep_point, [base] * len(points), *zip(*points)))
    else:
        rows = [_sweep_point(base, n, s) for n, s in points]
    rows.sort(key=lambda r: (r.n, r.seed))
    for r in rows:
        if not (r.conservation_ok and r.descent_ok):
            log.error("n=%d seed=%d failed an on-line certificate", r.n, r.seed)
    slope, medians = fit_loglog_slope(rows)
    return SweepResult(rows, slope, medians)


@dataclass
class BaselineComparison:
    balancing_gaps: np.ndarray
    center_free_gaps: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("k", "gap_balancing", "gap_center_free"))
        T = max(self.balancing_gaps.size, self.center_free_gaps.size)
        for k in range(T):
            a = self.balancing_gaps[k] if k < self.balancing_gaps.size else None
            b = self.center_free_gaps[k] if k < self.center_free_gaps.size else None
            writer.writerow([k, _fmt(a), _fmt(b)])
        return buf.getvalue()


def compare_baseline(cfg: ScenarioConfig, weights=None, rounds: int | None = None) -> BaselineComparison:
    """Run gradient balancing and the center-free update on the same instance for ``rounds`` rounds."""
    schedule = build_schedule(cfg)
    _require_connectivity(schedule, cfg.B, cfg.max_rounds)
    x0 = build_x0(cfg)
    costs = build_costs(cfg, x0)
    bank = CostBank(costs)
    solution = optimal_solution(costs, cfg.K, x0)
    if solution is None:
        raise ConfigError("baseline comparison needs an optimal solution for the gap")
    T = cfg.max_rounds if rounds is None else rounds

    traj = run(bank, schedule, x0, cfg.K, T)
    gb = bank.total(traj.states) - solution.F_star

    state = AllocationState(x0, cfg.K)
    cf = [float(bank.total(state.x)) - solution.F_star]
    for k in range(T):
        g = schedule.graph(k)
        w = default_center_free_weight(g, bank.lipschitz) if weights is None else weights
        state = center_free_round(state, g, bank, w)
        cf.append(float(bank.total(state.x)) - solution.F_star)
    return BaselineComparison(np.asarray(gb), np.asarray(cf))


__all__ = [
    "ConfigError",
    "ProtocolError",
    "ScenarioConfig",
    "ScenarioResult",
    "SweepResult",
    "SweepRow",
    "compare_baseline",
    "load_config",
    "run_scenario",
    "run_to_gap",
    "sweep_nodes",
]
