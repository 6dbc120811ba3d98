"""Command-line entry point: ``gradbalance {run,sweep,verify,oracle,compare}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .analysis import convergence_time


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="YAML or JSON scenario file")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="overrides graph and cost seeds")
    common.add_argument("--epsilon", type=float)
    common.add_argument("--max-rounds", type=int)
    common.add_argument("--certificates", choices=("on", "off"))

    parser = argparse.ArgumentParser(prog="gradbalance", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one scenario and write metrics.csv")
    sweep = sub.add_parser("sweep", parents=[common], help="convergence time versus n")
    sweep.add_argument("--n-list", type=int, nargs="+", default=list(harness.DEFAULT_N_LIST))
    sweep.add_argument("--seeds", type=int, default=10, help="seeds per n")
    sweep.add_argument("--workers", type=int, default=1)
    sub.add_parser("verify", parents=[common], help="run a scenario and print every certificate")
    oracle = sub.add_parser("oracle", parents=[common], help="print the optimal allocation")
    oracle.add_argument("--csv", action="store_true", help="also write oracle.csv to --out")
    compare = sub.add_parser("compare", parents=[common], help="gradient balancing vs center-free")
    compare.add_argument("--rounds", type=int, help="rounds per method (default: max-rounds)")
    return parser


def _config(args) -> harness.ScenarioConfig:
    cfg = harness.load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.epsilon is not None:
        changes["epsilon"] = args.epsilon
    if args.max_rounds is not None:
        changes["max_rounds"] = args.max_rounds
    if args.certificates is not None:
        changes["certificates"] = args.certificates == "on"
    if args.out is not None:
        changes["out"] = str(args.out)
    return replace(cfg, **changes)


def _cmd_run(cfg, args) -> int:
    res = harness.run_scenario(cfg)
    traj = res.trajectory
    print(f"rounds={traj.rounds} stop={traj.stop_reason}")
    gaps = res.gaps
    if gaps is not None:
        print(f"final_gap={float(gaps[-1])!r} convergence_time={convergence_time(gaps, cfg.epsilon or 0.0)}")
    for r in res.reports:
        print(r.line())
    if res.metrics_path:
        print(f"metrics: {res.metrics_path}")
    return 0 if res.passed else 1


def _cmd_verify(cfg, args) -> int:
    res = harness.run_scenario(replace(cfg, certificates=True))
    for r in res.reports:
        print(r.line())
    return 0 if res.passed else 1


def _cmd_sweep(cfg, args) -> int:
    result = harness.sweep_nodes(cfg, args.n_list, args.seeds, args.workers)
    text = result.to_csv()
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    for n, m in result.medians.items():
        print(f"n={n} median_convergence_time={m}")
    print(f"loglog_slope={result.slope}")
    return 0 if result.all_converged else 1


def _cmd_oracle(cfg, args) -> int:
    x0 = harness.build_x0(cfg)
    costs = harness.build_costs(cfg, x0)
    sol = harness.optimal_solution(costs, cfg.K, x0)
    if sol is None:
        print("oracle unavailable for this cost family", file=sys.stderr)
        return 1
    print(f"lambda_star={sol.lambda_star!r}")
    print(f"F_star={sol.F_star!r}")
    print("x_star=" + " ".join(repr(float(v)) for v in sol.x_star))
    if args.csv:
        out = Path(cfg.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        rows = "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(sol.x_star))
        (out / "oracle.csv").write_text("node,x_star\n" + rows, encoding="utf-8")
    return 0


def _cmd_compare(cfg, args) -> int:
    cmp = harness.compare_baseline(cfg, rounds=args.rounds)
    text = cmp.to_csv()
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.csv").write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "verify": _cmd_verify,
    "oracle": _cmd_oracle,
    "compare": _cmd_compare,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        return _COMMANDS[args.command](cfg, args)
    except (harness.ConfigError, harness.ProtocolError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
