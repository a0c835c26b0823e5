from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .abstraction import build_symbolic_model
from .config import RunConfig, load_config, save_config
from .dynamics import State
from .errors import MONITOR_FAILURE_EXIT, ConfigError, SirsSymbolicError, SynthesisInconsistency
from .games import reachability_game, safety_game, verify_rank_descent, verify_safety_closure
from .reach import IntervalBox, lipschitz_ball_reach, over_approx_reach, sample_endpoints, swept_hull
from .refine import PolicySet, build_policies, check_initial_coverage
from .runtime import batch_simulate, monitor, simulate_closed_loop, trace_cost
from .store import (
    MODEL_FILE,
    SYNTHESIS_FILE,
    get_output_dir,
    load_model,
    load_synthesis,
    save_model,
    save_synthesis,
    write_events_csv,
    write_json,
    write_trace_csv,
)

logger = logging.getLogger(__name__)


def _parse_pair(raw: str) -> State:
    parts = [part.strip() for part in raw.split(",") if part.strip()]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected S,I but got {raw!r}")
    try:
        return State(float(parts[0]), float(parts[1]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected two numbers, got {raw!r}") from exc


def _parse_args(argv: Optional[Sequence[str]]) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="sirs-symbolic",
        description="Symbolic event-triggered control synthesis for the SIRS epidemic model.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug output")
    parser.add_argument("--config", type=Path, help="Flat TOML config file (default: built-in settings)")
    parser.add_argument("--out", type=Path, help="Output directory (default: $SIRS_SYMBOLIC_OUT or ./sirs-out)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_abs = sub.add_parser("abstract", help="Build and save the symbolic model")
    p_abs.add_argument("--workers", type=int, help="Parallel sweep workers (default: config value)")

    sub.add_parser("synth", help="Solve the safety and reachability games")

    p_sim = sub.add_parser("simulate", help="Run the closed loop and monitor the traces")
    group = p_sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--x0", type=_parse_pair, help="Initial state as S,I")
    group.add_argument("--batch", type=int, metavar="K", help="Simulate a KxK grid spanning the initial box")
    p_sim.add_argument("--t-end", type=float, help="Simulation length in days (default: config value)")
    p_sim.add_argument("--depth", type=int, help="Selection lookahead in events (default: config value)")
    p_sim.add_argument("--workers", type=int, help="Parallel runs for --batch (default: config value)")

    p_cmp = sub.add_parser("compare-reach", help="Compare box and ball reachable-set estimates")
    p_cmp.add_argument("--center", type=_parse_pair, default=State(0.60, 0.05), help="Box center S,I")
    p_cmp.add_argument("--half", type=float, default=0.005, help="Box half-width in both coordinates")
    p_cmp.add_argument("--u", type=float, default=0.17, help="Constant input")
    p_cmp.add_argument("--t", type=float, default=1.0, help="Reach time in days")
    p_cmp.add_argument("--samples", type=int, default=500, help="Sampled true endpoints")

    sub.add_parser("check", help="Re-verify coverage, closure and rank descent")
    return parser.parse_args(argv)


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _load_artifacts(cfg: RunConfig, out_dir: Path):
    model = load_model(out_dir / MODEL_FILE, expected=cfg.abstraction_settings())
    safety, reach = load_synthesis(out_dir / SYNTHESIS_FILE, model)
    return model, safety, reach


def _cmd_abstract(cfg: RunConfig, out_dir: Path, args: argparse.Namespace) -> int:
    workers = args.workers if args.workers is not None else cfg.workers
    model = build_symbolic_model(cfg.abstraction_settings(), workers=workers)
    save_config(cfg, out_dir / "config.toml")
    save_model(model, out_dir / MODEL_FILE)
    print(
        f"Saved model to {out_dir / MODEL_FILE} "
        f"({len(model.states)} states, {len(model.trans)} transitions, {len(model.terminal_ok)} terminal pairs)"
    )
    return 0


def _cmd_synth(cfg: RunConfig, out_dir: Path, args: argparse.Namespace) -> int:
    model = load_model(out_dir / MODEL_FILE, expected=cfg.abstraction_settings())
    safety = safety_game(model)
    if not safety.ok:
        raise SynthesisInconsistency("the terminal winning set is empty; no terminal policy exists")
    reach = reachability_game(model, safety.winning)
    if not reach.ok:
        raise SynthesisInconsistency("no initial grid state is winning; no reachable policy exists")
    coverage = check_initial_coverage(model.bounds, reach.winning0, model.grid)
    save_synthesis(model, safety, reach, out_dir / SYNTHESIS_FILE)
    print(
        f"Saved synthesis to {out_dir / SYNTHESIS_FILE}: "
        f"{len(safety.winning)} terminal, {len(reach.winning)} reach ({reach.iterations} shells), "
        f"{len(reach.winning0)} initial winning states"
    )
    if not coverage.covered:
        print(
            f"warning: X_0 is not covered by the initial winning set "
            f"({len(coverage.uncovered)} cells, area {coverage.uncovered_area:.3g})",
            file=sys.stderr,
        )
    return 0


def _batch_states(cfg: RunConfig, k: int) -> list[State]:
    if k < 1:
        raise ConfigError("--batch must be >= 1")
    S_vals = np.linspace(cfg.S0_lo, cfg.S0_hi, k) if k > 1 else np.array([0.5 * (cfg.S0_lo + cfg.S0_hi)])
    I_vals = np.linspace(cfg.I0_lo, cfg.I0_hi, k) if k > 1 else np.array([0.5 * (cfg.I0_lo + cfg.I0_hi)])
    return [State(float(s), float(i)) for s in S_vals for i in I_vals if s + i <= 1.0]


def _emit_run(out_dir: Path, x0: State, trace, report, cfg: RunConfig) -> None:
    tag = f"{x0.S:.4f}_{x0.I:.4f}"
    write_trace_csv(trace, out_dir / f"trace_{tag}.csv")
    write_events_csv(trace, out_dir / f"events_{tag}.csv")
    payload = report.to_dict()
    payload["x0"] = [x0.S, x0.I]
    payload["cost"] = trace_cost(trace, cfg.lam, cfg.horizon_T)
    write_json(payload, out_dir / f"report_{tag}.json")
    status = "ok" if report.compliant else "FAILED"
    entry = "never" if report.xf_entry_time is None else f"t={report.xf_entry_time:.2f}"
    print(
        f"[{status}] x0=({x0.S:.4f}, {x0.I:.4f}) events={report.event_count} "
        f"min S={report.min_S:.4f} max I={report.max_I:.4f} X_F entry {entry}"
    )


def _cmd_simulate(cfg: RunConfig, out_dir: Path, args: argparse.Namespace) -> int:
    model, safety, reach = _load_artifacts(cfg, out_dir)
    policies: PolicySet = build_policies(model, safety, reach)
    sel = cfg.selection()
    if args.depth is not None:
        sel = replace(sel, max_depth=args.depth)
    p, integ = cfg.params(), cfg.integrator()
    t_end = args.t_end if args.t_end is not None else cfg.t_end

    if args.x0 is not None:
        trace = simulate_closed_loop(args.x0, policies, sel, p, integ, t_end, cfg.sample_every)
        runs = [(args.x0, trace, monitor(trace, model.bounds, model.grid))]
    else:
        starts = [x for x in _batch_states(cfg, args.batch) if policies.in_X0(x) or policies.in_XF(x)]
        workers = args.workers if args.workers is not None else cfg.workers
        results = batch_simulate(starts, policies, sel, p, integ, model.bounds, t_end, cfg.sample_every, workers)
        runs = [(x, trace, report) for x, (trace, report) in zip(starts, results)]

    failed = 0
    for x0, trace, report in runs:
        _emit_run(out_dir, x0, trace, report, cfg)
        failed += not report.compliant
    if failed:
        print(f"{failed} of {len(runs)} run(s) violated the monitored properties", file=sys.stderr)
        return MONITOR_FAILURE_EXIT
    return 0


def _cmd_compare_reach(cfg: RunConfig, out_dir: Path, args: argparse.Namespace) -> int:
    p, integ = cfg.params(), cfg.integrator()
    try:
        box = IntervalBox.around(args.center, args.half, args.half)
        reach_box = over_approx_reach(box, args.u, args.t, p, integ)
        domain = swept_hull(box, args.u, args.t, p, integ)
        ball = lipschitz_ball_reach(args.center, args.half, args.u, args.t, p, integ, domain)
        samples = sample_endpoints(box, args.u, args.t, args.samples, cfg.seed, p, integ)
    except ValueError as exc:
        raise ConfigError(f"invalid reach comparison: {exc}") from exc
    inside = sum(reach_box.contains(State(float(s), float(i))) for s, i in samples)

    path = out_dir / "compare_reach.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("kind", "S", "I", "radius"))
        for s, i in samples:
            writer.writerow(("sample", repr(float(s)), repr(float(i)), ""))
        writer.writerow(("box_lo", repr(reach_box.lo.S), repr(reach_box.lo.I), ""))
        writer.writerow(("box_hi", repr(reach_box.hi.S), repr(reach_box.hi.I), ""))
        writer.writerow(("ball", repr(ball.center.S), repr(ball.center.I), repr(ball.radius)))

    print(f"Saved reach comparison to {path}")
    print(f"box area {reach_box.area:.3e}, ball box area {ball.bounding_box().area:.3e}")
    print(f"{inside}/{len(samples)} sampled endpoints inside the box; box inside ball: {ball.contains_box(reach_box)}")
    return 0 if inside == len(samples) else MONITOR_FAILURE_EXIT


def _cmd_check(cfg: RunConfig, out_dir: Path, args: argparse.Namespace) -> int:
    model, safety, reach = _load_artifacts(cfg, out_dir)
    coverage = check_initial_coverage(model.bounds, reach.winning0, model.grid)
    problems = verify_safety_closure(model, safety) + verify_rank_descent(model, reach)
    write_json(
        {
            "covered": coverage.covered,
            "uncovered_cells": [[b.lo.S, b.lo.I, b.hi.S, b.hi.I] for b in coverage.uncovered],
            "uncovered_area": coverage.uncovered_area,
            "problems": problems,
        },
        out_dir / "check.json",
    )
    for line in problems:
        print(f"problem: {line}", file=sys.stderr)
    if not coverage.covered:
        print(f"X_0 coverage fails on {len(coverage.uncovered)} cell(s)", file=sys.stderr)
    if problems or not coverage.covered:
        return MONITOR_FAILURE_EXIT
    print(f"Check passed: X_0 covered, {len(safety.winning)} terminal and {len(reach.winning)} reach states verified")
    return 0


_COMMANDS = {
    "abstract": _cmd_abstract,
    "synth": _cmd_synth,
    "simulate": _cmd_simulate,
    "compare-reach": _cmd_compare_reach,
    "check": _cmd_check,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parse_args(argv)
    _configure_logging(args.verbose)
    try:
        cfg = load_config(args.config)
        out_dir = get_output_dir(args.out)
        return _COMMANDS[args.command](cfg, out_dir, args)
    except SirsSymbolicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
