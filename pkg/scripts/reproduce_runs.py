from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from sirs_symbolic.abstraction import build_symbolic_model
from sirs_symbolic.config import load_config
from sirs_symbolic.dynamics import State
from sirs_symbolic.errors import ModelFileError
from sirs_symbolic.games import reachability_game, safety_game
from sirs_symbolic.refine import build_policies
from sirs_symbolic.runtime import monitor, simulate_closed_loop, trace_cost
from sirs_symbolic.store import MODEL_FILE, get_output_dir, load_model, save_model

DEFAULT_STARTS = "0.50,0.07;0.65,0.07;0.80,0.07;0.80,0.055;0.80,0.085"


def _parse_starts(raw: str) -> list[State]:
    starts = []
    for chunk in raw.split(";"):
        parts = [part.strip() for part in chunk.split(",") if part.strip()]
        if len(parts) != 2:
            raise ValueError(f"Expected S,I pairs separated by ';', got {chunk!r}")
        starts.append(State(float(parts[0]), float(parts[1])))
    return starts


def _parse_depths(raw: str) -> list[int]:
    depths = [int(part) for part in raw.split(",") if part.strip()]
    if not depths or min(depths) < 1:
        raise ValueError("--depths needs positive integers")
    return depths


def main() -> int:
    parser = argparse.ArgumentParser(description="Rerun the reference closed-loop campaign and compare lookahead depths.")
    parser.add_argument("--config", type=Path, help="Flat TOML config (default: built-in settings).")
    parser.add_argument("--out", type=Path, help="Directory holding model.json (default: $SIRS_SYMBOLIC_OUT).")
    parser.add_argument("--starts", default=DEFAULT_STARTS, help="Initial states as 'S,I;S,I;...'.")
    parser.add_argument("--depths", default="1,4,8", help="Lookahead depths to compare (default: 1,4,8).")
    parser.add_argument("--t-end", type=float, default=400.0, help="Simulated days per run (default: 400).")
    parser.add_argument("--workers", type=int, default=-1, help="Workers if the model must be built.")
    args = parser.parse_args()

    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config)
    out_dir = get_output_dir(args.out)
    settings = cfg.abstraction_settings()
    try:
        model = load_model(out_dir / MODEL_FILE, expected=settings)
        print(f"using model from {out_dir / MODEL_FILE}")
    except ModelFileError as exc:
        print(f"rebuilding model ({exc})")
        model = build_symbolic_model(settings, workers=args.workers)
        save_model(model, out_dir / MODEL_FILE)

    safety = safety_game(model)
    reach = reachability_game(model, safety.winning)
    policies = build_policies(model, safety, reach)
    print(f"terminal={len(safety.winning)} reach={len(reach.winning)} initial={len(reach.winning0)} shells={reach.iterations}")

    p, integ = cfg.params(), cfg.integrator()
    failures = 0
    for x0 in _parse_starts(args.starts):
        for depth in _parse_depths(args.depths):
            sel = replace(cfg.selection(), max_depth=depth)
            trace = simulate_closed_loop(x0, policies, sel, p, integ, args.t_end, cfg.sample_every)
            report = monitor(trace, model.bounds, model.grid)
            failures += not report.compliant
            entry = "-" if report.xf_entry_time is None else f"{report.xf_entry_time:7.2f}"
            print(
                f"x0=({x0.S:.3f}, {x0.I:.3f}) depth={depth} "
                f"cost={trace_cost(trace, sel.lam, sel.horizon_T):9.3f} events={report.event_count:3d} "
                f"entry={entry} maxI={report.max_I:.4f} {'ok' if report.compliant else 'FAILED'}",
                flush=True,
            )
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
