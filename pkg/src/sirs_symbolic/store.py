from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from itertools import groupby
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

from .abstraction import AbstractionSettings, SymbolicModel
from .dynamics import IntegratorConfig, ModelParams
from .errors import CorruptModelError, ModelFileError, StaleModelError
from .games import AbstractPolicy, ReachResult, SafetyResult
from .grid import Action, Grid, ProblemBounds, SymbolicState, Thresholds
from .runtime import SimulationTrace

logger = logging.getLogger(__name__)

MODEL_FORMAT = "sirs-symbolic-model"
SYNTHESIS_FORMAT = "sirs-symbolic-synthesis"
FORMAT_VERSION = 1
MODEL_FILE = "model.json"
SYNTHESIS_FILE = "synthesis.json"

TRACE_COLUMNS = ("t", "S", "I", "R", "u", "epsilon", "event", "phase")
EVENT_COLUMNS = ("t", "S", "I", "u", "epsilon", "k", "phase", "rank")


def get_output_dir(override: Optional[Path] = None) -> Path:
    if override is not None:
        return Path(override)
    env = os.getenv("SIRS_SYMBOLIC_OUT")
    return Path(env) if env else Path("sirs-out")


def settings_header(settings: AbstractionSettings) -> dict[str, Any]:
    p, grid, b, cfg = settings.params, settings.grid, settings.bounds, settings.integrator
    header = {
        "gamma": p.gamma,
        "xi": p.xi,
        "u_levels": list(p.u_levels),
        "eta_S": grid.eta_S,
        "eta_I": grid.eta_I,
        "thresholds": list(settings.thresholds.values),
        "bounds": {
            name: getattr(b, name)
            for name in ("S0_lo", "S0_hi", "I0_lo", "I0_hi", "S_S", "I_S", "S_F", "I_F")
        },
        "step": cfg.step,
        "horizon": cfg.horizon,
        "crossing_tol": cfg.crossing_tol,
        "strict_direction_check": settings.strict_direction_check,
        "side_window": settings.side_window,
        "s_floor": settings.s_floor,
    }
    return json.loads(json.dumps(header))


def settings_digest(header: Mapping[str, Any]) -> str:
    return _digest(header)


def settings_from_header(header: Mapping[str, Any]) -> AbstractionSettings:
    try:
        grid = Grid(header["eta_S"], header["eta_I"])
        return AbstractionSettings(
            params=ModelParams(header["gamma"], header["xi"], tuple(header["u_levels"])),
            grid=grid,
            bounds=ProblemBounds(**header["bounds"]),
            thresholds=Thresholds.from_values(header["thresholds"], grid),
            integrator=IntegratorConfig(header["step"], header["horizon"], header["crossing_tol"]),
            strict_direction_check=header["strict_direction_check"],
            side_window=header["side_window"],
            s_floor=header["s_floor"],
        )
    except (KeyError, TypeError) as exc:
        raise CorruptModelError(f"model header is incomplete: {exc}") from exc


def _digest(payload: Any) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _runs(states: Iterable[SymbolicState]) -> list[list[int]]:
    """Encode a successor set as [m, n_lo, n_hi] runs of consecutive S-indices."""
    out = []
    for m, group in groupby(sorted(states, key=lambda x: (x.m, x.n)), key=lambda x: x.m):
        ns = [x.n for x in group]
        start = prev = ns[0]
        for n in ns[1:]:
            if n != prev + 1:
                out.append([m, start, prev])
                start = n
            prev = n
        out.append([m, start, prev])
    return out


def _expand(runs: Iterable[Iterable[int]]) -> frozenset[SymbolicState]:
    return frozenset(SymbolicState(n, m) for m, lo, hi in runs for n in range(lo, hi + 1))


def _read_container(path: Path, fmt: str) -> dict[str, Any]:
    try:
        with Path(path).open("r", encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError as exc:
        raise ModelFileError(f"{path} does not exist") from exc
    except (OSError, ValueError) as exc:
        raise CorruptModelError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict) or data.get("format") != fmt:
        raise CorruptModelError(f"{path} is not a {fmt} file")
    if data.get("version") != FORMAT_VERSION:
        raise StaleModelError(f"{path} has format version {data.get('version')}, expected {FORMAT_VERSION}")
    body = {key: value for key, value in data.items() if key != "digest"}
    if data.get("digest") != _digest(body):
        raise CorruptModelError(f"{path} failed its integrity check")
    return data


def _write_container(path: Path, fmt: str, body: dict[str, Any]) -> str:
    body = {"format": fmt, "version": FORMAT_VERSION, **body}
    digest = _digest(body)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump({**body, "digest": digest}, handle, sort_keys=True, separators=(",", ":"))
    return digest


def save_model(model: SymbolicModel, path: Path) -> str:
    if model.settings is None:
        raise ValueError("only models built from settings can be saved")
    index = {a: i for i, a in enumerate(model.actions)}
    records = []
    for x in sorted(model.states):
        records.append(
            {
                "n": x.n,
                "m": x.m,
                "init": x in model.init_states,
                "safe": x in model.safe_states,
                "target": x in model.target_states,
                "trans": [[index[a], _runs(model.successors(x, a))] for a in model.actions if model.successors(x, a)],
                "trans0": [[index[a], _runs(model.successors0(x, a))] for a in model.actions if model.successors0(x, a)],
                "terminal": [index[a] for a in model.actions if model.label_LF(x, a)],
            }
        )
    digest = _write_container(
        path,
        MODEL_FORMAT,
        {
            "header": settings_header(model.settings),
            "actions": [[a.u, a.k] for a in model.actions],
            "states": records,
        },
    )
    logger.info("saved model with %d states to %s", len(records), path)
    return digest


def load_model(path: Path, expected: Optional[AbstractionSettings] = None) -> SymbolicModel:
    data = _read_container(path, MODEL_FORMAT)
    header = data.get("header")
    if not isinstance(header, dict):
        raise CorruptModelError(f"{path} has no header")
    if expected is not None and settings_header(expected) != header:
        raise StaleModelError(f"{path} was built from a different configuration; rerun `abstract`")
    settings = settings_from_header(header)
    try:
        actions = tuple(Action(float(u), int(k)) for u, k in data["actions"])
        states, init, safe, target = set(), set(), set(), set()
        trans, trans0, terminal = {}, {}, set()
        for rec in data["states"]:
            x = SymbolicState(rec["n"], rec["m"])
            states.add(x)
            for flag, bucket in (("init", init), ("safe", safe), ("target", target)):
                if rec[flag]:
                    bucket.add(x)
            for i, runs in rec["trans"]:
                trans[(x, actions[i])] = _expand(runs)
            for i, runs in rec["trans0"]:
                trans0[(x, actions[i])] = _expand(runs)
            terminal.update((x, actions[i]) for i in rec["terminal"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CorruptModelError(f"{path} has malformed state records: {exc}") from exc
    if actions != settings.actions():
        raise CorruptModelError(f"{path} lists actions that do not match its header")
    return SymbolicModel(
        grid=settings.grid,
        bounds=settings.bounds,
        actions=actions,
        states=frozenset(states),
        init_states=frozenset(init),
        safe_states=frozenset(safe),
        target_states=frozenset(target),
        trans=trans,
        trans0=trans0,
        terminal_ok=frozenset(terminal),
        settings=settings,
    )


def _policy_rows(policy: AbstractPolicy, index: Mapping[Action, int]) -> list[list[Any]]:
    return [[x.n, x.m, [index[a] for a in pairs]] for x, pairs in sorted(policy.table.items())]


def _policy_from_rows(rows: Iterable[list[Any]], actions: tuple[Action, ...]) -> AbstractPolicy:
    return AbstractPolicy({SymbolicState(n, m): tuple(actions[i] for i in idx) for n, m, idx in rows})


def _state_rows(states: Iterable[SymbolicState]) -> list[list[int]]:
    return [[x.n, x.m] for x in sorted(states)]


def _states_from_rows(rows: Iterable[list[int]]) -> frozenset[SymbolicState]:
    return frozenset(SymbolicState(n, m) for n, m in rows)


def save_synthesis(model: SymbolicModel, safety: SafetyResult, reach: ReachResult, path: Path) -> str:
    if model.settings is None:
        raise ValueError("synthesis artifacts need a model built from settings")
    index = {a: i for i, a in enumerate(model.actions)}
    body = {
        "model": settings_digest(settings_header(model.settings)),
        "terminal": {
            "winning": _state_rows(safety.winning),
            "policy": _policy_rows(safety.policy, index),
            "iterations": safety.iterations,
        },
        "reach": {
            "winning": _state_rows(reach.winning),
            "winning0": _state_rows(reach.winning0),
            "ranks": [[x.n, x.m, r] for x, r in sorted(reach.ranks.items())],
            "policy": _policy_rows(reach.policy, index),
            "policy0": _policy_rows(reach.policy0, index),
            "iterations": reach.iterations,
        },
    }
    digest = _write_container(path, SYNTHESIS_FORMAT, body)
    logger.info("saved synthesis artifacts to %s", path)
    return digest


def load_synthesis(path: Path, model: SymbolicModel) -> tuple[SafetyResult, ReachResult]:
    data = _read_container(path, SYNTHESIS_FORMAT)
    if model.settings is None or data.get("model") != settings_digest(settings_header(model.settings)):
        raise StaleModelError(f"{path} was synthesised for a different model; rerun `synth`")
    actions = model.actions
    try:
        term, reach = data["terminal"], data["reach"]
        safety = SafetyResult(
            _states_from_rows(term["winning"]),
            _policy_from_rows(term["policy"], actions),
            int(term["iterations"]),
        )
        result = ReachResult(
            winning=_states_from_rows(reach["winning"]),
            winning0=_states_from_rows(reach["winning0"]),
            ranks={SymbolicState(n, m): int(r) for n, m, r in reach["ranks"]},
            policy=_policy_from_rows(reach["policy"], actions),
            policy0=_policy_from_rows(reach["policy0"], actions),
            iterations=int(reach["iterations"]),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CorruptModelError(f"{path} has malformed sections: {exc}") from exc
    return safety, result


def write_trace_csv(trace: SimulationTrace, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    R = trace.R
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRACE_COLUMNS)
        for i in range(trace.t.size):
            writer.writerow(
                (
                    repr(float(trace.t[i])),
                    repr(float(trace.S[i])),
                    repr(float(trace.I[i])),
                    repr(float(R[i])),
                    repr(float(trace.u[i])),
                    repr(float(trace.epsilon[i])),
                    int(trace.event[i]),
                    str(trace.phase[i]),
                )
            )


def write_events_csv(trace: SimulationTrace, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(EVENT_COLUMNS)
        for ev in trace.events:
            writer.writerow(
                (
                    repr(ev.t),
                    repr(ev.state.S),
                    repr(ev.state.I),
                    repr(ev.pair.u),
                    repr(ev.pair.epsilon),
                    ev.pair.action.k,
                    ev.phase.value,
                    ev.rank,
                )
            )


def read_trace_csv(path: Path) -> dict[str, list[float]]:
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        columns: dict[str, list[Any]] = {name: [] for name in TRACE_COLUMNS}
        for row in reader:
            for name in TRACE_COLUMNS:
                columns[name].append(row[name] if name == "phase" else float(row[name]))
    return columns


def write_json(payload: Mapping[str, Any], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
