from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .dynamics import (
    EventHit,
    IntegratorConfig,
    ModelParams,
    State,
    concrete_event_time,
    trajectory_until_event,
)
from .errors import ConfigError, DomainViolation, SynthesisInconsistency
from .grid import Grid, ProblemBounds
from .refine import ControlPair, Phase, PolicySet

logger = logging.getLogger(__name__)

COST_TOL = 1e-9
SET_TOL = 1e-9
EVENT_GRID_TOL = 1e-4


@dataclass(frozen=True)
class SelectionConfig:
    lam: float = 0.99
    horizon_T: float = math.inf
    max_depth: int = 8
    tail_tol: float = 1e-3

    def __post_init__(self) -> None:
        if not 0 < self.lam <= 1:
            raise ConfigError(f"lambda must lie in (0, 1], got {self.lam}")
        if not self.horizon_T > 0:
            raise ConfigError(f"horizon_T must be > 0, got {self.horizon_T}")
        if math.isinf(self.horizon_T) and self.lam >= 1:
            raise ConfigError("an infinite horizon needs lambda < 1")
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        if not 0 <= self.tail_tol < 1:
            raise ConfigError(f"tail_tol must lie in [0, 1), got {self.tail_tol}")


def interval_cost(a: float, b: float, u: float, lam: float) -> float:
    """Closed form of the integral of lam**t / u over [a, b]."""
    if lam == 1.0:
        return (b - a) / u
    end = 0.0 if math.isinf(b) else lam**b
    return (lam**a - end) / (u * math.log(1.0 / lam))


def _preference(pair: ControlPair) -> tuple[float, float]:
    return (-pair.u, -pair.epsilon)


class Rollout:
    """Depth-limited branch-and-bound over deterministic concrete rollouts.

    Event predictions are memoised on the exact start state, so consecutive
    decisions of one closed-loop run reuse most of the previous search tree.
    """

    def __init__(self, policies: PolicySet, sel: SelectionConfig, p: ModelParams, cfg: IntegratorConfig) -> None:
        self.policies = policies
        self.sel = sel
        self.p = p
        self.cfg = cfg
        self.u_max = p.u_max
        self._events: dict[tuple[float, float, float, float], Optional[EventHit]] = {}

    def event(self, x: State, pair: ControlPair) -> Optional[EventHit]:
        key = (x.S, x.I, pair.u, pair.epsilon)
        if key not in self._events:
            self._events[key] = concrete_event_time(x, pair.u, pair.epsilon, self.p, self.cfg)
        return self._events[key]

    def candidates(self, x: State, phase: Phase) -> list[ControlPair]:
        try:
            pairs = self.policies.query(phase, x)
        except DomainViolation as exc:
            raise SynthesisInconsistency(f"rollout left the policy domain: {exc}") from exc
        if not pairs:
            raise SynthesisInconsistency(
                f"empty {phase.value} policy at ({x.S:.6f}, {x.I:.6f})"
            )
        return sorted(pairs, key=_preference)

    def next_phase(self, x: State, phase: Phase) -> Phase:
        if phase is Phase.TERMINAL or self.policies.in_XF(x):
            return Phase.TERMINAL
        return Phase.REACH

    def pair_value(
        self, x: State, phase: Phase, pair: ControlPair, depth: int, t0: float, budget: float
    ) -> float:
        sel = self.sel
        tail = interval_cost(t0, sel.horizon_T, pair.u, sel.lam)
        if depth >= sel.max_depth or sel.lam**t0 < sel.tail_tol:
            return tail
        hit = self.event(x, pair)
        if hit is None or t0 + hit.dt >= sel.horizon_T:
            return tail
        t1 = t0 + hit.dt
        head = interval_cost(t0, t1, pair.u, sel.lam)
        if head + interval_cost(t1, sel.horizon_T, self.u_max, sel.lam) >= budget - COST_TOL:
            return math.inf
        return head + self.value(hit.state, self.next_phase(hit.state, phase), depth + 1, t1, budget - head)

    def value(self, x: State, phase: Phase, depth: int, t0: float, budget: float) -> float:
        best = budget
        for pair in self.candidates(x, phase):
            v = self.pair_value(x, phase, pair, depth, t0, best)
            if v < best - COST_TOL:
                best = v
        return best

    def choose(self, x: State, phase: Phase) -> tuple[ControlPair, float]:
        pairs = self.candidates(x, phase)
        best_pair, best = pairs[0], math.inf
        if len(pairs) == 1:
            return best_pair, math.nan
        for pair in pairs:
            v = self.pair_value(x, phase, pair, 1, 0.0, best)
            if v < best - COST_TOL:
                best_pair, best = pair, v
        return best_pair, best


def rollout_cost(
    x: State,
    phase: Phase,
    depth: int,
    sel: SelectionConfig,
    policies: PolicySet,
    p: ModelParams,
    cfg: IntegratorConfig,
) -> float:
    """Optimal rollout objective at ``x`` when ``depth`` events of the lookahead are already spent."""
    return Rollout(policies, sel, p, cfg).value(x, phase, depth, 0.0, math.inf)


def select_pair(
    x: State,
    phase: Phase,
    policies: PolicySet,
    sel: SelectionConfig,
    p: ModelParams,
    cfg: IntegratorConfig,
    rollout: Optional[Rollout] = None,
) -> ControlPair:
    engine = rollout or Rollout(policies, sel, p, cfg)
    pair, _ = engine.choose(x, phase)
    return pair


@dataclass(frozen=True)
class TraceEvent:
    t: float
    state: State
    pair: ControlPair
    phase: Phase
    rank: int


@dataclass(frozen=True)
class SimulationTrace:
    t: np.ndarray
    S: np.ndarray
    I: np.ndarray
    u: np.ndarray
    epsilon: np.ndarray
    event: np.ndarray
    phase: np.ndarray
    events: tuple[TraceEvent, ...]
    failure: Optional[str] = None
    truncated: bool = False

    @property
    def R(self) -> np.ndarray:
        return 1.0 - self.S - self.I


class _TraceBuilder:
    def __init__(self) -> None:
        self.rows: list[tuple[float, float, float, float, float, bool, str]] = []
        self.events: list[TraceEvent] = []

    def add_event(self, t: float, x: State, pair: ControlPair, phase: Phase, rank: int) -> None:
        self.rows.append((t, x.S, x.I, pair.u, pair.epsilon, True, phase.value))
        self.events.append(TraceEvent(t, x, pair, phase, rank))

    def add_samples(self, t0: float, times: np.ndarray, S: np.ndarray, I: np.ndarray, pair: ControlPair, phase: Phase) -> None:
        self.rows.extend(
            (t0 + float(tt), float(ss), float(ii), pair.u, pair.epsilon, False, phase.value)
            for tt, ss, ii in zip(times, S, I)
        )

    def build(self, failure: Optional[str], truncated: bool) -> SimulationTrace:
        cols = list(zip(*self.rows)) if self.rows else [()] * 7
        return SimulationTrace(
            t=np.asarray(cols[0], dtype=float),
            S=np.asarray(cols[1], dtype=float),
            I=np.asarray(cols[2], dtype=float),
            u=np.asarray(cols[3], dtype=float),
            epsilon=np.asarray(cols[4], dtype=float),
            event=np.asarray(cols[5], dtype=bool),
            phase=np.asarray(cols[6], dtype=str),
            events=tuple(self.events),
            failure=failure,
            truncated=truncated,
        )


def simulate_closed_loop(
    x0: State,
    policies: PolicySet,
    sel: SelectionConfig,
    p: ModelParams,
    cfg: IntegratorConfig,
    t_end: float = 1000.0,
    every: int = 1,
) -> SimulationTrace:
    if policies.in_XF(x0):
        phase = Phase.TERMINAL
    elif policies.in_X0(x0):
        phase = Phase.REACH_INITIAL
    else:
        raise DomainViolation(f"initial state ({x0.S}, {x0.I}) is outside X'_0")

    rollout = Rollout(policies, sel, p, cfg)
    trace = _TraceBuilder()
    t, x = 0.0, x0
    failure: Optional[str] = None
    truncated = False
    while t < t_end - 1e-12:
        try:
            rank = policies.rank_at(phase, x)
            pair, _ = rollout.choose(x, phase)
        except (DomainViolation, SynthesisInconsistency) as exc:
            failure = str(exc)
            logger.error("closed loop stopped at t=%.4f: %s", t, failure)
            break
        trace.add_event(t, x, pair, phase, rank)
        logger.debug("event t=%.4f x=(%.6f, %.6f) phase=%s pair=(%g, %g)", t, x.S, x.I, phase.value, pair.u, pair.epsilon)

        segment = trajectory_until_event(x, pair.u, pair.epsilon, p, cfg, t_limit=t_end - t, every=every)
        trace.add_samples(t, segment.times, segment.S, segment.I, pair, phase)
        if segment.event is None:
            if t_end - t > cfg.horizon:
                truncated = True
                logger.warning("no trigger within %g days after t=%.4f; run truncated", cfg.horizon, t)
            break
        t += segment.event.dt
        x = segment.event.state
        if phase is not Phase.TERMINAL and policies.in_XF(x):
            logger.info("terminal phase entered at t=%.4f", t)
            phase = Phase.TERMINAL
        elif phase is Phase.REACH_INITIAL:
            phase = Phase.REACH
    return trace.build(failure, truncated)


def batch_simulate(
    initial_states: Sequence[State],
    policies: PolicySet,
    sel: SelectionConfig,
    p: ModelParams,
    cfg: IntegratorConfig,
    bounds: ProblemBounds,
    t_end: float = 1000.0,
    every: int = 1,
    workers: int = 1,
) -> list[tuple[SimulationTrace, MonitorReport]]:
    runnable = [x for x in initial_states if policies.in_X0(x) or policies.in_XF(x)]
    if len(runnable) < len(initial_states):
        logger.warning("skipping %d initial state(s) outside X'_0", len(initial_states) - len(runnable))
    traces = Parallel(n_jobs=workers)(
        delayed(simulate_closed_loop)(x, policies, sel, p, cfg, t_end, every) for x in runnable
    )
    return [(tr, monitor(tr, bounds, policies.model.grid)) for tr in traces]


@dataclass(frozen=True)
class MonitorReport:
    min_S: float
    max_I: float
    xf_entry_time: Optional[float]
    terminal_switch_time: Optional[float]
    xs_violation_time: Optional[float]
    xf_exit_time: Optional[float]
    event_count: int
    rank_sequence: tuple[int, ...]
    ranks_decreasing: bool
    events_on_grid: bool
    input_piecewise_constant: bool
    failure: Optional[str] = None
    truncated: bool = False
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def compliant(self) -> bool:
        return (
            self.failure is None
            and self.xs_violation_time is None
            and self.terminal_switch_time is not None
            and self.xf_exit_time is None
            and self.ranks_decreasing
            and self.events_on_grid
            and self.input_piecewise_constant
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["rank_sequence"] = list(self.rank_sequence)
        data["notes"] = list(self.notes)
        data["compliant"] = self.compliant
        return data


def _first_time(t: np.ndarray, mask: np.ndarray) -> Optional[float]:
    hits = np.flatnonzero(mask)
    return float(t[hits[0]]) if hits.size else None


def monitor(trace: SimulationTrace, bounds: ProblemBounds, grid: Optional[Grid] = None) -> MonitorReport:
    notes = []
    t, S, I = trace.t, trace.S, trace.I
    in_F = (S >= bounds.S_F - SET_TOL) & (I <= bounds.I_F + SET_TOL)
    outside_S = (S < bounds.S_S - SET_TOL) | (I > bounds.I_S + SET_TOL)

    switch = next((ev.t for ev in trace.events if ev.phase is Phase.TERMINAL), None)
    exit_time = None
    if switch is not None:
        exit_time = _first_time(t, (t >= switch) & ~in_F)

    ranks = tuple(ev.rank for ev in trace.events if ev.phase is not Phase.TERMINAL)
    decreasing = all(a > b for a, b in zip(ranks, ranks[1:]))
    if not decreasing:
        notes.append("rank sequence is not strictly decreasing")

    on_grid = True
    if grid is not None:
        for ev in trace.events[1:]:
            ratio = ev.state.I / grid.eta_I
            if abs(ratio - round(ratio)) > EVENT_GRID_TOL:
                on_grid = False
                notes.append(f"event at t={ev.t:.4f} is off the I-grid (I={ev.state.I:.9f})")
                break

    changes = np.flatnonzero(np.diff(trace.u) != 0) + 1
    piecewise = bool(trace.event[changes].all()) if changes.size else True

    return MonitorReport(
        min_S=float(S.min()) if S.size else math.nan,
        max_I=float(I.max()) if I.size else math.nan,
        xf_entry_time=_first_time(t, in_F),
        terminal_switch_time=switch,
        xs_violation_time=_first_time(t, outside_S),
        xf_exit_time=exit_time,
        event_count=len(trace.events),
        rank_sequence=ranks,
        ranks_decreasing=decreasing,
        events_on_grid=on_grid,
        input_piecewise_constant=piecewise,
        failure=trace.failure,
        truncated=trace.truncated,
        notes=tuple(notes),
    )


def trace_cost(trace: SimulationTrace, lam: float, horizon_T: float = math.inf) -> float:
    """Realised discounted cost of a trace, integrated in closed form between its events."""
    if not trace.events:
        return 0.0
    stop = min(float(trace.t[-1]), horizon_T)
    total = 0.0
    starts = [ev.t for ev in trace.events] + [stop]
    for ev, t_next in zip(trace.events, starts[1:]):
        if ev.t >= stop:
            break
        total += interval_cost(ev.t, min(t_next, stop), ev.pair.u, lam)
    return total
