from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Mapping, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .dynamics import BLOWUP_BOUND, IntegratorConfig, ModelParams, bisect_crossing, rk4_embedded
from .grid import (
    GRID_TOL,
    Action,
    Grid,
    ProblemBounds,
    SymbolicState,
    Thresholds,
    build_grid_sets,
)

logger = logging.getLogger(__name__)

SideWindow = Literal["span", "as_printed"]
Label = Literal["increase", "decrease", "mixed", "empty"]
Kind = Literal["noninitial", "initial"]

_INC, _DEC = 0, 1
_PENDING, _DONE, _DEAD = 0, 1, 2
# Crossing trackers: upper I-envelope reaching the raised level, lower envelope
# reaching it, lower envelope reaching the lowered level, upper envelope reaching it.
_UP_HI, _UP_LO, _DN_LO, _DN_HI = range(4)
_DIRECTION = (_INC, _INC, _DEC, _DEC)
_PARTNER = (_UP_LO, _UP_HI, _DN_HI, _DN_LO)
# Crossing that closes the side-condition window when it is taken as printed.
_PRINTED_END = {_INC: _UP_HI, _DEC: _DN_LO}
_EMPTY: frozenset[SymbolicState] = frozenset()


@dataclass(frozen=True)
class AbstractionSettings:
    params: ModelParams
    grid: Grid
    bounds: ProblemBounds
    thresholds: Thresholds
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    strict_direction_check: bool = False
    side_window: SideWindow = "span"
    s_floor: Optional[float] = None

    @property
    def floor(self) -> float:
        return self.bounds.S_S if self.s_floor is None else self.s_floor

    def actions(self) -> tuple[Action, ...]:
        return tuple(Action(u, k) for u in self.params.u_levels for k in self.thresholds.steps)


@dataclass(frozen=True)
class TransitionRecord:
    """Outcome of one (state, action) envelope sweep; successor runs are inclusive S-index ranges."""

    state: SymbolicState
    action: Action
    increase: Optional[tuple[int, int]]
    decrease: Optional[tuple[int, int]]
    floor_increase: float = math.nan
    floor_decrease: float = math.nan

    def successors(self) -> frozenset[SymbolicState]:
        out = set()
        k = self.action.k
        if self.increase is not None:
            out.update(SymbolicState(n, self.state.m + k) for n in range(self.increase[0], self.increase[1] + 1))
        if self.decrease is not None:
            out.update(SymbolicState(n, self.state.m - k) for n in range(self.decrease[0], self.decrease[1] + 1))
        return frozenset(out)

    def terminal_label(self, settings: AbstractionSettings) -> bool:
        if self.increase is None and self.decrease is None:
            return False
        grid, bounds = settings.grid, settings.bounds
        if self.state.m + self.action.k > bounds.I_F / grid.eta_I + GRID_TOL:
            return False
        level = bounds.S_F + grid.eta_S / 2
        if self.increase is not None and not self.floor_increase >= level:
            return False
        if self.decrease is not None and not self.floor_decrease >= level:
            return False
        return True


class _EnvelopeSweep:
    """Advance a batch of embedded boxes under one (u, threshold) pair until every direction resolves."""

    def __init__(
        self,
        z0: np.ndarray,
        level: np.ndarray,
        eps: float,
        up_valid: np.ndarray,
        down_valid: np.ndarray,
        u: float,
        settings: AbstractionSettings,
    ) -> None:
        count = z0.shape[1]
        self.u = u
        self.settings = settings
        self.params = settings.params
        self.cfg = settings.integrator
        self.span = settings.side_window == "span"
        self.strict = settings.strict_direction_check
        self.threshold = settings.floor + settings.grid.eta_S / 2

        self.z = z0.astype(float)
        self.up = level + eps
        self.down = level - eps
        self.ids = np.arange(count)
        self.status = np.zeros((2, count), dtype=np.int8)
        self.status[_INC, ~up_valid] = _DEAD
        self.status[_DEC, ~down_valid] = _DEAD
        self.found = np.full((4, count), np.inf)
        self.opened = np.zeros((2, count), dtype=bool)
        self.closed = np.zeros((2, count), dtype=bool)
        self.win_lo = np.full((2, count), np.inf)
        self.win_hi = np.full((2, count), -np.inf)
        self.floor = np.full((2, count), np.nan)
        self.pmin = self.z[0].copy()
        self._kill_below_floor()

        self.out_status = np.full((2, count), _DEAD, dtype=np.int8)
        self.out_win_lo = np.full((2, count), np.inf)
        self.out_win_hi = np.full((2, count), -np.inf)
        self.out_floor = np.full((2, count), np.nan)

    _per_box = ("z", "up", "down", "ids", "pmin")
    _per_direction = ("status", "found", "opened", "closed", "win_lo", "win_hi", "floor")

    def _kill_below_floor(self) -> None:
        for d in (_INC, _DEC):
            kill = (self.status[d] == _PENDING) & ~self.closed[d] & (self.pmin < self.threshold)
            self.status[d, kill] = _DEAD

    def _crossed(self, tracker: int, cols: np.ndarray):
        up, down = self.up[cols], self.down[cols]
        if tracker == _UP_HI:
            return lambda zz: zz[3] >= up
        if tracker == _UP_LO:
            return lambda zz: zz[1] >= up
        if tracker == _DN_LO:
            return lambda zz: zz[1] <= down
        return lambda zz: zz[3] <= down

    def _flush(self, keep: np.ndarray) -> None:
        gone = ~keep
        if gone.any():
            ids = self.ids[gone]
            status = self.status[:, gone]
            self.out_status[:, ids] = np.where(status == _DONE, _DONE, _DEAD)
            self.out_win_lo[:, ids] = self.win_lo[:, gone]
            self.out_win_hi[:, ids] = self.win_hi[:, gone]
            self.out_floor[:, ids] = self.floor[:, gone]
        for name in self._per_box:
            arr = getattr(self, name)
            setattr(self, name, arr[..., keep])
        for name in self._per_direction:
            setattr(self, name, getattr(self, name)[:, keep])

    def _guard(self, direction: int, b: int) -> None:
        if self.status[direction, b] == _PENDING and not self.closed[direction, b]:
            self.status[direction, b] = _DEAD

    def _handle_events(self, b: int, taus: np.ndarray, states: np.ndarray, t: float) -> None:
        base = self.pmin[b]
        for c in sorted((c for c in range(4) if np.isfinite(taus[c])), key=lambda c: taus[c]):
            self.found[c, b] = t + taus[c]
            low_S, high_S = states[c, 0], states[c, 2]
            prefix = min(base, low_S)
            if c == _UP_HI:
                self._guard(_DEC, b)
            if c == _DN_LO and self.strict and self.status[_INC, b] == _PENDING:
                self.status[_INC, b] = _DEAD
            d = _DIRECTION[c]
            if self.status[d, b] != _PENDING:
                continue
            self.win_lo[d, b] = min(self.win_lo[d, b], low_S)
            self.win_hi[d, b] = max(self.win_hi[d, b], high_S)
            self.opened[d, b] = True
            complete = bool(np.isfinite(self.found[_PARTNER[c], b]))
            window_ends = complete if self.span else c == _PRINTED_END[d]
            if window_ends and not self.closed[d, b]:
                self.closed[d, b] = True
                if prefix < self.threshold:
                    self.status[d, b] = _DEAD
                    continue
            if complete:
                self.status[d, b] = _DONE
                self.floor[d, b] = prefix

    def run(self) -> "_EnvelopeSweep":
        p, cfg, u = self.params, self.cfg, self.u
        self._flush((self.status == _PENDING).any(axis=0))
        t, steps = 0.0, 0
        while self.ids.size and t < cfg.horizon - 1e-12:
            h = min(cfg.step, cfg.horizon - t)
            z_next = rk4_embedded(self.z, u, h, p)
            blown = ~np.isfinite(z_next).all(axis=0) | (np.abs(z_next) > BLOWUP_BOUND).any(axis=0)
            if blown.any():
                self.status[:, blown] = np.where(self.status[:, blown] == _PENDING, _DEAD, self.status[:, blown])
                z_next[:, blown] = self.z[:, blown]
            crossings = (
                ~np.isfinite(self.found[_UP_HI]) & (z_next[3] >= self.up),
                ~np.isfinite(self.found[_UP_LO]) & (z_next[1] >= self.up),
                ~np.isfinite(self.found[_DN_LO]) & (z_next[1] <= self.down),
                ~np.isfinite(self.found[_DN_HI]) & (z_next[3] <= self.down),
            )
            hits = (crossings[0] | crossings[1] | crossings[2] | crossings[3]) & ~blown
            if hits.any():
                cols = np.flatnonzero(hits)
                taus = np.full((4, cols.size), np.inf)
                states = np.full((4, 4, cols.size), np.nan)
                for c in range(4):
                    sel = crossings[c][cols]
                    if sel.any():
                        sub = cols[sel]
                        tau, z_tau = bisect_crossing(self.z[:, sub], u, h, self._crossed(c, sub), p, cfg)
                        taus[c, sel] = tau
                        states[c][:, sel] = z_tau
                for pos, b in enumerate(cols):
                    self._handle_events(int(b), taus[:, pos], states[:, :, pos], t)
            for d in (_INC, _DEC):
                ext = (self.status[d] == _PENDING) & self.opened[d]
                self.win_lo[d] = np.where(ext, np.minimum(self.win_lo[d], z_next[0]), self.win_lo[d])
                self.win_hi[d] = np.where(ext, np.maximum(self.win_hi[d], z_next[2]), self.win_hi[d])
            self.pmin = np.minimum(self.pmin, z_next[0])
            self._kill_below_floor()
            self.z = z_next
            steps += 1
            t = min(steps * cfg.step, cfg.horizon)
            keep = (self.status == _PENDING).any(axis=0)
            if not keep.all():
                self._flush(keep)
        self.status[self.status == _PENDING] = _DEAD
        self._flush(np.zeros(self.ids.size, dtype=bool))
        return self


def _successor_range(lo: float, hi: float, m: int, grid: Grid) -> Optional[tuple[int, int]]:
    half = grid.eta_S / 2
    n_lo = max(0, math.ceil((lo - half) / grid.eta_S - GRID_TOL))
    n_hi = min(grid.max_n(m), math.floor((hi + half) / grid.eta_S + GRID_TOL))
    return (n_lo, n_hi) if n_lo <= n_hi else None


def sweep_transitions(
    states: Sequence[SymbolicState], action: Action, kind: Kind, settings: AbstractionSettings
) -> list[TransitionRecord]:
    """Transition records of every state under one action, from a single batched sweep."""
    grid = settings.grid
    records = {x: TransitionRecord(x, action, None, None) for x in states}
    live = [x for x in states if x.m >= 1 and action.k > 0]
    if live:
        n = np.array([x.n for x in live], dtype=float)
        m = np.array([x.m for x in live], dtype=int)
        S = n * grid.eta_S
        level = m * grid.eta_I
        half_I = grid.eta_I / 2 if kind == "initial" else 0.0
        z0 = np.vstack(
            (S - grid.eta_S / 2, level - half_I, S + grid.eta_S / 2, level + half_I)
        )
        up_valid = np.array([grid.max_n(mm + action.k) >= 0 for mm in m])
        down_valid = m - action.k > 0
        sweep = _EnvelopeSweep(
            z0, level, action.k * grid.eta_I, up_valid, down_valid, action.u, settings
        ).run()
        for i, x in enumerate(live):
            ranges: list[Optional[tuple[int, int]]] = [None, None]
            for d, target in ((_INC, x.m + action.k), (_DEC, x.m - action.k)):
                if sweep.out_status[d, i] == _DONE:
                    ranges[d] = _successor_range(
                        sweep.out_win_lo[d, i], sweep.out_win_hi[d, i], target, grid
                    )
            records[x] = TransitionRecord(
                x,
                action,
                ranges[_INC],
                ranges[_DEC],
                float(sweep.out_floor[_INC, i]),
                float(sweep.out_floor[_DEC, i]),
            )
    return [records[x] for x in states]


def _single(
    state: SymbolicState, u: float, eps: float, kind: Kind, settings: AbstractionSettings
) -> TransitionRecord:
    k = settings.grid.threshold_steps(eps)
    return sweep_transitions([state], Action(u, k), kind, settings)[0]


def compute_transitions_noninitial(
    state: SymbolicState, u: float, eps: float, settings: AbstractionSettings
) -> frozenset[SymbolicState]:
    return _single(state, u, eps, "noninitial", settings).successors()


def compute_transitions_initial(
    state: SymbolicState, u: float, eps: float, settings: AbstractionSettings
) -> frozenset[SymbolicState]:
    return _single(state, u, eps, "initial", settings).successors()


def compute_label_LF(
    state: SymbolicState, u: float, eps: float, settings: AbstractionSettings
) -> bool:
    return _single(state, u, eps, "noninitial", settings).terminal_label(settings)


def label_of(state: SymbolicState, k: int, successors: frozenset[SymbolicState]) -> Label:
    if not successors:
        return "empty"
    levels = {x.m for x in successors}
    if levels == {state.m + k}:
        return "increase"
    if levels == {state.m - k}:
        return "decrease"
    return "mixed"


@dataclass(frozen=True)
class SymbolicModel:
    grid: Grid
    bounds: ProblemBounds
    actions: tuple[Action, ...]
    states: frozenset[SymbolicState]
    init_states: frozenset[SymbolicState]
    safe_states: frozenset[SymbolicState]
    target_states: frozenset[SymbolicState]
    trans: Mapping[tuple[SymbolicState, Action], frozenset[SymbolicState]]
    trans0: Mapping[tuple[SymbolicState, Action], frozenset[SymbolicState]]
    terminal_ok: frozenset[tuple[SymbolicState, Action]]
    settings: Optional[AbstractionSettings] = None

    def successors(self, x: SymbolicState, a: Action) -> frozenset[SymbolicState]:
        return self.trans.get((x, a), _EMPTY)

    def successors0(self, x: SymbolicState, a: Action) -> frozenset[SymbolicState]:
        return self.trans0.get((x, a), _EMPTY)

    def label_L(self, x: SymbolicState, a: Action) -> Label:
        return label_of(x, a.k, self.successors0(x, a))

    def label_LF(self, x: SymbolicState, a: Action) -> bool:
        return (x, a) in self.terminal_ok

    def epsilon(self, a: Action) -> float:
        return a.k * self.grid.eta_I

    def stays_below(self, x: SymbolicState, a: Action, level: float) -> bool:
        """Whether the raised trigger level of ``a`` at ``x`` does not exceed ``level``."""
        return x.m + a.k <= level / self.grid.eta_I + GRID_TOL


def compute_label_L(model: SymbolicModel, state: SymbolicState, action: Action) -> Label:
    return model.label_L(state, action)


def build_symbolic_model(settings: AbstractionSettings, workers: int = 1) -> SymbolicModel:
    sets = build_grid_sets(settings.bounds, settings.grid)
    by_kind: dict[Kind, list[SymbolicState]] = {
        "noninitial": sorted(sets.states),
        "initial": sorted(sets.init_states),
    }
    jobs = [(kind, a) for kind in ("noninitial", "initial") for a in settings.actions()]
    logger.info("running %d envelope sweeps on %d worker(s)", len(jobs), workers)
    outputs = Parallel(n_jobs=workers)(
        delayed(sweep_transitions)(by_kind[kind], a, kind, settings) for kind, a in jobs
    )

    trans: dict[tuple[SymbolicState, Action], frozenset[SymbolicState]] = {}
    trans0: dict[tuple[SymbolicState, Action], frozenset[SymbolicState]] = {}
    terminal_ok = set()
    for (kind, a), records in zip(jobs, outputs):
        filled = 0
        for rec in records:
            succ = rec.successors()
            if not succ:
                continue
            filled += 1
            if kind == "initial":
                trans0[(rec.state, a)] = succ
                continue
            trans[(rec.state, a)] = succ
            if rec.terminal_label(settings):
                terminal_ok.add((rec.state, a))
        logger.info("%s u=%g k=%d: %d/%d states with successors", kind, a.u, a.k, filled, len(records))

    return SymbolicModel(
        grid=settings.grid,
        bounds=settings.bounds,
        actions=settings.actions(),
        states=sets.states,
        init_states=sets.init_states,
        safe_states=sets.safe_states,
        target_states=sets.target_states,
        trans=trans,
        trans0=trans0,
        terminal_ok=frozenset(terminal_ok),
        settings=settings,
    )


def save_model(model: SymbolicModel, path) -> str:
    from .store import save_model as _save

    return _save(model, path)


def load_model(path, expected: Optional[AbstractionSettings] = None) -> SymbolicModel:
    from .store import load_model as _load

    return _load(path, expected)
