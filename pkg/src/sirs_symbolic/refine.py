from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from itertools import product
from typing import AbstractSet, Literal, Mapping, NamedTuple, Optional

import numpy as np

from .abstraction import SymbolicModel
from .dynamics import State
from .errors import DomainViolation
from .games import AbstractPolicy, ReachResult, SafetyResult
from .grid import Action, Grid, ProblemBounds, SymbolicState
from .reach import IntervalBox

logger = logging.getLogger(__name__)

HALF_CELL_TOL = 1e-9
SNAP_TOL = 1e-9
COVER_TOL = 1e-9


class Phase(str, Enum):
    REACH_INITIAL = "reach_initial"
    REACH = "reach"
    TERMINAL = "terminal"


class ControlPair(NamedTuple):
    u: float
    epsilon: float
    action: Action


@dataclass(frozen=True)
class Relation:
    kind: Literal["R0", "R"]
    grid: Grid

    def contains(self, x_tilde: SymbolicState, x: State) -> bool:
        grid = self.grid
        if abs(x_tilde.n * grid.eta_S - x.S) > grid.eta_S / 2 + HALF_CELL_TOL:
            return False
        if self.kind == "R0":
            return abs(x_tilde.m * grid.eta_I - x.I) <= grid.eta_I / 2 + HALF_CELL_TOL
        return grid.snap_level(x.I, SNAP_TOL / grid.eta_I) == x_tilde.m

    def neighbours(self, x: State) -> list[SymbolicState]:
        """Grid states that may be related to ``x``; membership still has to be tested."""
        grid = self.grid
        n0 = round(x.S / grid.eta_S)
        ns = (n0 - 1, n0, n0 + 1)
        if self.kind == "R0":
            m0 = round(x.I / grid.eta_I)
            ms = (m0 - 1, m0, m0 + 1)
        else:
            m = grid.snap_level(x.I, SNAP_TOL / grid.eta_I)
            ms = () if m is None else (m,)
        return [SymbolicState(n, m) for n, m in product(ns, ms) if n >= 0 and m >= 0]


def nearest_state(x: State, candidates: AbstractSet[SymbolicState], grid: Grid) -> SymbolicState:
    """Euclidean-nearest candidate; equidistant candidates resolve to the smallest (n, m)."""
    if not candidates:
        raise ValueError("nearest_state needs at least one candidate")
    ordered = sorted(candidates)
    idx = np.asarray(ordered, dtype=float)
    dist = (idx[:, 0] * grid.eta_S - x.S) ** 2 + (idx[:, 1] * grid.eta_I - x.I) ** 2
    tie = 1e-12 * min(grid.eta_S, grid.eta_I) ** 2
    best = int(np.flatnonzero(dist <= dist.min() + tie)[0])
    return ordered[best]


@dataclass(frozen=True)
class ConcretePolicy:
    phase: Phase
    policy: AbstractPolicy
    domain: frozenset[SymbolicState]
    relation: Relation
    model: SymbolicModel

    def grid_state(self, x: State) -> Optional[SymbolicState]:
        related = {s for s in self.relation.neighbours(x) if s in self.domain and self.relation.contains(s, x)}
        if not related:
            return None
        return nearest_state(x, related, self.relation.grid)

    def pairs(self, x: State) -> tuple[ControlPair, ...]:
        x_tilde = self.grid_state(x)
        if x_tilde is None:
            raise DomainViolation(f"state ({x.S:.6f}, {x.I:.6f}) is outside the {self.phase.value} policy domain")
        return tuple(self._refine(x_tilde, x, a) for a in self.policy.pairs(x_tilde))

    def _refine(self, x_tilde: SymbolicState, x: State, a: Action) -> ControlPair:
        if self.phase is not Phase.REACH_INITIAL:
            return ControlPair(a.u, self.model.epsilon(a), a)
        # The adjusted threshold puts the trigger on the grid line the label points to.
        grid = self.model.grid
        if self.model.label_L(x_tilde, a) == "increase":
            eps = (x_tilde.m + a.k) * grid.eta_I - x.I
        else:
            eps = x.I - (x_tilde.m - a.k) * grid.eta_I
        return ControlPair(a.u, eps, a)


@dataclass(frozen=True)
class PolicySet:
    model: SymbolicModel
    initial: ConcretePolicy
    reach: ConcretePolicy
    terminal: ConcretePolicy
    ranks: Mapping[SymbolicState, int]
    initial_rank: int

    def for_phase(self, phase: Phase) -> ConcretePolicy:
        return {Phase.REACH_INITIAL: self.initial, Phase.REACH: self.reach, Phase.TERMINAL: self.terminal}[phase]

    def in_X0(self, x: State) -> bool:
        return self.initial.grid_state(x) is not None

    def in_X(self, x: State) -> bool:
        return self.reach.grid_state(x) is not None

    def in_XF(self, x: State) -> bool:
        return self.terminal.grid_state(x) is not None

    def query(self, phase: Phase, x: State) -> tuple[ControlPair, ...]:
        return self.for_phase(phase).pairs(x)

    def rank_at(self, phase: Phase, x: State) -> int:
        if phase is Phase.TERMINAL:
            return 0
        if phase is Phase.REACH_INITIAL:
            return self.initial_rank
        x_tilde = self.reach.grid_state(x)
        if x_tilde is None:
            raise DomainViolation(f"state ({x.S:.6f}, {x.I:.6f}) has no rank")
        return self.ranks[x_tilde]


def build_policies(model: SymbolicModel, safety: SafetyResult, reach: ReachResult) -> PolicySet:
    grid = model.grid
    r0, r = Relation("R0", grid), Relation("R", grid)
    return PolicySet(
        model=model,
        initial=ConcretePolicy(Phase.REACH_INITIAL, reach.policy0, reach.winning0, r0, model),
        reach=ConcretePolicy(Phase.REACH, reach.policy, reach.winning, r, model),
        terminal=ConcretePolicy(Phase.TERMINAL, safety.policy, safety.winning, r, model),
        ranks=reach.ranks,
        initial_rank=reach.initial_rank,
    )


def query_initial(policies: PolicySet, x: State) -> tuple[ControlPair, ...]:
    return policies.initial.pairs(x)


def query_reach(policies: PolicySet, x: State) -> tuple[ControlPair, ...]:
    return policies.reach.pairs(x)


def query_terminal(policies: PolicySet, x: State) -> tuple[ControlPair, ...]:
    return policies.terminal.pairs(x)


@dataclass(frozen=True)
class CoverageReport:
    covered: bool
    uncovered: tuple[IntervalBox, ...]

    @property
    def uncovered_area(self) -> float:
        return sum(box.area for box in self.uncovered)


def _cell_groups(lo: float, hi: float, eta: float) -> list[tuple[int, ...]]:
    """Half-cell index groups meeting [lo, hi]; a degenerate interval yields one group of candidates."""
    if hi - lo <= COVER_TOL:
        first = math.ceil(lo / eta - 0.5 - COVER_TOL)
        last = math.floor(lo / eta + 0.5 + COVER_TOL)
        return [tuple(range(first, last + 1))]
    first = math.floor(lo / eta - 0.5 + COVER_TOL) + 1
    last = math.ceil(hi / eta + 0.5 - COVER_TOL) - 1
    return [(n,) for n in range(first, last + 1)]


def check_initial_coverage(
    bounds: ProblemBounds, winning0: AbstractSet[SymbolicState], grid: Grid
) -> CoverageReport:
    """Test that the half-cells of ``winning0`` cover the initial set, cell by cell."""
    uncovered = []
    for ns, ms in product(
        _cell_groups(bounds.S0_lo, bounds.S0_hi, grid.eta_S),
        _cell_groups(bounds.I0_lo, bounds.I0_hi, grid.eta_I),
    ):
        s_lo = max(bounds.S0_lo, (ns[0] - 0.5) * grid.eta_S)
        s_hi = min(bounds.S0_hi, (ns[-1] + 0.5) * grid.eta_S)
        i_lo = max(bounds.I0_lo, (ms[0] - 0.5) * grid.eta_I)
        i_hi = min(bounds.I0_hi, (ms[-1] + 0.5) * grid.eta_I)
        if s_lo + i_lo > 1.0 - COVER_TOL:
            continue
        if any(SymbolicState(n, m) in winning0 for n, m in product(ns, ms)):
            continue
        uncovered.append(IntervalBox(State(s_lo, i_lo), State(s_hi, i_hi)))
    if uncovered:
        logger.warning("initial set not covered: %d uncovered cell(s)", len(uncovered))
    return CoverageReport(not uncovered, tuple(uncovered))
