from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .dynamics import State
from .errors import ConfigError

logger = logging.getLogger(__name__)

# Tolerance in grid units for index arithmetic on float bounds.
GRID_TOL = 1e-9


class SymbolicState(NamedTuple):
    n: int
    m: int


class Action(NamedTuple):
    """An abstract (input level, threshold) pair; the threshold is ``k`` grid steps in I."""

    u: float
    k: int


@dataclass(frozen=True)
class Grid:
    eta_S: float
    eta_I: float

    def __post_init__(self) -> None:
        if not (self.eta_S > 0 and self.eta_I > 0):
            raise ConfigError(f"grid resolutions must be > 0, got ({self.eta_S}, {self.eta_I})")

    def point(self, x: SymbolicState) -> State:
        return State(x.n * self.eta_S, x.m * self.eta_I)

    def level(self, m: int) -> float:
        return m * self.eta_I

    def threshold_steps(self, eps: float) -> int:
        ratio = eps / self.eta_I
        k = round(ratio)
        if abs(ratio - k) > GRID_TOL:
            raise ConfigError(f"threshold {eps} is not an integer multiple of eta_I={self.eta_I}")
        return int(k)

    def snap_level(self, I: float, tol: float = GRID_TOL) -> int | None:
        """Index of the grid line through ``I``, or None when ``I`` is off-grid."""
        ratio = I / self.eta_I
        m = round(ratio)
        return int(m) if abs(ratio - m) <= tol else None

    def in_domain(self, n: int, m: int) -> bool:
        return (
            n >= 0
            and m >= 0
            and n * self.eta_S + m * self.eta_I <= 1.0 + GRID_TOL * min(self.eta_S, self.eta_I)
        )

    def max_n(self, m: int) -> int:
        return math.floor((1.0 - m * self.eta_I) / self.eta_S + GRID_TOL)


@dataclass(frozen=True)
class Thresholds:
    values: tuple[float, ...]
    steps: tuple[int, ...]

    @classmethod
    def from_values(cls, values: Iterable[float], grid: Grid) -> Thresholds:
        vals = tuple(float(v) for v in values)
        if any(a >= b for a, b in zip(vals, vals[1:])):
            raise ConfigError(f"thresholds must be strictly ascending, got {list(vals)}")
        if any(v < 0 or v >= 1 for v in vals):
            raise ConfigError(f"thresholds must lie in [0, 1), got {list(vals)}")
        steps = tuple(grid.threshold_steps(v) for v in vals)
        # A zero threshold is kept for notational closure but is never actionable.
        actionable = [(v, k) for v, k in zip(vals, steps) if k > 0]
        if not actionable:
            raise ConfigError("at least one positive threshold is required")
        return cls(tuple(v for v, _ in actionable), tuple(k for _, k in actionable))


@dataclass(frozen=True)
class ProblemBounds:
    S0_lo: float
    S0_hi: float
    I0_lo: float
    I0_hi: float
    S_S: float
    I_S: float
    S_F: float
    I_F: float

    def __post_init__(self) -> None:
        for name in ("S0_lo", "S0_hi", "I0_lo", "I0_hi", "S_S", "I_S", "S_F", "I_F"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.S0_lo > self.S0_hi or self.I0_lo > self.I0_hi:
            raise ConfigError("initial set bounds are not ordered")
        if self.S0_lo + self.I0_lo > 1.0:
            raise ConfigError("initial set does not meet the state simplex")
        if not self.S_F > self.S_S:
            raise ConfigError(f"S_F ({self.S_F}) must exceed S_S ({self.S_S})")
        if not self.I_F < self.I_S:
            raise ConfigError(f"I_F ({self.I_F}) must be below I_S ({self.I_S})")
        if self.S0_lo < self.S_S or self.I0_hi > self.I_S:
            raise ConfigError("initial set must lie inside the safe set")
        s_meet = max(self.S0_lo, self.S_F)
        if s_meet <= self.S0_hi and self.I0_lo <= min(self.I0_hi, self.I_F) and s_meet + self.I0_lo <= 1.0:
            raise ConfigError("initial set must not intersect the terminal set")

    def in_safe(self, x: State) -> bool:
        return x.S >= self.S_S and x.I <= self.I_S

    def in_terminal(self, x: State) -> bool:
        return x.S >= self.S_F and x.I <= self.I_F

    def in_initial(self, x: State) -> bool:
        return (
            self.S0_lo <= x.S <= self.S0_hi
            and self.I0_lo <= x.I <= self.I0_hi
            and x.S + x.I <= 1.0
        )


@dataclass(frozen=True)
class GridSets:
    states: frozenset[SymbolicState]
    init_states: frozenset[SymbolicState]
    safe_states: frozenset[SymbolicState]
    target_states: frozenset[SymbolicState]


def all_grid_states(grid: Grid) -> list[SymbolicState]:
    states = []
    for m in range(math.floor(1.0 / grid.eta_I + GRID_TOL) + 1):
        for n in range(grid.max_n(m) + 1):
            states.append(SymbolicState(n, m))
    return sorted(states)


def interior_states(
    states: Iterable[SymbolicState], grid: Grid, S_lo: float, I_hi: float
) -> frozenset[SymbolicState]:
    """Grid points whose full eta-box lies in {S >= S_lo, I <= I_hi} within the simplex."""
    inside = set()
    eta_S, eta_I = grid.eta_S, grid.eta_I
    for x in states:
        if x.n - 1 < S_lo / eta_S - GRID_TOL or x.n < 1:
            continue
        if x.m + 1 > I_hi / eta_I + GRID_TOL or x.m < 1:
            continue
        if (x.n + 1) * eta_S + (x.m + 1) * eta_I > 1.0 + GRID_TOL * min(eta_S, eta_I):
            continue
        inside.add(x)
    return frozenset(inside)


def exterior_states(
    states: Iterable[SymbolicState], grid: Grid, bounds: ProblemBounds
) -> frozenset[SymbolicState]:
    """Grid points whose half-cell meets the initial set."""
    out = set()
    eta_S, eta_I = grid.eta_S, grid.eta_I
    for x in states:
        if not (bounds.S0_lo / eta_S - 0.5 - GRID_TOL <= x.n <= bounds.S0_hi / eta_S + 0.5 + GRID_TOL):
            continue
        if not (bounds.I0_lo / eta_I - 0.5 - GRID_TOL <= x.m <= bounds.I0_hi / eta_I + 0.5 + GRID_TOL):
            continue
        s_min = max(bounds.S0_lo, (x.n - 0.5) * eta_S)
        i_min = max(bounds.I0_lo, (x.m - 0.5) * eta_I)
        if s_min + i_min > 1.0 + GRID_TOL * min(eta_S, eta_I):
            continue
        out.add(x)
    return frozenset(out)


def build_grid_sets(bounds: ProblemBounds, grid: Grid) -> GridSets:
    states = all_grid_states(grid)
    init_states = exterior_states(states, grid, bounds)
    safe_states = interior_states(states, grid, bounds.S_S, bounds.I_S)
    target_states = interior_states(states, grid, bounds.S_F, bounds.I_F)
    if not safe_states:
        raise ConfigError("infeasible configuration: the safe grid set is empty")
    if not target_states:
        raise ConfigError("infeasible configuration: the terminal grid set is empty")
    logger.info(
        "grid sets: %d states, %d initial, %d safe, %d terminal",
        len(states),
        len(init_states),
        len(safe_states),
        len(target_states),
    )
    return GridSets(frozenset(states), init_states, safe_states, target_states)
