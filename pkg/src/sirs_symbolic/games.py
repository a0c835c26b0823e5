from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import AbstractSet, Iterable, Mapping

from .abstraction import SymbolicModel
from .grid import Action, SymbolicState

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AbstractPolicy:
    table: Mapping[SymbolicState, tuple[Action, ...]]

    def pairs(self, x: SymbolicState) -> tuple[Action, ...]:
        return self.table.get(x, ())

    @property
    def domain(self) -> frozenset[SymbolicState]:
        return frozenset(x for x, pairs in self.table.items() if pairs)


@dataclass(frozen=True)
class SafetyResult:
    winning: frozenset[SymbolicState]
    policy: AbstractPolicy
    iterations: int

    @property
    def ok(self) -> bool:
        return bool(self.winning)


@dataclass(frozen=True)
class ReachResult:
    winning: frozenset[SymbolicState]
    winning0: frozenset[SymbolicState]
    ranks: Mapping[SymbolicState, int]
    policy: AbstractPolicy
    policy0: AbstractPolicy
    iterations: int

    @property
    def initial_rank(self) -> int:
        """Rank attached to every initial state; one above the outermost shell."""
        return self.iterations + 1

    @property
    def ok(self) -> bool:
        return bool(self.winning0)


def _terminal_pairs(model: SymbolicModel, x: SymbolicState, P: AbstractSet[SymbolicState]) -> tuple[Action, ...]:
    return tuple(
        a for a in model.actions if model.label_LF(x, a) and model.successors(x, a) <= P
    )


def pre_F(P: AbstractSet[SymbolicState], model: SymbolicModel) -> frozenset[SymbolicState]:
    return frozenset(x for x in sorted(model.target_states) if _terminal_pairs(model, x, P))


def safety_game(model: SymbolicModel) -> SafetyResult:
    P = frozenset(model.target_states)
    iterations = 0
    while True:
        iterations += 1
        shrunk = P & pre_F(P, model)
        if shrunk == P:
            break
        P = shrunk
    table = {x: _terminal_pairs(model, x, P) for x in sorted(P)}
    logger.info("safety game: %d/%d terminal states winning after %d iterations", len(P), len(model.target_states), iterations)
    return SafetyResult(P, AbstractPolicy(table), iterations)


def _admissible(model: SymbolicModel, x: SymbolicState, a: Action, succ: frozenset[SymbolicState]) -> bool:
    return bool(succ) and model.stays_below(x, a, model.bounds.I_S)


def _pre_over(
    candidates: Iterable[SymbolicState], Q: AbstractSet[SymbolicState], model: SymbolicModel
) -> frozenset[SymbolicState]:
    found = set()
    for x in candidates:
        for a in model.actions:
            succ = model.successors(x, a)
            if _admissible(model, x, a, succ) and succ <= Q:
                found.add(x)
                break
    return frozenset(found)


def pre(Q: AbstractSet[SymbolicState], model: SymbolicModel) -> frozenset[SymbolicState]:
    return _pre_over(sorted(model.safe_states), Q, model)


def _initial_pairs(model: SymbolicModel, x: SymbolicState, W: AbstractSet[SymbolicState]) -> tuple[Action, ...]:
    return tuple(
        a
        for a in model.actions
        if _admissible(model, x, a, model.successors0(x, a))
        and model.label_L(x, a) in ("increase", "decrease")
        and model.successors0(x, a) <= W
    )


def pre_0(W: AbstractSet[SymbolicState], model: SymbolicModel) -> frozenset[SymbolicState]:
    return frozenset(x for x in sorted(model.init_states) if _initial_pairs(model, x, W))


def reachability_game(model: SymbolicModel, seed: AbstractSet[SymbolicState]) -> ReachResult:
    ranks: dict[SymbolicState, int] = {x: 0 for x in sorted(seed)}
    Q = frozenset(seed)
    shell = 0
    while True:
        added = _pre_over(sorted(model.safe_states - Q), Q, model)
        if not added:
            break
        shell += 1
        for x in sorted(added):
            ranks[x] = shell
        Q = Q | added

    table = {}
    for x in sorted(Q - frozenset(seed)):
        table[x] = tuple(
            a
            for a in model.actions
            if _admissible(model, x, a, model.successors(x, a))
            and all(ranks.get(s, shell + 1) < ranks[x] for s in model.successors(x, a))
        )

    winning0 = pre_0(Q, model)
    initial_rank = shell + 1
    for x in sorted(winning0 - Q):
        ranks[x] = initial_rank
    # Every successor inside Q has rank <= shell, so the descent condition against
    # initial_rank reduces to membership in Q.
    table0 = {x: _initial_pairs(model, x, Q) for x in sorted(winning0)}
    logger.info(
        "reachability game: %d winning states in %d shells, %d/%d initial states winning",
        len(Q),
        shell,
        len(winning0),
        len(model.init_states),
    )
    return ReachResult(Q, winning0, ranks, AbstractPolicy(table), AbstractPolicy(table0), shell)


def verify_safety_closure(model: SymbolicModel, safety: SafetyResult) -> list[str]:
    problems = []
    W = safety.winning
    if (pre_F(W, model) & W) != W:
        problems.append("terminal winning set is not a fixed point of pre_F")
    for x, pairs in sorted(safety.policy.table.items()):
        if not pairs:
            problems.append(f"terminal policy is empty at {tuple(x)}")
        for a in pairs:
            if not model.label_LF(x, a):
                problems.append(f"terminal pair {tuple(a)} at {tuple(x)} has L_F = 0")
            if not model.successors(x, a) <= W:
                problems.append(f"terminal pair {tuple(a)} at {tuple(x)} leaves the winning set")
    return problems


def verify_rank_descent(model: SymbolicModel, reach: ReachResult) -> list[str]:
    problems = []
    for x in sorted(reach.winning):
        rank = reach.ranks[x]
        if rank == 0:
            continue
        pairs = reach.policy.pairs(x)
        if not pairs:
            problems.append(f"reach policy is empty at {tuple(x)} (rank {rank})")
        for a in pairs:
            worst = max(reach.ranks.get(s, reach.initial_rank) for s in model.successors(x, a))
            if worst >= rank:
                problems.append(f"pair {tuple(a)} at {tuple(x)} does not decrease rank {rank} (max successor {worst})")
    for x in sorted(reach.winning0):
        for a in reach.policy0.pairs(x):
            if not model.successors0(x, a) <= reach.winning:
                problems.append(f"initial pair {tuple(a)} at {tuple(x)} leaves the winning set")
        if not reach.policy0.pairs(x):
            problems.append(f"initial policy is empty at {tuple(x)}")
    return problems
