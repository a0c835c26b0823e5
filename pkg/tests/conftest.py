from __future__ import annotations

from typing import Iterable, Mapping, Optional

import pytest

from sirs_symbolic.abstraction import SymbolicModel, build_symbolic_model
from sirs_symbolic.config import RunConfig
from sirs_symbolic.dynamics import IntegratorConfig, ModelParams
from sirs_symbolic.games import reachability_game, safety_game
from sirs_symbolic.grid import Action, Grid, ProblemBounds, SymbolicState
from sirs_symbolic.refine import PolicySet, build_policies

TOY_GRID = Grid(0.1, 0.1)
TOY_ACTION = Action(0.2, 1)


@pytest.fixture
def params() -> ModelParams:
    return ModelParams(gamma=0.15, xi=0.02, u_levels=(0.26, 0.22, 0.17))


@pytest.fixture
def integrator() -> IntegratorConfig:
    return IntegratorConfig()


@pytest.fixture
def reference_cfg() -> RunConfig:
    return RunConfig()


@pytest.fixture(scope="session")
def reference_policies() -> PolicySet:
    """Policies synthesised from the full-resolution default model, built once per session."""
    model = build_symbolic_model(RunConfig().abstraction_settings(), workers=-1)
    safety = safety_game(model)
    reach = reachability_game(model, safety.winning)
    assert safety.ok and reach.ok
    return build_policies(model, safety, reach)


def toy_bounds(*, I_S: float = 1.0, I_F: float = 0.9) -> ProblemBounds:
    return ProblemBounds(0.0, 0.0, 0.0, 0.0, S_S=0.0, I_S=I_S, S_F=0.1, I_F=I_F)


def make_model(
    *,
    states: Iterable[SymbolicState],
    trans: Mapping[tuple[SymbolicState, Action], Iterable[SymbolicState]],
    safe: Optional[Iterable[SymbolicState]] = None,
    target: Iterable[SymbolicState] = (),
    init: Iterable[SymbolicState] = (),
    trans0: Optional[Mapping[tuple[SymbolicState, Action], Iterable[SymbolicState]]] = None,
    terminal_ok: Optional[Iterable[tuple[SymbolicState, Action]]] = None,
    actions: tuple[Action, ...] = (TOY_ACTION,),
    bounds: Optional[ProblemBounds] = None,
) -> SymbolicModel:
    """Hand-built symbolic model; terminal labels default to every pair with successors."""
    states = frozenset(states)
    trans = {key: frozenset(succ) for key, succ in trans.items() if succ}
    trans0 = {key: frozenset(succ) for key, succ in (trans0 or {}).items() if succ}
    if terminal_ok is None:
        terminal_ok = trans.keys()
    return SymbolicModel(
        grid=TOY_GRID,
        bounds=bounds or toy_bounds(),
        actions=actions,
        states=states,
        init_states=frozenset(init),
        safe_states=frozenset(states if safe is None else safe),
        target_states=frozenset(target),
        trans=trans,
        trans0=trans0,
        terminal_ok=frozenset(terminal_ok),
    )


def small_model(cfg: RunConfig) -> SymbolicModel:
    """Four-state model carrying real settings, so it can be saved and reloaded."""
    settings = cfg.abstraction_settings()
    actions = settings.actions()
    a, b = actions[0], actions[-1]
    x7, x8, t5, t6 = SymbolicState(80, 7), SymbolicState(79, 8), SymbolicState(80, 5), SymbolicState(81, 5)
    return SymbolicModel(
        grid=settings.grid,
        bounds=settings.bounds,
        actions=actions,
        states=frozenset({x7, x8, t5, t6}),
        init_states=frozenset({x7}),
        safe_states=frozenset({x7, x8, t5, t6}),
        target_states=frozenset({t5, t6}),
        trans={(x7, a): frozenset({x8, SymbolicState(80, 8)}), (t5, b): frozenset({t5, t6})},
        trans0={(x7, b): frozenset({t5, t6})},
        terminal_ok=frozenset({(t5, b)}),
        settings=settings,
    )
