from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from sirs_symbolic.abstraction import (
    _DEAD,
    _DEC,
    _DONE,
    _INC,
    AbstractionSettings,
    _EnvelopeSweep,
    build_symbolic_model,
    compute_label_LF,
    compute_transitions_initial,
    compute_transitions_noninitial,
    label_of,
    save_model,
    sweep_transitions,
)
from sirs_symbolic.dynamics import (
    EmbeddedState,
    IntegratorConfig,
    State,
    concrete_event_time,
    crossing_time,
    integrate_embedded,
    integrate_f,
)
from sirs_symbolic.grid import Action, Grid, SymbolicState, build_grid_sets

SHORT = IntegratorConfig(step=0.01, horizon=150.0)


@pytest.fixture
def settings(reference_cfg) -> AbstractionSettings:
    base = reference_cfg.abstraction_settings()
    return AbstractionSettings(
        params=base.params,
        grid=base.grid,
        bounds=base.bounds,
        thresholds=base.thresholds,
        integrator=SHORT,
    )


def _lands_near(hit_state: State, successors, grid) -> bool:
    m = grid.snap_level(hit_state.I, 1e-6)
    return any(
        s.m == m and abs(s.n * grid.eta_S - hit_state.S) <= grid.eta_S / 2 + 1e-9 for s in successors
    )


def _complete_directions(box: EmbeddedState, u: float, level: float, eps: float, settings) -> set[str]:
    """Directions in which both I-envelopes reach their trigger level within the horizon."""
    p, cfg = settings.params, settings.integrator
    out = set()
    if all(crossing_time(box, u, level + eps, env, p, cfg) is not None for env in ("lower", "upper")):
        out.add("increase")
    if level - eps > 0 and all(crossing_time(box, u, level - eps, env, p, cfg) is not None for env in ("lower", "upper")):
        out.add("decrease")
    return out


def test_label_of_examples() -> None:
    x = SymbolicState(80, 7)
    assert label_of(x, 1, frozenset({SymbolicState(79, 8), SymbolicState(80, 8)})) == "increase"
    assert label_of(x, 1, frozenset({SymbolicState(79, 6)})) == "decrease"
    assert label_of(x, 1, frozenset({SymbolicState(79, 8), SymbolicState(80, 6)})) == "mixed"
    assert label_of(x, 1, frozenset()) == "empty"


def test_zero_threshold_has_no_successors(settings) -> None:
    assert compute_transitions_noninitial(SymbolicState(80, 7), 0.26, 0.0, settings) == frozenset()
    assert compute_transitions_initial(SymbolicState(80, 7), 0.26, 0.0, settings) == frozenset()


def test_zero_infected_level_has_no_successors(settings) -> None:
    for u in settings.params.u_levels:
        assert compute_transitions_noninitial(SymbolicState(70, 0), u, 0.01, settings) == frozenset()


def test_noninitial_successors_match_sampled_trajectories(settings) -> None:
    grid, p = settings.grid, settings.params
    succ = compute_transitions_noninitial(SymbolicState(80, 7), 0.26, 0.01, settings)
    assert succ
    assert {s.m for s in succ} <= {6, 8}
    rng = np.random.default_rng(11)
    for S in rng.uniform(0.795, 0.805, 500):
        hit = concrete_event_time(State(float(S), 0.07), 0.26, 0.01, p, SHORT)
        assert hit is not None
        assert _lands_near(hit.state, succ, grid), (S, hit)


def test_initial_successors_follow_envelope_crossings(settings) -> None:
    x = SymbolicState(80, 7)
    box = EmbeddedState(State(0.795, 0.065), State(0.805, 0.075))
    for u, eps in ((0.17, 0.02), (0.26, 0.01), (0.22, 0.03)):
        complete = _complete_directions(box, u, 0.07, eps, settings)
        succ = compute_transitions_initial(x, u, eps, settings)
        levels = {s.m for s in succ}
        k = settings.grid.threshold_steps(eps)
        if x.m + k in levels:
            assert "increase" in complete, (u, eps)
        if x.m - k in levels:
            assert "decrease" in complete, (u, eps)
        if not complete:
            assert succ == frozenset(), (u, eps)
    # the lower envelope falls to 0.05 while only the upper one reaches 0.09
    assert compute_transitions_initial(x, 0.17, 0.02, settings) == frozenset()


def test_initial_successors_with_adjusted_threshold(settings) -> None:
    grid, p = settings.grid, settings.params
    x = SymbolicState(80, 7)
    succ = compute_transitions_initial(x, 0.26, 0.01, settings)
    assert succ
    label = label_of(x, 1, succ)
    assert label == "increase"
    rng = np.random.default_rng(12)
    for S, I in zip(rng.uniform(0.795, 0.805, 100), rng.uniform(0.065, 0.075, 100)):
        eps = (x.m + 1) * grid.eta_I - I
        hit = concrete_event_time(State(float(S), float(I)), 0.26, eps, p, SHORT)
        assert hit is not None
        assert _lands_near(hit.state, succ, grid), (S, I, hit)


def test_successor_offsets_are_exact(settings) -> None:
    states = [SymbolicState(n, m) for n in (60, 70, 80) for m in (3, 5, 7)]
    for action in (Action(0.26, 1), Action(0.17, 3)):
        for rec in sweep_transitions(states, action, "noninitial", settings):
            assert all(abs(s.m - rec.state.m) == action.k for s in rec.successors())


def test_terminal_label_requires_headroom(settings) -> None:
    assert compute_label_LF(SymbolicState(70, 5), 0.22, 0.01, settings) is False


def test_terminal_label_matches_envelope_crossings(settings) -> None:
    box = EmbeddedState(State(0.695, 0.03), State(0.705, 0.03))
    for u in settings.params.u_levels:
        complete = _complete_directions(box, u, 0.03, 0.01, settings)
        if compute_label_LF(SymbolicState(70, 3), u, 0.01, settings):
            assert complete, u
        if not complete:
            assert compute_label_LF(SymbolicState(70, 3), u, 0.01, settings) is False, u
    # at u=0.22 the infected fraction barely moves, so neither direction completes
    assert not _complete_directions(box, 0.22, 0.03, 0.01, settings)
    assert compute_label_LF(SymbolicState(70, 3), 0.22, 0.01, settings) is False


def test_terminal_label_keeps_floor(settings) -> None:
    grid, p = settings.grid, settings.params
    x = SymbolicState(70, 3)
    box = EmbeddedState(State(0.695, 0.03), State(0.705, 0.03))
    assert "decrease" in _complete_directions(box, 0.17, 0.03, 0.01, settings)
    assert compute_label_LF(x, 0.17, 0.01, settings) is True
    level = settings.bounds.S_F + grid.eta_S / 2
    for S in np.linspace(0.695, 0.705, 5):
        hit = concrete_event_time(State(float(S), 0.03), 0.17, 0.01, p, SHORT)
        assert hit is not None
        assert hit.state.I == pytest.approx(0.02, abs=1e-9)
        for t in np.linspace(0.0, hit.dt, 20):
            assert integrate_f(State(float(S), 0.03), 0.17, float(t), p, SHORT).S >= level


def test_terminal_label_false_without_successors(settings) -> None:
    assert compute_label_LF(SymbolicState(70, 0), 0.22, 0.01, settings) is False


def _sweep_status(settings, z0, level: float, eps: float, u: float) -> np.ndarray:
    sweep = _EnvelopeSweep(
        np.asarray(z0, dtype=float).reshape(4, 1),
        np.array([level]),
        eps,
        np.array([True]),
        np.array([True]),
        u,
        settings,
    ).run()
    return sweep.out_status[:, 0]


def test_strict_direction_check_drops_rise_after_fall(settings) -> None:
    # lower I-envelope starts under the lowered level, then both envelopes rise
    z0 = (0.799, 0.064, 0.801, 0.0701)
    default = _sweep_status(settings, z0, 0.07, 0.005, 0.26)
    strict = _sweep_status(replace(settings, strict_direction_check=True), z0, 0.07, 0.005, 0.26)
    assert default[_INC] == _DONE
    assert strict[_INC] == _DEAD
    assert default[_DEC] == strict[_DEC] == _DEAD


def test_printed_side_window_checks_floor_only_up_to_first_crossing(settings) -> None:
    p, grid = settings.params, settings.grid
    x, action = SymbolicState(80, 7), Action(0.26, 2)
    box = EmbeddedState(State(0.795, 0.07), State(0.805, 0.07))
    t_upper = crossing_time(box, 0.26, 0.09, "upper", p, SHORT)
    t_lower = crossing_time(box, 0.26, 0.09, "lower", p, SHORT)
    assert t_upper is not None and t_lower is not None and t_upper < t_lower
    s_first = integrate_embedded(box, 0.26, t_upper, p, SHORT).lower.S
    s_second = integrate_embedded(box, 0.26, t_lower, p, SHORT).lower.S
    assert s_second < s_first - 1e-4
    # guard level halfway between the lower S-envelope at the two crossings
    floor = 0.5 * (s_first + s_second) - grid.eta_S / 2
    (span,) = sweep_transitions([x], action, "noninitial", replace(settings, s_floor=floor))
    (printed,) = sweep_transitions([x], action, "noninitial", replace(settings, s_floor=floor, side_window="as_printed"))
    assert span.increase is None
    assert printed.increase is not None
    assert span.successors() < printed.successors()
    assert {s.m for s in printed.successors()} == {9}


def test_successor_s_range_grows_with_cell_width(settings) -> None:
    action = Action(0.26, 1)
    covers = []
    for eta_S in (0.01, 0.02, 0.04):
        wide = replace(settings, grid=Grid(eta_S, settings.grid.eta_I))
        x = SymbolicState(round(0.80 / eta_S), 7)
        (rec,) = sweep_transitions([x], action, "noninitial", wide)
        assert rec.increase is not None, eta_S
        assert rec.decrease is None, eta_S
        covers.append((eta_S, rec))
    for (fine_eta, fine), (coarse_eta, coarse) in zip(covers, covers[1:]):
        lo = coarse.increase[0] * coarse_eta - coarse_eta / 2
        hi = coarse.increase[1] * coarse_eta + coarse_eta / 2
        for n in range(fine.increase[0], fine.increase[1] + 1):
            assert lo - 1e-9 <= n * fine_eta <= hi + 1e-9, (fine_eta, n)


@pytest.mark.slow
def test_direction_options_only_shrink_or_grow_successors(settings) -> None:
    states = [SymbolicState(n, m) for n in (50, 60, 70, 80) for m in (2, 4, 6, 8)]
    strict = replace(settings, strict_direction_check=True)
    printed = replace(settings, side_window="as_printed")
    for kind in ("noninitial", "initial"):
        for action in (Action(0.26, 1), Action(0.22, 2), Action(0.17, 3)):
            base = sweep_transitions(states, action, kind, settings)
            for rec, rec_strict, rec_printed in zip(
                base,
                sweep_transitions(states, action, kind, strict),
                sweep_transitions(states, action, kind, printed),
            ):
                assert rec_strict.successors() <= rec.successors(), (kind, action, rec.state)
                assert rec.successors() <= rec_printed.successors(), (kind, action, rec.state)


@pytest.mark.slow
def test_build_is_independent_of_worker_count(reference_cfg, tmp_path) -> None:
    cfg = reference_cfg.model_copy(update={"eta_S": 0.05, "thresholds": (0.01, 0.02), "horizon": 200.0})
    settings = cfg.abstraction_settings()
    one = build_symbolic_model(settings, workers=1)
    two = build_symbolic_model(settings, workers=2)
    save_model(one, tmp_path / "one.json")
    save_model(two, tmp_path / "two.json")
    assert (tmp_path / "one.json").read_bytes() == (tmp_path / "two.json").read_bytes()
    assert all(succ <= one.states for succ in one.trans.values())
    assert len(one.actions) == 6


@pytest.mark.slow
def test_sampled_relation_soundness(reference_cfg) -> None:
    settings = reference_cfg.abstraction_settings()
    grid, p, cfg = settings.grid, settings.params, settings.integrator
    rng = np.random.default_rng(13)
    safe = sorted(
        s for s in (SymbolicState(n, m) for n in range(46, 95) for m in range(1, 10)) if grid.in_domain(s.n, s.m)
    )
    picks = [safe[i] for i in rng.choice(len(safe), 120, replace=False)]
    violations = 0
    checked = 0
    for action in settings.actions():
        for rec in sweep_transitions(picks, action, "noninitial", settings):
            succ = rec.successors()
            if not succ:
                continue
            for _ in range(2):
                S = rec.state.n * grid.eta_S + rng.uniform(-0.5, 0.5) * grid.eta_S
                x = State(float(S), rec.state.m * grid.eta_I)
                hit = concrete_event_time(x, action.u, action.k * grid.eta_I, p, cfg)
                checked += 1
                if hit is None or not _lands_near(hit.state, succ, grid):
                    violations += 1
    assert checked > 0
    assert violations == 0


@pytest.mark.slow
def test_sampled_initial_relation_soundness(reference_cfg) -> None:
    settings = reference_cfg.abstraction_settings()
    grid, p, cfg = settings.grid, settings.params, settings.integrator
    rng = np.random.default_rng(14)
    init = sorted(build_grid_sets(settings.bounds, grid).init_states)
    checked = 0
    for action in settings.actions():
        for rec in sweep_transitions(init, action, "initial", settings):
            succ = rec.successors()
            label = label_of(rec.state, action.k, succ)
            if label not in ("increase", "decrease"):
                continue
            for _ in range(2):
                S = rec.state.n * grid.eta_S + rng.uniform(-0.5, 0.5) * grid.eta_S
                I = rec.state.m * grid.eta_I + rng.uniform(-0.5, 0.5) * grid.eta_I
                if label == "increase":
                    eps = (rec.state.m + action.k) * grid.eta_I - I
                else:
                    eps = I - (rec.state.m - action.k) * grid.eta_I
                hit = concrete_event_time(State(float(S), float(I)), action.u, eps, p, cfg)
                checked += 1
                assert hit is not None and _lands_near(hit.state, succ, grid), (rec.state, action, S, I)
    assert checked > 0
