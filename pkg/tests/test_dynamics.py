from __future__ import annotations

import numpy as np
import pytest

from sirs_symbolic.dynamics import (
    EmbeddedState,
    IntegratorConfig,
    ModelParams,
    State,
    concrete_event_time,
    crossing_time,
    eval_d,
    eval_f,
    integrate_embedded,
    integrate_f,
    integrate_f_batch,
    trajectory_until_event,
)
from sirs_symbolic.errors import ConfigError


def _fine_first_crossing(S, I, u, p, crossed, step=1e-3, t_max=200.0):
    """Oracle: small-step RK4 scan, then bisection inside the bracketing step."""

    def rk4(S, I, h):
        def f(S, I):
            return -u * S * I + p.xi * (1 - S - I), u * S * I - p.gamma * I

        a = f(S, I)
        b = f(S + h / 2 * a[0], I + h / 2 * a[1])
        c = f(S + h / 2 * b[0], I + h / 2 * b[1])
        d = f(S + h * c[0], I + h * c[1])
        return S + h / 6 * (a[0] + 2 * b[0] + 2 * c[0] + d[0]), I + h / 6 * (a[1] + 2 * b[1] + 2 * c[1] + d[1])

    t = 0.0
    while t < t_max:
        S1, I1 = rk4(S, I, step)
        if crossed(I1):
            lo, hi = 0.0, step
            for _ in range(60):
                mid = (lo + hi) / 2
                if crossed(rk4(S, I, mid)[1]):
                    hi = mid
                else:
                    lo = mid
            return t + hi, rk4(S, I, hi)
        S, I, t = S1, I1, t + step
    return None


def test_params_validation() -> None:
    with pytest.raises(ConfigError):
        ModelParams(gamma=0.0, xi=0.02, u_levels=(0.26,))
    with pytest.raises(ConfigError):
        ModelParams(gamma=0.15, xi=0.02, u_levels=(0.17, 0.26))
    with pytest.raises(ConfigError):
        IntegratorConfig(step=0.01, horizon=1000.0, crossing_tol=0.1)


def test_eval_f_reference_value(params) -> None:
    dS, dI = eval_f(State(0.6, 0.05), 0.17, params)
    assert dS == pytest.approx(0.0019, abs=1e-12)
    assert dI == pytest.approx(-0.0024, abs=1e-12)
    assert params.reproduction_number(State(0.6, 0.05), 0.17) == pytest.approx(0.68)


def test_disease_free_axis(params) -> None:
    dS, dI = eval_f(State(0.7, 0.0), 0.26, params)
    assert dS == pytest.approx(params.xi * 0.3)
    assert dI == 0.0


def test_decomposition_reference_value(params) -> None:
    _, d2 = eval_d(State(0.6, 0.05), 0.17, State(0.7, 0.06), 0.17, params)
    assert d2 == pytest.approx(-0.00288, abs=1e-12)


def _simplex_points(rng, count: int) -> np.ndarray:
    pts = rng.uniform(0.0, 1.0, (count, 2))
    folded = pts.sum(axis=1) > 1.0
    pts[folded] = 1.0 - pts[folded]
    return pts


def test_decomposition_identity(params) -> None:
    rng = np.random.default_rng(0)
    pts = _simplex_points(rng, 100_000)
    inputs = rng.choice(params.u_levels, pts.shape[0])
    growing = 0
    for (S, I), u in zip(pts, inputs):
        x = State(float(S), float(I))
        u = float(u)
        d = eval_d(x, u, x, u, params)
        f = eval_f(x, u, params)
        assert abs(d[0] - f[0]) <= 1e-12
        assert abs(d[1] - f[1]) <= 1e-12
        growing += u * S >= params.gamma
    assert 0 < growing < pts.shape[0]


def test_decomposition_sign_conditions(params) -> None:
    rng = np.random.default_rng(1)
    h = 1e-6
    x_pts = _simplex_points(rng, 2000)
    hat_pts = _simplex_points(rng, 2000)
    branches = {True: 0, False: 0}
    for (S, I), (Sh, Ih) in zip(x_pts, hat_pts):
        u, uh = (float(v) for v in rng.choice(params.u_levels, 2))
        if abs(u * S - params.gamma) < 1e-5:
            continue
        base = (float(S), float(I), float(Sh), float(Ih), u, uh)

        def d(args):
            return eval_d(State(args[0], args[1]), args[4], State(args[2], args[3]), args[5], params)

        def partial(pos, comp):
            up = list(base)
            dn = list(base)
            up[pos] += h
            dn[pos] -= h
            return (d(up)[comp] - d(dn)[comp]) / (2 * h)

        assert partial(1, 0) >= -1e-9, base  # d_S in I
        assert partial(0, 1) >= -1e-9, base  # d_I in S
        for pos in (2, 3):
            for comp in (0, 1):
                assert partial(pos, comp) <= 1e-9, (base, pos, comp)
        for comp in (0, 1):
            assert partial(4, comp) >= -1e-9, (base, comp)
            assert partial(5, comp) <= 1e-9, (base, comp)
        branches[u * S - params.gamma >= 0] += 1
    assert branches[True] > 100
    assert branches[False] > 100


def test_integrate_zero_time_is_identity(params, integrator) -> None:
    x0 = State(0.6, 0.05)
    assert integrate_f(x0, 0.17, 0.0, params, integrator) == x0


def test_integrate_step_halving(params) -> None:
    x0 = State(0.6, 0.05)
    coarse = integrate_f(x0, 0.17, 1.0, params, IntegratorConfig(step=0.01))
    fine = integrate_f(x0, 0.17, 1.0, params, IntegratorConfig(step=0.005))
    assert coarse.S == pytest.approx(fine.S, abs=1e-6)
    assert coarse.I == pytest.approx(fine.I, abs=1e-6)


def test_integrate_stays_in_simplex(params) -> None:
    cfg = IntegratorConfig(step=0.05, horizon=300.0)
    rng = np.random.default_rng(2)
    S0 = rng.uniform(0, 0.9, 200)
    I0 = rng.uniform(0, 1, 200) * (1 - S0)
    S, I = integrate_f_batch(S0, I0, 0.26, 300.0, params, cfg)
    assert (S >= -1e-9).all() and (I >= -1e-9).all()
    assert (S + I <= 1 + 1e-9).all()


def test_integrate_beyond_horizon_rejected(params) -> None:
    with pytest.raises(ConfigError):
        integrate_f(State(0.6, 0.05), 0.17, 20.0, params, IntegratorConfig(step=0.01, horizon=10.0))


def test_degenerate_embedding_matches_point(params, integrator) -> None:
    x0 = State(0.6, 0.05)
    out = integrate_embedded(EmbeddedState(x0, x0), 0.17, 1.0, params, integrator)
    point = integrate_f(x0, 0.17, 1.0, params, integrator)
    assert out.lower.S == pytest.approx(point.S, abs=1e-12)
    assert out.upper.I == pytest.approx(point.I, abs=1e-12)


def test_embedding_contains_sampled_trajectories(params, integrator) -> None:
    lo, hi = State(0.595, 0.045), State(0.605, 0.055)
    rng = np.random.default_rng(3)
    S0 = rng.uniform(lo.S, hi.S, 200)
    I0 = rng.uniform(lo.I, hi.I, 200)
    for t in (0.5, 1.0, 5.0):
        box = integrate_embedded(EmbeddedState(lo, hi), 0.17, t, params, integrator)
        S, I = integrate_f_batch(S0, I0, 0.17, t, params, integrator)
        assert (S >= box.lower.S - 1e-6).all() and (S <= box.upper.S + 1e-6).all()
        assert (I >= box.lower.I - 1e-6).all() and (I <= box.upper.I + 1e-6).all()


def test_crossing_time_zero_horizon_is_none(params, integrator) -> None:
    x0 = State(0.6, 0.05)
    assert crossing_time(EmbeddedState(x0, x0), 0.26, 0.06, "upper", params, integrator, horizon=0.0) is None


def test_crossing_time_matches_dense_scan(params, integrator) -> None:
    x0 = State(0.8, 0.05)
    t = crossing_time(EmbeddedState(x0, x0), 0.26, 0.06, "upper", params, integrator)
    oracle = _fine_first_crossing(x0.S, x0.I, 0.26, params, lambda I: I >= 0.06)
    assert t is not None and oracle is not None
    assert t == pytest.approx(oracle[0], abs=1e-6)


def test_crossing_time_none_when_envelope_falls(params, integrator) -> None:
    x0 = State(0.5, 0.05)
    assert crossing_time(EmbeddedState(x0, x0), 0.17, 0.06, "upper", params, integrator, horizon=200.0) is None


@pytest.mark.filterwarnings("error::RuntimeWarning")
def test_crossing_time_stops_on_diverging_envelopes(params) -> None:
    box = EmbeddedState(State(0.0, 0.0), State(1.0, 1.0))
    cfg = IntegratorConfig(step=0.01, horizon=1000.0)
    assert crossing_time(box, 0.26, 0.5, "upper", params, cfg) is None


def test_concrete_event_unreachable_threshold(params) -> None:
    cfg = IntegratorConfig(horizon=50.0)
    assert concrete_event_time(State(0.6, 0.05), 0.26, 0.99, params, cfg) is None


def test_concrete_event_matches_dense_scan(params, integrator) -> None:
    x0 = State(0.8, 0.07)
    hit = concrete_event_time(x0, 0.17, 0.01, params, integrator)
    oracle = _fine_first_crossing(x0.S, x0.I, 0.17, params, lambda I: abs(I - 0.07) >= 0.01)
    assert hit is not None and oracle is not None
    assert hit.dt == pytest.approx(oracle[0], abs=1e-6)
    assert hit.state.S == pytest.approx(oracle[1][0], abs=1e-8)
    assert hit.state.I == pytest.approx(0.06, abs=1e-9)


def test_concrete_event_rejects_nonpositive_threshold(params, integrator) -> None:
    with pytest.raises(ValueError):
        concrete_event_time(State(0.6, 0.05), 0.17, 0.0, params, integrator)


def test_trajectory_until_event_agrees_with_event_time(params, integrator) -> None:
    x0 = State(0.8, 0.07)
    traj = trajectory_until_event(x0, 0.17, 0.01, params, integrator, every=10)
    hit = concrete_event_time(x0, 0.17, 0.01, params, integrator)
    assert traj.event == hit
    assert traj.times.size > 0 and traj.times[-1] < hit.dt
    assert (np.abs(traj.I - x0.I) < 0.01).all()
