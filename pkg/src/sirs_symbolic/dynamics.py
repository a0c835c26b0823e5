from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np

from .errors import ConfigError, IntegrationError

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9
ORDER_TOL = 1e-9
# Envelope magnitude past which an embedded integration counts as diverged.
BLOWUP_BOUND = 1e3

Envelope = Literal["lower", "upper"]


@dataclass(frozen=True)
class ModelParams:
    gamma: float
    xi: float
    u_levels: tuple[float, ...]

    def __post_init__(self) -> None:
        levels = tuple(float(u) for u in self.u_levels)
        object.__setattr__(self, "u_levels", levels)
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if not self.xi >= 0:
            raise ConfigError(f"xi must be >= 0, got {self.xi}")
        if not levels:
            raise ConfigError("u_levels must not be empty")
        if any(u <= 0 for u in levels):
            raise ConfigError(f"u_levels must be positive, got {list(levels)}")
        if any(a <= b for a, b in zip(levels, levels[1:])):
            raise ConfigError(f"u_levels must be strictly descending, got {list(levels)}")

    @property
    def u_max(self) -> float:
        return self.u_levels[0]

    def reproduction_number(self, x: State, u: float) -> float:
        return u * x.S / self.gamma


@dataclass(frozen=True)
class State:
    S: float
    I: float

    @property
    def R(self) -> float:
        return 1.0 - self.S - self.I

    def in_simplex(self, tol: float = SIMPLEX_TOL) -> bool:
        return self.S >= -tol and self.I >= -tol and self.S + self.I <= 1.0 + tol


@dataclass(frozen=True)
class EmbeddedState:
    lower: State
    upper: State

    def is_ordered(self, tol: float = ORDER_TOL) -> bool:
        return self.lower.S <= self.upper.S + tol and self.lower.I <= self.upper.I + tol

    def as_array(self) -> np.ndarray:
        return np.array([[self.lower.S], [self.lower.I], [self.upper.S], [self.upper.I]], dtype=float)

    @classmethod
    def from_array(cls, z: np.ndarray) -> EmbeddedState:
        col = np.asarray(z, dtype=float).reshape(4, -1)[:, 0]
        return cls(State(float(col[0]), float(col[1])), State(float(col[2]), float(col[3])))


@dataclass(frozen=True)
class IntegratorConfig:
    step: float = 0.01
    horizon: float = 1000.0
    crossing_tol: float = 1e-9

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise ConfigError(f"step must be > 0, got {self.step}")
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be > 0, got {self.horizon}")
        if self.step > self.horizon:
            raise ConfigError(f"step ({self.step}) must not exceed horizon ({self.horizon})")
        if not 0 < self.crossing_tol < self.step:
            raise ConfigError(f"crossing_tol must lie in (0, step), got {self.crossing_tol}")

    def bisection_iterations(self, h: float) -> int:
        return max(1, math.ceil(math.log2(max(h, self.crossing_tol) / self.crossing_tol)))


@dataclass(frozen=True)
class EventHit:
    """First threshold crossing of a concrete trajectory, ``dt`` after its start."""

    dt: float
    state: State


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    S: np.ndarray
    I: np.ndarray
    event: Optional[EventHit]


# Scalar and array-friendly right-hand side; works for floats and ndarrays alike.
def _f(S, I, u: float, gamma: float, xi: float):
    return -u * S * I + xi * (1.0 - S - I), u * S * I - gamma * I


def _rk4_f(S, I, u: float, h, gamma: float, xi: float):
    k1s, k1i = _f(S, I, u, gamma, xi)
    k2s, k2i = _f(S + 0.5 * h * k1s, I + 0.5 * h * k1i, u, gamma, xi)
    k3s, k3i = _f(S + 0.5 * h * k2s, I + 0.5 * h * k2i, u, gamma, xi)
    k4s, k4i = _f(S + h * k3s, I + h * k3i, u, gamma, xi)
    return (
        S + h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s),
        I + h / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i),
    )


def eval_f(x: State, u: float, p: ModelParams) -> tuple[float, float]:
    return _f(x.S, x.I, u, p.gamma, p.xi)


def eval_d(x: State, u: float, x_hat: State, u_hat: float, p: ModelParams) -> tuple[float, float]:
    """Decomposition function of the SIRS field; ``eval_d(x, u, x, u) == eval_f(x, u)``."""
    d1 = -u_hat * x_hat.S * x_hat.I + p.xi * (1.0 - x_hat.S - x_hat.I)
    growth = u * x.S - p.gamma
    d2 = growth * (x.I if growth >= 0 else x_hat.I)
    return d1, d2


def _steps(t: float, step: float) -> tuple[int, float]:
    n = max(1, math.ceil(t / step - 1e-12))
    return n, t / n


def _check_duration(t: float, cfg: IntegratorConfig) -> None:
    if t < 0:
        raise ConfigError(f"integration time must be >= 0, got {t}")
    if t > cfg.horizon:
        raise ConfigError(f"integration time {t} exceeds horizon {cfg.horizon}")


def integrate_f(x0: State, u: float, t: float, p: ModelParams, cfg: IntegratorConfig) -> State:
    _check_duration(t, cfg)
    if t == 0:
        return x0
    n, h = _steps(t, cfg.step)
    S, I = x0.S, x0.I
    for _ in range(n):
        S, I = _rk4_f(S, I, u, h, p.gamma, p.xi)
    return State(S, I)


def integrate_f_batch(
    S0: np.ndarray, I0: np.ndarray, u: float, t: float, p: ModelParams, cfg: IntegratorConfig
) -> tuple[np.ndarray, np.ndarray]:
    _check_duration(t, cfg)
    S = np.asarray(S0, dtype=float).copy()
    I = np.asarray(I0, dtype=float).copy()
    if t == 0:
        return S, I
    n, h = _steps(t, cfg.step)
    for _ in range(n):
        S, I = _rk4_f(S, I, u, h, p.gamma, p.xi)
    return S, I


def embedded_rhs(z: np.ndarray, u: float, p: ModelParams) -> np.ndarray:
    """Vector field of the embedding; rows of ``z`` are (S_lo, I_lo, S_hi, I_hi)."""
    s_lo, i_lo, s_hi, i_hi = z
    g_lo = u * s_lo - p.gamma
    g_hi = u * s_hi - p.gamma
    out = np.empty_like(z)
    out[0] = -u * s_hi * i_hi + p.xi * (1.0 - s_hi - i_hi)
    out[1] = g_lo * np.where(g_lo >= 0, i_lo, i_hi)
    out[2] = -u * s_lo * i_lo + p.xi * (1.0 - s_lo - i_lo)
    out[3] = g_hi * np.where(g_hi >= 0, i_hi, i_lo)
    return out


def rk4_embedded(z: np.ndarray, u: float, h, p: ModelParams) -> np.ndarray:
    k1 = embedded_rhs(z, u, p)
    k2 = embedded_rhs(z + 0.5 * h * k1, u, p)
    k3 = embedded_rhs(z + 0.5 * h * k2, u, p)
    k4 = embedded_rhs(z + h * k3, u, p)
    return z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def bisect_crossing(
    z: np.ndarray,
    u: float,
    h: float,
    crossed: Callable[[np.ndarray], np.ndarray],
    p: ModelParams,
    cfg: IntegratorConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Locate, per column of ``z``, the first partial step in (0, h] after which ``crossed`` holds.

    Each trial re-integrates a single partial step from the step-start state.
    Returns the bracket's upper end and the embedded state there.
    """
    lo = np.zeros(z.shape[1])
    hi = np.full(z.shape[1], h)
    for _ in range(cfg.bisection_iterations(h)):
        mid = 0.5 * (lo + hi)
        hit = crossed(rk4_embedded(z, u, mid, p))
        hi = np.where(hit, mid, hi)
        lo = np.where(hit, lo, mid)
    return hi, rk4_embedded(z, u, hi, p)


def integrate_embedded(
    box0: EmbeddedState, u: float, t: float, p: ModelParams, cfg: IntegratorConfig
) -> EmbeddedState:
    if not box0.is_ordered():
        raise ValueError(f"embedded state is not ordered: {box0}")
    _check_duration(t, cfg)
    if t == 0:
        return box0
    n, h = _steps(t, cfg.step)
    z = box0.as_array()
    for _ in range(n):
        z = rk4_embedded(z, u, h, p)
    result = EmbeddedState.from_array(z)
    if not result.is_ordered():
        raise IntegrationError(f"envelope ordering lost after t={t}: {result}")
    return result


def crossing_time(
    box0: EmbeddedState,
    u: float,
    target_I: float,
    envelope: Envelope,
    p: ModelParams,
    cfg: IntegratorConfig,
    horizon: Optional[float] = None,
) -> Optional[float]:
    """First time the chosen I-envelope reaches ``target_I``.

    ``None`` if it does not within the horizon, or if the envelopes diverge first.
    """
    if not 0 < target_I < 1:
        raise ValueError(f"target_I must lie in (0, 1), got {target_I}")
    limit = cfg.horizon if horizon is None else horizon
    row = 1 if envelope == "lower" else 3
    z = box0.as_array()
    side = math.copysign(1.0, float(z[row, 0]) - target_I)
    if z[row, 0] == target_I:
        return 0.0

    def crossed(zz: np.ndarray) -> np.ndarray:
        return side * (zz[row] - target_I) <= 0

    t, k = 0.0, 0
    while t < limit - 1e-12:
        h = min(cfg.step, limit - t)
        z_next = rk4_embedded(z, u, h, p)
        if not np.isfinite(z_next).all() or np.abs(z_next).max() > BLOWUP_BOUND:
            logger.debug("envelopes diverged at t=%.4f before reaching I=%g", t, target_I)
            return None
        if crossed(z_next)[0]:
            tau, _ = bisect_crossing(z, u, h, crossed, p, cfg)
            return t + float(tau[0])
        k += 1
        t = min(k * cfg.step, limit)
        z = z_next
    return None


def _scan_event(
    x0: State,
    u: float,
    eps: float,
    p: ModelParams,
    cfg: IntegratorConfig,
    t_limit: float,
    every: int,
    record: bool,
) -> tuple[Optional[EventHit], list[tuple[float, float, float]]]:
    gamma, xi, step = p.gamma, p.xi, cfg.step
    S, I, I0 = x0.S, x0.I, x0.I
    samples: list[tuple[float, float, float]] = []
    t, k = 0.0, 0
    while t < t_limit - 1e-12:
        h = min(step, t_limit - t)
        S_next, I_next = _rk4_f(S, I, u, h, gamma, xi)
        if abs(I_next - I0) >= eps:
            lo, hi = 0.0, h
            for _ in range(cfg.bisection_iterations(h)):
                mid = 0.5 * (lo + hi)
                _, I_mid = _rk4_f(S, I, u, mid, gamma, xi)
                if abs(I_mid - I0) >= eps:
                    hi = mid
                else:
                    lo = mid
            # One secant step inside the final bracket keeps successive triggers
            # from drifting off the threshold lattice.
            g_lo = abs(_rk4_f(S, I, u, lo, gamma, xi)[1] - I0) - eps
            g_hi = abs(_rk4_f(S, I, u, hi, gamma, xi)[1] - I0) - eps
            tau = hi if g_hi <= g_lo else lo + (hi - lo) * (-g_lo) / (g_hi - g_lo)
            S_hit, I_hit = _rk4_f(S, I, u, tau, gamma, xi)
            return EventHit(t + tau, State(S_hit, I_hit)), samples
        k += 1
        t = min(k * step, t_limit)
        S, I = S_next, I_next
        if record and k % every == 0:
            samples.append((t, S, I))
    return None, samples


def concrete_event_time(
    x0: State, u: float, eps: float, p: ModelParams, cfg: IntegratorConfig
) -> Optional[EventHit]:
    if not eps > 0:
        raise ValueError(f"threshold must be > 0, got {eps}")
    hit, _ = _scan_event(x0, u, eps, p, cfg, cfg.horizon, 1, record=False)
    return hit


def trajectory_until_event(
    x0: State,
    u: float,
    eps: float,
    p: ModelParams,
    cfg: IntegratorConfig,
    t_limit: Optional[float] = None,
    every: int = 1,
) -> Trajectory:
    """Recording counterpart of :func:`concrete_event_time`; samples exclude the start point."""
    if not eps > 0:
        raise ValueError(f"threshold must be > 0, got {eps}")
    limit = cfg.horizon if t_limit is None else min(t_limit, cfg.horizon)
    hit, samples = _scan_event(x0, u, eps, p, cfg, limit, max(1, every), record=True)
    arr = np.asarray(samples, dtype=float).reshape(-1, 3)
    return Trajectory(times=arr[:, 0], S=arr[:, 1], I=arr[:, 2], event=hit)
