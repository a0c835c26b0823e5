from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Optional

import numpy as np

from .dynamics import (
    EmbeddedState,
    IntegratorConfig,
    ModelParams,
    State,
    integrate_embedded,
    integrate_f,
    integrate_f_batch,
    rk4_embedded,
)


@dataclass(frozen=True)
class IntervalBox:
    lo: State
    hi: State

    def __post_init__(self) -> None:
        if self.lo.S > self.hi.S or self.lo.I > self.hi.I:
            raise ValueError(f"box corners are not ordered: lo={self.lo}, hi={self.hi}")

    @classmethod
    def around(cls, center: State, half_S: float, half_I: float) -> IntervalBox:
        return cls(
            State(center.S - half_S, center.I - half_I),
            State(center.S + half_S, center.I + half_I),
        )

    @property
    def exits_simplex(self) -> bool:
        """True when the upper corner lies outside S + I <= 1 (an over-approximation artifact)."""
        return not (self.lo.in_simplex() and self.hi.in_simplex())

    @property
    def width_S(self) -> float:
        return self.hi.S - self.lo.S

    @property
    def width_I(self) -> float:
        return self.hi.I - self.lo.I

    @property
    def area(self) -> float:
        return self.width_S * self.width_I

    def contains(self, x: State, tol: float = 0.0) -> bool:
        return (
            self.lo.S - tol <= x.S <= self.hi.S + tol
            and self.lo.I - tol <= x.I <= self.hi.I + tol
        )

    def contains_box(self, other: IntervalBox, tol: float = 0.0) -> bool:
        return self.contains(other.lo, tol) and self.contains(other.hi, tol)

    def clipped(self) -> IntervalBox:
        def clip(v: float) -> float:
            return min(1.0, max(0.0, v))

        return IntervalBox(
            State(clip(self.lo.S), clip(self.lo.I)),
            State(clip(self.hi.S), clip(self.hi.I)),
        )

    def corners(self) -> list[State]:
        return [State(s, i) for s, i in product((self.lo.S, self.hi.S), (self.lo.I, self.hi.I))]


UNIT_BOX = IntervalBox(State(0.0, 0.0), State(1.0, 1.0))


@dataclass(frozen=True)
class BallApprox:
    center: State
    radius: float

    def __post_init__(self) -> None:
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")

    def bounding_box(self) -> IntervalBox:
        return IntervalBox.around(self.center, self.radius, self.radius)

    def contains_box(self, box: IntervalBox, tol: float = 0.0) -> bool:
        # Infinity-norm ball: containment is a box test.
        return self.bounding_box().contains_box(box, tol)


def over_approx_reach(
    box: IntervalBox, u: float, t: float, p: ModelParams, cfg: IntegratorConfig
) -> IntervalBox:
    out = integrate_embedded(EmbeddedState(box.lo, box.hi), u, t, p, cfg)
    return IntervalBox(out.lower, out.upper)


def _jacobian_norm(S: float, I: float, u: float, p: ModelParams) -> float:
    row_S = abs(-u * I - p.xi) + abs(-u * S - p.xi)
    row_I = abs(u * I) + abs(u * S - p.gamma)
    return max(row_S, row_I)


def estimate_lipschitz_constant(p: ModelParams, domain: IntervalBox) -> float:
    """Infinity-norm bound on the Jacobian of f over ``domain`` and every input level.

    Each Jacobian entry is affine in (S, I), so every absolute row sum is convex
    and attains its maximum at a corner of the domain.
    """
    return max(_jacobian_norm(c.S, c.I, u, p) for c in domain.corners() for u in p.u_levels)


def swept_hull(box: IntervalBox, u: float, t: float, p: ModelParams, cfg: IntegratorConfig) -> IntervalBox:
    """Hull of ``box`` and its embedding boxes at every integration step up to ``t``, clipped to the unit square."""
    if t < 0:
        raise ValueError(f"reach time must be >= 0, got {t}")
    z = EmbeddedState(box.lo, box.hi).as_array()
    lo, hi = z[:2, 0].copy(), z[2:, 0].copy()
    if t > 0:
        n = max(1, math.ceil(t / cfg.step - 1e-12))
        for _ in range(n):
            z = rk4_embedded(z, u, t / n, p)
            lo = np.minimum(lo, z[:2, 0])
            hi = np.maximum(hi, z[2:, 0])
    return IntervalBox(State(float(lo[0]), float(lo[1])), State(float(hi[0]), float(hi[1]))).clipped()


def lipschitz_ball_reach(
    center: State,
    eps: float,
    u: float,
    t: float,
    p: ModelParams,
    cfg: IntegratorConfig,
    domain: Optional[IntervalBox] = None,
) -> BallApprox:
    """Gronwall ball around the nominal trajectory.

    The Lipschitz constant is taken over ``domain``, by default the region swept
    by the embedding from the ``eps``-box around ``center``.
    """
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    if domain is None:
        domain = swept_hull(IntervalBox.around(center, eps, eps), u, t, p, cfg)
    lipschitz = estimate_lipschitz_constant(p, domain)
    return BallApprox(integrate_f(center, u, t, p, cfg), eps * math.exp(lipschitz * t))


def sample_endpoints(
    box: IntervalBox,
    u: float,
    t: float,
    n: int,
    seed: int,
    p: ModelParams,
    cfg: IntegratorConfig,
) -> np.ndarray:
    """Integrate ``n`` uniform starts from ``box`` (restricted to the simplex); rows are (S, I)."""
    if box.lo.S + box.lo.I > 1.0 or box.hi.S < 0 or box.hi.I < 0:
        raise ValueError(f"box does not meet the state simplex: {box}")
    rng = np.random.default_rng(seed)
    starts = np.empty((0, 2))
    while len(starts) < n:
        cand = np.column_stack(
            (rng.uniform(box.lo.S, box.hi.S, n), rng.uniform(box.lo.I, box.hi.I, n))
        )
        keep = (cand[:, 0] >= 0) & (cand[:, 1] >= 0) & (cand.sum(axis=1) <= 1.0)
        starts = np.vstack((starts, cand[keep]))
    starts = starts[:n]
    S, I = integrate_f_batch(starts[:, 0], starts[:, 1], u, t, p, cfg)
    return np.column_stack((S, I))
