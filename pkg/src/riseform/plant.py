"""Agent and leader dynamics.

The two-link arm uses the planar point-mass-at-link-end model::

    M11 = (m1+m2) r1^2 + m2 r2^2 + 2 m2 r1 r2 cos q2
    M12 = M21 = m2 r2^2 + m2 r1 r2 cos q2
    M22 = m2 r2^2
    V   = m2 r1 r2 sin q2 [[-qd2, -(qd1+qd2)], [qd1, 0]]
    G   = g [(m1+m2) r1 cos q1 + m2 r2 cos(q1+q2), m2 r2 cos(q1+q2)]

with ``M(q) qdd + V(q, qd) qd + G(q) + w = u``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]


class NumericalSingularity(ArithmeticError):
    pass


@dataclass(frozen=True)
class AgentState:
    p: Array
    v: Array


@dataclass(frozen=True)
class LeaderState:
    p_l: Array
    v_l: Array


@dataclass(frozen=True)
class TwoLinkArmParams:
    m1_kg: float = 0.8
    m2_kg: float = 1.7
    r1_m: float = 1.0
    r2_m: float = 1.0
    g_mps2: float = 9.8

    def __post_init__(self) -> None:
        if min(self.m1_kg, self.m2_kg, self.r1_m, self.r2_m) <= 0:
            raise ValueError("link masses and lengths must be strictly positive")
        # zero gravity is allowed for conservation checks
        if self.g_mps2 < 0:
            raise ValueError("gravity must be nonnegative")


def arm_matrices_batch(
    m1: Array, m2: Array, r1: Array, r2: Array, grav: Array, q: Array, qdot: Array
) -> tuple[Array, Array, Array]:
    """Vectorised ``(M, V, G)``; parameters broadcast against ``q[..., 0]``."""
    q1, q2 = q[..., 0], q[..., 1]
    qd1, qd2 = qdot[..., 0], qdot[..., 1]
    c2, s2 = np.cos(q2), np.sin(q2)
    c1, c12 = np.cos(q1), np.cos(q1 + q2)
    a = m2 * r1 * r2
    m22 = m2 * r2**2 + 0.0 * q2
    m12 = m22 + a * c2
    m11 = (m1 + m2) * r1**2 + m22 + 2.0 * a * c2
    mass = np.stack([np.stack([m11, m12], -1), np.stack([m12, m22], -1)], -2)
    h = a * s2
    cor = np.stack(
        [np.stack([-h * qd2, -h * (qd1 + qd2)], -1), np.stack([h * qd1, 0.0 * h], -1)], -2
    )
    grav_vec = np.stack(
        [((m1 + m2) * r1 * c1 + m2 * r2 * c12) * grav, m2 * r2 * c12 * grav], -1
    )
    return mass, cor, grav_vec


def arm_matrices(params: TwoLinkArmParams, q: Array, qdot: Array) -> tuple[Array, Array, Array]:
    """Inertia matrix, Coriolis/centripetal matrix and gravity vector."""
    return arm_matrices_batch(
        params.m1_kg, params.m2_kg, params.r1_m, params.r2_m, params.g_mps2,
        np.asarray(q, dtype=np.float64), np.asarray(qdot, dtype=np.float64),
    )


def _solve2(mass: Array, rhs: Array) -> Array:
    a, b = mass[..., 0, 0], mass[..., 0, 1]
    c, d = mass[..., 1, 0], mass[..., 1, 1]
    det = a * d - b * c
    return np.stack([d * rhs[..., 0] - b * rhs[..., 1], a * rhs[..., 1] - c * rhs[..., 0]], -1) / det[..., None]


def agent_derivative(
    params: TwoLinkArmParams, s: AgentState, u: Array, w: Array
) -> tuple[Array, Array]:
    """``(pdot, vdot)`` with ``vdot = M^{-1}(u - V v - G - w)``."""
    mass, cor, grav = arm_matrices(params, s.p, s.v)
    if np.linalg.cond(mass) > 1e12:
        raise NumericalSingularity("inertia matrix is numerically singular")
    rhs = np.asarray(u) - cor @ s.v - grav - np.asarray(w)
    return np.array(s.v, dtype=np.float64), np.linalg.solve(mass, rhs)


def kinetic_energy(params: TwoLinkArmParams, q: Array, qdot: Array) -> float:
    mass, _, _ = arm_matrices(params, q, qdot)
    qdot = np.asarray(qdot)
    return 0.5 * float(qdot @ mass @ qdot)


def disturbance(t: float | Array) -> Array:
    """Bounded joint disturbance ``[-0.12 cos t, 0.1 sin t]``."""
    t = np.asarray(t, dtype=np.float64)
    return np.stack([-0.12 * np.cos(t), 0.1 * np.sin(t)], -1)


def leader_derivative(s: LeaderState, damping: tuple[float, float] = (0.2, 0.3)) -> tuple[Array, Array]:
    """Van der Pol-type leader, one oscillator per axis."""
    p, v = np.asarray(s.p_l, dtype=np.float64), np.asarray(s.v_l, dtype=np.float64)
    if p.shape != (2,):
        raise ValueError("leader model is two-dimensional")
    mu = np.asarray(damping, dtype=np.float64)
    return v.copy(), -p + mu * (1.0 - p**2) * v


class TwoLinkArmFleet:
    """Batched arm dynamics for ``N`` agents with per-agent parameters."""

    dim = 2

    def __init__(self, params: list[TwoLinkArmParams], disturbance_on: bool = True) -> None:
        self.params = list(params)
        self.m1 = np.array([p.m1_kg for p in params])
        self.m2 = np.array([p.m2_kg for p in params])
        self.r1 = np.array([p.r1_m for p in params])
        self.r2 = np.array([p.r2_m for p in params])
        self.g = np.array([p.g_mps2 for p in params])
        self.disturbance_on = disturbance_on

    def accel(self, t: float, p: Array, v: Array, u: Array) -> Array:
        mass, cor, grav = arm_matrices_batch(self.m1, self.m2, self.r1, self.r2, self.g, p, v)
        rhs = u - (cor @ v[..., None])[..., 0] - grav
        if self.disturbance_on:
            rhs = rhs - disturbance(t)
        return _solve2(mass, rhs)


class DoubleIntegratorFleet:
    """``vdot = u``: zero drift, identity input gain, no disturbance."""

    def __init__(self, n_agents: int, dim: int = 2) -> None:
        self.n_agents = n_agents
        self.dim = dim

    def accel(self, t: float, p: Array, v: Array, u: Array) -> Array:
        return np.array(u, dtype=np.float64)
