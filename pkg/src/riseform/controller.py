"""Distributed RISE + NN formation controller for a single agent.

The control is kept in integrated form::

    u(t) = -(k3+k4) (zeta(t) - zeta(0)) - U(t)
    dU/dt = N1_hat + k2 (k3+k4) zeta + kappa sgn(zeta)

and the time-varying gain uses the closed form::

    kappa(t) = |zeta(t)|_1 - |zeta(0)|_1 + I(t),    dI/dt = k2 |zeta|_1

Dead-zone: while ``|zeta|_1 < b`` the accumulator ``I`` stops, the
instantaneous norm is held at ``b`` (so kappa is frozen at its entry value)
and the sign term is dropped from ``dU/dt``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .graph import WeightedDigraph
from .nn import ThreeLayerNN
from .plant import AgentState, LeaderState

Array = NDArray[np.float64]


@dataclass(frozen=True)
class FormationSpec:
    offsets: Array  # (N, n)

    def __post_init__(self) -> None:
        d = np.array(self.offsets, dtype=np.float64)
        if d.ndim != 2 or not np.all(np.isfinite(d)):
            raise ValueError("offsets must be a finite (N, n) array")
        d.setflags(write=False)
        object.__setattr__(self, "offsets", d)


@dataclass(frozen=True)
class ControllerGains:
    k1: float
    k2: float
    k3: float
    k4: float
    deadzone_b: float = 0.0

    def __post_init__(self) -> None:
        if min(self.k1, self.k2, self.k3, self.k4) <= 0:
            raise ValueError("k1..k4 must be strictly positive")
        if self.deadzone_b < 0:
            raise ValueError("dead-zone size must be nonnegative")


def formation_error(
    i: int,
    states: list[AgentState],
    leader: LeaderState,
    g: WeightedDigraph,
    spec: FormationSpec,
) -> tuple[Array, Array]:
    """Neighbourhood position and velocity errors ``(e_i, delta_i)``.

    Only agents ``j`` with ``a_ij > 0`` are read, and the leader only if
    ``b_i > 0``.
    """
    d = spec.offsets
    p_i, v_i = np.asarray(states[i].p, dtype=np.float64), np.asarray(states[i].v, dtype=np.float64)
    e = np.zeros_like(p_i)
    delta = np.zeros_like(v_i)
    for j in np.nonzero(g.adjacency[i])[0]:
        a = g.adjacency[i, j]
        e += a * (p_i - states[j].p - d[i] + d[j])
        delta += a * (v_i - states[j].v)
    b = g.leader_weights[i]
    if b > 0:
        e += b * (p_i - leader.p_l - d[i])
        delta += b * (v_i - leader.v_l)
    return e, delta


def stacked_errors(
    pinned: Array, p: Array, v: Array, p_l: Array, v_l: Array, offsets: Array
) -> tuple[Array, Array]:
    """All agents at once: ``e = (L+B)(p - p_l - d)``, ``delta = (L+B)(v - v_l)``.

    ``p``, ``v`` and ``offsets`` are ``(N, n)``; row ``i`` is agent ``i``.
    """
    return pinned @ (p - p_l - offsets), pinned @ (v - v_l)


def zeta(e: Array, delta: Array, k1: float) -> Array:
    return delta + k1 * e


def sgn(x: Array) -> Array:
    """Componentwise sign with ``sgn(0) = 0``."""
    return np.sign(x)


def deadzone_active(zeta_l1: Array | float, b: float) -> Array:
    """True where the sign and integral terms are live (``|zeta|_1 >= b``)."""
    return np.asarray(zeta_l1) >= b


def kappa_closed_form(zeta_l1: Array | float, zeta0_l1: Array | float, integral: Array | float, b: float = 0.0) -> Array:
    """``max(|zeta|_1, b) - max(|zeta(0)|_1, b) + I``."""
    return np.maximum(zeta_l1, b) - np.maximum(zeta0_l1, b) + np.asarray(integral)


def nn_input(state: AgentState, zeta_i: Array, nn: ThreeLayerNN, kappa_i: float) -> Array:
    """Augmented input ``[1, p, v, zeta, |V|_F, |Z|_F, |W|_F, kappa]``."""
    nv, nz, nw = nn.norms()
    return np.concatenate([[1.0], state.p, state.v, zeta_i, [nv, nz, nw, kappa_i]])


def nn_input_batch(p: Array, v: Array, zeta_: Array, norms: Array, kappa: Array) -> Array:
    """Row-stacked :func:`nn_input`; ``norms`` is ``(N, 3)`` ordered V, Z, W."""
    ones = np.ones(p.shape[:-1] + (1,))
    return np.concatenate([ones, p, v, zeta_, norms, kappa[..., None]], axis=-1)


def control_integrand(
    nn_output: Array, zeta_t: Array, kappa_t: Array | float, gains: ControllerGains
) -> Array:
    """``dU/dt``; works per agent or row-stacked over agents."""
    kappa_t = np.asarray(kappa_t, dtype=np.float64)
    l1 = np.abs(zeta_t).sum(axis=-1)
    live = deadzone_active(l1, gains.deadzone_b)
    robust = (kappa_t * live)[..., None] * sgn(zeta_t)
    return nn_output + gains.k2 * (gains.k3 + gains.k4) * zeta_t + robust


def kappa_integrand(zeta_t: Array, gains: ControllerGains) -> Array:
    """``dI/dt = k2 |zeta|_1`` outside the dead-zone, else 0."""
    l1 = np.abs(zeta_t).sum(axis=-1)
    return gains.k2 * l1 * deadzone_active(l1, gains.deadzone_b)


def control_output(zeta_t: Array, zeta0: Array, u_integral: Array, gains: ControllerGains) -> Array:
    return -(gains.k3 + gains.k4) * (zeta_t - zeta0) - u_integral


@dataclass
class ControllerState:
    """Per-agent bookkeeping for stand-alone use (the simulator integrates the
    same quantities inside its joint state vector)."""

    zeta0: Array
    u_integral: Array
    kappa_integral: float = 0.0
    kappa: float = 0.0
    u: Array | None = None
    last_zeta: Array | None = None

    @classmethod
    def start(cls, zeta0: Array) -> "ControllerState":
        z0 = np.array(zeta0, dtype=np.float64)
        return cls(zeta0=z0, u_integral=np.zeros_like(z0), u=np.zeros_like(z0), last_zeta=z0.copy())

    @property
    def zeta0_norm1(self) -> float:
        return float(np.abs(self.zeta0).sum())


def kappa_update(
    cs: ControllerState,
    zeta_t: Array,
    k2: float,
    deadzone_b: float,
    dt: float,
    zeta_mid: Array | None = None,
) -> float:
    """Advance the kappa accumulator from the previous sample to ``zeta_t``.

    With ``zeta_mid`` (the value half a step back) the interval is integrated
    by Simpson's rule, which is what a classical RK4 step does to a
    time-only integrand; otherwise the trapezoid rule is used.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    zeta_t = np.asarray(zeta_t, dtype=np.float64)
    gains = ControllerGains(1.0, k2, 1.0, 1.0, deadzone_b)
    f0 = float(kappa_integrand(cs.last_zeta, gains))
    f1 = float(kappa_integrand(zeta_t, gains))
    if zeta_mid is None:
        cs.kappa_integral += 0.5 * dt * (f0 + f1)
    else:
        fm = float(kappa_integrand(np.asarray(zeta_mid, dtype=np.float64), gains))
        cs.kappa_integral += dt * (f0 + 4.0 * fm + f1) / 6.0
    cs.last_zeta = zeta_t.copy()
    l1 = float(np.abs(zeta_t).sum())
    cs.kappa = float(kappa_closed_form(l1, cs.zeta0_norm1, cs.kappa_integral, deadzone_b))
    return cs.kappa


def control_step(
    cs: ControllerState,
    zeta_t: Array,
    nn_output: Array,
    kappa_t: float,
    gains: ControllerGains,
    dt: float,
    zeta_next: Array | None = None,
) -> Array:
    """Forward-Euler advance of the control integral; returns the new ``u``.

    The integrand is evaluated at the supplied start-of-interval values; the
    returned control uses ``zeta_next`` (defaults to ``zeta_t``).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    zeta_t = np.asarray(zeta_t, dtype=np.float64)
    cs.u_integral = cs.u_integral + dt * control_integrand(np.asarray(nn_output), zeta_t, kappa_t, gains)
    z_out = zeta_t if zeta_next is None else np.asarray(zeta_next, dtype=np.float64)
    cs.u = control_output(z_out, cs.zeta0, cs.u_integral, gains)
    return cs.u
