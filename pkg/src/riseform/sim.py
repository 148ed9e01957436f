"""Closed-loop simulation of the leader-follower formation.

All continuous states (agent positions/velocities, leader, control
integrals, kappa accumulators and the three weight matrices of every agent)
are packed into one flat vector and advanced together by fixed-step
classical RK4.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, TextIO

import numpy as np
from numpy.typing import NDArray

from . import controller as ctl
from . import _kernel
from .graph import WeightedDigraph, certify, gain_thresholds, pinned_laplacian
from .nn import ThreeLayerNN, TuningGains, forward_arrays, neuron_counts, tuning_arrays
from .plant import (
    AgentState,
    DoubleIntegratorFleet,
    LeaderState,
    TwoLinkArmFleet,
    TwoLinkArmParams,
)

log = logging.getLogger(__name__)

Array = NDArray[np.float64]

DEFAULT_SEED = 20200517


class NonFiniteState(FloatingPointError):
    def __init__(self, variable: str, t: float) -> None:
        super().__init__(f"non-finite value in {variable} at t = {t:.6g} s")
        self.variable = variable
        self.t = t


@dataclass(frozen=True)
class SimConfig:
    graph: WeightedDigraph
    formation: ctl.FormationSpec
    gains: ctl.ControllerGains
    nn_gains: list[TuningGains]
    agents0: list[AgentState]
    leader0: LeaderState
    plant_model: str = "two_link_arm"
    plant_params: list[TwoLinkArmParams] = field(default_factory=list)
    disturbance: bool = True
    leader_damping: tuple[float, float] = (0.2, 0.3)
    hidden: tuple[int, int] | None = None
    dt: float = 1e-3
    duration: float = 40.0
    rng_seed: int = DEFAULT_SEED
    log_stride: int = 10
    substeps: int = 1
    backend: str = "numba"
    lagged_nn_feedback: bool = False
    weight_clamp: float | None = None

    def __post_init__(self) -> None:
        n_agents = self.graph.n_agents
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.duration < 0:
            raise ValueError("duration must be nonnegative")
        if self.log_stride < 1:
            raise ValueError("log_stride must be >= 1")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.backend not in ("numba", "numpy"):
            raise ValueError(f"unknown backend {self.backend!r}")
        for name, seq in (("nn_gains", self.nn_gains), ("agents0", self.agents0)):
            if len(seq) != n_agents:
                raise ValueError(f"{name} has {len(seq)} entries for {n_agents} agents")
        if self.formation.offsets.shape != (n_agents, self.dim):
            raise ValueError(f"offsets have shape {self.formation.offsets.shape}, expected ({n_agents}, {self.dim})")
        for i, s in enumerate(self.agents0):
            if np.shape(s.p) != (self.dim,) or np.shape(s.v) != (self.dim,):
                raise ValueError(f"agent {i} initial state has wrong dimension")
        if self.plant_model == "two_link_arm":
            if len(self.plant_params) != n_agents:
                raise ValueError("two_link_arm needs one parameter set per agent")
            if self.dim != 2:
                raise ValueError("two_link_arm agents are two-dimensional")
        elif self.plant_model != "double_integrator":
            raise ValueError(f"unknown plant model {self.plant_model!r}")
        if self.weight_clamp is not None and self.weight_clamp <= 0:
            raise ValueError("weight_clamp must be positive")

    @property
    def n_agents(self) -> int:
        return self.graph.n_agents

    @property
    def dim(self) -> int:
        return int(np.shape(self.leader0.p_l)[0])

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def h(self) -> float:
        """Integration step: ``dt`` split into ``substeps`` RK4 steps."""
        return self.dt / self.substeps

    @property
    def layer_sizes(self) -> tuple[int, int, int, int]:
        """``(n1, m1, m2, n2)`` of every agent's network."""
        m1, m2 = self.hidden if self.hidden is not None else neuron_counts(self.dim)
        return 3 * self.dim + 4, m1, m2, self.dim


class StateLayout:
    """Named slices of the flat state vector."""

    def __init__(self, n_agents: int, dim: int, n1: int, m1: int, m2: int, n2: int) -> None:
        shapes = {
            "p": (n_agents, dim),
            "v": (n_agents, dim),
            "p_l": (dim,),
            "v_l": (dim,),
            "u_integral": (n_agents, dim),
            "kappa_integral": (n_agents,),
            "V_hat": (n_agents, n1 + 1, m1),
            "Z_hat": (n_agents, m1 + 1, m2),
            "W_hat": (n_agents, m2 + 1, n2),
        }
        self.shapes = shapes
        self.slices: dict[str, slice] = {}
        offset = 0
        for name, shape in shapes.items():
            size = math.prod(shape)
            self.slices[name] = slice(offset, offset + size)
            offset += size
        self.size = offset

    def view(self, y: Array, name: str) -> Array:
        return y[self.slices[name]].reshape(self.shapes[name])

    def unpack(self, y: Array) -> dict[str, Array]:
        return {name: self.view(y, name) for name in self.shapes}

    def pack(self, parts: dict[str, Array]) -> Array:
        y = np.empty(self.size)
        for name, sl in self.slices.items():
            y[sl] = np.asarray(parts[name], dtype=np.float64).reshape(-1)
        return y

    def first_nonfinite(self, y: Array) -> str:
        for name, sl in self.slices.items():
            if not np.all(np.isfinite(y[sl])):
                return name
        return "?"


def rk4_step(f: Callable[[float, Array], Array], t: float, y: Array, h: float) -> Array:
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class Signals:
    """Controller signals evaluated at one state (all row-stacked per agent)."""

    e: Array
    delta: Array
    zeta: Array
    kappa: Array
    u: Array
    nn_output: Array
    norms: Array
    x_nn: Array


def leader_accel(p: Array, v: Array, damping: Array) -> Array:
    return -p + damping * (1.0 - p**2) * v


class ClosedLoop:
    """The joint right-hand side for one scenario."""

    def __init__(self, cfg: SimConfig) -> None:
        self.cfg = cfg
        n1, m1, m2, n2 = cfg.layer_sizes
        self.layout = StateLayout(cfg.n_agents, cfg.dim, n1, m1, m2, n2)
        self.pinned = pinned_laplacian(cfg.graph)
        self.offsets = cfg.formation.offsets
        self.gains = cfg.gains
        self.alpha = np.array([g.alpha for g in cfg.nn_gains])
        self.beta = np.array([g.beta for g in cfg.nn_gains])
        self.gamma = np.array([g.gamma for g in cfg.nn_gains])
        self.damping = np.asarray(cfg.leader_damping, dtype=np.float64)
        if cfg.plant_model == "two_link_arm":
            self.plant = TwoLinkArmFleet(cfg.plant_params, disturbance_on=cfg.disturbance)
        else:
            self.plant = DoubleIntegratorFleet(cfg.n_agents, cfg.dim)
        p0 = np.array([s.p for s in cfg.agents0], dtype=np.float64)
        v0 = np.array([s.v for s in cfg.agents0], dtype=np.float64)
        e0, d0 = ctl.stacked_errors(
            self.pinned, p0, v0, np.asarray(cfg.leader0.p_l), np.asarray(cfg.leader0.v_l), self.offsets
        )
        self.zeta0 = ctl.zeta(e0, d0, self.gains.k1)
        self.zeta0_l1 = np.abs(self.zeta0).sum(axis=-1)
        self._lag: tuple[Array, Array] | None = None
        self._kernel_args = self._pack_kernel_args() if cfg.backend == "numba" else None

    def _pack_kernel_args(self) -> tuple:
        cfg = self.cfg
        n1, m1, m2, _ = cfg.layer_sizes
        bounds = [sl.start for sl in self.layout.slices.values()] + [self.layout.size]
        g = self.gains
        if cfg.plant_model == "two_link_arm":
            kind = _kernel.PLANT_ARM
            arm = np.array([[q.m1_kg, q.m2_kg, q.r1_m, q.r2_m, q.g_mps2] for q in cfg.plant_params])
        else:
            kind = _kernel.PLANT_DOUBLE_INTEGRATOR
            arm = np.zeros((cfg.n_agents, 5))
        return (
            np.array([cfg.n_agents, cfg.dim, n1, m1, m2], dtype=np.int64),
            np.array(bounds, dtype=np.int64),
            np.ascontiguousarray(self.pinned),
            np.ascontiguousarray(self.offsets),
            np.ascontiguousarray(self.zeta0),
            np.ascontiguousarray(self.zeta0_l1),
            np.array([g.k1, g.k2, g.k3, g.k4, g.deadzone_b]),
            np.stack([self.alpha, self.beta, self.gamma], axis=-1),
            np.ascontiguousarray(self.damping),
            kind,
            arm,
            bool(cfg.disturbance),
        )

    def _lag_args(self) -> tuple:
        if self._lag is None:
            return False, np.zeros((self.cfg.n_agents, 3)), np.zeros(self.cfg.n_agents)
        norms, kappa = self._lag
        return True, np.ascontiguousarray(norms), np.ascontiguousarray(kappa)

    def initial_state(self) -> Array:
        cfg = self.cfg
        n1, m1, m2, n2 = cfg.layer_sizes
        rng = np.random.default_rng(cfg.rng_seed)
        nets = [ThreeLayerNN.initialize(n1, m1, m2, n2, rng) for _ in range(cfg.n_agents)]
        return self.layout.pack(
            {
                "p": [s.p for s in cfg.agents0],
                "v": [s.v for s in cfg.agents0],
                "p_l": cfg.leader0.p_l,
                "v_l": cfg.leader0.v_l,
                "u_integral": np.zeros((cfg.n_agents, cfg.dim)),
                "kappa_integral": np.zeros(cfg.n_agents),
                "V_hat": [n.V_hat for n in nets],
                "Z_hat": [n.Z_hat for n in nets],
                "W_hat": [n.W_hat for n in nets],
            }
        )

    def _norms_kappa(self, s: dict[str, Array], zeta: Array) -> tuple[Array, Array]:
        norms = np.stack(
            [np.sqrt((s[k] ** 2).sum(axis=(-2, -1))) for k in ("V_hat", "Z_hat", "W_hat")], axis=-1
        )
        kappa = ctl.kappa_closed_form(
            np.abs(zeta).sum(axis=-1), self.zeta0_l1, s["kappa_integral"], self.gains.deadzone_b
        )
        return norms, kappa

    def signals(self, y: Array) -> tuple[Signals, dict[str, Array], object]:
        s = self.layout.unpack(y)
        g = self.gains
        e, delta = ctl.stacked_errors(self.pinned, s["p"], s["v"], s["p_l"], s["v_l"], self.offsets)
        zeta = ctl.zeta(e, delta, g.k1)
        norms, kappa = self._norms_kappa(s, zeta)
        fb_norms, fb_kappa = self._lag if self._lag is not None else (norms, kappa)
        x = ctl.nn_input_batch(s["p"], s["v"], zeta, fb_norms, fb_kappa)
        y_hat, bundle = forward_arrays(s["V_hat"], s["Z_hat"], s["W_hat"], x)
        u = ctl.control_output(zeta, self.zeta0, s["u_integral"], g)
        sig = Signals(e, delta, zeta, kappa, u, y_hat, norms, x)
        return sig, s, bundle

    def rhs(self, t: float, y: Array) -> Array:
        """Joint time derivative; dispatches on ``cfg.backend``."""
        if self._kernel_args is None:
            return self.rhs_numpy(t, y)
        out = np.empty_like(y)
        _kernel.rhs(t, np.ascontiguousarray(y, dtype=np.float64), out, *self._kernel_args, *self._lag_args())
        return out

    def rhs_numpy(self, t: float, y: Array) -> Array:
        """Reference right-hand side built from the module-level functions."""
        sig, s, bundle = self.signals(y)
        g = self.gains
        d_w, d_z, d_v = tuning_arrays(
            s["V_hat"], s["Z_hat"], s["W_hat"], bundle, sig.x_nn, sig.zeta, g.k2,
            self.alpha, self.beta, self.gamma,
        )
        return self.layout.pack(
            {
                "p": s["v"],
                "v": self.plant.accel(t, s["p"], s["v"], sig.u),
                "p_l": s["v_l"],
                "v_l": leader_accel(s["p_l"], s["v_l"], self.damping),
                "u_integral": ctl.control_integrand(sig.nn_output, sig.zeta, sig.kappa, g),
                "kappa_integral": ctl.kappa_integrand(sig.zeta, g),
                "V_hat": d_v,
                "Z_hat": d_z,
                "W_hat": d_w,
            }
        )

    def step(self, t: float, y: Array) -> Array:
        """Advance by ``cfg.dt`` using ``cfg.substeps`` classical RK4 steps."""
        cfg = self.cfg
        if cfg.lagged_nn_feedback:
            s = self.layout.unpack(y)
            e, delta = ctl.stacked_errors(self.pinned, s["p"], s["v"], s["p_l"], s["v_l"], self.offsets)
            self._lag = self._norms_kappa(s, ctl.zeta(e, delta, self.gains.k1))
        h = cfg.h
        try:
            if self._kernel_args is not None:
                y_next = _kernel.advance(
                    t, np.ascontiguousarray(y, dtype=np.float64), h, cfg.substeps,
                    *self._kernel_args, *self._lag_args(),
                )
            else:
                y_next = y
                for k in range(cfg.substeps):
                    y_next = rk4_step(self.rhs_numpy, t + k * h, y_next, h)
                    if not np.all(np.isfinite(y_next)):
                        break
        finally:
            self._lag = None
        if self.cfg.weight_clamp is not None:
            for name in ("V_hat", "Z_hat", "W_hat"):
                w = self.layout.view(y_next, name)
                norm = np.sqrt((w**2).sum(axis=(-2, -1)))
                scale = np.minimum(1.0, self.cfg.weight_clamp / np.maximum(norm, 1e-300))
                w *= scale[:, None, None]
        if not np.all(np.isfinite(y_next)):
            raise NonFiniteState(self.layout.first_nonfinite(y_next), t + self.cfg.dt)
        return y_next


def step(loop: ClosedLoop, t: float, y: Array) -> Array:
    return loop.step(t, y)


def nu_vartheta(u: Array, e: Array) -> tuple[Array, Array]:
    """Average control cost and average formation error.

    ``u`` and ``e`` are ``(..., N, n)``; returns arrays over the leading axes.
    """
    n_agents = u.shape[-2]
    nu = (u**2).sum(axis=(-2, -1)) / (2 * n_agents)
    vartheta = np.abs(e).sum(axis=(-2, -1)) / (2 * n_agents)
    return nu, vartheta


@dataclass
class TrajectoryLog:
    t: Array
    p: Array  # (K, N, n)
    v: Array
    u: Array
    e: Array
    delta: Array
    zeta: Array
    kappa: Array  # (K, N)
    norms: Array  # (K, N, 3) ordered V, Z, W
    p_l: Array  # (K, n)
    v_l: Array
    nu: Array  # (K,)
    vartheta: Array

    @property
    def n_agents(self) -> int:
        return self.p.shape[1]

    @property
    def dim(self) -> int:
        return self.p.shape[2]

    def columns(self) -> list[str]:
        cols = ["t"]
        n = self.dim
        for i in range(1, self.n_agents + 1):
            for q in ("p", "v", "u", "e", "delta", "zeta"):
                cols += [f"a{i}_{q}{k}" for k in range(1, n + 1)]
            cols += [f"a{i}_kappa", f"a{i}_normV", f"a{i}_normZ", f"a{i}_normW"]
        cols += [f"leader_p{k}" for k in range(1, n + 1)]
        cols += [f"leader_v{k}" for k in range(1, n + 1)]
        return cols + ["nu", "vartheta"]

    def table(self) -> Array:
        k = self.t.shape[0]
        blocks = [self.t[:, None]]
        for i in range(self.n_agents):
            for arr in (self.p, self.v, self.u, self.e, self.delta, self.zeta):
                blocks.append(arr[:, i, :])
            blocks.append(self.kappa[:, i, None])
            blocks.append(self.norms[:, i, :])
        blocks += [self.p_l, self.v_l, self.nu[:, None], self.vartheta[:, None]]
        return np.concatenate([b.reshape(k, -1) for b in blocks], axis=1)

    def write_csv(self, fh: TextIO) -> None:
        fh.write(",".join(self.columns()) + "\n")
        for row in self.table():
            fh.write(",".join(repr(float(x)) for x in row) + "\n")

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def metrics(log_: TrajectoryLog) -> tuple[Array, Array]:
    """``(nu(t), vartheta(t))`` recomputed from the logged ``u`` and ``e``."""
    if log_.t.size == 0:
        raise ValueError("empty trajectory")
    return nu_vartheta(log_.u, log_.e)


class _Recorder:
    def __init__(self, capacity: int) -> None:
        self.rows: dict[str, list[Array]] = {}
        self.t: list[float] = []

    def add(self, t: float, sig: Signals, s: dict[str, Array]) -> None:
        self.t.append(t)
        for name, value in (
            ("p", s["p"]), ("v", s["v"]), ("u", sig.u), ("e", sig.e), ("delta", sig.delta),
            ("zeta", sig.zeta), ("kappa", sig.kappa), ("norms", sig.norms),
            ("p_l", s["p_l"]), ("v_l", s["v_l"]),
        ):
            self.rows.setdefault(name, []).append(np.array(value, copy=True))

    def finish(self) -> TrajectoryLog:
        arrays = {k: np.stack(v) for k, v in self.rows.items()}
        nu, vartheta = nu_vartheta(arrays["u"], arrays["e"])
        return TrajectoryLog(t=np.array(self.t), nu=nu, vartheta=vartheta, **arrays)


def check_gains(cfg: SimConfig) -> dict:
    """Certify the graph and compare the configured gains with the thresholds."""
    cert = certify(cfg.graph)
    thr = gain_thresholds(cert)
    g = cfg.gains
    return thr.report(g.k1, g.k2, g.k3, g.k4)


def run(cfg: SimConfig, progress: Callable[[float], None] | None = None) -> TrajectoryLog:
    """Integrate the scenario and return the logged trajectory."""
    report = check_gains(cfg)
    if not report["all_pass"]:
        failed = [k for k, v in report["gains"].items() if not v["pass"]]
        log.warning("gains %s do not meet the sufficient stability thresholds; running anyway", failed)
    loop = ClosedLoop(cfg)
    y = loop.initial_state()
    rec = _Recorder(cfg.n_steps // cfg.log_stride + 1)
    sig, s, _ = loop.signals(y)
    rec.add(0.0, sig, s)
    for k in range(1, cfg.n_steps + 1):
        t_prev = (k - 1) * cfg.dt
        y = loop.step(t_prev, y)
        if k % cfg.log_stride == 0:
            sig, s, _ = loop.signals(y)
            rec.add(k * cfg.dt, sig, s)
            if progress is not None:
                progress(k * cfg.dt)
    return rec.finish()


def pentagon_offsets(d: float = 1.0) -> Array:
    s1, c1 = math.sin(math.pi / 5), math.cos(math.pi / 5)
    s2, c2 = math.sin(2 * math.pi / 5), math.cos(2 * math.pi / 5)
    return d * np.array([[0.0, 1.0], [-s2, c2], [-s1, -c1], [s1, -c1], [s2, c2]])


def pentagon_graph() -> WeightedDigraph:
    a = np.array(
        [
            [0, 0, 0, 0, 1],
            [1, 0, 0, 0, 0],
            [1, 1, 0, 0, 0],
            [0, 0, 1, 0, 1],
            [0, 0, 1, 0, 0],
        ],
        dtype=np.float64,
    )
    return WeightedDigraph(a, np.array([1.0, 0, 0, 0, 0]))


def pentagon_scenario(**overrides) -> SimConfig:
    """Five two-link arms following a Van der Pol leader in a unit pentagon."""
    p0 = [(2.1, 0.0), (0.0, 2.5), (-1.1, 2.0), (-1.8, 0.7), (-1.0, -1.7)]
    cfg = SimConfig(
        graph=pentagon_graph(),
        formation=ctl.FormationSpec(pentagon_offsets(1.0)),
        gains=ctl.ControllerGains(k1=4.0, k2=37.5, k3=380.0, k4=2.0, deadzone_b=0.005),
        nn_gains=[TuningGains(1 / 20, 1 / 20, 1 / 20) for _ in range(5)],
        agents0=[AgentState(np.array(p), np.zeros(2)) for p in p0],
        leader0=LeaderState(np.array([1.0, -1.0]), np.zeros(2)),
        plant_model="two_link_arm",
        plant_params=[TwoLinkArmParams(0.8, 1.7, 1.0, 1.0, 9.8) for _ in range(5)],
        # one RK4 step of 1 ms is outside the stability region of the fast
        # velocity mode (about -5e3 1/s); four substeps keep |lambda h| near 1.3
        substeps=4,
    )
    return replace(cfg, **overrides) if overrides else cfg
