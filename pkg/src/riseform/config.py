"""Scenario files: TOML in, :class:`~riseform.sim.SimConfig` out, and back.

Agents are numbered from 1 in the file (``edges = [[from, to, weight], ...]``,
``pinning = [[agent, b], ...]``) and from 0 in code.  Layout::

    [scenario]  dt, duration, substeps, log_stride, seed, backend, ...
    [graph]     n_agents, edges, pinning
    [gains]     k1, k2, k3, k4, deadzone_b
    [nn]        alpha, beta, gamma (scalar or one per agent), hidden (optional)
    [leader]    p, v, damping
    [plant]     model, disturbance, m1_kg, m2_kg, r1_m, r2_m, g_mps2
    [[agents]]  p, v, offset, optional per-agent plant overrides
"""

from __future__ import annotations

import hashlib
import sys
from pathlib import Path
from typing import Any

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .controller import ControllerGains, FormationSpec
from .graph import GraphError, WeightedDigraph
from .nn import TuningGains
from .plant import AgentState, LeaderState, TwoLinkArmParams
from .sim import DEFAULT_SEED, SimConfig

ARM_KEYS = ("m1_kg", "m2_kg", "r1_m", "r2_m", "g_mps2")


class ConfigError(ValueError):
    pass


def _table(doc: dict, name: str, required: bool = True) -> dict:
    t = doc.get(name)
    if t is None:
        if required:
            raise ConfigError(f"missing [{name}] table")
        return {}
    if not isinstance(t, dict):
        raise ConfigError(f"[{name}] must be a table")
    return t


def _vector(value: Any, what: str, dim: int | None = None) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what} must be a list of numbers") from exc
    if arr.ndim != 1 or (dim is not None and arr.shape[0] != dim):
        raise ConfigError(f"{what} must have length {dim}, got {np.shape(value)}")
    return arr


def _per_agent(value: Any, n: int, what: str) -> list[float]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [float(value)] * n
    if isinstance(value, list) and len(value) == n:
        return [float(v) for v in value]
    raise ConfigError(f"{what} must be a number or a list of {n} numbers")


def from_dict(doc: dict) -> SimConfig:
    """Build a :class:`SimConfig` from a parsed scenario document."""
    sc = _table(doc, "scenario", required=False)
    gt = _table(doc, "graph")
    n = gt.get("n_agents")
    if not isinstance(n, int) or n < 1:
        raise ConfigError("graph.n_agents must be a positive integer")
    try:
        edges = [(int(a) - 1, int(b) - 1, float(w)) for a, b, w in gt.get("edges", [])]
        pins = [(int(a) - 1, float(w)) for a, w in gt.get("pinning", [])]
    except (TypeError, ValueError) as exc:
        raise ConfigError("edges are [from, to, weight] and pinning entries are [agent, b]") from exc
    try:
        graph = WeightedDigraph.from_edges(n, edges, pins)
    except GraphError as exc:
        raise ConfigError(str(exc)) from exc

    lt = _table(doc, "leader")
    p_l = _vector(lt.get("p"), "leader.p")
    dim = p_l.shape[0]
    v_l = _vector(lt.get("v", [0.0] * dim), "leader.v", dim)
    damping = _vector(lt.get("damping", [0.2, 0.3]), "leader.damping", dim)

    agents = doc.get("agents")
    if not isinstance(agents, list) or len(agents) != n:
        raise ConfigError(f"expected {n} [[agents]] entries, got {0 if not isinstance(agents, list) else len(agents)}")
    states, offsets = [], []
    for k, a in enumerate(agents, start=1):
        states.append(
            AgentState(_vector(a.get("p"), f"agents[{k}].p", dim), _vector(a.get("v", [0.0] * dim), f"agents[{k}].v", dim))
        )
        offsets.append(_vector(a.get("offset", [0.0] * dim), f"agents[{k}].offset", dim))

    kt = _table(doc, "gains")
    nt = _table(doc, "nn")
    pt = _table(doc, "plant", required=False)
    model = pt.get("model", "two_link_arm")
    plant_params = []
    try:
        gains = ControllerGains(
            float(kt["k1"]), float(kt["k2"]), float(kt["k3"]), float(kt["k4"]), float(kt.get("deadzone_b", 0.0))
        )
        alpha = _per_agent(nt.get("alpha"), n, "nn.alpha")
        beta = _per_agent(nt.get("beta"), n, "nn.beta")
        gamma = _per_agent(nt.get("gamma"), n, "nn.gamma")
        nn_gains = [TuningGains(a, b, c) for a, b, c in zip(alpha, beta, gamma)]
        if model == "two_link_arm":
            base = {key: float(pt[key]) for key in ARM_KEYS if key in pt}
            for a in agents:
                merged = base | {key: float(a[key]) for key in ARM_KEYS if key in a}
                plant_params.append(TwoLinkArmParams(**merged))
        hidden = nt.get("hidden")
        return SimConfig(
            graph=graph,
            formation=FormationSpec(np.array(offsets)),
            gains=gains,
            nn_gains=nn_gains,
            agents0=states,
            leader0=LeaderState(p_l, v_l),
            plant_model=model,
            plant_params=plant_params,
            disturbance=bool(pt.get("disturbance", True)),
            leader_damping=tuple(float(x) for x in damping),
            hidden=None if hidden is None else (int(hidden[0]), int(hidden[1])),
            dt=float(sc.get("dt", 1e-3)),
            duration=float(sc.get("duration", 40.0)),
            rng_seed=int(sc.get("seed", DEFAULT_SEED)),
            log_stride=int(sc.get("log_stride", 10)),
            substeps=int(sc.get("substeps", 1)),
            backend=str(sc.get("backend", "numba")),
            lagged_nn_feedback=bool(sc.get("lagged_nn_feedback", False)),
            weight_clamp=None if sc.get("weight_clamp") is None else float(sc["weight_clamp"]),
        )
    except KeyError as exc:
        raise ConfigError(f"missing key {exc.args[0]!r}") from exc
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def to_dict(cfg: SimConfig) -> dict:
    scenario: dict[str, Any] = {
        "dt": cfg.dt,
        "duration": cfg.duration,
        "substeps": cfg.substeps,
        "log_stride": cfg.log_stride,
        "seed": cfg.rng_seed,
        "backend": cfg.backend,
        "lagged_nn_feedback": cfg.lagged_nn_feedback,
    }
    if cfg.weight_clamp is not None:
        scenario["weight_clamp"] = cfg.weight_clamp
    g = cfg.gains
    nn: dict[str, Any] = {
        "alpha": [x.alpha for x in cfg.nn_gains],
        "beta": [x.beta for x in cfg.nn_gains],
        "gamma": [x.gamma for x in cfg.nn_gains],
    }
    if cfg.hidden is not None:
        nn["hidden"] = list(cfg.hidden)
    agents = []
    for i, s in enumerate(cfg.agents0):
        entry: dict[str, Any] = {
            "p": [float(x) for x in s.p],
            "v": [float(x) for x in s.v],
            "offset": [float(x) for x in cfg.formation.offsets[i]],
        }
        if cfg.plant_model == "two_link_arm":
            prm = cfg.plant_params[i]
            entry |= {key: float(getattr(prm, key)) for key in ARM_KEYS}
        agents.append(entry)
    return {
        "scenario": scenario,
        "graph": {
            "n_agents": cfg.n_agents,
            "edges": [[src + 1, dst + 1, w] for src, dst, w in cfg.graph.edges()],
            "pinning": [[i + 1, b] for i, b in cfg.graph.pinning()],
        },
        "gains": {"k1": g.k1, "k2": g.k2, "k3": g.k3, "k4": g.k4, "deadzone_b": g.deadzone_b},
        "nn": nn,
        "leader": {
            "p": [float(x) for x in cfg.leader0.p_l],
            "v": [float(x) for x in cfg.leader0.v_l],
            "damping": [float(x) for x in cfg.leader_damping],
        },
        "plant": {"model": cfg.plant_model, "disturbance": cfg.disturbance},
        "agents": agents,
    }


def dumps(cfg: SimConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def loads(text: str) -> SimConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return from_dict(doc)


def load(path: str | Path) -> SimConfig:
    return loads(Path(path).read_text(encoding="utf-8"))


def config_hash(cfg: SimConfig) -> str:
    """SHA-256 of the canonical TOML form."""
    return hashlib.sha256(dumps(cfg).encode("utf-8")).hexdigest()
