"""Leader-follower formation control with a three-layer NN and RISE feedback."""

from __future__ import annotations

__version__ = "0.1.0"

from .controller import ControllerGains, ControllerState, FormationSpec
from .graph import (
    CertificateViolation,
    GraphError,
    NotPinned,
    NotStronglyConnected,
    SingularSystem,
    WeightedDigraph,
    certify,
    gain_thresholds,
)
from .nn import ThreeLayerNN, TuningGains
from .plant import AgentState, LeaderState, TwoLinkArmParams
from .sim import NonFiniteState, SimConfig, TrajectoryLog, metrics, pentagon_scenario, run

__all__ = [
    "AgentState",
    "CertificateViolation",
    "ControllerGains",
    "ControllerState",
    "FormationSpec",
    "GraphError",
    "LeaderState",
    "NonFiniteState",
    "NotPinned",
    "NotStronglyConnected",
    "SimConfig",
    "SingularSystem",
    "ThreeLayerNN",
    "TrajectoryLog",
    "TuningGains",
    "TwoLinkArmParams",
    "WeightedDigraph",
    "certify",
    "gain_thresholds",
    "metrics",
    "pentagon_scenario",
    "run",
]
