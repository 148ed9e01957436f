"""Directed interaction graphs, pinning certificates and gain thresholds.

Convention: ``adjacency[i, j] = a_ij > 0`` means agent ``i`` receives
information from agent ``j`` (edge ``j -> i``).  ``leader_weights[i] = b_i > 0``
means agent ``i`` receives the leader's state directly.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray


class GraphError(ValueError):
    """Base class for graph validation failures."""


class NotPinned(GraphError):
    pass


class NotStronglyConnected(GraphError):
    pass


class SingularSystem(GraphError):
    pass


class CertificateViolation(GraphError):
    """A computed certificate check failed.  ``check`` names which one."""

    def __init__(self, check: str, message: str) -> None:
        super().__init__(f"{check}: {message}")
        self.check = check


@dataclass(frozen=True)
class WeightedDigraph:
    adjacency: NDArray[np.float64]
    leader_weights: NDArray[np.float64]

    def __post_init__(self) -> None:
        a = np.array(self.adjacency, dtype=np.float64)
        b = np.array(self.leader_weights, dtype=np.float64).reshape(-1)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise GraphError(f"adjacency must be a non-empty square matrix, got shape {a.shape}")
        if b.shape[0] != a.shape[0]:
            raise GraphError(f"leader_weights has length {b.shape[0]}, expected {a.shape[0]}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise GraphError("weights must be finite")
        if np.any(a < 0) or np.any(b < 0):
            raise GraphError("weights must be nonnegative")
        if np.any(np.diag(a) != 0):
            raise GraphError("self-loops are not allowed (a_ii must be 0)")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "leader_weights", b)

    @property
    def n_agents(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_edges(
        cls,
        n_agents: int,
        edges: list[tuple[int, int, float]],
        pinning: list[tuple[int, float]],
    ) -> "WeightedDigraph":
        """Build from 0-based ``(src, dst, weight)`` edges and ``(agent, b_i)`` pins."""
        a = np.zeros((n_agents, n_agents))
        for src, dst, w in edges:
            if not (0 <= src < n_agents and 0 <= dst < n_agents):
                raise GraphError(f"edge ({src}, {dst}) out of range for {n_agents} agents")
            if a[dst, src] != 0:
                raise GraphError(f"repeated edge ({src}, {dst})")
            a[dst, src] = w
        b = np.zeros(n_agents)
        for agent, w in pinning:
            if not 0 <= agent < n_agents:
                raise GraphError(f"pinned agent {agent} out of range")
            b[agent] = w
        return cls(a, b)

    def edges(self) -> list[tuple[int, int, float]]:
        dst, src = np.nonzero(self.adjacency)
        order = np.lexsort((dst, src))
        return [(int(src[k]), int(dst[k]), float(self.adjacency[dst[k], src[k]])) for k in order]

    def pinning(self) -> list[tuple[int, float]]:
        return [(int(i), float(self.leader_weights[i])) for i in np.nonzero(self.leader_weights)[0]]


def laplacian(g: WeightedDigraph) -> NDArray[np.float64]:
    """In-degree Laplacian ``L = D - A``; every row sums to zero."""
    a = g.adjacency
    return np.diag(a.sum(axis=1)) - a


def pinned_laplacian(g: WeightedDigraph) -> NDArray[np.float64]:
    """``L + B``."""
    return laplacian(g) + np.diag(g.leader_weights)


def _reachable(successors: list[list[int]], start: int) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        k = queue.popleft()
        for nxt in successors[k]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def _successors(g: WeightedDigraph) -> list[list[int]]:
    # edge j -> i whenever a_ij > 0
    n = g.n_agents
    return [[i for i in range(n) if g.adjacency[i, j] > 0] for j in range(n)]


def is_strongly_connected(g: WeightedDigraph) -> bool:
    """True iff every agent reaches every other one along directed edges."""
    n = g.n_agents
    fwd = _successors(g)
    if len(_reachable(fwd, 0)) != n:
        return False
    bwd: list[list[int]] = [[] for _ in range(n)]
    for j, succ in enumerate(fwd):
        for i in succ:
            bwd[i].append(j)
    return len(_reachable(bwd, 0)) == n


def unreachable_from_leader(g: WeightedDigraph) -> list[int]:
    """Agents with no directed path from the leader (empty iff a leader-rooted spanning tree exists)."""
    n = g.n_agents
    fwd = _successors(g)
    seen: set[int] = set()
    for root in np.nonzero(g.leader_weights)[0]:
        if int(root) not in seen:
            seen |= _reachable(fwd, int(root))
    return [i for i in range(n) if i not in seen]


@dataclass(frozen=True)
class GraphCertificates:
    laplacian: NDArray[np.float64]
    pinned: NDArray[np.float64]
    q: NDArray[np.float64]
    p_diag: NDArray[np.float64]
    pi_matrix: NDArray[np.float64]
    pi_eigenvalues: NDArray[np.float64]
    sigma_min_PLB: float
    sigma_max_PLB: float
    strongly_connected: bool
    symmetric_part_pd: bool
    m_matrix: bool = field(default=True)

    def as_dict(self) -> dict:
        return {
            "strongly_connected": self.strongly_connected,
            "m_matrix": self.m_matrix,
            "symmetric_part_pd": self.symmetric_part_pd,
            "q": self.q.tolist(),
            "p_diag": self.p_diag.tolist(),
            "pi_matrix": self.pi_matrix.tolist(),
            "pi_eigenvalues": self.pi_eigenvalues.tolist(),
            "pi_positive_definite": True,
            "sigma_min_PLB": self.sigma_min_PLB,
            "sigma_max_PLB": self.sigma_max_PLB,
        }


def certify(
    g: WeightedDigraph,
    *,
    require_strongly_connected: bool = False,
    cond_limit: float = 1e12,
) -> GraphCertificates:
    """Check the pinning conditions and build ``q``, ``P`` and ``Pi``.

    ``q = (L+B)^{-1} 1``, ``P = diag(1/q)``, ``Pi = P(L+B) + (L+B)^T P``.

    Graphs that are not strongly connected but in which the leader reaches
    every agent are accepted unless ``require_strongly_connected`` is set;
    the returned ``strongly_connected`` flag records which case applied.
    Every quantity the gain conditions rely on (``q > 0``, ``Pi`` positive
    definite, M-matrix structure) is verified numerically either way.

    Raises:
        NotPinned: all ``b_i`` are zero.
        NotStronglyConnected: some agent is unreachable from the leader, or
            strong connectivity was required and is absent.
        SingularSystem: ``L + B`` is numerically singular.
        CertificateViolation: ``q``, ``Pi`` or the M-matrix check failed.
    """
    if not np.any(g.leader_weights > 0):
        raise NotPinned("no agent receives the leader's state (all b_i = 0)")
    strong = is_strongly_connected(g)
    missing = unreachable_from_leader(g)
    if missing:
        raise NotStronglyConnected(
            f"agents {missing} are not reachable from the leader; the graph is not strongly connected"
        )
    if require_strongly_connected and not strong:
        raise NotStronglyConnected("graph is not strongly connected")

    lap = laplacian(g)
    h = lap + np.diag(g.leader_weights)
    if np.linalg.cond(h) > cond_limit:
        raise SingularSystem(f"L+B is numerically singular (cond > {cond_limit:g})")

    off = h - np.diag(np.diag(h))
    if np.any(off > 0):
        raise CertificateViolation("m_matrix", "L+B has a positive off-diagonal entry")
    if np.linalg.eigvals(h).real.min() <= 0:
        raise CertificateViolation("m_matrix", "L+B has an eigenvalue with nonpositive real part")
    sym_eigs = np.linalg.eigvalsh(h + h.T)
    symmetric_part_pd = bool(sym_eigs[0] > 1e-10 * abs(sym_eigs[-1]))

    q = np.linalg.solve(h, np.ones(g.n_agents))
    if np.any(q <= 0):
        raise CertificateViolation("q_positive", f"q = (L+B)^-1 1 has nonpositive entries: {q}")
    p = 1.0 / q
    ph = p[:, None] * h
    pi = ph + ph.T
    pi_eigs = np.linalg.eigvalsh(pi)
    if pi_eigs[0] <= 1e-10 * abs(pi_eigs[-1]):
        raise CertificateViolation(
            "pi_positive_definite", f"Pi is not positive definite (eigenvalues {pi_eigs})"
        )
    sv = np.linalg.svd(ph, compute_uv=False)
    return GraphCertificates(
        laplacian=lap,
        pinned=h,
        q=q,
        p_diag=p,
        pi_matrix=pi,
        pi_eigenvalues=pi_eigs,
        sigma_min_PLB=float(sv[-1]),
        sigma_max_PLB=float(sv[0]),
        strongly_connected=strong,
        symmetric_part_pd=symmetric_part_pd,
    )


@dataclass(frozen=True)
class GainThresholds:
    """Sufficient lower bounds on ``k1..k4`` for the stability result.

    ``k3`` has no fixed bound: it scales with the chosen ``k2``.
    """

    k1_min: float
    k2_min: float
    k4_min: float
    sigma_min: float
    sigma_max: float

    def k3_min(self, k2: float) -> float:
        return k2 / (2.0 * self.sigma_min)

    def check(self, k1: float, k2: float, k3: float, k4: float) -> dict[str, bool]:
        return {
            "k1": k1 > self.k1_min,
            "k2": k2 > self.k2_min,
            "k3": k3 > self.k3_min(k2),
            "k4": k4 > self.k4_min,
        }

    def report(self, k1: float, k2: float, k3: float, k4: float) -> dict:
        passed = self.check(k1, k2, k3, k4)
        bounds = {"k1": self.k1_min, "k2": self.k2_min, "k3": self.k3_min(k2), "k4": self.k4_min}
        given = {"k1": k1, "k2": k2, "k3": k3, "k4": k4}
        return {
            "sigma_min_PLB": self.sigma_min,
            "sigma_max_PLB": self.sigma_max,
            "gains": {
                k: {"value": given[k], "threshold": bounds[k], "pass": passed[k]} for k in given
            },
            "all_pass": all(passed.values()),
        }


def gain_thresholds(c: GraphCertificates) -> GainThresholds:
    return GainThresholds(
        k1_min=0.5,
        k2_min=(1.0 + c.sigma_max_PLB) / c.sigma_min_PLB,
        k4_min=c.sigma_max_PLB / 2.0,
        sigma_min=c.sigma_min_PLB,
        sigma_max=c.sigma_max_PLB,
    )
