"""Communication graphs, mixing weights, step sizes and the consensus update.

Agents are indexed from 0.  An edge ``(j, i)`` means agent ``i`` receives
from agent ``j``.  Every agent always hears itself, so self-loops are never
listed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import networkx as nx
import numpy as np


@dataclass(frozen=True)
class Digraph:
    N: int
    edges: frozenset

    def __init__(self, N: int, edges: Iterable = ()):
        es = set()
        for e in edges:
            j, i = (int(v) for v in e)
            if not (0 <= j < N and 0 <= i < N):
                raise ValueError(f"edge {(j, i)} has a node outside 0..{N - 1}")
            if i != j:
                es.add((j, i))
        object.__setattr__(self, "N", int(N))
        object.__setattr__(self, "edges", frozenset(es))

    @classmethod
    def undirected(cls, N: int, pairs: Iterable) -> "Digraph":
        """Build from unordered pairs, inserting both directions."""
        es = []
        for a, b in pairs:
            es += [(a, b), (b, a)]
        return cls(N, es)

    @classmethod
    def complete(cls, N: int) -> "Digraph":
        return cls(N, [(j, i) for i in range(N) for j in range(N) if i != j])

    def neighbors(self, i: int) -> list[int]:
        return sorted(j for j, k in self.edges if k == i)

    def is_symmetric(self) -> bool:
        return all((i, j) in self.edges for j, i in self.edges)

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(self.N))
        g.add_edges_from(self.edges)
        return g


@dataclass(frozen=True)
class GraphSchedule:
    """Periodic sequence of graphs; round k uses ``graphs[(k - offset) % period]``."""
    graphs: tuple
    offset: int = 0

    def __post_init__(self):
        gs = tuple(self.graphs)
        if not gs:
            raise ValueError("a schedule needs at least one graph")
        if len({g.N for g in gs}) != 1:
            raise ValueError("all graphs in a schedule must have the same node count")
        if self.offset < 0:
            raise ValueError("offset must be non-negative")
        object.__setattr__(self, "graphs", gs)

    @property
    def N(self) -> int:
        return self.graphs[0].N

    @property
    def period(self) -> int:
        return len(self.graphs)

    def graph(self, k: int) -> Digraph:
        if k >= self.offset:
            return self.graphs[(k - self.offset) % self.period]
        return self.graphs[k % self.period]


def metropolis_weights(g: Digraph) -> np.ndarray:
    """w_ij = 1 / (1 + max(d_i, d_j)) on edges, remainder on the diagonal."""
    if not g.is_symmetric():
        raise ValueError("Metropolis weights need an undirected (symmetric) graph")
    N = g.N
    deg = np.zeros(N, dtype=int)
    for _, i in g.edges:
        deg[i] += 1
    W = np.zeros((N, N))
    for j, i in g.edges:
        W[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
    W[np.diag_indices(N)] = 1.0 - W.sum(axis=1)
    return W


class StochasticityReport(NamedTuple):
    row_deviation: float
    col_deviation: float
    passed: bool
    negative_at: tuple | None = None


def check_doubly_stochastic(W, tol: float = 1e-12) -> StochasticityReport:
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {W.shape}")
    row = float(np.max(np.abs(W.sum(axis=1) - 1.0)))
    col = float(np.max(np.abs(W.sum(axis=0) - 1.0)))
    neg = np.argwhere(W < 0)
    if neg.size:
        return StochasticityReport(row, col, False, tuple(int(v) for v in neg[0]))
    return StochasticityReport(row, col, row <= tol and col <= tol)


def union_graph(graphs: Sequence[Digraph]) -> Digraph:
    es = set()
    for g in graphs:
        es |= g.edges
    return Digraph(graphs[0].N, es)


def check_joint_connectivity(schedule: GraphSchedule, l: int, tau: int | None = None) -> bool:
    """True iff every window of rounds kl+1+tau .. (k+1)l+tau has a strongly connected union.

    Window starts repeat modulo the schedule period, so checking one period of
    window indices covers all k.
    """
    if l < 1:
        raise ValueError("window length l must be >= 1")
    tau = schedule.offset if tau is None else tau
    for k in range(schedule.period):
        start = k * l + 1 + tau
        u = union_graph([schedule.graph(s) for s in range(start, start + l)])
        if u.N > 1 and not nx.is_strongly_connected(u.to_networkx()):
            return False
    return True


def consensus_step(thetas, W, grads, eta: float) -> np.ndarray:
    """theta_i <- sum_j W[i, j] theta_j - eta * g_i, for all agents at once."""
    th = np.asarray(thetas, dtype=float)
    g = np.asarray(grads, dtype=float)
    W = np.asarray(W, dtype=float)
    if th.ndim != 2 or g.shape != th.shape or W.shape != (th.shape[0], th.shape[0]):
        raise ValueError(
            f"shape mismatch: thetas {th.shape}, grads {g.shape}, weights {W.shape}")
    return W @ th - eta * g


@dataclass(frozen=True)
class StepSchedule:
    kind: str = "constant"   # constant | harmonic | power
    eta0: float = 0.1
    p: float = 0.75

    def __post_init__(self):
        if self.kind not in ("constant", "harmonic", "power"):
            raise ValueError(f"unknown step schedule kind {self.kind!r}")
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if self.kind == "power" and not 0.5 < self.p <= 1:
            raise ValueError("power schedule needs 0.5 < p <= 1")


def step_size(s: StepSchedule, k: int) -> float:
    if k < 0:
        raise ValueError("k must be non-negative")
    if s.kind == "constant":
        return s.eta0
    if s.kind == "harmonic":
        return s.eta0 / (k + 1)
    return s.eta0 / (k + 1) ** s.p
