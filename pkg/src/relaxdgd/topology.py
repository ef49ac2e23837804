"""Communication graphs, doubly stochastic mixing matrices and gossip.

A mixing matrix ``W`` is symmetric, doubly stochastic and supported on the
graph edges plus the diagonal. Its consensus speed is governed by
``sqrt(rho) = max(|lambda_2|, |lambda_N|)``; ``1 - sqrt(rho)`` is the
spectral gap.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, DisconnectedGraph, InvalidSize, NotComplete, NumericalFailure

__all__ = [
    "Graph",
    "MixingMatrix",
    "SpectralStats",
    "PRESETS",
    "build_graph",
    "metropolis_weights",
    "uniform_weights",
    "lazy_ring_weights",
    "spectral_stats",
    "gossip",
    "mixing_from_preset",
]

PRESETS = ("fully_connected", "ring", "ring_lazy", "star", "custom")

STOCHASTIC_TOL = 1e-12


def _edge(i, j):
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Graph:
    """Undirected connected graph on agents ``0..N-1`` without self-loops."""

    num_agents: int
    edges: frozenset
    kind: str = "custom"

    def __post_init__(self):
        if self.num_agents < 2:
            raise InvalidSize(f"need at least 2 agents, got {self.num_agents}")
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop ({i},{i}) not allowed")
            if not (0 <= i < self.num_agents and 0 <= j < self.num_agents):
                raise ValueError(f"edge ({i},{j}) out of range for N={self.num_agents}")
            norm.add(_edge(i, j))
        object.__setattr__(self, "edges", frozenset(norm))
        if not self._connected():
            raise DisconnectedGraph(f"graph on {self.num_agents} agents is disconnected")

    def neighbors(self, i):
        return sorted({b if a == i else a for a, b in self.edges if i in (a, b)})

    def degrees(self):
        deg = np.zeros(self.num_agents, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def is_complete(self):
        n = self.num_agents
        return len(self.edges) == n * (n - 1) // 2

    def _connected(self):
        adj = {i: [] for i in range(self.num_agents)}
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.num_agents


def build_graph(kind, n, edges=None):
    """Build a graph of the given kind on ``n`` agents.

    ``kind`` is one of ``fully_connected``, ``ring``, ``star`` or ``custom``
    (the latter requires ``edges``, an iterable of index pairs).
    """
    if n < 2:
        raise InvalidSize(f"need at least 2 agents, got {n}")
    if kind == "fully_connected":
        e = {(i, j) for i in range(n) for j in range(i + 1, n)}
    elif kind == "ring":
        e = {_edge(i, (i + 1) % n) for i in range(n)}
    elif kind == "star":
        e = {(0, j) for j in range(1, n)}
    elif kind == "custom":
        if edges is None:
            raise ValueError("custom graph requires an edge list")
        e = {_edge(int(i), int(j)) for i, j in edges}
    else:
        raise ValueError(f"unknown graph kind {kind!r}")
    return Graph(n, frozenset(e), kind)


@dataclass(frozen=True)
class SpectralStats:
    eigenvalues: np.ndarray  # descending
    lambda2_abs: float
    lambdaN_abs: float
    rho: float
    spectral_gap: float


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Symmetric doubly stochastic weights with cached spectral statistics.

    ``rho`` is the squared second-largest eigenvalue magnitude. Construction
    validates every invariant and fails loudly otherwise.
    """

    weights: np.ndarray
    graph: Graph | None = None
    name: str = "custom"
    stats: SpectralStats = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionMismatch(f"mixing matrix must be square, got shape {w.shape}")
        n = w.shape[0]
        if not np.array_equal(w, w.T):
            raise ValueError("mixing matrix is not exactly symmetric")
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("mixing weights must lie in [0, 1]")
        if np.max(np.abs(w.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
            raise ValueError("rows of mixing matrix do not sum to 1")
        if np.max(np.abs(w.sum(axis=0) - 1.0)) > STOCHASTIC_TOL:
            raise ValueError("columns of mixing matrix do not sum to 1")
        if self.graph is not None:
            if self.graph.num_agents != n:
                raise DimensionMismatch("graph and matrix sizes differ")
            allowed = np.eye(n, dtype=bool)
            for i, j in self.graph.edges:
                allowed[i, j] = allowed[j, i] = True
            if np.any(w[~allowed] != 0):
                raise ValueError("positive weight outside graph edges")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "stats", spectral_stats(w))
        if n > 1 and not self.stats.lambda2_abs < 1 and self.graph is not None:
            raise ValueError("second eigenvalue magnitude is not < 1")

    @property
    def n(self):
        return self.weights.shape[0]

    @property
    def rho(self):
        return self.stats.rho

    @property
    def spectral_gap(self):
        return self.stats.spectral_gap


def spectral_stats(m):
    """Eigenvalue summary of a symmetric mixing matrix (or its weight array)."""
    w = m.weights if isinstance(m, MixingMatrix) else np.asarray(m, dtype=float)
    n = w.shape[0]
    try:
        eig = np.linalg.eigvalsh(w)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigen-solver failed: {exc}") from exc
    eig = np.sort(eig)[::-1]
    if n == 1:
        l2 = ln = 0.0
    else:
        l2, ln = abs(float(eig[1])), abs(float(eig[-1]))
    root = max(l2, ln)
    return SpectralStats(eig, l2, ln, root * root, 1.0 - root)


def metropolis_weights(g):
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on edges."""
    n = g.num_agents
    deg = g.degrees()
    w = np.zeros((n, n))
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    for i in range(n):
        w[i, i] = 1.0 - (w[i].sum() - w[i, i])
    return MixingMatrix(w, g, "metropolis")


def uniform_weights(g):
    """All-``1/N`` averaging; only doubly stochastic on the complete graph."""
    if not g.is_complete():
        raise NotComplete(f"uniform weights need the complete graph, got {g.kind}")
    n = g.num_agents
    return MixingMatrix(np.full((n, n), 1.0 / n), g, "uniform")


def lazy_ring_weights(g):
    """Ring weights with 1/2 on the diagonal and 1/4 per neighbour."""
    n = g.num_agents
    expected = build_graph("ring", n).edges
    if g.edges != expected:
        raise ValueError("lazy ring weights need a ring graph")
    w = 0.5 * np.eye(n)
    for i in range(n):
        w[i, (i + 1) % n] += 0.25
        w[i, (i - 1) % n] += 0.25
    return MixingMatrix(w, g, "ring_lazy")


def mixing_from_preset(name, n, edges=None):
    """Mixing matrix for a named preset.

    ``fully_connected`` uses uniform weights, ``ring_lazy`` the lazy ring,
    everything else Metropolis. ``n == 1`` yields the trivial ``[[1]]``.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown topology {name!r}; expected one of {PRESETS}")
    if n == 1:
        return MixingMatrix(np.ones((1, 1)), None, "single")
    if name == "fully_connected":
        return uniform_weights(build_graph("fully_connected", n))
    if name == "ring_lazy":
        return lazy_ring_weights(build_graph("ring", n))
    return metropolis_weights(build_graph(name, n, edges))


def gossip(m, states):
    """One gossip round: row ``i`` of the result is ``sum_j w_ij states_j``."""
    w = m.weights if isinstance(m, MixingMatrix) else np.asarray(m)
    x = np.asarray(states, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != w.shape[0]:
        raise DimensionMismatch(f"expected {w.shape[0]} state vectors, got shape {np.shape(states)}")
    out = w @ x
    return out[:, 0] if squeeze else out
