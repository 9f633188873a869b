"""Switching-topology communication graphs and Metropolis consensus.

Graphs are undirected and always connected. Consensus weights follow the
Metropolis rule, which each agent can compute after a one-hop degree
exchange, and which yields a symmetric doubly stochastic matrix.
"""
from __future__ import annotations

import heapq
import io
from fractions import Fraction
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class CommGraph:
    n_agents: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise ValueError(f"edge ({i}, {j}) out of range")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        if not is_connected(self.n_agents, self.edges):
            raise ValueError("communication graph must be connected")

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_agents, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self, i: int) -> list[int]:
        """Neighbors of ``i`` excluding ``i`` itself, sorted."""
        out = [b if a == i else a for a, b in self.edges if i in (a, b)]
        return sorted(out)


def is_connected(n: int, edges) -> bool:
    """Union-find connectivity check."""
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    components = n
    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            components -= 1
    return components == 1


def complete_graph(n: int) -> CommGraph:
    return CommGraph(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))


def path_graph(n: int) -> CommGraph:
    return CommGraph(n, frozenset((i, i + 1) for i in range(n - 1)))


def ring_graph(n: int) -> CommGraph:
    if n < 3:
        return path_graph(n)
    return CommGraph(n, frozenset((i, (i + 1) % n) for i in range(n)))


def prufer_to_edges(seq: Sequence[int], n: int) -> list[tuple[int, int]]:
    """Decode a Prüfer sequence of length n - 2 into the edges of a tree."""
    degree = [1] * n
    for x in seq:
        degree[x] += 1
    leaves = [i for i in range(n) if degree[i] == 1]
    heapq.heapify(leaves)
    edges = []
    for x in seq:
        leaf = heapq.heappop(leaves)
        edges.append((leaf, x))
        degree[x] -= 1
        if degree[x] == 1:
            heapq.heappush(leaves, x)
    u, v = heapq.heappop(leaves), heapq.heappop(leaves)
    edges.append((u, v))
    return edges


class GraphSampler:
    """Seeded source of random connected graphs.

    A uniform random spanning tree (via a random Prüfer sequence) is drawn
    first and every remaining edge is then added independently with
    probability ``p_extra``. Every agent can hold its own copy built from the
    same seed; the sequences coincide.
    """

    def __init__(self, n_agents: int, seed=None, p_extra: float = 0.5):
        if n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if not 0.0 <= p_extra <= 1.0:
            raise ValueError("p_extra must lie in [0, 1]")
        self.n_agents = n_agents
        self.p_extra = p_extra
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def sample(self) -> CommGraph:
        return sample_connected_graph(self)


def sample_connected_graph(sampler: GraphSampler) -> CommGraph:
    n, rng = sampler.n_agents, sampler.rng
    if n == 1:
        return CommGraph(1)
    if n == 2:
        return CommGraph(2, frozenset({(0, 1)}))
    seq = rng.integers(0, n, size=n - 2)
    tree = {(min(a, b), max(a, b)) for a, b in prufer_to_edges(seq.tolist(), n)}
    extra = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in tree]
    keep = rng.random(len(extra)) < sampler.p_extra
    edges = tree | {e for e, k in zip(extra, keep) if k}
    return CommGraph(n, frozenset(edges))


@dataclass(frozen=True)
class ConsensusWeights:
    matrix: np.ndarray
    graph: CommGraph

    @property
    def n_agents(self) -> int:
        return self.graph.n_agents

    @cached_property
    def supports(self) -> list[list[int]]:
        """Per row, indices j with a nonzero weight (self included), sorted."""
        return [sorted(self.graph.neighbors(i) + [i]) for i in range(self.n_agents)]


@lru_cache(maxsize=512)
def metropolis_weights(g: CommGraph) -> ConsensusWeights:
    """Metropolis weights; results are cached per graph and read-only.

    Entries are computed as exact fractions and rounded once, so a self weight
    that equals a neighbor weight exactly is also equal as a float.
    """
    n = g.n_agents
    deg = g.degrees()
    exact = [[Fraction(0)] * n for _ in range(n)]
    for i, j in sorted(g.edges):
        exact[i][j] = exact[j][i] = Fraction(1, 1 + int(max(deg[i], deg[j])))
    for i in range(n):
        exact[i][i] = 1 - sum(exact[i][j] for j in g.neighbors(i))
    w = np.array([[float(x) for x in row] for row in exact])
    w.flags.writeable = False
    return ConsensusWeights(w, g)


def consensus_step(w: ConsensusWeights, values) -> list[np.ndarray]:
    """One synchronous round: every agent averages its neighborhood.

    Accumulation runs over each row's support in ascending index order, so
    two agents with identical rows and identical inputs get bit-identical
    outputs regardless of how the rows are scheduled.
    """
    vals = [np.asarray(v, dtype=np.float64) for v in values]
    if len(vals) != w.n_agents:
        raise ValueError(f"expected {w.n_agents} payloads, got {len(vals)}")
    shape = vals[0].shape
    for k, v in enumerate(vals):
        if v.shape != shape:
            raise ValueError(f"payload shape mismatch: agent {k} has {v.shape}, agent 0 has {shape}")
    out = []
    m = w.matrix
    for i, support in enumerate(w.supports):
        acc = np.zeros(shape)
        for j in support:
            acc += m[i, j] * vals[j]
        out.append(acc)
    return out


@dataclass
class ConsensusResult:
    values: list
    iterations: int
    converged: bool


def consensus_to_limit(g: CommGraph, values, max_iters: int = 1000, tol: float = 1e-9) -> ConsensusResult:
    """Repeat consensus on a fixed graph until every agent is within tol of the mean."""
    w = metropolis_weights(g)
    vals = [np.asarray(v, dtype=np.float64) for v in values]
    target = np.mean(np.stack(vals), axis=0)

    def deviation(vs):
        return max(float(np.max(np.abs(v - target), initial=0.0)) for v in vs)

    k = 0
    while deviation(vals) >= tol and k < max_iters:
        vals = consensus_step(w, vals)
        k += 1
    return ConsensusResult(vals, k, deviation(vals) < tol)


def to_text(w: ConsensusWeights) -> str:
    """Plain-text debug dump: edge list followed by dense weight rows."""
    buf = io.StringIO()
    g = w.graph
    buf.write(f"n_agents {g.n_agents}\n")
    buf.write(f"edges {len(g.edges)}\n")
    for i, j in sorted(g.edges):
        buf.write(f"{i} {j}\n")
    buf.write("weights\n")
    for row in w.matrix:
        buf.write(" ".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def from_text(text: str) -> ConsensusWeights:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    n = int(lines[0].split()[1])
    n_edges = int(lines[1].split()[1])
    edges = frozenset(tuple(int(x) for x in ln.split()) for ln in lines[2:2 + n_edges])
    if lines[2 + n_edges] != "weights":
        raise ValueError("missing weights section")
    rows = [[float(x) for x in ln.split()] for ln in lines[3 + n_edges:3 + n_edges + n]]
    return ConsensusWeights(np.array(rows).reshape(n, n), CommGraph(n, edges))
