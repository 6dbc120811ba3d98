"""Undirected graphs, time-varying schedules and B-connectivity checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on vertices ``0..n-1``; edges stored as sorted pairs."""

    n: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        seen = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]]) -> "Graph":
        pairs = sorted({(min(int(i), int(j)), max(int(i), int(j))) for i, j in edges})
        return cls(int(n), tuple(pairs))

    @cached_property
    def directed(self) -> tuple[np.ndarray, np.ndarray]:
        """Both orientations of every edge as ``(src, dst)`` index arrays."""
        if not self.edges:
            empty = np.empty(0, dtype=np.intp)
            return empty, empty
        e = np.array(self.edges, dtype=np.intp)
        return np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]])

    @cached_property
    def adjacency(self) -> tuple[frozenset[int], ...]:
        nbrs: list[set[int]] = [set() for _ in range(self.n)]
        for i, j in self.edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        return tuple(frozenset(s) for s in nbrs)

    @property
    def max_degree(self) -> int:
        return max((len(s) for s in self.adjacency), default=0)


def neighbors(g: Graph, i: int) -> frozenset[int]:
    if not 0 <= i < g.n:
        raise IndexError(f"vertex {i} out of range for n={g.n}")
    return g.adjacency[i]


def _check_size(n: int, minimum: int = 2) -> None:
    if n < minimum:
        raise ValueError(f"need n >= {minimum}, got {n}")


def make_line(n: int) -> Graph:
    _check_size(n)
    return Graph(n, tuple((i, i + 1) for i in range(n - 1)))


def make_ring(n: int) -> Graph:
    _check_size(n)
    if n == 2:
        return make_line(2)
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def make_star(n: int) -> Graph:
    _check_size(n)
    return Graph(n, tuple((0, i) for i in range(1, n)))


def make_complete(n: int) -> Graph:
    _check_size(n)
    return Graph(n, tuple((i, j) for i in range(n) for j in range(i + 1, n)))


def make_lollipop(n: int) -> Graph:
    """Clique on the first ``ceil(n/2)`` vertices, bridged to a path on the rest."""
    _check_size(n, 3)
    m = (n + 1) // 2
    clique = [(i, j) for i in range(m) for j in range(i + 1, m)]
    tail = [(i, i + 1) for i in range(m - 1, n - 1)]
    return Graph(n, tuple(clique + tail))


def make_erdos_renyi(n: int, p: float, rng: np.random.Generator) -> Graph:
    _check_size(n)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return Graph(n, tuple(zip(iu[keep].tolist(), ju[keep].tolist())))


@dataclass(frozen=True)
class GraphSchedule:
    """Round-indexed graph source with a declared connectivity window ``B``.

    ``graphs`` is cycled (``graphs[k % len(graphs)]``) unless ``er_p`` is set,
    in which case round ``k`` draws an Erdos-Renyi graph seeded by
    ``(seed, k)``.
    """

    n: int
    B: int
    graphs: tuple[Graph, ...] = ()
    er_p: float | None = None
    seed: int = 0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.B < 1:
            raise ValueError(f"window B must be a positive integer, got {self.B}")
        if self.er_p is None and not self.graphs:
            raise ValueError("schedule needs at least one graph")
        for g in self.graphs:
            if g.n != self.n:
                raise ValueError(f"graph on {g.n} vertices in a schedule for n={self.n}")

    @property
    def period(self) -> int | None:
        return None if self.er_p is not None else len(self.graphs)

    def graph(self, k: int) -> Graph:
        if self.er_p is None:
            return self.graphs[k % len(self.graphs)]
        g = self._cache.get(k)
        if g is None:
            rng = np.random.Generator(np.random.PCG64([self.seed, k]))
            g = make_erdos_renyi(self.n, self.er_p, rng)
            if len(self._cache) < 4096:
                self._cache[k] = g
        return g


def schedule_static(g: Graph, B: int = 1) -> GraphSchedule:
    return GraphSchedule(g.n, B, (g,))


def schedule_periodic(graphs: Sequence[Graph], B: int) -> GraphSchedule:
    if not graphs:
        raise ValueError("periodic schedule needs a nonempty graph list")
    return GraphSchedule(graphs[0].n, B, tuple(graphs))


def schedule_random(n: int, p: float, B: int, seed: int) -> GraphSchedule:
    if not 0 <= p <= 1:
        raise ValueError(f"edge probability must be in [0, 1], got {p}")
    return GraphSchedule(n, B, er_p=p, seed=seed)


def is_connected(n: int, edges: Iterable[tuple[int, int]]) -> bool:
    e = np.array(list(edges), dtype=np.intp).reshape(-1, 2)
    if n <= 1:
        return True
    adj = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    count, _ = connected_components(adj, directed=False)
    return count == 1


@dataclass(frozen=True)
class ConnectivityVerdict:
    ok: bool
    windows_checked: int
    first_failure: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def check_b_connectivity(schedule: GraphSchedule, B: int, horizon: int) -> ConnectivityVerdict:
    """Check that every full window ``lB..(l+1)B-1`` inside ``horizon`` has a connected union.

    For periodic schedules the window pattern repeats every
    ``period / gcd(period, B)`` windows, so only that many are examined.
    """
    if horizon < B:
        raise ValueError(f"horizon {horizon} shorter than window B={B}")
    windows = horizon // B
    if schedule.period is not None:
        windows = min(windows, schedule.period // math.gcd(schedule.period, B))
    for ell in range(windows):
        union = set()
        for k in range(ell * B, (ell + 1) * B):
            union.update(schedule.graph(k).edges)
        if not is_connected(schedule.n, union):
            return ConnectivityVerdict(False, ell + 1, ell)
    return ConnectivityVerdict(True, windows)
