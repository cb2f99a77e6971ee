"""Directed graphs: representation, connectivity analysis, unions, and seeded generators.

Nodes are integers 0..n-1. An edge is stored as an ordered pair (j, i)
meaning a directed communication link from sender i to receiver j, so
``out_neighbors(i)`` lists the receivers that node i feeds. Self-loops are
never stored: every node implicitly has access to its own value.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

Edge = tuple[int, int]

# stream tags keep independent derived-seed families from colliding
_STREAM_STEP_GRAPH = 1
_STREAM_DELAY = 2


class GraphError(ValueError):
    """Malformed graph data or mismatched graph operands."""


def derived_seed(seed: int, stream: int, *key: int) -> int:
    """Stable 64-bit sub-seed for (seed, stream, *key).

    Pure function of its arguments, so derived draws are independent of
    call order and safe to share between the simulator and the oracle.
    """
    entropy = [int(seed), int(stream), *[int(x) for x in key]]
    if any(x < 0 for x in entropy):
        raise ValueError("seed components must be nonnegative")
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Digraph:
    """Immutable digraph on nodes 0..n-1 with edges (receiver, sender)."""

    n: int
    edges: frozenset[Edge] = frozenset()

    def __post_init__(self) -> None:
        if self.n < 1:
            raise GraphError(f"node count must be >= 1, got {self.n}")
        norm = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in norm:
            if j == i:
                raise GraphError(f"self-loop on node {j} is not representable")
            if not (0 <= j < self.n and 0 <= i < self.n):
                raise GraphError(f"edge ({j}, {i}) out of range for n={self.n}")
        object.__setattr__(self, "edges", norm)

    @cached_property
    def _out(self) -> tuple[tuple[int, ...], ...]:
        lists: list[list[int]] = [[] for _ in range(self.n)]
        for j, i in self.edges:
            lists[i].append(j)
        return tuple(tuple(sorted(l)) for l in lists)

    @cached_property
    def _in(self) -> tuple[tuple[int, ...], ...]:
        lists: list[list[int]] = [[] for _ in range(self.n)]
        for j, i in self.edges:
            lists[j].append(i)
        return tuple(tuple(sorted(l)) for l in lists)

    def out_neighbors(self, i: int) -> tuple[int, ...]:
        return self._out[i]

    def in_neighbors(self, j: int) -> tuple[int, ...]:
        return self._in[j]

    def out_degree(self, i: int) -> int:
        return len(self._out[i])

    def in_degree(self, j: int) -> int:
        return len(self._in[j])

    def max_out_degree(self) -> int:
        return max((len(nb) for nb in self._out), default=0)

    def is_symmetric(self) -> bool:
        return all((i, j) in self.edges for (j, i) in self.edges)

    def adjacency(self) -> np.ndarray:
        """Boolean matrix A with A[j, i] true iff edge (j, i) exists."""
        a = np.zeros((self.n, self.n), dtype=bool)
        for j, i in self.edges:
            a[j, i] = True
        return a


def tarjan_scc(successors: Sequence[Sequence[int]]) -> list[list[int]]:
    """Strongly connected components of an adjacency-list digraph.

    Iterative Tarjan; components are emitted in reverse topological order
    of the condensation (a component appears before any component with an
    edge into it). Each component's node list is sorted.
    """
    n = len(successors)
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    components: list[list[int]] = []
    counter = 0

    for root in range(n):
        if index[root] != -1:
            continue
        work: list[tuple[int, int]] = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            succ = successors[v]
            while pi < len(succ):
                w = succ[pi]
                pi += 1
                if index[w] == -1:
                    work[-1] = (v, pi)
                    work.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                components.append(sorted(comp))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    return components


def strongly_connected_components(g: Digraph) -> list[list[int]]:
    return tarjan_scc([list(g.out_neighbors(i)) for i in range(g.n)])


def is_strongly_connected(g: Digraph) -> bool:
    """True iff every ordered node pair is joined by a directed path (n=1: true)."""
    if g.n == 1:
        return True
    return len(strongly_connected_components(g)) == 1


def union(graphs: Sequence[Digraph]) -> Digraph:
    """Edge-set union of digraphs sharing the same node set."""
    if not graphs:
        raise GraphError("union of an empty collection is undefined")
    n = graphs[0].n
    for g in graphs:
        if g.n != n:
            raise GraphError(f"union over mismatched node counts {n} and {g.n}")
    edges: set[Edge] = set()
    for g in graphs:
        edges |= g.edges
    return Digraph(n, frozenset(edges))


class DigraphSequence:
    """Digraph-valued schedule G[k] for k = 0, 1, 2, ...

    Backed either by an explicit list of graphs (optionally repeated
    periodically) or by a seeded per-step random generator, expanded
    lazily. ``length`` is None for unbounded schedules.
    """

    def __init__(self, n: int, kind: str, *, graphs: Sequence[Digraph] = (),
                 p: float = 0.0, seed: int = 0, length: int | None = None):
        self.n = n
        self.kind = kind
        self._graphs = tuple(graphs)
        self._p = p
        self._seed = seed
        self.length = length
        self._cache: dict[int, Digraph] = {}
        for g in self._graphs:
            if g.n != n:
                raise GraphError("all graphs in a sequence must share the same n")

    @classmethod
    def static(cls, g: Digraph) -> "DigraphSequence":
        return cls(g.n, "static", graphs=[g])

    @classmethod
    def from_list(cls, graphs: Sequence[Digraph], repeat: bool = False) -> "DigraphSequence":
        if not graphs:
            raise GraphError("a digraph sequence needs at least one graph")
        kind = "periodic" if repeat else "list"
        length = None if repeat else len(graphs)
        return cls(graphs[0].n, kind, graphs=graphs, length=length)

    @classmethod
    def random_each_step(cls, n: int, p: float, seed: int) -> "DigraphSequence":
        if not 0.0 <= p <= 1.0:
            raise GraphError(f"link probability must lie in [0, 1], got {p}")
        return cls(n, "random_each_step", p=p, seed=seed)

    @property
    def is_static(self) -> bool:
        return self.kind == "static"

    def graph_at(self, k: int) -> Digraph:
        if k < 0:
            raise GraphError(f"step index must be nonnegative, got {k}")
        if self.kind == "static":
            return self._graphs[0]
        if self.kind == "list":
            if k >= len(self._graphs):
                raise GraphError(f"step {k} beyond end of explicit schedule "
                                 f"(length {len(self._graphs)})")
            return self._graphs[k]
        if self.kind == "periodic":
            return self._graphs[k % len(self._graphs)]
        # random_each_step
        if k not in self._cache:
            sub = derived_seed(self._seed, _STREAM_STEP_GRAPH, k)
            self._cache[k] = random_digraph(self.n, self._p, sub)
        return self._cache[k]


def is_jointly_strongly_connected(seq: DigraphSequence,
                                  window_starts: Sequence[int]) -> bool:
    """True iff the union over each consecutive window [t_m, t_{m+1}) is strongly connected.

    ``window_starts`` must begin at 0 and be strictly increasing. For a
    finite sequence the last window implicitly runs to the end of the
    schedule; unbounded sequences need at least two starts.
    """
    starts = [int(t) for t in window_starts]
    if not starts:
        raise GraphError("window_starts must be nonempty")
    if starts[0] != 0:
        raise GraphError("window_starts must begin at 0")
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise GraphError("window_starts must be strictly increasing")
    bounds = list(starts)
    if seq.length is not None:
        if bounds[-1] >= seq.length:
            raise GraphError(f"window start {bounds[-1]} beyond schedule "
                             f"length {seq.length}")
        bounds.append(seq.length)
    if len(bounds) < 2:
        raise GraphError("unbounded sequences need at least two window starts")
    for a, b in zip(bounds, bounds[1:]):
        window = [seq.graph_at(k) for k in range(a, b)]
        if not is_strongly_connected(union(window)):
            return False
    return True


def random_digraph(n: int, p: float, seed: int) -> Digraph:
    """Each ordered pair (j, i), j != i, becomes an edge independently with probability p."""
    if n < 1:
        raise GraphError(f"node count must be >= 1, got {n}")
    if not 0.0 <= p <= 1.0:
        raise GraphError(f"link probability must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    u = rng.random((n, n))
    edges = {(j, i) for j in range(n) for i in range(n)
             if j != i and u[j, i] < p}
    return Digraph(n, frozenset(edges))


def random_geometric_digraph(n: int, radius: float, seed: int,
                             require_strongly_connected: bool = False,
                             max_attempts: int = 10_000) -> Digraph:
    """Nodes placed uniformly in the unit square; node pairs within ``radius``
    get a bidirectional link (two directed edges).

    With ``require_strongly_connected`` the placement is rejection-sampled
    (advancing the same seeded stream) until the result is strongly
    connected.
    """
    if n < 1:
        raise GraphError(f"node count must be >= 1, got {n}")
    if radius <= 0:
        raise GraphError(f"radius must be positive, got {radius}")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        pts = rng.random((n, 2))
        diffs = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diffs ** 2).sum(axis=2))
        edges = {(j, i) for j in range(n) for i in range(n)
                 if j != i and dist[j, i] <= radius}
        g = Digraph(n, frozenset(edges))
        if not require_strongly_connected or is_strongly_connected(g):
            return g
    raise GraphError(f"no strongly connected placement found in "
                     f"{max_attempts} attempts (radius {radius})")


def format_edge_list(g: Digraph) -> str:
    """Plain-text edge list: header ``n=<count>``, then one ``j i`` pair per line."""
    lines = [f"n={g.n}"]
    lines += [f"{j} {i}" for j, i in sorted(g.edges)]
    return "\n".join(lines) + "\n"


def parse_edge_list(text: str) -> Digraph:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("n="):
        raise GraphError("edge list must start with a 'n=<count>' header")
    try:
        n = int(lines[0][2:])
    except ValueError as exc:
        raise GraphError(f"bad node count in header: {lines[0]!r}") from exc
    edges = set()
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise GraphError(f"bad edge line: {ln!r} (expected 'receiver sender')")
        try:
            j, i = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise GraphError(f"bad edge line: {ln!r}") from exc
        edges.add((j, i))
    return Digraph(n, frozenset(edges))
