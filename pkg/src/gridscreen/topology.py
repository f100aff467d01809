"""N-k branch-outage enumeration and per-topology encodings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridCase


@dataclass(frozen=True, order=True)
class Topology:
    """A set of out-of-service branch indices (0-based, case-file order)."""

    out_branches: tuple = ()

    def __post_init__(self):
        out = tuple(sorted(int(b) for b in self.out_branches))
        if len(set(out)) != len(out):
            raise ValueError(f"duplicate branch index in {out}")
        if out and out[0] < 0:
            raise ValueError(f"negative branch index in {out}")
        object.__setattr__(self, "out_branches", out)

    @property
    def k(self) -> int:
        return len(self.out_branches)

    @property
    def id(self) -> str:
        return "+".join(f"L{b}" for b in self.out_branches) or "N0"

    @classmethod
    def from_id(cls, text: str) -> "Topology":
        if text == "N0":
            return cls(())
        parts = text.split("+")
        if not all(p[:1] == "L" and p[1:].isdigit() for p in parts):
            raise ValueError(f"malformed topology id {text!r}")
        return cls(tuple(int(p[1:]) for p in parts))

    def __str__(self):
        return self.id


REFERENCE = Topology(())


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path halving and union by size."""

    def __init__(self, n):
        self.parent = list(range(n))
        self.size = [1] * n
        self.components = n

    def find(self, a):
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.components -= 1
        return True


def is_connected(case: GridCase, out_branches=()) -> bool:
    """True iff all buses form one component once ``out_branches`` are removed."""
    out = set(getattr(out_branches, "out_branches", out_branches))
    uf = UnionFind(case.n_bus)
    for e, (a, b) in enumerate(zip(case.f, case.t)):
        if e not in out and uf.union(a, b) and uf.components == 1:
            return True
    return uf.components == 1


def _bridges(n, f, t, alive):
    """Indices of bridge edges in the multigraph of ``alive`` edges.

    Returns ``None`` when that graph is disconnected. Iterative Tarjan
    low-link; parallel edges are distinguished by edge id.
    """
    adj = [[] for _ in range(n)]
    for e in alive:
        adj[f[e]].append((t[e], e))
        adj[t[e]].append((f[e], e))
    disc = [-1] * n
    low = [0] * n
    bridges = []
    disc[0] = low[0] = 0
    counter = 1
    stack = [(0, -1, iter(adj[0]))]
    while stack:
        v, pe, it = stack[-1]
        advanced = False
        for w, e in it:
            if e == pe:
                continue
            if disc[w] < 0:
                disc[w] = low[w] = counter
                counter += 1
                stack.append((w, e, iter(adj[w])))
                advanced = True
                break
            low[v] = min(low[v], disc[w])
        if advanced:
            continue
        stack.pop()
        if stack:
            u = stack[-1][0]
            low[u] = min(low[u], low[v])
            if low[v] > disc[u]:
                bridges.append(pe)
    if counter < n:
        return None
    return bridges


def iter_contingencies(case: GridCase, k: int):
    """Yield eligible size-``k`` outage sets as sorted tuples, lexicographically.

    A prefix that already islands the grid is pruned; otherwise the
    admissible next outages are exactly the non-bridges of the remaining
    graph with a larger index.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    n, E = case.n_bus, case.n_branch
    f, t = case.f.tolist(), case.t.tolist()

    def rec(prefix, start, alive):
        br = _bridges(n, f, t, alive)
        if br is None:
            return
        if len(prefix) == k:
            yield tuple(prefix)
            return
        bridge = set(br)
        for e in range(start, E):
            if e in bridge:
                continue
            if len(prefix) + 1 == k:
                yield (*prefix, e)
            else:
                yield from rec(prefix + [e], e + 1, [a for a in alive if a != e])

    yield from rec([], 0, list(range(E)))


def enumerate_contingencies(case: GridCase, k: int) -> list[Topology]:
    """All size-``k`` branch outage sets that keep the grid connected."""
    return [Topology(s) for s in iter_contingencies(case, k)]


def count_contingencies(case: GridCase, k: int) -> int:
    return sum(1 for _ in iter_contingencies(case, k))


def sample_topologies(topologies, beta: int, seed: int) -> list[Topology]:
    """Pick ``beta`` topologies without replacement (partial Fisher-Yates).

    The selection is returned in the input's order so that downstream files
    are canonical.
    """
    pool = list(range(len(topologies)))
    beta = min(beta, len(pool))
    rng = np.random.default_rng(seed)
    for i in range(beta):
        j = int(rng.integers(i, len(pool)))
        pool[i], pool[j] = pool[j], pool[i]
    return [topologies[i] for i in sorted(pool[:beta])]


def structural_vector(topo, n_static: int, alpha: int, n_edges: int) -> np.ndarray:
    """Guided-dropout mask: ``n_static`` ones, then one ``alpha`` block per branch.

    A branch's block is all ones when that branch is out of service.
    """
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    out = getattr(topo, "out_branches", topo)
    tau = np.zeros(n_static + alpha * n_edges)
    tau[:n_static] = 1.0
    for e in out:
        if not 0 <= e < n_edges:
            raise IndexError(f"branch index {e} out of range")
        tau[n_static + alpha * e: n_static + alpha * (e + 1)] = 1.0
    return tau


def gso_support(case: GridCase, topo=()) -> np.ndarray:
    """Boolean ``A + I`` pattern of the in-service graph."""
    on = np.ones(case.n_branch, dtype=bool)
    on[list(getattr(topo, "out_branches", topo))] = False
    S = np.eye(case.n_bus, dtype=bool)
    S[case.f[on], case.t[on]] = True
    S[case.t[on], case.f[on]] = True
    return S


def contingency_table(case: GridCase, kmax: int = 2) -> dict:
    return {k: count_contingencies(case, k) for k in range(kmax + 1)}
