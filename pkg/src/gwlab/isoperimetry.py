"""q-isolation, islands and oceans on host graphs with a marked frontier.

A host graph is the explored part of a possibly infinite graph: interior
vertices carry full adjacency lists plus a count of frontier edges leading
into unexplored territory.  For a finite interior set V the q-isolation is

    iota_q(V) = q|V| - |bd V|,

where |bd V| counts interior edges leaving V and frontier edges of members.
A set V is a q-isolated core when iota_q(W) < iota_q(V) strictly for every
proper subset W, islands are the connected components of the union of all
cores, and the ocean is everything else.

Key fact used by both solvers here: since |bd .| is submodular, iota_q is
supermodular, its maximizers over subsets of the interior form a lattice,
and the union of all cores equals the unique minimal maximizer (intersection
of all maximizers).  That turns island-finding into one exact maximization
with ties broken toward exclusion.  The brute-force route instead checks the
core definition verbatim over all subsets; the two must agree exactly.

Strictness is decided in exact integer arithmetic: q is taken as the exact
rational it already is (every float is dyadic), so no tolerance enters the
core comparisons.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from . import branching
from .errors import (
    InsufficientRadius,
    InvalidParams,
    NotATree,
    SearchBudgetExceeded,
    SubcriticalModel,
    TooLarge,
    UnknownVertex,
)

_BRUTEFORCE_CAP = 22
_SEARCH_BUDGET = 10**7


@dataclass(frozen=True)
class HostGraph:
    """Explored interior of a graph, with per-vertex frontier edge counts.

    Interior vertices are 0..n-1; indptr/indices hold the symmetric interior
    adjacency in CSR form.  frontier_edges[v] counts edges from v into
    unexplored territory, so the true degree of v is the interior degree
    plus frontier_edges[v].  tree_ids optionally maps local ids back to the
    vertex ids of the tree the host was cut from.
    """

    indptr: np.ndarray
    indices: np.ndarray
    frontier_edges: np.ndarray
    root: int | None = None
    tree_ids: np.ndarray | None = None

    @property
    def n(self) -> int:
        return int(self.indptr.shape[0] - 1)

    @property
    def n_edges(self) -> int:
        return int(self.indices.shape[0] // 2)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def interior_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr) + self.frontier_edges

    def adjacency(self) -> sparse.csr_matrix:
        data = np.ones(self.indices.shape[0], dtype=np.float64)
        return sparse.csr_matrix(
            (data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n)
        )

    def is_forest(self) -> bool:
        if self.n == 0:
            return True
        ncomp = csgraph.connected_components(self.adjacency(), directed=False)[0]
        return self.n_edges == self.n - ncomp

    @staticmethod
    def from_edges(n, edges, frontier=None, root=None) -> "HostGraph":
        edges = [(int(u), int(v)) for u, v in edges]
        for u, v in edges:
            if not (0 <= u < n and 0 <= v < n):
                raise UnknownVertex(f"edge ({u},{v}) outside 0..{n - 1}")
            if u == v:
                raise InvalidParams(f"self loop at {u}")
        if len({frozenset(e) for e in edges}) != len(edges):
            raise InvalidParams("duplicate edges")
        fr = np.zeros(n, dtype=np.int64)
        if frontier:
            for v, k in dict(frontier).items():
                if not 0 <= int(v) < n:
                    raise UnknownVertex(f"frontier directive for unknown vertex {v}")
                if k < 0:
                    raise InvalidParams("negative frontier edge count")
                fr[int(v)] = int(k)
        rows = np.array([u for u, v in edges] + [v for u, v in edges], dtype=np.int64)
        cols = np.array([v for u, v in edges] + [u for u, v in edges], dtype=np.int64)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        indptr = np.cumsum(indptr)
        host = HostGraph(indptr=indptr, indices=cols, frontier_edges=fr, root=root)
        if root is not None:
            if not 0 <= root < n:
                raise UnknownVertex(f"root {root} outside interior")
            if n > 0:
                ncomp, labels = csgraph.connected_components(
                    host.adjacency(), directed=False
                )
                if ncomp > 1:
                    raise InvalidParams("interior must be connected when a root is set")
        return host

    @staticmethod
    def from_tree(tree: branching.SampledTree) -> "HostGraph":
        """Interior = expanded vertices; frontier children become frontier edges."""
        expanded = tree.n_children >= 0
        if not expanded[tree.root]:
            raise InsufficientRadius("tree root was never expanded")
        tree_ids = np.flatnonzero(expanded)
        local = np.full(tree.n_vertices, -1, dtype=np.int64)
        local[tree_ids] = np.arange(tree_ids.shape[0])

        child = np.flatnonzero((tree.parent >= 0) & expanded)
        par = tree.parent[child]
        rows = np.concatenate([local[par], local[child]])
        cols = np.concatenate([local[child], local[par]])
        n = tree_ids.shape[0]
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        indptr = np.cumsum(indptr)

        fr_child = np.flatnonzero((tree.parent >= 0) & ~expanded)
        fr = np.zeros(n, dtype=np.int64)
        np.add.at(fr, local[tree.parent[fr_child]], 1)
        return HostGraph(
            indptr=indptr,
            indices=cols,
            frontier_edges=fr,
            root=int(local[tree.root]),
            tree_ids=tree_ids,
        )


@dataclass(frozen=True)
class IslandDecomposition:
    """Islands (connected components of the union of all q-isolated cores),
    their isolation values, and the ocean.  moat[i] certifies that island i
    keeps graph distance >= 2 from every frontier vertex, i.e. none of its
    members carries a frontier edge; truncation artefacts are only excluded
    for moat-certified islands.
    """

    q: float
    islands: tuple = ()
    iotas: tuple = ()
    ocean: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    moat: tuple = ()

    @property
    def moat_ok(self) -> bool:
        return all(self.moat)

    @property
    def core_union(self) -> np.ndarray:
        if not self.islands:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(self.islands))


def _check_q(q) -> Fraction:
    qf = Fraction(q)
    if not 0 < qf <= 1:
        raise InvalidParams(f"q must lie in (0, 1], got {q}")
    return qf


def _boundary_size(host: HostGraph, members: np.ndarray) -> int:
    mask = np.zeros(host.n, dtype=bool)
    mask[members] = True
    deg_in = 0
    for v in members:
        deg_in += int(np.sum(mask[host.neighbors(v)]))
    total_deg = int(host.degree()[members].sum())
    return total_deg - deg_in  # internal edges counted twice in deg_in


def isolation(host: HostGraph, V, q) -> float:
    """q|V| - |bd V|; the empty set gives 0 exactly."""
    qf = _check_q(q)
    members = np.asarray(sorted(set(int(v) for v in V)), dtype=np.int64)
    if members.size == 0:
        return 0.0
    if members.min() < 0 or members.max() >= host.n:
        raise UnknownVertex("subset contains vertices outside the interior")
    return float(qf * len(members) - _boundary_size(host, members))


def _finalize_decomposition(host: HostGraph, qf: Fraction, members: np.ndarray):
    """Split the core union into components and attach iotas and moat flags."""
    mask = np.zeros(host.n, dtype=bool)
    mask[members] = True
    islands: list[np.ndarray] = []
    if members.size:
        sub = host.adjacency()[members][:, members]
        ncomp, labels = csgraph.connected_components(sub, directed=False)
        for c in range(ncomp):
            islands.append(members[labels == c])
        islands.sort(key=lambda a: int(a[0]))
    iotas = tuple(
        float(qf * len(isl) - _boundary_size(host, isl)) for isl in islands
    )
    moat = tuple(bool(np.all(host.frontier_edges[isl] == 0)) for isl in islands)
    ocean = np.flatnonzero(~mask)
    return IslandDecomposition(
        q=float(qf), islands=tuple(islands), iotas=iotas, ocean=ocean, moat=moat
    )


def islands_bruteforce(host: HostGraph, q) -> IslandDecomposition:
    """Check the core definition verbatim over all 2^n subsets.

    iota comparisons run in exact integers after scaling by the denominator
    of q.  M_incl is a subset-max zeta transform; a set is a core iff its
    iota strictly beats the best over proper subsets, obtained by dropping
    one element at a time.
    """
    qf = _check_q(q)
    n = host.n
    if n > _BRUTEFORCE_CAP:
        raise TooLarge(f"brute force capped at {_BRUTEFORCE_CAP} interior vertices")
    if n == 0:
        return _finalize_decomposition(host, qf, np.empty(0, dtype=np.int64))

    a, b = qf.numerator, qf.denominator
    deg = host.degree()
    nb_mask = np.zeros(n, dtype=np.int64)
    for v in range(n):
        for u in host.neighbors(v):
            nb_mask[v] |= 1 << int(u)

    # scaled vertex weight a - b*deg(v); 2b per interior edge inside the set
    bound = abs(a) * n + b * (int(deg.sum()) + 2 * host.n_edges)
    dtype = np.int64 if bound < 2**62 else object

    size = 1 << n
    f = np.zeros(size, dtype=dtype)
    masks = np.arange(size, dtype=np.int64)
    wv_arr = np.array([a - b * int(d) for d in deg], dtype=dtype)
    two_b = dtype(2 * b) if dtype is np.int64 else 2 * b
    for i in range(n - 1, -1, -1):
        cur = (np.arange(1 << (n - 1 - i), dtype=np.int64) * 2 + 1) << i
        rest = cur - (1 << i)
        inside = np.bitwise_count(np.bitwise_and(int(nb_mask[i]), rest).astype(np.uint64))
        f[cur] = f[rest] + wv_arr[i] + two_b * inside.astype(dtype)

    m_incl = f.copy()
    for i in range(n):
        idx = masks[(masks >> i) & 1 == 1]
        m_incl[idx] = np.maximum(m_incl[idx], m_incl[idx ^ (1 << i)])

    lowest = np.iinfo(np.int64).min if dtype is np.int64 else -bound - 1
    m_strict = np.full(size, lowest, dtype=dtype)
    for i in range(n):
        idx = masks[(masks >> i) & 1 == 1]
        m_strict[idx] = np.maximum(m_strict[idx], m_incl[idx ^ (1 << i)])

    core = f > m_strict
    core[0] = False
    union_mask = 0
    for m in masks[core]:
        union_mask |= int(m)
    members = np.array(
        [v for v in range(n) if (union_mask >> v) & 1], dtype=np.int64
    )
    return _finalize_decomposition(host, qf, members)


def islands(host: HostGraph, q) -> IslandDecomposition:
    """Exact island decomposition of a tree host of any size.

    Computes the minimal maximizer of iota_q by a two-state dynamic program
    over rooted subtrees (vertex in / out of the set), in exact integer
    arithmetic with ties broken toward exclusion.  Agrees exactly with
    islands_bruteforce wherever that is feasible.
    """
    qf = _check_q(q)
    if not host.is_forest():
        raise NotATree("interior graph has a cycle")
    n = host.n
    if n == 0:
        return _finalize_decomposition(host, qf, np.empty(0, dtype=np.int64))

    a, b = qf.numerator, qf.denominator
    deg = host.degree()
    two_b = 2 * b

    seen = np.zeros(n, dtype=bool)
    parent = np.full(n, -1, dtype=np.int64)
    in_val = [0] * n   # best scaled iota over subtree subsets containing v
    ex_val = [0] * n   # best over subtree subsets avoiding v
    members: list[int] = []

    roots = [host.root] if host.root is not None else []
    roots += [v for v in range(n)]
    for start in roots:
        if seen[start]:
            continue
        order = [start]
        seen[start] = True
        for v in order:
            for u in host.neighbors(v):
                u = int(u)
                if not seen[u]:
                    seen[u] = True
                    parent[u] = v
                    order.append(u)
        for v in reversed(order):
            iv = a - b * int(deg[v])
            ev = 0
            for u in host.neighbors(v):
                u = int(u)
                if parent[u] != v:
                    continue
                iv += max(ex_val[u], in_val[u] + two_b)
                ev += max(ex_val[u], in_val[u])
            in_val[v] = iv
            ex_val[v] = ev
        # backtrack, preferring exclusion on ties to land on the minimal set
        state = [(start, in_val[start] > ex_val[start])]
        while state:
            v, inside = state.pop()
            if inside:
                members.append(v)
            for u in host.neighbors(v):
                u = int(u)
                if parent[u] != v:
                    continue
                if inside:
                    state.append((u, in_val[u] + two_b > ex_val[u]))
                else:
                    state.append((u, in_val[u] > ex_val[u]))

    return _finalize_decomposition(host, qf, np.array(sorted(members), dtype=np.int64))


# ---------------------------------------------------------------------------
# anchored expansion by exhaustive connected-subset search
# ---------------------------------------------------------------------------


def min_anchored_ratio(host: HostGraph, s: int, budget: int = _SEARCH_BUDGET) -> float:
    """min |bd K| / |K| over connected K containing the root with |K| = s.

    Enumerates each connected rooted subset exactly once (fixed-order
    candidate extension) and counts every visited subset against the budget.
    """
    if host.root is None:
        raise InvalidParams("anchored ratio needs a rooted host")
    if s < 1:
        raise InvalidParams("subset size must be >= 1")
    if s > host.n:
        raise InvalidParams(f"size {s} exceeds interior size {host.n}")
    deg = host.degree()
    root = host.root

    best = math.inf
    visited = 0
    in_set = np.zeros(host.n, dtype=bool)
    queued = np.zeros(host.n, dtype=bool)
    in_set[root] = True
    queued[root] = True

    def extend(cand: list[int], size: int, cut: int):
        nonlocal best, visited
        visited += 1
        if visited > budget:
            raise SearchBudgetExceeded(f"explored more than {budget} rooted subsets")
        if size == s:
            best = min(best, cut / s)
            return
        for i, c in enumerate(cand):
            into = int(np.sum(in_set[host.neighbors(c)]))
            in_set[c] = True
            fresh = [int(u) for u in host.neighbors(c) if not queued[u]]
            for u in fresh:
                queued[u] = True
            extend(cand[i + 1 :] + fresh, size + 1, cut + int(deg[c]) - 2 * into)
            in_set[c] = False
            for u in fresh:
                queued[u] = False

    first = [int(u) for u in host.neighbors(root)]
    for u in first:
        queued[u] = True
    extend(first, 1, int(deg[root]))
    if math.isinf(best):
        raise InvalidParams(f"no connected rooted subset of size {s} exists")
    return best


# ---------------------------------------------------------------------------
# hitting big islands before time t, annealed over survivor trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HitProbEstimate:
    value: float
    stderr: float
    n_samples: int
    t: int
    q: float


def _size_threshold(t: int) -> float:
    """t^(1/3), snapped to the exact integer for perfect cubes."""
    r = round(t ** (1.0 / 3.0))
    if r**3 == t:
        return float(r)
    return t ** (1.0 / 3.0)


def big_island_hit_prob(
    model: branching.OffspringModel,
    t: int,
    q,
    n_samples: int,
    rng_seed: int,
    max_vertices: int = 2_000_000,
) -> HitProbEstimate:
    """Monte Carlo mean over survivor trees of the probability that the walk
    from the root enters an island larger than t^(1/3) before time t.

    The tree is explored to depth t+1 under a vertex cap; islands are taken
    from the explored host, mass stepping onto a frontier edge is dropped,
    and only moat-certified islands absorb.  Both truncations lower the
    hitting probability, so the estimate is a lower-bound estimator.
    """
    if model.mean <= 1.0:
        raise SubcriticalModel("annealed estimates need a supercritical model")
    _check_q(q)
    if t < 1:
        raise InvalidParams("time horizon must be >= 1")
    thr = _size_threshold(t)

    vals = np.empty(n_samples)
    for i in range(n_samples):
        tree = branching.sample_survivor(
            model,
            rng_seed,
            branching.GenerationBudget(max_depth=t + 1, max_vertices=max_vertices),
            sample_index=i,
        )
        host = HostGraph.from_tree(tree)
        dec = islands(host, q)
        big = [
            isl
            for isl, ok in zip(dec.islands, dec.moat)
            if ok and isl.size > thr
        ]
        if not big:
            vals[i] = 0.0
            continue
        absorb = np.concatenate(big)
        vals[i] = _hit_prob_before(host, absorb, t)

    value = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return HitProbEstimate(value=value, stderr=stderr, n_samples=n_samples, t=t, q=float(q))


def _hit_prob_before(host: HostGraph, absorb: np.ndarray, t: int) -> float:
    """P_root(walk enters `absorb` at some time < t) on the host interior.

    Simple random walk with step probability 1/deg(v); frontier edges leak
    mass (it never returns, so never absorbs).
    """
    deg = host.degree().astype(np.float64)
    rows_ptr, cols = host.indptr, host.indices
    data = 1.0 / np.repeat(deg, np.diff(rows_ptr))
    P = sparse.csr_matrix((data, cols.copy(), rows_ptr.copy()), shape=(host.n, host.n))

    amask = np.zeros(host.n, dtype=bool)
    amask[absorb] = True
    p = np.zeros(host.n)
    p[host.root] = 1.0
    absorbed = 0.0
    for step in range(t):
        hit = float(p[amask].sum())
        if hit > 0.0:
            absorbed += hit
            p[amask] = 0.0
        if step < t - 1:
            p = p @ P
    return absorbed


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def host_to_text(host: HostGraph) -> str:
    lines = [f"#vertices {host.n}"]
    if host.root is not None:
        lines.append(f"#root {host.root}")
    for v in range(host.n):
        k = int(host.frontier_edges[v])
        if k > 0:
            lines.append(f"#frontier {v} {k}")
    for v in range(host.n):
        for u in host.neighbors(v):
            if v < u:
                lines.append(f"{v} {u}")
    return "\n".join(lines) + "\n"


def host_from_text(text: str) -> HostGraph:
    n = None
    root = None
    frontier: dict[int, int] = {}
    edges: list[tuple[int, int]] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#vertices"):
            n = int(line.split()[1])
        elif line.startswith("#root"):
            root = int(line.split()[1])
        elif line.startswith("#frontier"):
            _, v, k = line.split()
            frontier[int(v)] = int(k)
        elif line.startswith("#"):
            raise InvalidParams(f"unknown directive {line!r}")
        else:
            u, v = line.split()
            edges.append((int(u), int(v)))
    if n is None:
        top = [max(e) for e in edges] + list(frontier)
        n = max(top) + 1 if top else 0
    return HostGraph.from_edges(n, edges, frontier=frontier, root=root)


def decomposition_to_json(dec: IslandDecomposition) -> str:
    return json.dumps(
        {
            "q": dec.q,
            "islands": [[int(v) for v in isl] for isl in dec.islands],
            "ocean": [int(v) for v in dec.ocean],
            "iotas": list(dec.iotas),
            "moat": [bool(m) for m in dec.moat],
        }
    )


def decomposition_from_json(text: str) -> IslandDecomposition:
    obj = json.loads(text)
    return IslandDecomposition(
        q=obj["q"],
        islands=tuple(np.array(isl, dtype=np.int64) for isl in obj["islands"]),
        iotas=tuple(obj["iotas"]),
        ocean=np.array(obj["ocean"], dtype=np.int64),
        moat=tuple(obj.get("moat", [True] * len(obj["islands"]))),
    )
