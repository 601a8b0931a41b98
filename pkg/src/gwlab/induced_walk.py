"""Island-skipping walk on the ocean of a decomposed host graph.

The induced weight between ocean vertices x, y is

    w(x, y) = deg(x) * P_x(X_tau = y),

where tau is the first time after zero the simple random walk sits on an
ocean vertex.  Direct ocean-ocean edges contribute 1; excursions through an
island contribute its exact absorbing hitting distribution, solved island by
island.  Self-loops (excursions that come back) are kept, which is what
makes every ocean vertex's total weight equal its degree.

Truncation bookkeeping: a weight row is exact only when the vertex carries
no frontier edges and every island it touches has a moat certificate.  Such
rows are marked certified; frontier_weight holds the mass whose destination
is unexplored.  Compressions to certified regions are genuine compressions
of the infinite-tree operator, so their norms are valid lower bounds.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse

from .errors import (
    EmptyRegion,
    InfiniteIsland,
    InsufficientRegion,
    InvalidParams,
    MoatViolation,
    SingularSystem,
    UnknownVertex,
)
from .isoperimetry import HostGraph, IslandDecomposition

_RAYLEIGH_TOL = 1e-10


@dataclass(frozen=True)
class InducedWalkGraph:
    """Weighted graph of the island-skipping walk, in ocean-local indices.

    ocean_ids maps local index -> host vertex id.  W is the symmetric weight
    matrix including self-loops; vertex_weight equals the host degree of
    each ocean vertex exactly; frontier_weight is the part of that degree
    whose walk destination lies outside the explored region (zero exactly on
    certified rows).
    """

    ocean_ids: np.ndarray
    W: sparse.csr_matrix
    vertex_weight: np.ndarray
    frontier_weight: np.ndarray
    certified: np.ndarray
    root: int | None
    provenance: dict

    @property
    def n(self) -> int:
        return int(self.ocean_ids.shape[0])

    def local(self, host_ids) -> np.ndarray:
        """Map host vertex ids to ocean-local indices."""
        host_ids = np.asarray(host_ids, dtype=np.int64)
        pos = np.searchsorted(self.ocean_ids, host_ids)
        ok = (pos < self.n) & (self.ocean_ids[np.minimum(pos, self.n - 1)] == host_ids)
        if not np.all(ok):
            raise UnknownVertex("vertex is not in the ocean")
        return pos

    def certified_region(self) -> np.ndarray:
        """Host ids of ocean vertices whose weight rows are exact."""
        return self.ocean_ids[self.certified]

    def weight(self, x: int, y: int) -> float:
        """w between two host vertex ids (0 when not adjacent)."""
        lx, ly = self.local([x])[0], self.local([y])[0]
        return float(self.W[lx, ly])


def _solve_island(host: HostGraph, members: np.ndarray, deg: np.ndarray):
    """Hitting distribution H[n, y] = P_n(absorbed at ocean vertex y).

    Rows are island vertices, columns the distinct ocean vertices adjacent
    to the island.  Mass is conserved exactly because moat-certified islands
    carry no frontier edges.
    """
    loc = {int(v): i for i, v in enumerate(members)}
    k = members.shape[0]
    cols: dict[int, int] = {}
    rows_Q, cols_Q, vals_Q = [], [], []
    rows_R, cols_R, vals_R = [], [], []
    for i, v in enumerate(members):
        if host.frontier_edges[v] != 0:
            raise InfiniteIsland(f"island vertex {v} touches the frontier")
        inv = 1.0 / deg[v]
        for u in host.neighbors(int(v)):
            u = int(u)
            j = loc.get(u)
            if j is not None:
                rows_Q.append(i)
                cols_Q.append(j)
                vals_Q.append(inv)
            else:
                c = cols.setdefault(u, len(cols))
                rows_R.append(i)
                cols_R.append(c)
                vals_R.append(inv)
    targets = np.array(sorted(cols, key=cols.get), dtype=np.int64)
    if targets.size == 0:
        return np.zeros((k, 0)), targets
    A = np.eye(k)
    A[rows_Q, cols_Q] -= np.array(vals_Q)
    R = np.zeros((k, targets.size))
    R[rows_R, cols_R] = np.array(vals_R)
    try:
        if k > 600:
            lu = sparse.linalg.splu(sparse.csc_matrix(A))
            H = lu.solve(R)
        else:
            H = linalg.solve(A, R)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise SingularSystem(
            "absorbing solve failed on a finite island; this indicates a bug"
        ) from exc
    return H, targets


def build_induced(
    host: HostGraph, dec: IslandDecomposition, allow_partial: bool = False
) -> InducedWalkGraph:
    """Assemble the induced walk graph from a host and its decomposition.

    With allow_partial, islands lacking a moat certificate are left unsolved:
    their excursion mass goes to frontier_weight of the adjacent ocean
    vertices and those rows lose certification.  Without it such islands
    raise MoatViolation, matching the strict contract.
    """
    if not dec.moat_ok and not allow_partial:
        raise MoatViolation("decomposition has islands without a moat certificate")

    n = host.n
    deg = host.degree().astype(np.float64)
    island_of = np.full(n, -1, dtype=np.int64)
    for i, isl in enumerate(dec.islands):
        island_of[isl] = i
    ocean_ids = np.asarray(dec.ocean, dtype=np.int64)
    loc = np.full(n, -1, dtype=np.int64)
    loc[ocean_ids] = np.arange(ocean_ids.shape[0])

    frontier_weight = host.frontier_edges[ocean_ids].astype(np.float64)
    certified = frontier_weight == 0.0

    # direct ocean-ocean edges, one directed entry per CSR slot
    src = np.repeat(np.arange(n, dtype=np.int64), np.diff(host.indptr))
    dst = host.indices
    both = (island_of[src] < 0) & (island_of[dst] < 0)
    rows = list(loc[src[both]])
    cols = list(loc[dst[both]])
    vals = [1.0] * int(both.sum())

    # island excursions
    for i, isl in enumerate(dec.islands):
        if not dec.moat[i]:
            for v in isl:
                for u in host.neighbors(int(v)):
                    u = int(u)
                    if island_of[u] < 0:
                        frontier_weight[loc[u]] += 1.0
                        certified[loc[u]] = False
            continue
        H, targets = _solve_island(host, isl, deg)
        if targets.size == 0:
            continue
        tloc = loc[targets]
        for r, v in enumerate(isl):
            h = H[r]
            nz = np.flatnonzero(h)
            for u in host.neighbors(int(v)):
                u = int(u)
                if island_of[u] < 0:
                    lx = loc[u]
                    rows.extend([lx] * nz.size)
                    cols.extend(tloc[nz])
                    vals.extend(h[nz])

    m = ocean_ids.shape[0]
    W = sparse.csr_matrix(
        (np.array(vals), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(m, m),
    )
    asym = abs(W - W.T)
    if asym.nnz and asym.max() > 1e-12:
        raise SingularSystem(f"assembled weights asymmetric by {asym.max():.3e}")
    W = (W + W.T) * 0.5

    vw = deg[ocean_ids]
    rowsum = np.asarray(W.sum(axis=1)).ravel() + frontier_weight
    if m and np.max(np.abs(rowsum - vw)) > 1e-9:
        raise SingularSystem("weight rows do not add up to vertex degrees")

    root = None
    if host.root is not None and loc[host.root] >= 0:
        root = int(loc[host.root])
    prov = {
        "host": _host_digest(host),
        "q": dec.q,
        "decomposition": _dec_digest(dec),
    }
    return InducedWalkGraph(
        ocean_ids=ocean_ids,
        W=W,
        vertex_weight=vw,
        frontier_weight=frontier_weight,
        certified=certified,
        root=root,
        provenance=prov,
    )


def _host_digest(host: HostGraph) -> str:
    h = hashlib.blake2s(digest_size=8)
    h.update(host.indptr.tobytes())
    h.update(host.indices.tobytes())
    h.update(host.frontier_edges.tobytes())
    h.update(str(host.root).encode())
    return h.hexdigest()


def _dec_digest(dec: IslandDecomposition) -> str:
    h = hashlib.blake2s(digest_size=8)
    h.update(repr(dec.q).encode())
    for isl in dec.islands:
        h.update(np.asarray(isl).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# spectral estimates
# ---------------------------------------------------------------------------


def _symmetric_kernel(g: InducedWalkGraph, region_local: np.ndarray):
    d = np.sqrt(g.vertex_weight[region_local])
    sub = g.W[region_local][:, region_local].tocoo()
    data = sub.data / (d[sub.row] * d[sub.col])
    return sparse.csr_matrix((data, (sub.row, sub.col)), shape=sub.shape)


def compression_norm(g: InducedWalkGraph, region, iterations: int = 1000) -> float:
    """Operator norm of the compression of the induced kernel to the region.

    Power iteration in the weight inner product from a fixed start (the
    root's indicator when it lies in the region, else the first region
    vertex).  The returned Rayleigh estimate can only undershoot, so it is a
    valid lower bound for the norm of the full operator.
    """
    if iterations < 100:
        raise InvalidParams("need at least 100 power iterations")
    region = np.asarray(sorted(set(int(v) for v in region)), dtype=np.int64)
    if region.size == 0:
        raise EmptyRegion("compression region is empty")
    rl = g.local(region)
    S = _symmetric_kernel(g, rl)

    start = 0
    if g.root is not None:
        hits = np.flatnonzero(rl == g.root)
        if hits.size:
            start = int(hits[0])
    v = np.zeros(region.size)
    v[start] = 1.0
    # w-normalized indicator maps to the plain basis vector under D^(1/2).
    # Track the growth ratio |Sv|/|v| rather than the signed quotient v.Sv:
    # graphs without self-loops are bipartite, where the latter stalls at 0.
    est = 0.0
    for it in range(iterations):
        sv = S @ v
        nv = float(np.linalg.norm(sv))
        if nv == 0.0:
            return 0.0
        if it > 0 and abs(nv - est) < _RAYLEIGH_TOL:
            est = nv
            break
        est = nv
        v = sv / nv
    return est


def induced_return_prob(g: InducedWalkGraph, t: int, allow_truncation: bool = False) -> float:
    """Return probability of the induced walk after t steps from the root.

    In strict mode the probability mass must stay on certified rows for all
    t applications, else InsufficientRegion.  With allow_truncation, mass
    reaching an uncertified row is dropped there, making the result a
    certified lower bound of the untruncated return probability.
    """
    if g.root is None:
        raise InvalidParams("host root is not an ocean vertex")
    if t < 0:
        raise InvalidParams("time must be >= 0")
    if t == 0:
        return 1.0
    P = sparse.diags(1.0 / g.vertex_weight) @ g.W
    P = P.tocsr()
    bad = ~g.certified
    p = np.zeros(g.n)
    p[g.root] = 1.0
    for step in range(t):
        if np.any(p[bad] != 0.0):
            if not allow_truncation:
                raise InsufficientRegion(
                    f"probability mass reached uncertified vertices at step {step}"
                )
            p[bad] = 0.0
        p = p @ P
    return float(p[g.root])


def regular_tree_ball_norm(branching_factor: int, radius: int) -> float:
    """Exact compression norm of the simple walk on a depth-`radius` ball of
    the infinite rooted `branching_factor`-ary tree.

    The walk operator commutes with the automorphisms of the ball, and its
    top eigenvector is positive, hence radial; the norm therefore equals the
    top eigenvalue of the radial chain with entries
    sqrt(k)/sqrt(d_r d_{r+1}), d_0 = k and d_r = k+1 otherwise.  This makes
    radii in the hundreds exact where the full ball (k^radius vertices) is
    far out of reach.
    """
    k = branching_factor
    if k < 2 or radius < 1:
        raise InvalidParams("need branching_factor >= 2 and radius >= 1")
    d = np.full(radius + 1, float(k + 1))
    d[0] = float(k)
    off = math.sqrt(k) / np.sqrt(d[:-1] * d[1:])
    vals = linalg.eigh_tridiagonal(
        np.zeros(radius + 1), off, select="i", select_range=(radius, radius)
    )[0]
    return float(vals[0])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def induced_to_text(g: InducedWalkGraph) -> str:
    lines = ["# " + json.dumps(g.provenance, sort_keys=True)]
    coo = sparse.triu(g.W).tocoo()
    for r, c, v in zip(coo.row, coo.col, coo.data):
        lines.append(f"{g.ocean_ids[r]} {g.ocean_ids[c]} {float(v)!r}")
    return "\n".join(lines) + "\n"


def induced_weights_from_text(text: str):
    """Parse the `u v w` serialization; returns (provenance, weight dict)."""
    prov = {}
    weights: dict[tuple[int, int], float] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            prov = json.loads(line[1:])
            continue
        u, v, w = line.split()
        weights[(int(u), int(v))] = float(w)
    return prov, weights
