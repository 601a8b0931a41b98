"""Sparse binomial random graphs and their Laplacian eigenvalue statistics.

Graphs are drawn as G(N, lam/N) by geometric skipping over the linearised
pair index, so sampling costs O(N + edges) rather than O(N^2).  Components
are computed once at sampling time; the spectral atom at zero always comes
from the component count, never from thresholding numerically tiny
eigenvalues, because every component contributes exactly one kernel
dimension.  The eigenvalue histogram reuses the spectral-measure
conventions of the spectra module: half-open cells, a separate atom, a tail
bucket, and grid snapping so that integer eigenvalues sitting on cell edges
land deterministically.

Each graph's randomness derives from the run seed and its sample index, so
ensembles are reproducible term by term regardless of batching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from . import branching as br, keyrng, spectra as sp
from .errors import InvalidParams, SizeCapExceeded
from .textio import fmt_float


@dataclass(frozen=True)
class ErGraph:
    """A sampled binomial graph with its component decomposition.

    ``labels`` assigns every vertex a component id in [0, n_components);
    ``giant`` is the id of the largest component (smallest id wins ties).
    """

    n: int
    lam: float
    adjacency: sparse.csr_matrix
    labels: np.ndarray
    n_components: int
    giant: int

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz // 2)

    def component_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_components)

    @property
    def giant_size(self) -> int:
        return int(self.component_sizes()[self.giant])

    def giant_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == self.giant)

    def giant_adjacency(self) -> sparse.csr_matrix:
        keep = self.giant_vertices()
        return self.adjacency[keep][:, keep].tocsr()


def _components(adjacency: sparse.csr_matrix):
    n_comp, labels = csgraph.connected_components(adjacency, directed=False)
    sizes = np.bincount(labels, minlength=n_comp)
    return int(n_comp), labels.astype(np.int32), int(np.argmax(sizes))


def _pair_rows(ks: np.ndarray, n: int) -> np.ndarray:
    """Row index of linearised upper-triangle slots, lexicographic order."""
    b = 2 * n - 1
    i = ((b - np.sqrt(b * b - 8.0 * ks)) * 0.5).astype(np.int64)
    i = np.clip(i, 0, n - 2)
    # float sqrt can be off by one row near boundaries
    starts = i * n - (i * (i + 1)) // 2
    while True:
        high = starts > ks
        if not np.any(high):
            break
        i[high] -= 1
        starts = i * n - (i * (i + 1)) // 2
    while True:
        nxt = (i + 1) * n - ((i + 1) * (i + 2)) // 2
        low = nxt <= ks
        if not np.any(low):
            break
        i[low] += 1
    return i


def sample_er(N: int, lam: float, rng_seed: int, sample_index: int = 0) -> ErGraph:
    """Draw G(N, lam/N): every vertex pair is an edge independently."""
    N = int(N)
    lam = float(lam)
    if N < 2:
        raise InvalidParams(f"need N >= 2, got {N}")
    if not math.isfinite(lam) or lam <= 0.0 or lam >= N:
        raise InvalidParams(f"need 0 < lambda < N, got lambda={lam}")
    total = N * (N - 1) // 2
    p = lam / N
    key = keyrng.root_keys_array(rng_seed, np.array([sample_index], dtype=np.uint64))[0]
    rng = np.random.default_rng(int(key))
    chunk = int(total * p + 10.0 * math.sqrt(total * p + 1.0)) + 16
    slots = []
    pos = -1
    while pos < total:
        gaps = rng.geometric(p, size=chunk)
        cum = pos + np.cumsum(gaps)
        slots.append(cum)
        pos = int(cum[-1])
        chunk = max(chunk // 4, 64)
    ks = np.concatenate(slots)
    ks = ks[ks < total]
    rows = _pair_rows(ks, N)
    cols = ks - (rows * N - (rows * (rows + 1)) // 2) + rows + 1
    data = np.ones(2 * ks.size)
    adjacency = sparse.csr_matrix(
        (data, (np.r_[rows, cols], np.r_[cols, rows])), shape=(N, N)
    )
    n_comp, labels, giant = _components(adjacency)
    return ErGraph(
        n=N, lam=lam, adjacency=adjacency, labels=labels,
        n_components=n_comp, giant=giant,
    )


# ---------------------------------------------------------------------------
# Eigenvalue histograms
# ---------------------------------------------------------------------------


_DOS_METHODS = ("auto", "dense", "inertia")


def _resolve_method(method: str, n: int) -> str:
    if method not in _DOS_METHODS:
        raise InvalidParams(f"method must be one of {_DOS_METHODS}, got {method!r}")
    if method == "auto":
        return "dense" if n <= sp._DENSE_CAP else "inertia"
    return method


def spectrum_cell_counts(graph, E_grid, method: str = "dense"):
    """Integer Laplacian eigenvalue counts per half-open grid cell.

    Returns (n_components, counts, tail_count).  The kernel is removed by
    rank: the component count says how many of the smallest eigenvalues are
    exact zeros, so no numerical threshold is involved.  ``method`` chooses
    the full eigensolve or one inertia factorisation per grid energy; both
    give the same integers (shared edge rule), hence invariance under
    vertex relabelling either way.
    """
    grid = sp._validated_grid(E_grid)
    adjacency = sp._as_adjacency(graph)
    n = adjacency.shape[0]
    n_comp = int(csgraph.connected_components(adjacency, directed=False)[0])
    if _resolve_method(method, n) == "inertia":
        below = np.array(
            [sp.count_eigs_in(adjacency, E) for E in grid[1:]], dtype=np.int64
        )
        counts = np.diff(np.concatenate([[0], below]))
        return n_comp, counts, int(n - n_comp - below[-1])
    w, _ = sp.laplacian_eigs(adjacency, "laplacian")
    w = sp._snap_to_grid(np.maximum(w[n_comp:], 0.0), grid)
    counts = np.zeros(grid.size - 1, dtype=np.int64)
    inside = w <= grid[-1]
    cell = np.searchsorted(grid, w[inside], side="left") - 1
    np.add.at(counts, np.clip(cell, 0, counts.size - 1), 1)
    return n_comp, counts, int(np.count_nonzero(~inside))


def dos_estimate(
    N: int,
    lam: float,
    n_graphs: int,
    E_grid,
    rng_seed: int,
    *,
    method: str = "auto",
    start_index: int = 0,
) -> sp.SpectralMeasureEstimate:
    """Averaged empirical Laplacian eigenvalue distribution of G(N, lam/N).

    Each graph contributes its N eigenvalues with weight 1/N: the component
    count as the atom at zero, per-cell counts, and a tail above the grid,
    so every sample has total mass exactly one.  ``method`` picks the dense
    eigensolve or per-energy inertia counts; ``auto`` prefers dense and
    falls back to inertia above the eigensolve cap.
    """
    grid = sp._validated_grid(E_grid)
    if int(n_graphs) < 1:
        raise InvalidParams("n_graphs must be >= 1")
    method = _resolve_method(method, int(N))
    acc = sp._MeasureAcc(grid.size - 1)
    for g in range(int(n_graphs)):
        graph = sample_er(N, lam, rng_seed, sample_index=start_index + g)
        n_comp, counts, tail = spectrum_cell_counts(graph, grid[1:], method)
        scale = 1.0 / graph.n
        acc.add(
            np.array([n_comp * scale]),
            counts[None, :] * scale,
            np.array([tail * scale]),
        )
    return acc.finalize(grid)


# ---------------------------------------------------------------------------
# Atom at zero, two ways
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AtomZeroEstimate:
    value: float
    stderr: float
    n_samples: int


def bgw_atom_at_zero(
    model: br.OffspringModel,
    n_samples: int,
    rng_seed: int,
    *,
    size_cap: int = 1_000_000,
    start_index: int = 0,
) -> AtomZeroEstimate:
    """Limiting component density via branching trees.

    The zero atom of the Laplacian eigenvalue distribution equals the mean
    of 1/|T| over finite trees, i.e. the extinction probability times the
    mean inverse size of a dying-out tree.
    """
    if int(n_samples) < 1:
        raise InvalidParams("n_samples must be >= 1")
    sizes, capped = br.sample_extinct_sizes(
        model, int(n_samples), rng_seed, size_cap=size_cap, start_index=start_index
    )
    if np.any(capped):
        bad = start_index + int(np.flatnonzero(capped)[0])
        raise SizeCapExceeded(
            f"dying-out tree at sample index {bad} exceeded size cap {size_cap}"
        )
    extinction = model.extinction
    inv = 1.0 / sizes
    value = extinction * float(np.mean(inv))
    stderr = extinction * float(np.std(inv, ddof=1)) / math.sqrt(sizes.size)
    return AtomZeroEstimate(value=value, stderr=stderr, n_samples=int(n_samples))


# ---------------------------------------------------------------------------
# Spectral mass of the giant component
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GiantMassEstimate:
    """Per-vertex eigenvalue counts of the largest component in ]0, E]."""

    energy: float
    laplacian_mass: float
    laplacian_stderr: float
    normalized_mass: float
    normalized_stderr: float
    comparisons_hold: bool
    mean_giant_size: float
    n_graphs: int


def giant_spectral_mass(
    N: int,
    lam: float,
    n_graphs: int,
    E: float,
    rng_seed: int,
    *,
    start_index: int = 0,
) -> GiantMassEstimate:
    """Average low-energy spectral mass of the giant component.

    Counts eigenvalues in ]0, E] by inertia for both Laplacian variants and
    divides by the component size.  The per-sample count for the plain
    Laplacian never exceeds the normalised one; ``comparisons_hold`` states
    whether that held on every sample.
    """
    lam = float(lam)
    if lam <= 1.0:
        raise InvalidParams(f"giant analysis needs lambda > 1, got {lam}")
    E = float(E)
    if not math.isfinite(E) or E <= 0.0:
        raise InvalidParams(f"energy must be positive and finite, got {E}")
    if int(n_graphs) < 1:
        raise InvalidParams("n_graphs must be >= 1")
    lap = np.empty(int(n_graphs))
    nrm = np.empty(int(n_graphs))
    giants = np.empty(int(n_graphs))
    holds = True
    for g in range(int(n_graphs)):
        graph = sample_er(N, lam, rng_seed, sample_index=start_index + g)
        sub = graph.giant_adjacency()
        size = sub.shape[0]
        c_lap = sp.count_eigs_in(sub, E, "laplacian")
        c_nrm = sp.count_eigs_in(sub, E, "normalized")
        holds = holds and (c_lap <= c_nrm)
        lap[g] = c_lap / size
        nrm[g] = c_nrm / size
        giants[g] = size
    n = int(n_graphs)
    scale = math.sqrt(n) if n > 1 else 1.0
    return GiantMassEstimate(
        energy=E,
        laplacian_mass=float(lap.mean()),
        laplacian_stderr=float(lap.std(ddof=1)) / scale if n > 1 else 0.0,
        normalized_mass=float(nrm.mean()),
        normalized_stderr=float(nrm.std(ddof=1)) / scale if n > 1 else 0.0,
        comparisons_hold=bool(holds),
        mean_giant_size=float(giants.mean()),
        n_graphs=n,
    )


# ---------------------------------------------------------------------------
# Edge-list serialization
# ---------------------------------------------------------------------------


def graph_to_edgelist(graph: ErGraph) -> str:
    """Header ``N lambda`` followed by one ascending ``i j`` line per edge."""
    upper = sparse.triu(graph.adjacency, 1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    lines = [f"{graph.n} {fmt_float(graph.lam)}"]
    lines += [f"{int(i)} {int(j)}" for i, j in zip(upper.row[order], upper.col[order])]
    return "\n".join(lines) + "\n"


def graph_from_edgelist(text: str) -> ErGraph:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InvalidParams("edge list is empty")
    head = lines[0].split()
    if len(head) != 2:
        raise InvalidParams(f"expected header 'N lambda', got {lines[0]!r}")
    n = int(head[0])
    lam = float(head[1])
    if n < 2:
        raise InvalidParams(f"need N >= 2, got {n}")
    seen = set()
    rows = []
    cols = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise InvalidParams(f"malformed edge line: {ln!r}")
        i, j = int(parts[0]), int(parts[1])
        if not (0 <= i < j < n):
            raise InvalidParams(f"edge {i} {j} out of range for N={n}")
        if (i, j) in seen:
            raise InvalidParams(f"duplicate edge {i} {j}")
        seen.add((i, j))
        rows.append(i)
        cols.append(j)
    data = np.ones(2 * len(rows))
    adjacency = sparse.csr_matrix(
        (data, (np.r_[rows, cols].astype(np.int64), np.r_[cols, rows].astype(np.int64))),
        shape=(n, n),
    )
    n_comp, labels, giant = _components(adjacency)
    return ErGraph(
        n=n, lam=lam, adjacency=adjacency, labels=labels,
        n_components=n_comp, giant=giant,
    )
