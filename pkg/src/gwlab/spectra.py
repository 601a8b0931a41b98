"""Graph Laplacian spectra and root spectral measures.

Two operator variants appear throughout: the combinatorial Laplacian D - A
and the normalised form I - D^{-1/2} A D^{-1/2} (isolated vertices get a
zero row instead of a division by zero, so a single vertex has spectrum {0}
under both).  Small graphs go through a dense symmetric eigensolve, which
also yields the root overlap weights |<delta_o, v_k>|^2; counting
eigenvalues in ]0, E] never needs eigenvectors and instead reads the
inertia of an LDL^T factorisation of the shifted operator, subtracting the
kernel dimension, which equals the number of connected components for both
variants.  A zero pivot in the factorisation means E itself is an
eigenvalue; those states sit inside the half-open interval and are counted.

Root spectral measures of branching-tree ensembles are Monte Carlo means of
the root weight distribution.  Dying-out trees are finite, so their measure
is exact; trees conditioned to survive are cut at a fixed radius and the
estimate carries that radius as a truncation flag.  Energy cells are
half-open ]E_i, E_{i+1}], the atom at zero is reported separately, and mass
above the grid goes into a tail bucket, so atom + cells + tail is exactly
one per sampled tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph

from . import branching as br
from .errors import (
    EigenvalueCollision,
    FactorizationBreakdown,
    GridTooCoarse,
    InvalidParams,
    SizeCapExceeded,
    SubcriticalLambda,
    TooLarge,
)
from .textio import fmt_float

_VARIANTS = ("laplacian", "normalized")

_DENSE_CAP = 4000        # dense symmetric eigensolve
_FACTOR_CAP = 6000       # dense LDL^T workspace
_KERNEL_TOL = 1e-8       # below every positive eigenvalue at these sizes
_SNAP_TOL = 1e-9         # eigenvalue-to-grid snapping for stable cell binning
_COLLISION_TOL = 1e-9
_PIVOT_TOL = 1e-10
_JITTER = 1e-9
_JITTER_RETRIES = 5
_EIGH_CHUNK = 1 << 21    # batched eigh entries per block


# ---------------------------------------------------------------------------
# Graph input handling
# ---------------------------------------------------------------------------


def _as_adjacency(graph) -> sparse.csr_matrix:
    """Coerce a graph argument to a validated symmetric 0/1 CSR adjacency.

    Accepts a scipy sparse matrix, a dense array, a sampled tree, or any
    object carrying an ``adjacency`` attribute.
    """
    if hasattr(graph, "adjacency_csr"):
        a = graph.adjacency_csr()
    elif hasattr(graph, "adjacency"):
        a = graph.adjacency
    else:
        a = graph
    if not sparse.issparse(a):
        arr = np.asarray(a)
        if arr.ndim != 2:
            raise InvalidParams(f"adjacency must be 2-d, got shape {arr.shape}")
        a = sparse.csr_matrix(arr)
    a = a.tocsr().astype(np.float64)
    a.sum_duplicates()
    a.eliminate_zeros()
    n, m = a.shape
    if n != m or n < 1:
        raise InvalidParams(f"adjacency must be square and nonempty, got {a.shape}")
    if a.diagonal().any():
        raise InvalidParams("adjacency has self-loops")
    if a.nnz and not np.all(a.data == 1.0):
        raise InvalidParams("adjacency entries must be 0 or 1")
    if (a != a.T).nnz != 0:
        raise InvalidParams("adjacency must be symmetric")
    return a


def _check_variant(variant: str) -> str:
    if variant not in _VARIANTS:
        raise InvalidParams(f"variant must be one of {_VARIANTS}, got {variant!r}")
    return variant


def _dense_operator(a: sparse.csr_matrix, variant: str) -> np.ndarray:
    deg = np.asarray(a.sum(axis=1)).ravel()
    if variant == "laplacian":
        m = -a.toarray()
        np.fill_diagonal(m, deg)
        return m
    # isolated vertices keep a zero row, matching the single-vertex convention
    dinv = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=dinv, where=deg > 0)
    m = -(a.toarray() * dinv[:, None]) * dinv[None, :]
    np.fill_diagonal(m, np.where(deg > 0, 1.0, 0.0))
    return m


def _n_components(a: sparse.csr_matrix) -> int:
    return int(csgraph.connected_components(a, directed=False)[0])


# ---------------------------------------------------------------------------
# Dense spectra with root weights
# ---------------------------------------------------------------------------


def laplacian_eigs(graph, variant: str = "laplacian", root: int | None = None):
    """Full spectrum of the chosen Laplacian variant, ascending.

    Returns ``(eigs, weights)``.  With a designated root the weights are the
    squared root components of the orthonormal eigenvectors, which sum to
    one; without a root the second entry is None.
    """
    a = _as_adjacency(graph)
    _check_variant(variant)
    n = a.shape[0]
    if n > _DENSE_CAP:
        raise TooLarge(f"dense eigensolve capped at {_DENSE_CAP} vertices, got {n}")
    m = _dense_operator(a, variant)
    if root is None:
        return linalg.eigh(m, eigvals_only=True), None
    if not 0 <= int(root) < n:
        raise InvalidParams(f"root {root} outside 0..{n - 1}")
    w, v = linalg.eigh(m)
    return w, v[int(root), :] ** 2


# ---------------------------------------------------------------------------
# Inertia counting
# ---------------------------------------------------------------------------


def _factor(shifted: np.ndarray):
    """LDL^T of a dense symmetric matrix; isolated here so tests can fault it."""
    return linalg.ldl(shifted, lower=True)


def _block_inertia(d: np.ndarray, tol: float):
    """Count negative and zero eigenvalues of the LDL^T block diagonal.

    1x1 pivots classify by sign; 2x2 pivots contribute their two block
    eigenvalues.  |x| <= tol counts as zero, i.e. the shift hit an exact
    eigenvalue.
    """
    n = d.shape[0]
    neg = 0
    zero = 0
    i = 0
    while i < n:
        if i + 1 < n and d[i, i + 1] != 0.0:
            a, b, c = d[i, i], d[i, i + 1], d[i + 1, i + 1]
            half = 0.5 * (a + c)
            disc = math.hypot(0.5 * (a - c), b)
            for ev in (half - disc, half + disc):
                if ev < -tol:
                    neg += 1
                elif ev <= tol:
                    zero += 1
            i += 2
        else:
            ev = d[i, i]
            if ev < -tol:
                neg += 1
            elif ev <= tol:
                zero += 1
            i += 1
    return neg, zero


def _jitter_units(E: float) -> np.ndarray:
    # retry shifts are a pure function of E so reruns reproduce byte for byte
    seed = int(np.frombuffer(np.float64(E).tobytes(), dtype=np.uint64)[0])
    return np.random.default_rng(seed).uniform(-1.0, 1.0, _JITTER_RETRIES)


def count_eigs_in(graph, E: float, variant: str = "laplacian") -> int:
    """Number of eigenvalues in the half-open interval ]0, E].

    Works from the inertia of one LDL^T factorisation of the operator
    shifted by E plus the grid snap tolerance: the count below the shift
    minus the kernel dimension, the latter taken combinatorially as the
    number of connected components.  The tiny offset keeps the factored
    matrix away from exact singularity when E sits on a degenerate
    eigenvalue (pivot rounding can misplace one count of a high-multiplicity
    cluster at an exactly singular shift), and gives the same edge rule as
    the dense histogram path: eigenvalues within _SNAP_TOL of E count as
    equal to E.  A breakdown of the factorisation is retried up to five
    times with further relative-1e-9 shift jitters before giving up.
    """
    a = _as_adjacency(graph)
    _check_variant(variant)
    E = float(E)
    if not math.isfinite(E) or E <= 0.0:
        raise InvalidParams(f"energy must be positive and finite, got {E}")
    n = a.shape[0]
    if n > _FACTOR_CAP:
        raise TooLarge(f"dense factorisation capped at {_FACTOR_CAP} vertices, got {n}")
    ncomp = _n_components(a)
    m = _dense_operator(a, variant)
    deg_max = float(np.asarray(a.sum(axis=1)).ravel().max(initial=0.0))
    base = E + _SNAP_TOL
    shifts = np.concatenate([[base], base * (1.0 + _jitter_units(E) * _JITTER)])
    for shift in shifts:
        shifted = m - shift * np.eye(n)
        try:
            _, d, _ = _factor(shifted)
        except (linalg.LinAlgError, ValueError):
            continue
        if not np.all(np.isfinite(d)):
            continue
        tol = _PIVOT_TOL * max(1.0, shift, deg_max)
        neg, zero = _block_inertia(d, tol)
        return neg + zero - ncomp
    raise FactorizationBreakdown(
        f"factorisation of the shifted operator failed at E={E} after "
        f"{_JITTER_RETRIES} jittered retries"
    )


@dataclass(frozen=True)
class TraceComparison:
    """Eigenvalue counts of both Laplacian variants over an open interval."""

    count_laplacian: int
    count_normalized: int
    holds: bool


def trace_inequality_check(graph, E: float) -> TraceComparison:
    """Compare spectral counts of the two variants over ]0, E[.

    The combinatorial count never exceeds the normalised one on a finite
    connected graph.  E must stay clear of both spectra; a collision within
    1e-9 raises so the caller can jitter.
    """
    a = _as_adjacency(graph)
    E = float(E)
    if not math.isfinite(E) or E <= 0.0:
        raise InvalidParams(f"energy must be positive and finite, got {E}")
    if _n_components(a) != 1:
        raise InvalidParams("trace comparison needs a connected graph")
    counts = []
    for variant in _VARIANTS:
        w, _ = laplacian_eigs(a, variant)
        if np.min(np.abs(w - E)) < _COLLISION_TOL:
            raise EigenvalueCollision(
                f"E={E} is within {_COLLISION_TOL} of a {variant} eigenvalue"
            )
        counts.append(int(np.count_nonzero((w > _KERNEL_TOL) & (w < E))))
    c_lap, c_norm = counts
    return TraceComparison(c_lap, c_norm, c_lap <= c_norm)


# ---------------------------------------------------------------------------
# Spectral measure estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralMeasureEstimate:
    """Monte Carlo estimate of a spectral probability measure.

    ``grid`` starts at 0; ``masses[i]`` estimates the cell ]grid[i],
    grid[i+1]], the atom at zero is kept out of every cell, and ``tail`` is
    the mass above the grid.  ``cum_stderrs[i]`` is the standard error of
    the cumulative mass in ]0, grid[i+1]], which differs from combining the
    per-cell errors because cells of one sample are correlated.
    """

    grid: np.ndarray
    masses: np.ndarray
    stderrs: np.ndarray
    atom_at_zero: float
    atom_stderr: float
    tail: float
    tail_stderr: float
    n_samples: int
    cum_stderrs: np.ndarray | None = None
    truncation_radius: int | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        masses = np.asarray(self.masses, dtype=np.float64)
        stderrs = np.asarray(self.stderrs, dtype=np.float64)
        if grid.ndim != 1 or grid.size < 2:
            raise InvalidParams("grid must be 1-d with at least two energies")
        if grid[0] != 0.0:
            raise InvalidParams("grid must start at 0")
        if not np.all(np.isfinite(grid)) or np.any(np.diff(grid) <= 0.0):
            raise InvalidParams("grid must be finite and strictly increasing")
        if masses.shape != stderrs.shape or masses.shape != (grid.size - 1,):
            raise InvalidParams("masses and stderrs must have one entry per cell")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "stderrs", stderrs)
        if self.cum_stderrs is not None:
            cum = np.asarray(self.cum_stderrs, dtype=np.float64)
            if cum.shape != masses.shape:
                raise InvalidParams("cum_stderrs must have one entry per cell")
            object.__setattr__(self, "cum_stderrs", cum)
        values = np.concatenate(
            [masses, stderrs, [self.atom_at_zero, self.atom_stderr, self.tail, self.tail_stderr]]
        )
        if not np.all(np.isfinite(values)) or np.any(values < 0.0):
            raise InvalidParams("measure entries must be finite and nonnegative")
        if abs(self.total - 1.0) > 1e-6:
            raise InvalidParams(f"measure must have total mass 1, got {self.total}")
        if self.n_samples < 0:
            raise InvalidParams("n_samples must be nonnegative")

    @property
    def total(self) -> float:
        return float(self.atom_at_zero + self.masses.sum() + self.tail)

    def _grid_slot(self, E: float) -> int:
        i = int(np.searchsorted(self.grid, E))
        if i >= self.grid.size or abs(self.grid[i] - E) > 1e-12 or i == 0:
            raise InvalidParams(f"E={E} is not a positive grid energy")
        return i

    def mass_up_to(self, E: float) -> float:
        """Cumulative mass in ]0, E] for a grid energy E, atom excluded."""
        return float(self.masses[: self._grid_slot(E)].sum())

    def cum_stderr_at(self, E: float) -> float:
        if self.cum_stderrs is None:
            raise InvalidParams("estimate carries no cumulative standard errors")
        return float(self.cum_stderrs[self._grid_slot(E) - 1])


def measure_to_csv(estimate: SpectralMeasureEstimate) -> str:
    """Serialize as E_lo,E_hi,mass,stderr rows: atom first, tail row last."""
    lines = ["E_lo,E_hi,mass,stderr"]
    lines.append(f"0,0,{fmt_float(estimate.atom_at_zero)},{fmt_float(estimate.atom_stderr)}")
    for i in range(estimate.masses.size):
        lines.append(
            f"{fmt_float(estimate.grid[i])},{fmt_float(estimate.grid[i + 1])},"
            f"{fmt_float(estimate.masses[i])},{fmt_float(estimate.stderrs[i])}"
        )
    lines.append(
        f"{fmt_float(estimate.grid[-1])},inf,{fmt_float(estimate.tail)},"
        f"{fmt_float(estimate.tail_stderr)}"
    )
    return "\n".join(lines) + "\n"


def measure_from_csv(text: str) -> SpectralMeasureEstimate:
    """Inverse of measure_to_csv; sample count and cumulative errors are lost."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "E_lo,E_hi,mass,stderr":
        raise InvalidParams("expected header E_lo,E_hi,mass,stderr")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise InvalidParams(f"malformed measure row: {ln!r}")
        rows.append([float(p) for p in parts])
    if len(rows) < 3:
        raise InvalidParams("measure needs an atom row, a cell row and a tail row")
    atom_row, cell_rows, tail_row = rows[0], rows[1:-1], rows[-1]
    if atom_row[0] != 0.0 or atom_row[1] != 0.0:
        raise InvalidParams("first row must be the 0,0 atom row")
    if not math.isinf(tail_row[1]):
        raise InvalidParams("last row must cover the tail up to inf")
    lows = np.array([r[0] for r in cell_rows])
    highs = np.array([r[1] for r in cell_rows])
    if lows[0] != 0.0 or np.any(lows[1:] != highs[:-1]) or tail_row[0] != highs[-1]:
        raise InvalidParams("cells must tile ]0, E_max] contiguously")
    return SpectralMeasureEstimate(
        grid=np.concatenate([[0.0], highs]),
        masses=np.array([r[2] for r in cell_rows]),
        stderrs=np.array([r[3] for r in cell_rows]),
        atom_at_zero=atom_row[2],
        atom_stderr=atom_row[3],
        tail=tail_row[2],
        tail_stderr=tail_row[3],
        n_samples=0,
    )


# ---------------------------------------------------------------------------
# Root spectral measures of tree ensembles
# ---------------------------------------------------------------------------


class _MeasureAcc:
    """Running first and second moments for atom, cells, cumulatives, tail."""

    def __init__(self, n_cells: int):
        self.n = 0
        self.atom = np.zeros(2)
        self.tail = np.zeros(2)
        self.cell = np.zeros((2, n_cells))
        self.cum = np.zeros((2, n_cells))

    def add_unit_atoms(self, count: int):
        # single-vertex trees: atom weight exactly 1, nothing anywhere else
        self.n += count
        self.atom += count

    def add(self, atom: np.ndarray, cells: np.ndarray, tail: np.ndarray):
        self.n += atom.shape[0]
        self.atom[0] += atom.sum()
        self.atom[1] += np.square(atom).sum()
        self.tail[0] += tail.sum()
        self.tail[1] += np.square(tail).sum()
        self.cell[0] += cells.sum(axis=0)
        self.cell[1] += np.square(cells).sum(axis=0)
        cums = np.cumsum(cells, axis=1)
        self.cum[0] += cums.sum(axis=0)
        self.cum[1] += np.square(cums).sum(axis=0)

    @staticmethod
    def _mean_err(pair, n):
        mean = pair[0] / n
        if n < 2:
            return mean, np.zeros_like(mean)
        var = np.maximum(pair[1] - n * np.square(mean), 0.0) / (n - 1)
        return mean, np.sqrt(var / n)

    def finalize(self, grid, truncation_radius=None) -> SpectralMeasureEstimate:
        n = self.n
        atom, atom_err = self._mean_err(self.atom, n)
        tail, tail_err = self._mean_err(self.tail, n)
        cells, cell_errs = self._mean_err(self.cell, n)
        _, cum_errs = self._mean_err(self.cum, n)
        return SpectralMeasureEstimate(
            grid=grid,
            masses=cells,
            stderrs=cell_errs,
            atom_at_zero=float(atom),
            atom_stderr=float(atom_err),
            tail=float(tail),
            tail_stderr=float(tail_err),
            n_samples=n,
            cum_stderrs=cum_errs,
            truncation_radius=truncation_radius,
        )


def merge_measures(parts) -> SpectralMeasureEstimate:
    """Pool estimates over disjoint sample ranges into one estimate.

    Each part's sums of values and squared values are reconstructed from its
    mean, stderr and sample count, so the merged means are exact pooled
    means and the stderrs match a single-pass run up to rounding.  Grids
    and truncation radii must agree, and every part needs cumulative
    stderrs (measures read back from CSV lose them).
    """
    parts = list(parts)
    if not parts:
        raise InvalidParams("nothing to merge")
    first = parts[0]
    for p in parts:
        if not isinstance(p, SpectralMeasureEstimate):
            raise InvalidParams(f"cannot merge {type(p).__name__}")
        if not np.array_equal(p.grid, first.grid):
            raise InvalidParams("parts have different energy grids")
        if p.truncation_radius != first.truncation_radius:
            raise InvalidParams("parts have different truncation radii")
        if p.cum_stderrs is None:
            raise InvalidParams("parts lost their cumulative errors; cannot merge")
        if p.n_samples < 1:
            raise InvalidParams("parts must carry at least one sample")

    def sums(pair, mean, stderr, n):
        mean = np.asarray(mean, dtype=np.float64)
        stderr = np.asarray(stderr, dtype=np.float64)
        pair[0] += mean * n
        pair[1] += np.square(stderr) * n * (n - 1) + np.square(mean) * n

    acc = _MeasureAcc(first.grid.size - 1)
    for p in parts:
        n = p.n_samples
        acc.n += n
        sums(acc.atom, p.atom_at_zero, p.atom_stderr, n)
        sums(acc.tail, p.tail, p.tail_stderr, n)
        sums(acc.cell, p.masses, p.stderrs, n)
        sums(acc.cum, np.cumsum(p.masses), p.cum_stderrs, n)
    return acc.finalize(first.grid, first.truncation_radius)


def _snap_to_grid(w: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Replace eigenvalues within _SNAP_TOL of a grid energy by that energy.

    Tree and graph spectra put real mass on exact values such as 1 or 2; if
    those sit on a cell edge the half-open assignment must not depend on the
    last bit of whichever eigensolver produced them.
    """
    pos = np.searchsorted(grid, w)
    lo = grid[np.clip(pos - 1, 0, grid.size - 1)]
    hi = grid[np.clip(pos, 0, grid.size - 1)]
    return np.where(
        np.abs(w - lo) <= _SNAP_TOL, lo, np.where(np.abs(hi - w) <= _SNAP_TOL, hi, w)
    )


def _split_by_energy(w: np.ndarray, wt: np.ndarray, grid: np.ndarray):
    """Route eigenvalue weights into atom / grid cells / tail per row."""
    w = _snap_to_grid(np.maximum(w, 0.0), grid)
    zero = w <= _KERNEL_TOL
    tail_mask = w > grid[-1]
    mid = ~(zero | tail_mask)
    atom = np.where(zero, wt, 0.0).sum(axis=1)
    tail = np.where(tail_mask, wt, 0.0).sum(axis=1)
    k = grid.size - 1
    cell = np.clip(np.searchsorted(grid, w, side="left") - 1, 0, k - 1)
    rows = np.broadcast_to(np.arange(w.shape[0])[:, None], w.shape)
    flat = (rows * k + cell)[mid]
    cells = np.bincount(flat, weights=wt[mid], minlength=w.shape[0] * k)
    return atom, cells.reshape(w.shape[0], k), tail


def _forest_root_spectrum(parents: np.ndarray, variant: str):
    """Batched spectra and root weights for same-size trees given by parents."""
    m, n = parents.shape
    a = np.zeros((m, n, n))
    rows = np.repeat(np.arange(m), n - 1)
    child = np.tile(np.arange(1, n), m)
    par = parents[:, 1:].ravel()
    a[rows, child, par] = 1.0
    a[rows, par, child] = 1.0
    deg = a.sum(axis=2)
    diag = np.arange(n)
    if variant == "laplacian":
        op = -a
        op[:, diag, diag] = deg
    else:
        dinv = 1.0 / np.sqrt(deg)  # connected with n >= 2, so deg >= 1
        op = -(a * dinv[:, :, None]) * dinv[:, None, :]
        op[:, diag, diag] = 1.0
    w, v = np.linalg.eigh(op)
    return w, v[:, 0, :] ** 2  # arena order puts the root in row 0


def _validated_grid(E_grid) -> np.ndarray:
    g = np.asarray(E_grid, dtype=np.float64)
    if g.ndim != 1 or g.size < 1:
        raise InvalidParams("energy grid must be a nonempty 1-d array")
    if not np.all(np.isfinite(g)) or g[0] <= 0.0 or np.any(np.diff(g) <= 0.0):
        raise InvalidParams("energy grid must be positive, finite, strictly increasing")
    return np.concatenate([[0.0], g])


_CONDITIONINGS = ("extinct", "survivor", "unconditional")


def root_spectral_mass(
    model: br.OffspringModel,
    E_grid,
    n_samples: int,
    rng_seed: int,
    conditioning: str = "extinct",
    *,
    variant: str = "laplacian",
    truncation_radius: int | None = None,
    size_cap: int = 1_000_000,
    start_index: int = 0,
) -> SpectralMeasureEstimate:
    """Monte Carlo root spectral measure of a branching-tree ensemble.

    Dying-out and unconditioned trees are finite and contribute their exact
    root measure; the atom at zero of a connected n-vertex tree is 1/n under
    the plain Laplacian.  Survivor trees are cut at ``truncation_radius``
    generations and the ball is treated as a standalone graph, so the result
    is truncation-biased and flags the radius.  Samples are keyed by index,
    which makes the estimate independent of batching.
    """
    grid = _validated_grid(E_grid)
    _check_variant(variant)
    if conditioning not in _CONDITIONINGS:
        raise InvalidParams(
            f"conditioning must be one of {_CONDITIONINGS}, got {conditioning!r}"
        )
    if int(n_samples) < 1:
        raise InvalidParams("n_samples must be >= 1")
    n_samples = int(n_samples)
    if conditioning == "survivor":
        if truncation_radius is None or int(truncation_radius) < 1:
            raise InvalidParams("survivor conditioning needs truncation_radius >= 1")
        truncation_radius = int(truncation_radius)
    elif truncation_radius is not None:
        raise InvalidParams("truncation_radius only applies to survivor conditioning")

    acc = _MeasureAcc(grid.size - 1)
    if conditioning == "extinct":
        sizes, capped = br.sample_extinct_sizes(
            model, n_samples, rng_seed, size_cap=size_cap, start_index=start_index
        )
        if np.any(capped):
            bad = start_index + int(np.flatnonzero(capped)[0])
            raise SizeCapExceeded(
                f"dying-out tree at sample index {bad} exceeded size cap {size_cap}"
            )
        acc.add_unit_atoms(int(np.count_nonzero(sizes == 1)))
        for size in np.unique(sizes):
            size = int(size)
            if size < 2:
                continue
            idx = np.flatnonzero(sizes == size)
            step = max(1, _EIGH_CHUNK // (size * size))
            for a in range(0, idx.size, step):
                block = idx[a : a + step]
                parents = np.empty((block.size, size), dtype=np.int64)
                for r, i in enumerate(block):
                    tree = br.sample_extinct(
                        model, rng_seed, size_cap, sample_index=start_index + int(i)
                    )
                    parents[r] = tree.parent
                w, wt = _forest_root_spectrum(parents, variant)
                acc.add(*_split_by_energy(w, wt, grid))
    elif conditioning == "unconditional":
        budget = br.GenerationBudget(max_depth=size_cap, max_vertices=size_cap)
        for i in range(n_samples):
            tree = br.sample_unconditional(model, rng_seed, budget, start_index + i)
            if not tree.is_complete:
                raise SizeCapExceeded(
                    f"tree at sample index {start_index + i} exceeded size cap {size_cap}"
                )
            w, wt = laplacian_eigs(tree, variant, root=tree.root)
            acc.add(*_split_by_energy(w[None, :], wt[None, :], grid))
    else:
        budget = br.GenerationBudget(max_depth=truncation_radius, max_vertices=_DENSE_CAP)
        for i in range(n_samples):
            tree = br.sample_survivor(model, rng_seed, budget, start_index + i)
            if tree.complete_radius() < truncation_radius:
                raise TooLarge(
                    f"radius-{truncation_radius} ball at sample index "
                    f"{start_index + i} exceeded {_DENSE_CAP} vertices"
                )
            w, wt = laplacian_eigs(tree, variant, root=tree.root)
            acc.add(*_split_by_energy(w[None, :], wt[None, :], grid))
    return acc.finalize(grid, truncation_radius)


def truncation_stability(
    model: br.OffspringModel,
    E_grid,
    n_samples: int,
    rng_seed: int,
    radius: int,
    variant: str = "normalized",
):
    """Certify a survivor-ensemble measure against its truncation radius.

    Recomputes the estimate two generations deeper on the same sample
    indices and reports whether every cumulative mass moved by less than
    one standard error.  Returns (estimate, deeper_estimate, stable).
    """
    est = root_spectral_mass(
        model, E_grid, n_samples, rng_seed, "survivor",
        variant=variant, truncation_radius=radius,
    )
    deeper = root_spectral_mass(
        model, E_grid, n_samples, rng_seed, "survivor",
        variant=variant, truncation_radius=radius + 2,
    )
    shift = np.abs(np.cumsum(est.masses) - np.cumsum(deeper.masses))
    scale = np.maximum(est.cum_stderrs, deeper.cum_stderrs)
    stable = bool(np.all(shift < np.maximum(scale, 1e-15)))
    return est, deeper, stable


# ---------------------------------------------------------------------------
# Low-energy envelope for dying-out Poisson ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LifshitsBounds:
    """Two-sided envelope for the low-energy root spectral mass.

    For a Poisson(lam) ensemble conditioned to die out the mass of ]0, E]
    under the plain Laplacian sits between ``lower(E)`` and ``upper(E)``,
    both of stretched-exponential form exp(-c E^{-1/2}) and both clamped to
    [0, 1].  ``lambda_extinct`` is lam times the extinction probability, the
    mean of the dying-out offspring law.
    """

    lam: float
    lambda_extinct: float
    f_minus: float
    f_plus: float

    def _eval(self, E, prefactor: float, rate: float):
        e = np.asarray(E, dtype=np.float64)
        if not np.all(np.isfinite(e)) or np.any(e <= 0.0):
            raise InvalidParams("energy must be positive and finite")
        vals = np.clip(prefactor * np.exp(-rate / np.sqrt(e)), 0.0, 1.0)
        return float(vals) if np.isscalar(E) or e.ndim == 0 else vals

    def lower(self, E):
        return self._eval(
            E,
            math.exp(-self.f_minus) / (2.0 * self.lambda_extinct),
            2.0 * math.sqrt(3.0) * self.f_minus,
        )

    def upper(self, E):
        return self._eval(E, math.exp(self.f_plus) / self.lambda_extinct, self.f_plus)

    def json_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "lambda_extinct": self.lambda_extinct,
            "f_minus": self.f_minus,
            "f_plus": self.f_plus,
        }


def lifshits_bounds(lam: float) -> LifshitsBounds:
    """Envelope constants for the Poisson(lam) dying-out ensemble, lam > 1."""
    lam = float(lam)
    if not math.isfinite(lam) or lam <= 1.0:
        raise SubcriticalLambda(f"bounds need lambda > 1, got {lam}")
    extinction = br.solve_extinction(br.OffspringModel.poisson(lam))
    x = lam * extinction
    f_minus = x - math.log(x)
    f_plus = f_minus - 1.0
    if f_plus <= 0.0:
        raise SubcriticalLambda(f"lambda {lam} too close to 1 to resolve the envelope")
    return LifshitsBounds(lam=lam, lambda_extinct=x, f_minus=f_minus, f_plus=f_plus)


# ---------------------------------------------------------------------------
# Laplace transform consistency
# ---------------------------------------------------------------------------


def laplace_transform_check(dos: SpectralMeasureEstimate, s: float) -> float:
    """Annealed heat-kernel value implied by a spectral measure at time s.

    Evaluates atom + s * integral of the cumulative cell mass against
    exp(-s E), the transform that turns the spectral measure into the
    expected return probability of the continuous-time walk generated by
    the Laplacian.  The atom contributes exactly; cells enter through a
    midpoint staircase integrated by the trapezoid rule, so the grid must
    resolve 1/(4s) and reach E_max >= 30/s for the discarded tail to be
    negligible.
    """
    if not isinstance(dos, SpectralMeasureEstimate):
        raise InvalidParams("dos must be a SpectralMeasureEstimate")
    s = float(s)
    if not math.isfinite(s) or s <= 0.0:
        raise InvalidParams(f"time must be positive and finite, got {s}")
    grid = dos.grid
    if s * grid[-1] < 30.0:
        raise InvalidParams(
            f"grid reaches {grid[-1]} but needs E_max >= {30.0 / s} at s={s}"
        )
    spacing = float(np.diff(grid).max())
    if spacing > 0.25 / s:
        raise GridTooCoarse(
            f"grid spacing {spacing} exceeds {0.25 / s} at s={s}"
        )
    mids = 0.5 * (grid[:-1] + grid[1:])
    cum_mid = np.cumsum(dos.masses) - 0.5 * dos.masses
    xs = np.concatenate([[0.0], mids, [grid[-1]]])
    ys = np.concatenate([[0.0], cum_mid, [dos.masses.sum()]])
    cells = float(np.trapezoid(s * ys * np.exp(-s * xs), xs))
    return float(dos.atom_at_zero + cells)
