"""Offspring laws and conditioned tree sampling.

An offspring law mu with mean above one splits its trees into survivors and
dying-out trees.  Writing L for the extinction probability (the smallest fixed
point of the generating function), the tree conditioned to die out is again an
unconditional branching tree with the dual law

    mu_E(n) = mu(n) L^(n-1),

and the tree conditioned to survive is generated by a two-type rule: a
survivor vertex draws its child count n from the size-tilted marginal
mu(n)(1-L^n)/(1-L), the set U of surviving children has |U| binomial(n, 1-L)
conditioned to be nonempty and is uniform given its size, and the remaining
children root independent dying-out trees.

Trees are grown breadth first to an explicit budget; vertices whose children
were never drawn form the frontier.  Every random decision is keyed by the
vertex position (see keyrng), so re-expanding a frontier or changing the
worker count cannot alter a tree that has already been decided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import stats

from . import keyrng
from .errors import (
    DegenerateModel,
    InvalidDistribution,
    NoExtinction,
    SizeCapExceeded,
    SubcriticalModel,
)

UNTYPED = 0
TYPE_S = 1
TYPE_E = 2

# Truncation point for unbounded supports in inversion tables.  Mass beyond
# the cap is below 1e-18 per draw, invisible at any feasible sample size.
_TAIL_EPS = 1e-18


def _parse_number(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise InvalidDistribution(f"cannot parse number {text!r}") from exc


@dataclass(frozen=True)
class OffspringModel:
    """Offspring distribution: poisson(lam) or a finite table."""

    kind: str
    lam: float = 0.0
    table: tuple[tuple[int, float], ...] = ()

    # -- construction ------------------------------------------------------

    @staticmethod
    def poisson(lam: float) -> "OffspringModel":
        if not (lam > 0.0 and math.isfinite(lam)):
            raise InvalidDistribution(f"poisson rate must be positive, got {lam}")
        return OffspringModel(kind="poisson", lam=float(lam))

    @staticmethod
    def from_table(probabilities) -> "OffspringModel":
        items = sorted(probabilities.items())
        if not items:
            raise InvalidDistribution("empty offspring table")
        for k, p in items:
            if not (isinstance(k, (int, np.integer)) and k >= 0):
                raise InvalidDistribution(f"table key {k!r} is not a nonnegative integer")
            if not (p >= 0.0 and math.isfinite(p)):
                raise InvalidDistribution(f"table mass at {k} is {p}")
        total = math.fsum(p for _, p in items)
        if abs(total - 1.0) > 1e-9:
            raise InvalidDistribution(f"table masses sum to {total}, not 1")
        items = [(int(k), p / total) for k, p in items if p > 0.0]
        if items == [(1, 1.0)]:
            raise DegenerateModel("table{1:1} has no randomness; conditioning is vacuous")
        return OffspringModel(kind="table", table=tuple(items))

    @staticmethod
    def parse(text: str) -> "OffspringModel":
        """Parse "poisson:2.0" or "table:0=0.25,2=0.75"."""
        head, sep, body = text.partition(":")
        if not sep:
            raise InvalidDistribution(f"missing ':' in model string {text!r}")
        head = head.strip()
        if head == "poisson":
            return OffspringModel.poisson(_parse_number(body))
        if head == "table":
            probs: dict[int, float] = {}
            for part in body.split(","):
                key, eq, val = part.partition("=")
                if not eq:
                    raise InvalidDistribution(f"bad table entry {part!r}")
                try:
                    k = int(key)
                except ValueError as exc:
                    raise InvalidDistribution(f"bad table key {key!r}") from exc
                if k in probs:
                    raise InvalidDistribution(f"duplicate table key {k}")
                probs[k] = _parse_number(val)
            return OffspringModel.from_table(probs)
        raise InvalidDistribution(f"unknown model kind {head!r}")

    def __str__(self) -> str:
        if self.kind == "poisson":
            return f"poisson:{self.lam!r}"
        return "table:" + ",".join(f"{k}={p!r}" for k, p in self.table)

    # -- basic functionals -------------------------------------------------

    @property
    def mean(self) -> float:
        if self.kind == "poisson":
            return self.lam
        return math.fsum(k * p for k, p in self.table)

    def gf(self, s: float) -> float:
        """Generating function sum_n mu(n) s^n."""
        if self.kind == "poisson":
            return math.exp(self.lam * (s - 1.0))
        return math.fsum(p * s**k for k, p in self.table)

    def pmf_array(self, nmax: int) -> np.ndarray:
        """Probabilities mu(0..nmax) as an array."""
        if self.kind == "poisson":
            return stats.poisson.pmf(np.arange(nmax + 1), self.lam)
        out = np.zeros(nmax + 1)
        for k, p in self.table:
            if k <= nmax:
                out[k] = p
        return out

    def support_cap(self) -> int:
        """Index beyond which the tail mass is below _TAIL_EPS."""
        if self.kind == "poisson":
            # isf underflows to nan at these quantiles; the survival function
            # itself (regularised gamma) stays accurate, so search with it.
            n = max(8, 2 * int(self.lam))
            while stats.poisson.sf(n, self.lam) > _TAIL_EPS:
                n *= 2
            return n + 1
        return max(k for k, _ in self.table)

    @cached_property
    def extinction(self) -> float:
        return solve_extinction(self)

    # -- conditioned duals -------------------------------------------------

    def extinct_dual(self) -> "OffspringModel":
        """Offspring law mu_E(n) = mu(n) L^(n-1) of the dying-out tree."""
        if self.mean <= 1.0:
            raise SubcriticalModel("extinct dual needs mean > 1")
        ext = self.extinction
        if ext == 0.0:
            raise NoExtinction("extinction probability is 0; no dying-out trees exist")
        if self.kind == "poisson":
            return OffspringModel.poisson(self.lam * ext)
        return OffspringModel(
            kind="table",
            table=tuple((k, p * ext ** (k - 1)) for k, p in self.table),
        )

    def survivor_marginal_pmf(self, nmax: int) -> np.ndarray:
        """Marginal child-count law mu(n)(1-L^n)/(1-L) of a survivor vertex."""
        ext = self.extinction
        mu = self.pmf_array(nmax)
        if ext == 0.0:
            out = mu.copy()
            out[0] = 0.0
            # mu(0) = 0 whenever L = 0, so nothing to renormalise.
            return out
        n = np.arange(nmax + 1)
        return mu * (1.0 - ext**n) / (1.0 - ext)


def solve_extinction(model: OffspringModel, tol: float = 1e-14) -> float:
    """Smallest fixed point of the generating function in [0, 1].

    Monotone fixed-point iteration from 0 converges upward to the smallest
    root; once per-iteration progress drops below tol/10 the remaining gap is
    closed by bisection on g(s) - s, which is positive below the smallest
    root and negative between it and 1 in the supercritical case.
    """
    if not tol > 0.0:
        raise InvalidDistribution(f"tol must be positive, got {tol}")
    if model.mean <= 1.0:
        return 1.0
    if model.gf(0.0) == 0.0:
        return 0.0

    s = 0.0
    s_next = model.gf(s)
    for _ in range(100_000):
        if s_next - s < tol / 10.0:
            break
        s = s_next
        s_next = model.gf(s)
    if s_next == s:
        return s

    lo = s  # g(lo) > lo on this side
    hi = 0.5 * (s_next + 1.0)
    while model.gf(hi) - hi >= 0.0:
        if 1.0 - hi < 4.0 * np.finfo(float).eps:
            return hi  # root indistinguishable from 1 at float resolution
        hi = 0.5 * (hi + 1.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if model.gf(mid) - mid > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Budgets and the tree arena
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenerationBudget:
    """Breadth-first growth budget.

    Vertices at depth < max_depth get their children drawn; vertices at
    depth max_depth, or cut by the vertex cap, stay on the frontier.
    """

    max_depth: int
    max_vertices: int = 50_000_000

    def __post_init__(self):
        if self.max_vertices < 1:
            raise InvalidDistribution("budget.max_vertices must be >= 1")
        if self.max_depth < 0:
            raise InvalidDistribution("budget.max_depth must be >= 0")


@dataclass
class SampledTree:
    """Arena-backed rooted tree with survivor/extinct type tags.

    Children of one vertex occupy a contiguous id block; n_children[v] == -1
    marks a frontier vertex (children not drawn).  Instances are treated as
    immutable after generation; growing a tree means regenerating with a
    larger budget, which reproduces the shared prefix bit for bit because all
    randomness is positional.
    """

    parent: np.ndarray        # int32, -1 at the root
    depth: np.ndarray         # int32
    n_children: np.ndarray    # int32, -1 on the frontier
    first_child: np.ndarray   # int64, meaningful where n_children > 0
    type_tag: np.ndarray      # int8
    key: np.ndarray           # uint64 positional randomness key
    model: OffspringModel
    conditioning: str
    seed: int
    sample_index: int
    budget: GenerationBudget
    root: int = 0

    @property
    def n_vertices(self) -> int:
        return int(self.parent.shape[0])

    @property
    def frontier(self) -> np.ndarray:
        return np.flatnonzero(self.n_children < 0)

    @property
    def is_complete(self) -> bool:
        return not np.any(self.n_children < 0)

    def children(self, v: int) -> np.ndarray:
        nc = int(self.n_children[v])
        if nc <= 0:
            return np.empty(0, dtype=np.int64)
        start = int(self.first_child[v])
        return np.arange(start, start + nc, dtype=np.int64)

    def complete_radius(self) -> int:
        """Largest r such that every vertex at depth < r is expanded.

        All vertices at depth r then exist and every degree at depth r-1 is
        known.  Complete trees report their max depth + 1.
        """
        fr = self.frontier
        if fr.size == 0:
            return int(self.depth.max(initial=0)) + 1
        return int(self.depth[fr].min())

    def degrees(self) -> np.ndarray:
        """Graph degree (parent edge plus drawn children); -1 on the frontier."""
        deg = self.n_children + (np.arange(self.n_vertices) != self.root)
        deg[self.n_children < 0] = -1
        return deg.astype(np.int64)

    def adjacency_csr(self):
        """Symmetric 0/1 adjacency over all existing vertices (scipy CSR)."""
        from scipy import sparse

        child = np.flatnonzero(self.parent >= 0)
        par = self.parent[child]
        rows = np.concatenate([par, child])
        cols = np.concatenate([child, par])
        data = np.ones(rows.shape[0], dtype=np.float64)
        n = self.n_vertices
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


class _Grow:
    """Append-only numpy array with doubling growth."""

    def __init__(self, dtype, cap=1024):
        self.arr = np.empty(cap, dtype=dtype)
        self.n = 0

    def extend(self, values):
        m = len(values)
        while self.n + m > self.arr.shape[0]:
            self.arr = np.concatenate([self.arr, np.empty_like(self.arr)])
        self.arr[self.n : self.n + m] = values
        self.n += m

    def view(self):
        return self.arr[: self.n]


def _segment_local_index(counts: np.ndarray) -> np.ndarray:
    """For segments of the given lengths, the 0-based index within each."""
    total = int(counts.sum())
    starts = np.cumsum(counts) - counts
    return np.arange(total, dtype=np.int64) - np.repeat(starts, counts)


class _Sampler:
    """Inversion tables for one model under a fixed conditioning."""

    def __init__(self, model: OffspringModel, conditioning: str):
        self.model = model
        self.conditioning = conditioning
        nmax = model.support_cap()
        self.extinction = (
            model.extinction if conditioning in ("survivor", "extinct") else None
        )
        self.extinct_cdf = None
        if conditioning == "extinct":
            pmf = model.extinct_dual().pmf_array(nmax)
        elif conditioning == "survivor":
            pmf = model.survivor_marginal_pmf(nmax)
            if self.extinction > 0.0:
                self.extinct_cdf = np.minimum(
                    np.cumsum(model.extinct_dual().pmf_array(nmax)), 1.0
                )
            self._binom_cdfs: dict[int, np.ndarray] = {}
        else:
            pmf = model.pmf_array(nmax)
        self.cdf = np.minimum(np.cumsum(pmf), 1.0)

    def draw_counts(self, u: np.ndarray, cdf=None) -> np.ndarray:
        table = self.cdf if cdf is None else cdf
        idx = np.searchsorted(table, u, side="right")
        return np.minimum(idx, table.shape[0] - 1).astype(np.int32)

    def survivor_sizes(self, n: np.ndarray, u: np.ndarray) -> np.ndarray:
        """|U| ~ Binomial(n, 1-L) conditioned >= 1, by inversion per n value."""
        out = np.empty(n.shape[0], dtype=np.int32)
        for nv in np.unique(n):
            nv = int(nv)
            cdf = self._binom_cdfs.get(nv)
            if cdf is None:
                k = np.arange(1, nv + 1)
                pmf = stats.binom.pmf(k, nv, 1.0 - self.extinction)
                denom = 1.0 - self.extinction**nv
                cdf = np.minimum(np.cumsum(pmf / denom), 1.0)
                self._binom_cdfs[nv] = cdf
            mask = n == nv
            idx = np.searchsorted(cdf, u[mask], side="right")
            out[mask] = 1 + np.minimum(idx, nv - 1)
        return out


_SAMPLER_CACHE: dict[tuple[OffspringModel, str], _Sampler] = {}


def _sampler(model: OffspringModel, conditioning: str) -> _Sampler:
    key = (model, conditioning)
    samp = _SAMPLER_CACHE.get(key)
    if samp is None:
        samp = _SAMPLER_CACHE[key] = _Sampler(model, conditioning)
    return samp


def _level_counts(samp: _Sampler, two_type: bool, keys, types) -> np.ndarray:
    """Child counts for a batch of expanding vertices, one positional draw each."""
    u = keyrng.unit_array(keys, keyrng.TAG_CHILD_COUNT)
    if not two_type:
        return samp.draw_counts(u)
    counts = np.empty(keys.shape[0], dtype=np.int32)
    s = types == TYPE_S
    counts[s] = samp.draw_counts(u[s])
    counts[~s] = samp.draw_counts(u[~s], cdf=samp.extinct_cdf)
    return counts


def _level_children(samp, two_type, keys, types, counts, fill_type):
    """Keys, type tags and parent slots for the children of a parent batch.

    Independent of how parents are batched: every draw is a pure function of
    the parent's positional key.
    """
    m = int(counts.sum())
    gid = np.repeat(np.arange(counts.shape[0]), counts)
    slots = _segment_local_index(counts) + 1
    child_key = keyrng.child_keys(keys[gid], slots)
    if not two_type:
        return child_key, np.full(m, fill_type, dtype=np.int8), gid

    ctype = np.full(m, TYPE_E, dtype=np.int8)
    s_child = types[gid] == TYPE_S
    if np.any(s_child):
        u_surv = keyrng.unit_array(keys, keyrng.TAG_SURVIVOR_COUNT)
        surv_counts = np.zeros(counts.shape[0], dtype=np.int32)
        s_lvl = types == TYPE_S
        surv_counts[s_lvl] = samp.survivor_sizes(counts[s_lvl], u_surv[s_lvl])
        # Rank each S parent's children by a positional uniform;
        # the |U| lowest ranks form the uniform surviving subset.
        sg = gid[s_child]
        r = keyrng.unit_array(child_key[s_child], keyrng.TAG_TYPE_RANK)
        order = np.lexsort((r, sg))
        sg_sorted = sg[order]
        seg_starts = np.flatnonzero(np.r_[True, sg_sorted[1:] != sg_sorted[:-1]])
        seg_lens = np.diff(np.append(seg_starts, sg.shape[0]))
        rank_sorted = np.arange(sg.shape[0]) - np.repeat(seg_starts, seg_lens)
        ranks = np.empty(sg.shape[0], dtype=np.int64)
        ranks[order] = rank_sorted
        picked = ranks < surv_counts[sg]
        sub = ctype[s_child]
        sub[picked] = TYPE_S
        ctype[s_child] = sub
    return child_key, ctype, gid


def _generate(
    model: OffspringModel,
    seed: int,
    sample_index: int,
    conditioning: str,
    budget: GenerationBudget,
    root_type: int,
) -> SampledTree:
    """Level-batched breadth-first generation under the positional key scheme."""
    samp = _sampler(model, conditioning)
    two_type = conditioning == "survivor" and samp.extinction > 0.0

    parent = _Grow(np.int32)
    depth = _Grow(np.int32)
    n_children = _Grow(np.int32)
    first_child = _Grow(np.int64)
    type_tag = _Grow(np.int8)
    key = _Grow(np.uint64)

    parent.extend([-1])
    depth.extend([0])
    n_children.extend([-1])
    first_child.extend([0])
    type_tag.extend([root_type])
    key.extend([np.uint64(keyrng.root_key(seed, sample_index))])

    fill_type = TYPE_E if conditioning == "extinct" else root_type
    level = np.array([0], dtype=np.int64)
    d = 0
    while level.size > 0 and d < budget.max_depth:
        lvl_keys = key.view()[level]
        lvl_types = type_tag.view()[level]
        counts = _level_counts(samp, two_type, lvl_keys, lvl_types)

        # Vertex cap: expand the longest level prefix that fits, then stop.
        total_after = parent.n + np.cumsum(counts, dtype=np.int64)
        fits = total_after <= budget.max_vertices
        cut = not bool(fits.all())
        if cut:
            keep = int(np.searchsorted(~fits, True))
            if keep == 0:
                break
            level = level[:keep]
            counts = counts[:keep]
            lvl_keys = lvl_keys[:keep]
            lvl_types = lvl_types[:keep]

        m = int(counts.sum())
        nc_arr = n_children.view()
        nc_arr[level] = counts
        starts = parent.n + np.cumsum(counts, dtype=np.int64) - counts
        fc_arr = first_child.view()
        fc_arr[level] = starts

        if m > 0:
            child_key, ctype, gid = _level_children(
                samp, two_type, lvl_keys, lvl_types, counts, fill_type
            )
            base = parent.n
            parent.extend(level[gid].astype(np.int32))
            depth.extend(np.full(m, d + 1, dtype=np.int32))
            n_children.extend(np.full(m, -1, dtype=np.int32))
            first_child.extend(np.zeros(m, dtype=np.int64))
            type_tag.extend(ctype)
            key.extend(child_key)
            level = np.arange(base, base + m, dtype=np.int64)
        else:
            level = np.empty(0, dtype=np.int64)
        d += 1
        if cut:
            break

    return SampledTree(
        parent=parent.view().copy(),
        depth=depth.view().copy(),
        n_children=n_children.view().copy(),
        first_child=first_child.view().copy(),
        type_tag=type_tag.view().copy(),
        key=key.view().copy(),
        model=model,
        conditioning=conditioning,
        seed=seed,
        sample_index=sample_index,
        budget=budget,
    )


def sample_unconditional(
    model: OffspringModel,
    rng_seed: int,
    budget: GenerationBudget,
    sample_index: int = 0,
) -> SampledTree:
    """Plain branching tree; budget cuts show up as frontier, never as errors."""
    return _generate(model, rng_seed, sample_index, "none", budget, UNTYPED)


def sample_survivor(
    model: OffspringModel,
    rng_seed: int,
    budget: GenerationBudget,
    sample_index: int = 0,
) -> SampledTree:
    """Tree conditioned on survival via the two-type construction."""
    if model.mean <= 1.0:
        raise SubcriticalModel(f"survivor conditioning needs mean > 1, got {model.mean}")
    return _generate(model, rng_seed, sample_index, "survivor", budget, TYPE_S)


def sample_extinct(
    model: OffspringModel,
    rng_seed: int,
    size_cap: int = 100_000,
    sample_index: int = 0,
) -> SampledTree:
    """Finite tree with the law of the original conditioned to die out."""
    if model.mean <= 1.0:
        raise SubcriticalModel(f"extinct conditioning needs mean > 1, got {model.mean}")
    if model.extinction == 0.0:
        raise NoExtinction("model has no leaves; extinction never happens")
    budget = GenerationBudget(max_depth=size_cap, max_vertices=size_cap)
    tree = _generate(model, rng_seed, sample_index, "extinct", budget, TYPE_E)
    if not tree.is_complete:
        raise SizeCapExceeded(f"dying-out tree exceeded size cap {size_cap}")
    return tree


# ---------------------------------------------------------------------------
# Size-only sampling (no arena): total progeny of dying-out trees
# ---------------------------------------------------------------------------


def sample_extinct_sizes(
    model: OffspringModel,
    n_samples: int,
    rng_seed: int,
    size_cap: int = 1_000_000,
    start_index: int = 0,
):
    """Total progeny |T| for n_samples dying-out trees, batched.

    Runs the mu_E generation process per sample without materialising parent
    arrays.  Draws use the same positional vertex keys as sample_extinct, so
    sizes agree bit for bit with materialised trees at the same index and do
    not depend on batching.  Returns (sizes, capped); capped samples stopped
    at size_cap and their true size is at least the reported one.
    """
    if model.mean <= 1.0:
        raise SubcriticalModel("size sampling needs mean > 1")
    if model.extinction == 0.0:
        raise NoExtinction("model has no leaves; extinction never happens")
    samp = _sampler(model, "extinct")

    idx = np.arange(start_index, start_index + n_samples, dtype=np.uint64)
    alive_keys = keyrng.root_keys_array(rng_seed, idx)
    alive_ids = np.arange(n_samples, dtype=np.int64)

    sizes = np.ones(n_samples, dtype=np.int64)
    capped = np.zeros(n_samples, dtype=bool)
    while alive_ids.size > 0:
        u = keyrng.unit_array(alive_keys, keyrng.TAG_CHILD_COUNT)
        counts = samp.draw_counts(u)
        np.add.at(sizes, alive_ids, counts.astype(np.int64))
        gid = np.repeat(np.arange(alive_ids.shape[0]), counts)
        slots = _segment_local_index(counts) + 1
        alive_keys = keyrng.child_keys(alive_keys[gid], slots)
        alive_ids = alive_ids[gid]
        over = sizes[alive_ids] >= size_cap
        if np.any(over):
            capped[alive_ids[over]] = True
            alive_keys = alive_keys[~over]
            alive_ids = alive_ids[~over]
    return sizes, capped


def sample_extinct_root_degrees(
    model: OffspringModel, n_samples: int, rng_seed: int, start_index: int = 0
) -> np.ndarray:
    """Root child counts of dying-out trees (first queue draw of each sample)."""
    if model.mean <= 1.0:
        raise SubcriticalModel("needs mean > 1")
    if model.extinction == 0.0:
        raise NoExtinction("model has no leaves; extinction never happens")
    samp = _sampler(model, "extinct")
    idx = np.arange(start_index, start_index + n_samples, dtype=np.uint64)
    keys = keyrng.root_keys_array(rng_seed, idx)
    u = keyrng.unit_array(keys, keyrng.TAG_CHILD_COUNT)
    return samp.draw_counts(u)


@dataclass(frozen=True)
class ProgenyTailEstimate:
    threshold: int
    probability: float
    stderr: float
    n_samples: int


def progeny_tail(
    model: OffspringModel, M: int, n_samples: int, rng_seed: int
) -> ProgenyTailEstimate:
    """Monte Carlo estimate of P(|T| >= M | T finite)."""
    if M < 1:
        raise InvalidDistribution("threshold must be >= 1")
    cap = max(2 * M, 4096)
    sizes, capped = sample_extinct_sizes(model, n_samples, rng_seed, size_cap=cap)
    hits = (sizes >= M) | capped
    p = float(np.mean(hits))
    stderr = math.sqrt(p * (1.0 - p) / n_samples)
    return ProgenyTailEstimate(threshold=M, probability=p, stderr=stderr, n_samples=n_samples)
