"""Simple random walk on sampled branching trees.

Per-tree return probabilities are exact: a length-t loop at the root never
leaves the depth-floor(t/2) ball, so t sparse applications of the transition
operator restricted to that ball lose nothing.  Annealed curves average the
exact values where the ball is generatable and switch to a last-passage
estimator beyond: one lazily expanded walk per tree, and the estimate for
time t is u_m(X_{t-m}) with u_m(y) = deg(o)/deg(y) * (P^m delta_o)(y), which
by reversibility equals P^m(y, o).  The estimator is unbiased at every time
and inherits the walk parity, so odd-time estimates stay exactly zero.

Continuous-time returns use uniformization of the ball-restricted generator
with certified Poisson truncation and escape bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse, stats

from . import keyrng
from .branching import (
    TYPE_E,
    TYPE_S,
    UNTYPED,
    GenerationBudget,
    OffspringModel,
    SampledTree,
    _generate,
    _Grow,
    _level_children,
    _level_counts,
    _sampler,
    _segment_local_index,
)
from .errors import (
    BudgetExceeded,
    HorizonTooShort,
    InsufficientRadius,
    InvalidParams,
    NoExtinction,
    NonpositiveEstimate,
    SubcriticalModel,
)
from .textio import fmt_float

_CONDITIONINGS = {"survivor": "survivor", "unconditional": "none", "extinct": "extinct"}

# Replica stride in the walk tag space; walks longer than this are rejected.
_WALK_STRIDE = 1 << 21

# Per-level width of the killed deep ball used for thin trees; traps are
# narrow by selection, so the cap costs almost nothing while keeping the
# batched operator small.
_THIN_WIDTH = 128


@dataclass(frozen=True)
class ReturnCurve:
    """Return probability estimates over a time grid.

    times is an integer array for discrete time and a float array for
    continuous time; estimates and stderrs align with it.  n_trees is the
    ensemble size behind every estimate.
    """

    times: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray
    n_trees: int
    model_tag: str

    def __post_init__(self):
        times = np.asarray(self.times)
        if times.dtype.kind not in "iuf":
            raise InvalidParams("times must be numeric")
        if times.dtype.kind == "f":
            times = times.astype(np.float64)
        else:
            times = times.astype(np.int64)
        est = np.asarray(self.estimates, dtype=np.float64)
        err = np.asarray(self.stderrs, dtype=np.float64)
        if not (times.shape == est.shape == err.shape) or times.ndim != 1:
            raise InvalidParams("times, estimates and stderrs must align")
        if times.size and np.any(np.diff(times) <= 0):
            raise InvalidParams("times must be strictly increasing")
        if times.size and times[0] < 0:
            raise InvalidParams("times must be nonnegative")
        if np.any(est < 0.0) or np.any(est > 1.0):
            raise InvalidParams("estimates must lie in [0, 1]")
        if times.dtype.kind in "iu":
            odd = times.astype(np.int64) % 2 == 1
            if np.any(est[odd] != 0.0):
                raise InvalidParams("odd-time estimates must be exactly zero")
        zero = times == 0
        if np.any(est[zero] != 1.0):
            raise InvalidParams("the time-zero estimate must be exactly one")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "estimates", est)
        object.__setattr__(self, "stderrs", err)

    @property
    def is_discrete(self) -> bool:
        return self.times.dtype.kind in "iu"

    def at(self, t) -> float:
        idx = np.flatnonzero(self.times == t)
        if idx.size == 0:
            raise InvalidParams(f"no estimate at time {t}")
        return float(self.estimates[idx[0]])


@dataclass(frozen=True)
class ExponentFit:
    """log(-log p) = slope * log t + intercept over fit_range."""

    slope: float
    intercept: float
    r_squared: float
    fit_range: tuple


@dataclass(frozen=True)
class WalkPath:
    """Vertex ids X_0 .. X_t of one walk; ids refer to the tree it ran on."""

    positions: np.ndarray

    @property
    def t(self) -> int:
        return int(self.positions.shape[0]) - 1


@dataclass(frozen=True)
class CtReturn:
    """Continuous-time return value with a certified truncation error bound.

    The propagated Monte-Carlo stderr of a mixture input is kept apart from
    error_bound, which only holds certified (deterministic) terms.
    """

    value: float
    error_bound: float
    stderr: float = 0.0


# ---------------------------------------------------------------------------
# ball operators
# ---------------------------------------------------------------------------


def _ball_adjacency(parent, depth, n_children, first_child, radius):
    """Adjacency of the depth<=radius ball, plus true degrees and vertex ids.

    Rows at depth exactly radius keep only their parent edge; their child
    edges leave the ball and are dropped.  Every ball vertex must be
    expanded (degree known), which callers check.
    """
    ids = np.flatnonzero(depth <= radius)
    nb = ids.shape[0]
    loc = np.full(parent.shape[0], -1, dtype=np.int64)
    loc[ids] = np.arange(nb)
    hasp = parent[ids] >= 0
    deg = n_children[ids].astype(np.float64) + hasp

    rows_p = np.flatnonzero(hasp)
    cols_p = loc[parent[ids[rows_p]]]

    inner = np.flatnonzero(depth[ids] < radius)
    cnt = n_children[ids[inner]].astype(np.int64)
    rows_c = np.repeat(inner, cnt)
    child_ids = np.repeat(first_child[ids[inner]], cnt) + _segment_local_index(cnt)
    cols_c = loc[child_ids]

    rows = np.concatenate([rows_p, rows_c])
    cols = np.concatenate([cols_p, cols_c])
    A = sparse.csr_matrix(
        (np.ones(rows.shape[0]), (rows, cols)), shape=(nb, nb)
    )
    return A, deg, ids


def _ball_transition(parent, depth, n_children, first_child, radius):
    """Row-substochastic simple-walk operator on the depth<=radius ball.

    Dropping the outward mass is exact for root returns up to time 2*radius:
    a packet crossing into depth radius+1 cannot be back at the root within
    that horizon.
    """
    A, deg, ids = _ball_adjacency(parent, depth, n_children, first_child, radius)
    A = A.tocoo()
    P = sparse.csr_matrix(
        (1.0 / deg[A.row], (A.row, A.col)), shape=A.shape
    )
    return P, deg, ids


def return_prob_exact(tree: SampledTree, t: int) -> float:
    """Probability that the walk from the root is back at the root after t steps.

    Exact up to floating-point rounding.  Requires every vertex within
    distance floor(t/2) of the root to be expanded; odd times short-circuit
    to zero because trees are bipartite.
    """
    if t < 0:
        raise InvalidParams("time must be >= 0")
    if t == 0:
        return 1.0
    if t % 2 == 1:
        return 0.0
    r = t // 2
    if not tree.is_complete and tree.complete_radius() <= r:
        raise InsufficientRadius(
            f"return at t={t} needs every vertex within distance {r} expanded"
        )
    P, deg, ids = _ball_transition(
        tree.parent, tree.depth, tree.n_children, tree.first_child, r
    )
    row = int(np.searchsorted(ids, tree.root))
    p = np.zeros(ids.shape[0])
    p[row] = 1.0
    for _ in range(t):
        p = p @ P
    return float(p[row])


def _thin_operator(tree: SampledTree, level_cap: int | None = None):
    """Killed-walk transition on the known ball of a generated tree.

    With level_cap, only the first level_cap vertices per depth level (in
    generation order, ancestors kept) survive; the walk is killed on the
    rest.  Any such restriction only removes path mass, so root returns
    stay lower bounds while the narrow deep structure that carries trapped
    mass fits comfortably under the cap.  Requires the vertex ids to be in
    breadth-first order, which generated trees satisfy.  The root is row 0.
    """
    if tree.is_complete:
        radius = int(tree.depth.max())
    else:
        radius = tree.complete_radius() - 1
    P, deg, ids = _ball_transition(
        tree.parent, tree.depth, tree.n_children, tree.first_child, radius
    )
    if level_cap is None:
        return P
    dep = tree.depth[ids]
    starts = np.flatnonzero(np.r_[True, dep[1:] != dep[:-1]])
    lens = np.diff(np.append(starts, dep.shape[0]))
    rank = np.arange(dep.shape[0]) - np.repeat(starts, lens)
    kept = rank < level_cap
    loc = np.full(int(ids[-1]) + 1, -1, dtype=np.int64)
    loc[ids] = np.arange(ids.shape[0])
    par_row = np.where(tree.parent[ids] >= 0, loc[tree.parent[ids]], 0)
    for lvl in range(1, starts.shape[0]):
        a, b = starts[lvl], starts[lvl] + lens[lvl]
        kept[a:b] &= kept[par_row[a:b]]
    K = np.flatnonzero(kept)
    return P[K][:, K].tocsr()


def _dirichlet_returns(
    tree: SampledTree, times: np.ndarray, level_cap: int | None = None
) -> np.ndarray:
    """Root returns of the walk killed outside the (possibly width-capped)
    known ball: per-tree lower bounds, exact while floor(t/2) fits inside,
    and strictly positive at every even time as long as the root has an
    edge."""
    P = _thin_operator(tree, level_cap)
    p = np.zeros(P.shape[0])
    p[0] = 1.0
    out = np.zeros(times.shape[0])
    want = {int(t): j for j, t in enumerate(times)}
    if 0 in want:
        out[want[0]] = 1.0
    for s in range(1, int(times[-1]) + 1):
        p = p @ P
        j = want.get(s)
        if j is not None:
            out[j] = p[0]
    return out


# ---------------------------------------------------------------------------
# forest arena: many lazily expanded trees in flat arrays
# ---------------------------------------------------------------------------


class _Arena:
    """Forest of positionally keyed trees, expanded on demand.

    The per-vertex draws are the same pure functions of (seed, sample index,
    position) that the branching sampler uses, so each tree here equals the
    tree sample_* would build at the same index; only the storage order of
    lazily reached vertices differs.
    """

    def __init__(self, model, conditioning, rng_seed, sample_indices, cap):
        self.samp = _sampler(model, conditioning)
        self.two_type = conditioning == "survivor" and self.samp.extinction > 0.0
        if conditioning == "survivor":
            root_type = TYPE_S
        elif conditioning == "extinct":
            root_type = TYPE_E
        else:
            root_type = UNTYPED
        self.fill_type = TYPE_E if conditioning == "extinct" else root_type
        self.indices = np.asarray(sample_indices, dtype=np.int64)
        n = self.indices.shape[0]
        self.cap = int(cap)
        self.sizes = np.ones(n, dtype=np.int64)

        self.par = _Grow(np.int64)
        self.dep = _Grow(np.int32)
        self.nch = _Grow(np.int32)
        self.fc = _Grow(np.int64)
        self.typ = _Grow(np.int8)
        self.key = _Grow(np.uint64)
        self.tw = _Grow(np.int32)

        self.par.extend(np.full(n, -1, dtype=np.int64))
        self.dep.extend(np.zeros(n, dtype=np.int32))
        self.nch.extend(np.full(n, -1, dtype=np.int32))
        self.fc.extend(np.zeros(n, dtype=np.int64))
        self.typ.extend(np.full(n, root_type, dtype=np.int8))
        self.key.extend(keyrng.root_keys_array(rng_seed, self.indices.astype(np.uint64)))
        self.tw.extend(np.arange(n, dtype=np.int32))

    @property
    def n(self) -> int:
        return self.par.n

    def expand(self, vs: np.ndarray) -> None:
        """Draw and append the children of the unexpanded vertices vs."""
        keys = self.key.view()[vs]
        types = self.typ.view()[vs]
        counts = _level_counts(self.samp, self.two_type, keys, types)
        tws = self.tw.view()[vs]
        np.add.at(self.sizes, tws, counts.astype(np.int64))
        over = self.sizes[tws] > self.cap
        if np.any(over):
            bad = int(self.indices[tws[np.argmax(over)]])
            raise BudgetExceeded(
                f"tree at sample index {bad} exceeded the {self.cap} vertex cap"
            )
        base = self.par.n
        starts = base + np.cumsum(counts, dtype=np.int64) - counts
        self.nch.view()[vs] = counts
        self.fc.view()[vs] = starts
        m = int(counts.sum())
        if m == 0:
            return
        child_key, ctype, gid = _level_children(
            self.samp, self.two_type, keys, types, counts, self.fill_type
        )
        self.par.extend(vs[gid])
        self.dep.extend(self.dep.view()[vs][gid] + 1)
        self.nch.extend(np.full(m, -1, dtype=np.int32))
        self.fc.extend(np.zeros(m, dtype=np.int64))
        self.typ.extend(ctype)
        self.key.extend(child_key)
        self.tw.extend(tws[gid])

    def step(self, pos: np.ndarray, walk_keys: np.ndarray, tags) -> np.ndarray:
        """One simple-walk step per walker, expanding vertices on first visit."""
        nch = self.nch.view()
        fresh = pos[nch[pos] < 0]
        if fresh.size:
            self.expand(np.unique(fresh))
        par = self.par.view()
        nch = self.nch.view()
        fc = self.fc.view()
        hasp = (par[pos] >= 0).astype(np.int64)
        deg = nch[pos].astype(np.int64) + hasp
        u = keyrng.unit_array(walk_keys, tags)
        r = np.minimum((u * deg).astype(np.int64), np.maximum(deg - 1, 0))
        go_up = (hasp > 0) & (r == 0)
        new = np.where(go_up, par[pos], fc[pos] + r - hasp)
        # a childless root has nowhere to go; the walk is stuck there
        return np.where(deg > 0, new, pos)


def _resolve_conditioning(model: OffspringModel, conditioning: str) -> str:
    internal = _CONDITIONINGS.get(conditioning)
    if internal is None:
        raise InvalidParams(
            f"conditioning must be one of {sorted(_CONDITIONINGS)}, got {conditioning!r}"
        )
    if internal in ("survivor", "extinct") and model.mean <= 1.0:
        raise SubcriticalModel(f"{conditioning} conditioning needs mean > 1")
    if internal == "extinct" and model.extinction == 0.0:
        raise NoExtinction("model has no leaves; extinction never happens")
    return internal


class _Kahan:
    """Compensated accumulator; adding chunk partials in a fixed order makes
    the reduction bit-reproducible however the chunks were computed."""

    def __init__(self, n: int):
        self.s = np.zeros(n)
        self.c = np.zeros(n)

    def add(self, x: np.ndarray) -> None:
        y = x - self.c
        t = self.s + y
        self.c = (t - self.s) - y
        self.s = t


def annealed_return(
    model: OffspringModel,
    times,
    n_trees: int,
    rng_seed: int,
    conditioning: str = "survivor",
    *,
    smoothing_radius: int = 6,
    walkers: int = 1,
    chunk_trees: int = 4096,
    max_tree_vertices: int = 1_000_000,
    start_index: int = 0,
    thin_ball_cap: int = 20,
    thin_ball_vertices: int = 32768,
) -> ReturnCurve:
    """Monte-Carlo annealed return curve over n_trees independent trees.

    Times up to 2*smoothing_radius use the exact per-tree ball probability,
    so their only variance is tree randomness; later times average the
    unbiased last-passage walk estimate, `walkers` independent walks per
    tree.  Trees that die inside the eager ball are exact at every time.

    Two per-tree refinements keep deep times meaningful.  Trees whose
    depth-smoothing_radius ball has at most thin_ball_cap vertices are the
    trap candidates that dominate late returns; naive walkers almost never
    score on them, so their returns come instead from the killed-walk lower
    bound on a ball grown to thin_ball_vertices vertices
    (strictly positive at every even time, exact until the walk can feel
    the cut).  Dead trees iterate their exact transition matrix instead of
    walking.  Set thin_ball_cap to 0 to disable the substitution.
    """
    internal = _resolve_conditioning(model, conditioning)
    times = np.asarray(times, dtype=np.int64)
    if times.ndim != 1 or times.size == 0:
        raise InvalidParams("need a nonempty 1-d time grid")
    if np.any(times < 0) or np.any(np.diff(times) <= 0):
        raise InvalidParams("times must be sorted, distinct and nonnegative")
    if n_trees < 1:
        raise InvalidParams("need n_trees >= 1")
    if smoothing_radius < 1:
        raise InvalidParams("need smoothing_radius >= 1")
    if walkers < 1:
        raise InvalidParams("need walkers >= 1")

    m = int(smoothing_radius)
    max_t = int(times[-1])
    if max_t - m >= _WALK_STRIDE:
        raise InvalidParams(f"times beyond {_WALK_STRIDE + m} are not supported")
    s_dp = min(2 * m, max_t)
    dp_cols = {int(t): j for j, t in enumerate(times) if 0 < t <= s_dp}
    est_cols = {int(t) - m: j for j, t in enumerate(times) if t > s_dp}
    need_u = bool(est_cols)
    late = times[times > s_dp].astype(np.int64)
    if internal == "survivor":
        deep_root = TYPE_S
    elif internal == "extinct":
        deep_root = TYPE_E
    else:
        deep_root = UNTYPED
    deep_budget = GenerationBudget(max_depth=4096, max_vertices=int(thin_ball_vertices))

    acc_sum = _Kahan(times.size)
    acc_sq = _Kahan(times.size)
    acc_min = np.full(times.size, np.inf)
    acc_max = np.full(times.size, -np.inf)

    for c0 in range(0, n_trees, int(chunk_trees)):
        nc = min(int(chunk_trees), n_trees - c0)
        idx = start_index + c0 + np.arange(nc, dtype=np.int64)
        arena = _Arena(model, internal, rng_seed, idx, max_tree_vertices)

        lvl_start, lvl_end = 0, nc
        for _ in range(m + 1):
            if lvl_start == lvl_end:
                break
            arena.expand(np.arange(lvl_start, lvl_end, dtype=np.int64))
            lvl_start, lvl_end = lvl_end, arena.n
        n_le = lvl_start

        vals = np.zeros((nc, times.size))
        vals[:, times == 0] = 1.0

        par_v = arena.par.view()[:arena.n]
        dep_v = arena.dep.view()[:arena.n]
        nch_v = arena.nch.view()[:arena.n]
        fc_v = arena.fc.view()[:arena.n]
        tw_v = arena.tw.view()[:arena.n]

        frontier_per_tree = np.bincount(tw_v[nch_v < 0], minlength=nc)
        complete = frontier_per_tree == 0
        thin = np.zeros(nc, dtype=bool)
        if est_cols and thin_ball_cap > 0:
            ball_sizes = np.bincount(tw_v[:n_le], minlength=nc)
            thin = ~complete & (ball_sizes <= thin_ball_cap)

        u_vec = None
        p = None
        if max_t > 0:
            P, deg, _ = _ball_transition(par_v, dep_v, nch_v, fc_v, m)
            root_deg = deg[:nc]
            p = np.zeros(n_le)
            p[:nc] = 1.0
            for s in range(1, s_dp + 1):
                p = p @ P
                if need_u and s == m:
                    scale = np.zeros(n_le)
                    np.divide(root_deg[tw_v[:n_le]], deg, out=scale, where=deg > 0)
                    u_vec = p * scale
                col = dp_cols.get(s)
                if col is not None:
                    vals[:, col] = p[:nc]

        if est_cols and np.any(complete):
            # dead trees fit inside the ball; their block of P is exact at
            # every horizon, so just keep iterating it
            sub = np.flatnonzero(complete[tw_v[:n_le]])
            Psub = P[sub][:, sub]
            psub = p[sub]
            root_pos = np.flatnonzero(sub < nc)
            root_slot = sub[root_pos]
            for s in range(s_dp + 1, max_t + 1):
                psub = psub @ Psub
                col = est_cols.get(s - m)
                if col is not None:
                    vals[root_slot, col] = psub[root_pos]

        thin_slots = np.flatnonzero(thin)
        if thin_slots.size:
            ops = []
            for slot in thin_slots:
                deep = _generate(
                    model,
                    rng_seed,
                    int(idx[slot]),
                    internal,
                    deep_budget,
                    deep_root,
                )
                ops.append(_thin_operator(deep, _THIN_WIDTH))
            Pd = sparse.block_diag(ops, format="csr")
            offs = np.cumsum([0] + [op.shape[0] for op in ops])[:-1]
            pd = np.zeros(Pd.shape[0])
            pd[offs] = 1.0
            want = {int(t): est_cols[int(t) - m] for t in late}
            for s in range(1, int(late[-1]) + 1):
                pd = pd @ Pd
                col = want.get(s)
                if col is not None:
                    vals[thin_slots, col] = pd[offs]

        alive = np.flatnonzero(~complete & ~thin)
        if est_cols and alive.size:
            w = int(walkers)
            owner = np.repeat(alive, w)
            pos = owner.copy()
            wkeys = np.repeat(arena.key.view()[alive], w)
            rep = np.tile(np.arange(w, dtype=np.uint64), alive.size)
            slot = np.arange(owner.shape[0])
            s_max = max(est_cols)
            acc = np.zeros((alive.size * w, len(est_cols)))
            cols = sorted(est_cols)
            col_of = {t: j for j, t in enumerate(cols)}
            for s in range(1, s_max + 1):
                pos = arena.step(
                    pos,
                    wkeys,
                    np.uint64(keyrng.TAG_WALK)
                    + rep * np.uint64(_WALK_STRIDE)
                    + np.uint64(s),
                )
                j = col_of.get(s)
                if j is not None:
                    inb = pos < n_le
                    acc[slot[inb], j] = u_vec[pos[inb]]
                # a walker deeper than m + (s_max - s) cannot re-enter the
                # depth-m ball by any remaining evaluation step; dropping it
                # changes nothing
                if s < s_max:
                    keep = arena.dep.view()[pos] <= m + (s_max - s)
                    if not np.all(keep):
                        pos = pos[keep]
                        wkeys = wkeys[keep]
                        rep = rep[keep]
                        slot = slot[keep]
            per_walker = acc.reshape(alive.size, w, len(cols)).mean(axis=1)
            for t_eval, j in est_cols.items():
                vals[alive, j] = per_walker[:, col_of[t_eval]]

        acc_sum.add(vals.sum(axis=0))
        acc_sq.add((vals * vals).sum(axis=0))
        np.minimum(acc_min, vals.min(axis=0), out=acc_min)
        np.maximum(acc_max, vals.max(axis=0), out=acc_max)

    mean = acc_sum.s / n_trees
    if n_trees > 1:
        var = np.maximum(acc_sq.s - n_trees * mean * mean, 0.0) / (n_trees - 1)
        # identical samples have zero variance; the subtraction above can
        # leave cancellation dust there
        var[acc_min == acc_max] = 0.0
        stderr = np.sqrt(var / n_trees)
    else:
        stderr = np.zeros(times.size)
    return ReturnCurve(
        times=times,
        estimates=np.clip(mean, 0.0, 1.0),
        stderrs=stderr,
        n_trees=n_trees,
        model_tag=f"{model}|{conditioning}",
    )


def sample_walk(
    model: OffspringModel,
    t: int,
    rng_seed: int,
    conditioning: str = "survivor",
    sample_index: int = 0,
    *,
    max_tree_vertices: int = 1_000_000,
) -> tuple[WalkPath, SampledTree]:
    """One t-step walk from the root, revealing the tree as it goes.

    Returns the path and the revealed tree; path positions are vertex ids of
    that tree.  The walk stream matches the walkers annealed_return runs, and
    the revealed tree agrees vertex for vertex with the sampler's tree at the
    same index.
    """
    internal = _resolve_conditioning(model, conditioning)
    if t < 0:
        raise InvalidParams("time must be >= 0")
    if t >= _WALK_STRIDE:
        raise InvalidParams(f"walks longer than {_WALK_STRIDE} are not supported")
    arena = _Arena(model, internal, rng_seed, np.array([sample_index]), max_tree_vertices)
    positions = np.zeros(t + 1, dtype=np.int64)
    pos = np.zeros(1, dtype=np.int64)
    wkey = arena.key.view()[:1].copy()
    for s in range(1, t + 1):
        pos = arena.step(pos, wkey, np.uint64(keyrng.TAG_WALK + s))
        positions[s] = pos[0]
    n = arena.n
    tree = SampledTree(
        parent=arena.par.view()[:n].astype(np.int32),
        depth=arena.dep.view()[:n].copy(),
        n_children=arena.nch.view()[:n].copy(),
        first_child=arena.fc.view()[:n].copy(),
        type_tag=arena.typ.view()[:n].copy(),
        key=arena.key.view()[:n].copy(),
        model=model,
        conditioning=internal,
        seed=rng_seed,
        sample_index=sample_index,
        budget=GenerationBudget(
            max_depth=int(arena.dep.view()[:n].max()) + 1,
            max_vertices=max_tree_vertices,
        ),
    )
    return WalkPath(positions=positions), tree


# ---------------------------------------------------------------------------
# continuous time
# ---------------------------------------------------------------------------

_CT_TAIL = 1e-10
_CT_ESCAPE = 1e-12


def _poisson_cutoff(mu: float, tail: float) -> int:
    k = int(mu + 10.0 * math.sqrt(mu + 1.0) + 10.0)
    while stats.poisson.sf(k, mu) > tail:
        k += max(16, k // 2)
    return k


def ct_return_mixture(curve: ReturnCurve, s: float) -> CtReturn:
    """Poisson time change of a discrete return curve.

    The curve must hold every even time 0..T; odd times carry no return
    mass, so the mixture only needs the even ones.  The reported error bound
    is the exact Poisson tail mass beyond the horizon, plus nothing else;
    the propagated input stderr is reported separately.
    """
    if s < 0:
        raise InvalidParams("time must be >= 0")
    if not curve.is_discrete:
        raise InvalidParams("mixture input must be a discrete-time curve")
    times = curve.times
    horizon = int(times[-1]) if times.size else -1
    if horizon < 2 * s + 6.0 * math.sqrt(s):
        raise HorizonTooShort(
            f"horizon {horizon} is below 2s + 6*sqrt(s) = {2 * s + 6 * math.sqrt(s):.3f}"
        )
    expected = np.arange(0, horizon + 1, 2, dtype=np.int64)
    even = times[times % 2 == 0]
    if not np.array_equal(even, expected):
        raise InvalidParams("curve must cover every even time 0..T")
    est = curve.estimates[times % 2 == 0]
    err = curve.stderrs[times % 2 == 0]
    w = stats.poisson.pmf(expected, s)
    value = float(np.dot(w, est))
    tail = float(stats.poisson.sf(horizon, s))
    return CtReturn(value=value, error_bound=tail, stderr=float(np.dot(w, err)))


def ct_return_semigroup(tree: SampledTree, s: float, variant: str = "normalized") -> CtReturn:
    """<delta_o, exp(-s G) delta_o> by uniformization on the known ball.

    G is the graph Laplacian (variant "laplacian", jump rate deg(x)) or the
    normalized Laplacian (variant "normalized", rate 1).  Works on the ball
    of known degrees; the escape probability beyond it must be certifiably
    below 1e-12, else InsufficientRadius.  The Poisson series is truncated
    once its tail is below 1e-10 and the sum of both bounds is reported.
    """
    if variant not in ("laplacian", "normalized"):
        raise InvalidParams(f"unknown variant {variant!r}")
    if s < 0:
        raise InvalidParams("time must be >= 0")
    if s == 0:
        return CtReturn(value=1.0, error_bound=0.0)
    if tree.is_complete:
        rmax = int(tree.depth.max())
    else:
        rmax = tree.complete_radius() - 1
        if rmax < 0:
            raise InsufficientRadius("tree has no expanded ball at all")
    A, deg, ids = _ball_adjacency(
        tree.parent, tree.depth, tree.n_children, tree.first_child, rmax
    )
    eta = float(deg.max())
    if eta == 0.0:
        # single vertex: the graph Laplacian is zero, so its semigroup is
        # the identity; the rate-one normalized walk has nowhere to jump
        # and is killed, matching the discrete-time kill convention that
        # keeps odd-time returns exactly zero
        if variant == "laplacian":
            return CtReturn(value=1.0, error_bound=0.0)
        return CtReturn(value=math.exp(-s), error_bound=0.0)
    mu = s * eta if variant == "laplacian" else s
    escape = 0.0
    if not tree.is_complete:
        escape = float(stats.poisson.sf(rmax, mu))
        if escape > _CT_ESCAPE:
            raise InsufficientRadius(
                f"escape bound {escape:.3e} beyond radius {rmax} exceeds {_CT_ESCAPE}"
            )
    nb = ids.shape[0]
    if variant == "laplacian":
        B = sparse.identity(nb, format="csr") - (sparse.diags(deg) - A) / eta
    else:
        B = sparse.diags(1.0 / np.maximum(deg, 1.0)) @ A
    B = B.tocsr()
    k_max = _poisson_cutoff(mu, _CT_TAIL)
    pmf = stats.poisson.pmf(np.arange(k_max + 1), mu)
    row = int(np.searchsorted(ids, tree.root))
    p = np.zeros(nb)
    p[row] = 1.0
    value = 0.0
    comp = 0.0
    for k in range(k_max + 1):
        term = pmf[k] * p[row]
        y = term - comp
        t = value + y
        comp = (t - value) - y
        value = t
        if k < k_max:
            p = p @ B
    tail = float(stats.poisson.sf(k_max, mu))
    return CtReturn(value=value, error_bound=tail + escape)


# ---------------------------------------------------------------------------
# fitting and serialization
# ---------------------------------------------------------------------------


def fit_stretch_exponent(curve: ReturnCurve, t_min, t_max) -> ExponentFit:
    """Least-squares slope of log(-log p) against log t over [t_min, t_max]."""
    if t_min <= 0 or t_max < t_min:
        raise InvalidParams("need 0 < t_min <= t_max")
    sel = (curve.times >= t_min) & (curve.times <= t_max)
    t = np.asarray(curve.times[sel], dtype=np.float64)
    p = curve.estimates[sel]
    bad = (p <= 0.0) | (p >= 1.0)
    if np.any(bad):
        raise NonpositiveEstimate(
            "estimates unusable for a stretched-exponential fit at times "
            f"{t[bad].tolist()}"
        )
    if t.size < 5:
        raise InvalidParams(f"need at least 5 points in the window, have {t.size}")
    x = np.log(t)
    y = np.log(-np.log(p))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return ExponentFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r2,
        fit_range=(t_min, t_max),
    )


def merge_curves(curves) -> ReturnCurve:
    """Pool return curves over disjoint tree ranges into one curve.

    Per-time sums of estimates and squares are reconstructed from each
    part's mean, stderr and tree count; pooled means are exact and stderrs
    match a single-pass run up to rounding.  Time grids and model tags must
    agree.
    """
    curves = list(curves)
    if not curves:
        raise InvalidParams("nothing to merge")
    first = curves[0]
    for c in curves:
        if not isinstance(c, ReturnCurve):
            raise InvalidParams(f"cannot merge {type(c).__name__}")
        if c.is_discrete != first.is_discrete or not np.array_equal(c.times, first.times):
            raise InvalidParams("curves have different time grids")
        if c.model_tag != first.model_tag:
            raise InvalidParams("curves have different model tags")
        if c.n_trees < 1:
            raise InvalidParams("curves must carry at least one tree")
    n_tot = sum(c.n_trees for c in curves)
    s1 = np.zeros(first.times.size)
    s2 = np.zeros(first.times.size)
    for c in curves:
        n = c.n_trees
        s1 += c.estimates * n
        s2 += np.square(c.stderrs) * n * (n - 1) + np.square(c.estimates) * n
    # pooled sums can round a hair past n_tot; the mean must stay a probability
    mean = np.clip(s1 / n_tot, 0.0, 1.0)
    if n_tot < 2:
        err = np.zeros_like(mean)
    else:
        var = np.maximum(s2 - n_tot * np.square(mean), 0.0) / (n_tot - 1)
        err = np.sqrt(var / n_tot)
    return ReturnCurve(
        times=first.times,
        estimates=mean,
        stderrs=err,
        n_trees=n_tot,
        model_tag=first.model_tag,
    )


def curve_to_csv(curve: ReturnCurve) -> str:
    head = "t" if curve.is_discrete else "s"
    lines = [f"{head},estimate,stderr,n_trees"]
    for t, e, se in zip(curve.times, curve.estimates, curve.stderrs):
        tcol = str(int(t)) if curve.is_discrete else fmt_float(t)
        lines.append(f"{tcol},{fmt_float(e)},{fmt_float(se)},{curve.n_trees}")
    return "\n".join(lines) + "\n"


def curve_from_csv(text: str, model_tag: str = "") -> ReturnCurve:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InvalidParams("empty curve file")
    head = lines[0].split(",")
    if head[1:] != ["estimate", "stderr", "n_trees"] or head[0] not in ("t", "s"):
        raise InvalidParams(f"unrecognized curve header {lines[0]!r}")
    discrete = head[0] == "t"
    times, est, err, counts = [], [], [], []
    for ln in lines[1:]:
        a, b, c, d = ln.split(",")
        times.append(int(a) if discrete else float(a))
        est.append(float(b))
        err.append(float(c))
        counts.append(int(d))
    if len(set(counts)) > 1:
        raise InvalidParams("inconsistent n_trees across rows")
    return ReturnCurve(
        times=np.array(times, dtype=np.int64 if discrete else np.float64),
        estimates=np.array(est),
        stderrs=np.array(err),
        n_trees=counts[0] if counts else 0,
        model_tag=model_tag,
    )
