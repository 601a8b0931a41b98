"""Config-driven experiment runner.

Eight experiments tie the library together: discrete and continuous-time
return probabilities, the extinct-ensemble spectral measure against its
explicit tail bounds, graph eigenvalue histograms, the two atom-at-zero
estimators, island decomposition audits, compression-norm audits, and the
big-island hit probability.

Determinism contract: all randomness flows from the single config seed
through per-sample key derivation, samples are reduced in index order, and
BLAS threading is pinned to one thread for the whole run, so data files are
byte identical for any worker count.  The manifest echoes the resolved
config and records version, seed and wall time; only the timing field may
differ between identical reruns.

Exit codes: 0 success, 1 runtime error, 2 config error (nothing written).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from importlib import metadata
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import (
    branching as br,
    ergraph as er,
    induced_walk as iw,
    isoperimetry as iso,
    spectra as sp,
    walks as wk,
)
from .errors import ConfigError, EmptyRegion, GwlabError
from .textio import fmt_float


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated parameters of one experiment; unused fields stay None."""

    experiment: str
    seed: int
    offspring: str | None = None
    lam: float | None = None
    conditioning: str | None = None
    times: tuple | None = None
    s_grid: tuple | None = None
    e_grid: tuple | None = None
    t_grid: tuple | None = None
    n_samples: int | None = None
    n_graphs: int | None = None
    n_hosts: int | None = None
    n_vertices: int | None = None
    method: str | None = None
    variant: str | None = None
    walkers: int | None = None
    chunk_size: int | None = None
    size_cap: int | None = None
    max_vertices: int | None = None
    horizon: int | None = None
    radius: int | None = None
    iterations: int | None = None
    binary_radius: int | None = None
    binary_radii: tuple | None = None
    q: float | None = None
    q_ladder: tuple | None = None


# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------

_REQUIRED = object()


def _as_int(path, v, lo=1, hi=None):
    if not isinstance(v, int) or isinstance(v, bool):
        raise ConfigError(f"{path}: need an integer, got {v!r}")
    if v < lo or (hi is not None and v > hi):
        span = f"[{lo}, {hi}]" if hi is not None else f"[{lo}, inf)"
        raise ConfigError(f"{path}: must lie in {span}, got {v}")
    return v


def _as_seed(path, v):
    return _as_int(path, v, lo=0, hi=2**64 - 1)


def _as_float(path, v, lo=0.0, lo_open=True, hi=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: need a number, got {v!r}")
    x = float(v)
    if not math.isfinite(x):
        raise ConfigError(f"{path}: must be finite, got {v!r}")
    if (x <= lo if lo_open else x < lo) or (hi is not None and x > hi):
        raise ConfigError(f"{path}: out of range, got {v!r}")
    return x


def _as_super_lam(path, v):
    x = _as_float(path, v)
    if x <= 1.0:
        raise ConfigError(f"{path}: needs lambda > 1, got {v!r}")
    return x


def _as_q(path, v):
    return _as_float(path, v, hi=1.0)


def _as_even(path, v):
    x = _as_int(path, v, lo=2)
    if x % 2:
        raise ConfigError(f"{path}: must be even, got {v}")
    return x


def _as_choice(options):
    def check(path, v):
        if v not in options:
            raise ConfigError(f"{path}: must be one of {sorted(options)}, got {v!r}")
        return v

    return check


def _as_offspring(path, v):
    if not isinstance(v, str):
        raise ConfigError(f"{path}: need a model string like 'poisson:2.0', got {v!r}")
    try:
        br.OffspringModel.parse(v)
    except GwlabError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return v


def _as_grid(item_check, min_len=1):
    def check(path, v):
        if not isinstance(v, (list, tuple)) or len(v) < min_len:
            raise ConfigError(f"{path}: need a list of at least {min_len} entries")
        out = tuple(item_check(f"{path}[{i}]", x) for i, x in enumerate(v))
        if any(b <= a for a, b in zip(out, out[1:])):
            raise ConfigError(f"{path}: entries must be strictly increasing")
        return out

    return check


_int_grid = _as_grid(lambda p, v: _as_int(p, v, lo=0))
_time_grid = _as_grid(lambda p, v: _as_int(p, v, lo=1))
_float_grid = _as_grid(_as_float)
_q_grid = _as_grid(_as_q)

_SCHEMAS = {
    "return-prob": {
        "offspring": (_as_offspring, _REQUIRED),
        "times": (_int_grid, _REQUIRED),
        "n_samples": (_as_int, _REQUIRED),
        "conditioning": (_as_choice(sp._CONDITIONINGS), "survivor"),
        "method": (_as_choice(("exact", "walkers")), "exact"),
        "walkers": (_as_int, 1),
        "chunk_size": (_as_int, 16384),
        "size_cap": (_as_int, 1_000_000),
    },
    "ct-return": {
        "offspring": (_as_offspring, _REQUIRED),
        "s_grid": (_float_grid, _REQUIRED),
        "n_samples": (_as_int, _REQUIRED),
        "conditioning": (_as_choice(sp._CONDITIONINGS), "extinct"),
        "horizon": (_as_even, 64),
        "size_cap": (_as_int, 1_000_000),
    },
    "lifshits-extinct": {
        "lam": (_as_super_lam, _REQUIRED),
        "e_grid": (_float_grid, _REQUIRED),
        "n_samples": (_as_int, _REQUIRED),
        "variant": (_as_choice(sp._VARIANTS), "laplacian"),
        "chunk_size": (_as_int, 200_000),
        "size_cap": (_as_int, 1_000_000),
    },
    "dos": {
        "n_vertices": (lambda p, v: _as_int(p, v, lo=2), _REQUIRED),
        "lam": (_as_float, _REQUIRED),
        "n_graphs": (_as_int, _REQUIRED),
        "e_grid": (_float_grid, _REQUIRED),
        "method": (_as_choice(er._DOS_METHODS), "auto"),
    },
    "atom-zero": {
        "lam": (_as_super_lam, _REQUIRED),
        "n_vertices": (lambda p, v: _as_int(p, v, lo=2), _REQUIRED),
        "n_graphs": (_as_int, _REQUIRED),
        "n_samples": (_as_int, _REQUIRED),
        "size_cap": (_as_int, 1_000_000),
    },
    "islands-audit": {
        "offspring": (_as_offspring, "poisson:2.0"),
        "n_hosts": (_as_int, _REQUIRED),
        "q_ladder": (_q_grid, _REQUIRED),
        "max_vertices": (_as_int, 12),
        "binary_radius": (lambda p, v: _as_int(p, v, lo=2), 5),
    },
    "norm-audit": {
        "offspring": (_as_offspring, "poisson:2.0"),
        "n_hosts": (_as_int, _REQUIRED),
        "q": (_as_q, _REQUIRED),
        "radius": (lambda p, v: _as_int(p, v, lo=2), _REQUIRED),
        "iterations": (lambda p, v: _as_int(p, v, lo=100), 1000),
        "size_cap": (_as_int, 250_000),
        "binary_radii": (_as_grid(lambda p, v: _as_int(p, v, lo=1)), (4, 6, 8)),
    },
    "bad-event": {
        "offspring": (_as_offspring, "poisson:2.0"),
        "t_grid": (_time_grid, _REQUIRED),
        "n_samples": (_as_int, _REQUIRED),
        "max_vertices": (_as_int, 200_000),
    },
}


def _cross_check(experiment, fields):
    if experiment in ("dos", "atom-zero") and fields["lam"] >= fields["n_vertices"]:
        raise ConfigError("lam: must be smaller than n_vertices")


def load_config(experiment: str, path, overrides=()) -> ExperimentConfig:
    """Read a JSON config, apply --set overrides, validate every field."""
    if experiment not in _SCHEMAS:
        raise ConfigError(f"experiment: unknown experiment {experiment!r}")
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
        try:
            raw[key] = json.loads(val)
        except json.JSONDecodeError:
            raw[key] = val

    told = raw.pop("experiment", experiment)
    if told != experiment:
        raise ConfigError(
            f"experiment: config says {told!r} but the command line says {experiment!r}"
        )
    if "seed" not in raw:
        raise ConfigError("seed: required")
    seed = _as_seed("seed", raw.pop("seed"))

    schema = _SCHEMAS[experiment]
    for key in raw:
        if key not in schema:
            raise ConfigError(f"{key}: unknown key for experiment {experiment}")
    fields = {}
    for name, (check, default) in schema.items():
        if name in raw:
            fields[name] = check(name, raw[name])
        elif default is _REQUIRED:
            raise ConfigError(f"{name}: required for experiment {experiment}")
        else:
            fields[name] = default
    _cross_check(experiment, fields)
    return ExperimentConfig(experiment=experiment, seed=seed, **fields)


# ---------------------------------------------------------------------------
# Execution plumbing
# ---------------------------------------------------------------------------


def _pmap(fn, items, workers):
    """Order-preserving map; the result is independent of the worker count."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _indexed(i, fn):
    # re-raise module errors with the failing sample index attached
    try:
        return fn()
    except GwlabError as exc:
        raise type(exc)(f"sample index {i}: {exc}") from exc


def _chunks(total, size):
    return [(start, min(size, total - start)) for start in range(0, total, size)]


def _sample_tree(model, conditioning, seed, index, depth, size_cap):
    if conditioning == "extinct":
        return br.sample_extinct(model, seed, size_cap=size_cap, sample_index=index)
    budget = br.GenerationBudget(max_depth=depth, max_vertices=size_cap)
    if conditioning == "survivor":
        return br.sample_survivor(model, seed, budget, sample_index=index)
    return br.sample_unconditional(model, seed, budget, sample_index=index)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _mean_err(values: np.ndarray):
    n = values.shape[0]
    mean = values.mean(axis=0)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, values.std(axis=0, ddof=1) / math.sqrt(n)


# ---------------------------------------------------------------------------
# Experiment runners (each returns {filename: text})
# ---------------------------------------------------------------------------


def _run_return_prob(cfg: ExperimentConfig, workers: int):
    model = br.OffspringModel.parse(cfg.offspring)
    times = np.array(cfg.times, dtype=np.int64)
    tag = f"{model}|{cfg.conditioning}"
    if cfg.method == "exact":
        depth = int(times.max()) // 2 + 1

        def one(i):
            tree = _indexed(
                i,
                lambda: _sample_tree(
                    model, cfg.conditioning, cfg.seed, i, depth, cfg.size_cap
                ),
            )
            return [_indexed(i, lambda: wk.return_prob_exact(tree, int(t))) for t in times]

        vals = np.array(_pmap(one, range(cfg.n_samples), workers))
        est, err = _mean_err(vals)
        curve = wk.ReturnCurve(
            times=times, estimates=est, stderrs=err, n_trees=cfg.n_samples,
            model_tag=tag,
        )
    else:

        def one(chunk):
            start, count = chunk
            return wk.annealed_return(
                model, times, count, cfg.seed, cfg.conditioning,
                walkers=cfg.walkers, max_tree_vertices=cfg.size_cap,
                start_index=start,
            )

        parts = _pmap(one, _chunks(cfg.n_samples, cfg.chunk_size), workers)
        curve = parts[0] if len(parts) == 1 else wk.merge_curves(parts)
    return {"return_prob.csv": wk.curve_to_csv(curve)}


def _run_ct_return(cfg: ExperimentConfig, workers: int):
    model = br.OffspringModel.parse(cfg.offspring)
    times = np.arange(0, cfg.horizon + 1, 2, dtype=np.int64)
    depth = cfg.horizon // 2 + 1
    s_grid = np.array(cfg.s_grid)

    def one(i):
        tree = _indexed(
            i,
            lambda: _sample_tree(
                model, cfg.conditioning, cfg.seed, i, depth, cfg.size_cap
            ),
        )
        probs = [_indexed(i, lambda: wk.return_prob_exact(tree, int(t))) for t in times]
        curve = wk.ReturnCurve(
            times=times, estimates=np.array(probs), stderrs=np.zeros(times.size),
            n_trees=1, model_tag="",
        )
        rows = []
        for s in s_grid:
            mix = _indexed(i, lambda: wk.ct_return_mixture(curve, float(s)))
            semi = _indexed(i, lambda: wk.ct_return_semigroup(tree, float(s)))
            rows.append(
                (
                    mix.value,
                    semi.value,
                    abs(mix.value - semi.value),
                    mix.error_bound + semi.error_bound,
                )
            )
        return rows

    vals = np.array(_pmap(one, range(cfg.n_samples), workers))
    lines = ["s,mixture,semigroup,max_abs_diff,max_error_bound,identity_ok,n_trees"]
    for j, s in enumerate(s_grid):
        mix_mean = float(vals[:, j, 0].mean())
        semi_mean = float(vals[:, j, 1].mean())
        diff = float(vals[:, j, 2].max())
        bound = float(vals[:, j, 3].max())
        ok = int(bool(np.all(vals[:, j, 2] <= vals[:, j, 3] + 1e-8)))
        lines.append(
            f"{fmt_float(float(s))},{fmt_float(mix_mean)},{fmt_float(semi_mean)},"
            f"{fmt_float(diff)},{fmt_float(bound)},{ok},{cfg.n_samples}"
        )
    return {"ct_return.csv": "\n".join(lines) + "\n"}


def _run_lifshits(cfg: ExperimentConfig, workers: int):
    model = br.OffspringModel.poisson(cfg.lam)
    grid = np.array(cfg.e_grid)

    def one(chunk):
        start, count = chunk
        return sp.root_spectral_mass(
            model, grid, count, cfg.seed, "extinct", variant=cfg.variant,
            size_cap=cfg.size_cap, start_index=start,
        )

    parts = _pmap(one, _chunks(cfg.n_samples, cfg.chunk_size), workers)
    est = parts[0] if len(parts) == 1 else sp.merge_measures(parts)
    bounds = sp.lifshits_bounds(cfg.lam)
    checks = []
    for E in grid:
        cum = est.mass_up_to(float(E))
        se = est.cum_stderr_at(float(E))
        lo = float(bounds.lower(float(E)))
        up = float(bounds.upper(float(E)))
        ok = (cum >= lo - 3.0 * se) and (cum <= up + 3.0 * se)
        checks.append(
            {
                "E": float(E),
                "cumulative": cum,
                "cum_stderr": se,
                "lower": lo,
                "upper": up,
                "ok": ok,
            }
        )
    payload = {
        "lambda": cfg.lam,
        "variant": cfg.variant,
        "n_samples": cfg.n_samples,
        "bounds": bounds.json_dict(),
        "checks": checks,
        "all_ok": all(c["ok"] for c in checks),
    }
    return {
        "lifshits_extinct.csv": sp.measure_to_csv(est),
        "lifshits_extinct.json": _json_text(payload),
    }


def _run_dos(cfg: ExperimentConfig, workers: int):
    method = er._resolve_method(cfg.method, cfg.n_vertices)
    grid = sp._validated_grid(np.array(cfg.e_grid))

    def one(g):
        graph = _indexed(
            g, lambda: er.sample_er(cfg.n_vertices, cfg.lam, cfg.seed, sample_index=g)
        )
        return _indexed(g, lambda: er.spectrum_cell_counts(graph, grid[1:], method))

    triples = _pmap(one, range(cfg.n_graphs), workers)
    acc = sp._MeasureAcc(grid.size - 1)
    scale = 1.0 / cfg.n_vertices
    for n_comp, counts, tail in triples:
        acc.add(
            np.array([n_comp * scale]),
            counts[None, :] * scale,
            np.array([tail * scale]),
        )
    return {"dos.csv": sp.measure_to_csv(acc.finalize(grid))}


def _run_atom_zero(cfg: ExperimentConfig, workers: int):
    model = br.OffspringModel.poisson(cfg.lam)

    def one(g):
        graph = _indexed(
            g, lambda: er.sample_er(cfg.n_vertices, cfg.lam, cfg.seed, sample_index=g)
        )
        return graph.n_components / cfg.n_vertices

    fracs = np.array(_pmap(one, range(cfg.n_graphs), workers))
    er_value, er_err = _mean_err(fracs)
    # the tree estimator takes the next seed so the two streams are unrelated
    bgw = er.bgw_atom_at_zero(
        model, cfg.n_samples, (cfg.seed + 1) % 2**64, size_cap=cfg.size_cap
    )
    payload = {
        "er_estimate": {
            "value": float(er_value),
            "stderr": float(er_err),
            "n_graphs": cfg.n_graphs,
            "n_vertices": cfg.n_vertices,
        },
        "bgw_estimate": {
            "value": bgw.value,
            "stderr": bgw.stderr,
            "n_samples": bgw.n_samples,
        },
        "relative_diff": abs(float(er_value) - bgw.value) / bgw.value,
    }
    return {"atom_zero.json": _json_text(payload)}


def _same_decomposition(a, b) -> bool:
    ia = sorted(tuple(np.sort(isl).tolist()) for isl in a.islands)
    ib = sorted(tuple(np.sort(isl).tolist()) for isl in b.islands)
    return ia == ib and np.array_equal(np.sort(a.ocean), np.sort(b.ocean))


def audit_islands(cfg: ExperimentConfig, workers: int = 1) -> dict:
    """Island decompositions against the exhaustive oracle plus the
    containment law across a q-ladder, on small dying-out hosts and on a
    binary ball.  Returns the report dictionary."""
    model = br.OffspringModel.parse(cfg.offspring)
    ladder = list(cfg.q_ladder)

    hosts = []
    index = 0
    scan_cap = 100 * cfg.n_hosts + 1000
    while len(hosts) < cfg.n_hosts:
        if index >= scan_cap:
            raise RuntimeError(
                f"gave up collecting hosts of at most {cfg.max_vertices} vertices "
                f"after scanning {scan_cap} samples"
            )
        tree = _indexed(
            index, lambda: br.sample_extinct(model, cfg.seed, sample_index=index)
        )
        if tree.n_vertices <= cfg.max_vertices:
            hosts.append(iso.HostGraph.from_tree(tree))
        index += 1

    def one(host):
        decs = {q: iso.islands(host, q) for q in ladder}
        mismatches = sum(
            not _same_decomposition(decs[q], iso.islands_bruteforce(host, q))
            for q in ladder
        )
        violations = 0
        for a, qa in enumerate(ladder):
            for qb in ladder[a + 1 :]:
                bigger = [set(isl.tolist()) for isl in decs[qb].islands]
                for isl in decs[qa].islands:
                    inner = set(isl.tolist())
                    if not any(inner <= outer for outer in bigger):
                        violations += 1
        return mismatches, violations

    results = _pmap(one, hosts, workers)

    binary = br.OffspringModel.from_table({2: 1.0})
    ball = br.sample_survivor(
        binary,
        cfg.seed,
        br.GenerationBudget(max_depth=cfg.binary_radius, max_vertices=1 << 22),
    )
    binary_host = iso.HostGraph.from_tree(ball)
    binary_found = sum(len(iso.islands(binary_host, q).islands) for q in ladder)

    mismatches = sum(r[0] for r in results)
    violations = sum(r[1] for r in results)
    return {
        "n_hosts": cfg.n_hosts,
        "max_vertices": cfg.max_vertices,
        "q_ladder": ladder,
        "scanned_indices": index,
        "oracle_mismatches": mismatches,
        "nesting_violations": violations,
        "binary_radius": cfg.binary_radius,
        "binary_islands_found": binary_found,
        "all_ok": mismatches == 0 and violations == 0 and binary_found == 0,
    }


def _run_islands_audit(cfg: ExperimentConfig, workers: int):
    return {"islands_audit.json": _json_text(audit_islands(cfg, workers))}


def _run_norm_audit(cfg: ExperimentConfig, workers: int):
    model = br.OffspringModel.parse(cfg.offspring)
    bound = 1.0 - cfg.q**2 / 18.0 + 1e-9

    def one(i):
        def work():
            tree = br.sample_survivor(
                model,
                cfg.seed,
                br.GenerationBudget(max_depth=cfg.radius, max_vertices=cfg.size_cap),
                sample_index=i,
            )
            host = iso.HostGraph.from_tree(tree)
            dec = iso.islands(host, cfg.q)
            g = iw.build_induced(host, dec, allow_partial=True)
            region = g.certified_region()
            if len(region) == 0:
                # every certifiable vertex sat inside a truncated island;
                # nothing to measure on this host
                return None
            return float(iw.compression_norm(g, region, cfg.iterations))

        return _indexed(i, work)

    results = _pmap(one, range(cfg.n_hosts), workers)
    norms = np.array([r for r in results if r is not None])
    n_skipped = sum(r is None for r in results)
    if norms.size == 0:
        raise EmptyRegion("no host had a nonempty certified region")
    binary = [
        {"radius": r, "norm": float(iw.regular_tree_ball_norm(2, r))}
        for r in cfg.binary_radii
    ]
    limit = 2.0 * math.sqrt(2.0) / 3.0
    binary_gap = abs(binary[-1]["norm"] - limit)
    payload = {
        "q": cfg.q,
        "radius": cfg.radius,
        "n_hosts": cfg.n_hosts,
        "n_certified": int(norms.size),
        "n_skipped_empty_region": int(n_skipped),
        "bound": bound,
        "max_norm": float(norms.max()),
        "mean_norm": float(norms.mean()),
        "n_exceeding": int(np.count_nonzero(norms > bound)),
        "binary": binary,
        "binary_limit": limit,
        "binary_gap_at_max_radius": binary_gap,
        "all_ok": bool(np.all(norms <= bound)),
    }
    return {"norm_audit.json": _json_text(payload)}


def _run_bad_event(cfg: ExperimentConfig, workers: int):
    model = br.OffspringModel.parse(cfg.offspring)

    def one(t):
        q = float(t) ** (-1.0 / 3.0) if t > 1 else 1.0
        est = iso.big_island_hit_prob(
            model, int(t), q, cfg.n_samples, cfg.seed, max_vertices=cfg.max_vertices
        )
        return q, est

    lines = ["t,q,estimate,stderr,n_samples"]
    for t, (q, est) in zip(cfg.t_grid, _pmap(one, cfg.t_grid, workers)):
        lines.append(
            f"{t},{fmt_float(q)},{fmt_float(est.value)},{fmt_float(est.stderr)},"
            f"{est.n_samples}"
        )
    return {"bad_event.csv": "\n".join(lines) + "\n"}


_RUNNERS = {
    "return-prob": _run_return_prob,
    "ct-return": _run_ct_return,
    "lifshits-extinct": _run_lifshits,
    "dos": _run_dos,
    "atom-zero": _run_atom_zero,
    "islands-audit": _run_islands_audit,
    "norm-audit": _run_norm_audit,
    "bad-event": _run_bad_event,
}


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def _version() -> str:
    try:
        return "v" + metadata.version("gwlab")
    except metadata.PackageNotFoundError:
        return "v0.0.0+local"


def run(config: ExperimentConfig, out_dir, workers: int = 1) -> list:
    """Execute one experiment and write its data files plus manifest.json.

    Results are produced entirely in memory first, so a failing run leaves
    no partial data files behind.  Returns the written paths.
    """
    started = time.perf_counter()
    with threadpool_limits(limits=1):
        files = _RUNNERS[config.experiment](config, max(1, int(workers)))
    elapsed = time.perf_counter() - started

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in sorted(files):
        path = out / name
        path.write_text(files[name])
        written.append(path)
    echo = {k: v for k, v in asdict(config).items() if v is not None}
    manifest = {
        "experiment": config.experiment,
        "config": echo,
        "version": _version(),
        "seed": config.seed,
        "wall_time_s": round(elapsed, 3),
        "data_files": sorted(files),
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(_json_text(manifest))
    written.append(manifest_path)
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gwlab",
        description="Seeded, config-driven experiments on branching trees, "
        "walks and sparse-graph spectra.",
    )
    parser.add_argument("experiment", choices=sorted(_RUNNERS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config entry (VALUE parsed as JSON when possible)",
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args(argv)

    try:
        config = load_config(args.experiment, args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        run(config, args.out, args.workers)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
