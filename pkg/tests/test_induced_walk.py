import json
import math

import numpy as np
import pytest

from gwlab import branching as br, induced_walk as iw, isoperimetry as iso
from gwlab.errors import (
    EmptyRegion,
    InfiniteIsland,
    InsufficientRegion,
    InvalidParams,
    MoatViolation,
    UnknownVertex,
)

BINARY = br.OffspringModel.from_table({2: 1.0})
POISSON2 = br.OffspringModel.poisson(2.0)


def binary_graph(depth):
    tree = br.sample_survivor(BINARY, rng_seed=0, budget=br.GenerationBudget(max_depth=depth))
    host = iso.HostGraph.from_tree(tree)
    return host, iw.build_induced(host, iso.islands(host, 0.9))


def conditioned_graph(seed, depth=8, q=0.2):
    tree = br.sample_survivor(POISSON2, rng_seed=seed, budget=br.GenerationBudget(max_depth=depth))
    host = iso.HostGraph.from_tree(tree)
    dec = iso.islands(host, q)
    return host, dec, iw.build_induced(host, dec, allow_partial=True)


def star_with_pendant_island():
    # center o(0) with ocean leaves a(1) b(2) c(3) and island path 4-5-6-7
    host = iso.HostGraph.from_edges(
        8,
        [(0, 1), (0, 2), (0, 3), (0, 4), (4, 5), (5, 6), (6, 7)],
        frontier={1: 1, 2: 1, 3: 1},
        root=0,
    )
    dec = iso.IslandDecomposition(
        q=0.3,
        islands=(np.array([4, 5, 6, 7]),),
        iotas=(0.2,),
        ocean=np.array([0, 1, 2, 3]),
        moat=(True,),
    )
    return host, dec


# ---------------------------------------------------------------------------
# weight assembly
# ---------------------------------------------------------------------------


def test_no_islands_gives_simple_walk_weights():
    host, g = binary_graph(5)
    assert g.W.nnz == 2 * host.n_edges
    assert np.all(g.W.data == 1.0)
    assert np.array_equal(g.ocean_ids, np.arange(host.n))


def test_pendant_island_excursions_return_to_center():
    host, dec = star_with_pendant_island()
    g = iw.build_induced(host, dec)
    assert g.weight(0, 1) == 1.0
    assert g.weight(0, 2) == 1.0
    assert g.weight(0, 3) == 1.0
    assert abs(g.weight(0, 0) - 1.0) < 1e-12
    assert g.vertex_weight[g.local([0])[0]] == 4.0


def test_single_leaf_island_gives_unit_self_loop():
    # o(0) -- x(1) with island leaf l(2) under x; extra ocean child m(3)
    host = iso.HostGraph.from_edges(
        4, [(0, 1), (1, 2), (1, 3)], frontier={0: 1, 3: 1}, root=0
    )
    dec = iso.IslandDecomposition(
        q=0.5,
        islands=(np.array([2]),),
        iotas=(0.0,),
        ocean=np.array([0, 1, 3]),
        moat=(True,),
    )
    g = iw.build_induced(host, dec)
    assert abs(g.weight(1, 1) - 1.0) < 1e-12


def test_weight_invariants_on_conditioned_trees():
    for seed in range(8):
        host, dec, g = conditioned_graph(seed)
        asym = abs(g.W - g.W.T)
        assert asym.nnz == 0 or asym.max() <= 1e-12
        deg = host.degree()
        assert np.array_equal(g.vertex_weight, deg[g.ocean_ids].astype(float))
        rowsum = np.asarray(g.W.sum(axis=1)).ravel() + g.frontier_weight
        assert np.max(np.abs(rowsum - g.vertex_weight)) <= 1e-9
        # certified rows conserve probability exactly
        P = np.asarray(g.W.sum(axis=1)).ravel() / g.vertex_weight
        assert np.max(np.abs(P[g.certified] - 1.0)) <= 1e-12


def test_tree_host_ocean_edges_carry_unit_weight():
    # on a tree two adjacent ocean vertices cannot border the same island,
    # so every direct edge keeps weight exactly one
    for seed in range(10):
        host, dec, g = conditioned_graph(seed, q=0.25)
        island_of = np.full(host.n, -1)
        for i, isl in enumerate(dec.islands):
            island_of[isl] = i
        for x in dec.ocean:
            for y in host.neighbors(int(x)):
                y = int(y)
                if island_of[y] >= 0 or y < x:
                    continue
                assert abs(g.weight(int(x), y) - 1.0) <= 1e-12


def test_shared_island_border_adds_excursion_weight():
    # triangle o(0) - x(1) - island i(2): the direct edge gains the
    # excursion through the island, w(0,1) = 1 + 1/2
    host = iso.HostGraph.from_edges(
        3, [(0, 1), (0, 2), (1, 2)], frontier={0: 1, 1: 1}, root=0
    )
    dec = iso.IslandDecomposition(
        q=0.5,
        islands=(np.array([2]),),
        iotas=(0.0,),
        ocean=np.array([0, 1]),
        moat=(True,),
    )
    g = iw.build_induced(host, dec)
    assert abs(g.weight(0, 1) - 1.5) < 1e-12
    assert abs(g.weight(0, 0) - 0.5) < 1e-12
    assert abs(g.weight(1, 1) - 0.5) < 1e-12


def test_moat_violation_modes():
    # island vertex carrying a frontier edge invalidates the certificate
    host = iso.HostGraph.from_edges(
        3, [(0, 1), (1, 2)], frontier={2: 1, 0: 2}, root=0
    )
    dec = iso.IslandDecomposition(
        q=0.5,
        islands=(np.array([2]),),
        iotas=(0.1,),
        ocean=np.array([0, 1]),
        moat=(False,),
    )
    with pytest.raises(MoatViolation):
        iw.build_induced(host, dec)
    g = iw.build_induced(host, dec, allow_partial=True)
    # the island stays unsolved: x=1 loses certification, mass goes outward
    lx = g.local([1])[0]
    assert not g.certified[lx]
    assert g.frontier_weight[lx] == 1.0
    with pytest.raises(InfiniteIsland):
        iw._solve_island(host, np.array([2]), host.degree().astype(float))


# ---------------------------------------------------------------------------
# compression norms
# ---------------------------------------------------------------------------


def test_single_vertex_region_returns_loop_ratio():
    host, dec = star_with_pendant_island()
    g = iw.build_induced(host, dec)
    got = iw.compression_norm(g, [0])
    assert abs(got - g.weight(0, 0) / 4.0) < 1e-12


def test_binary_ball_norm_stays_below_infinite_tree_value():
    _, g = binary_graph(10)
    nrm = iw.compression_norm(g, g.ocean_ids, iterations=5000)
    assert nrm <= 2.0 * math.sqrt(2.0) / 3.0 + 1e-3


def test_power_iteration_matches_radial_reduction():
    for depth in (5, 6, 8):
        _, g = binary_graph(depth)
        nrm = iw.compression_norm(g, g.ocean_ids, iterations=20000)
        exact = iw.regular_tree_ball_norm(2, depth - 1)
        assert abs(nrm - exact) < 1e-8


def test_radial_reduction_matches_dense_eigenvalues():
    _, g = binary_graph(5)
    S = iw._symmetric_kernel(g, g.local(g.ocean_ids)).toarray()
    ev = np.linalg.eigvalsh(S)
    dense = max(abs(ev[0]), abs(ev[-1]))
    assert abs(dense - iw.regular_tree_ball_norm(2, 4)) < 1e-12


def test_radial_norm_converges_to_tree_spectral_radius():
    limit = 2.0 * math.sqrt(2.0) / 3.0
    n300 = iw.regular_tree_ball_norm(2, 300)
    assert abs(n300 - limit) < 1e-3
    assert n300 < limit
    # monotone increasing in radius
    vals = [iw.regular_tree_ball_norm(2, r) for r in (10, 50, 100, 300)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_compression_norm_bound_on_conditioned_hosts():
    for seed in range(10):
        _, _, g = conditioned_graph(seed, depth=9, q=0.2)
        nrm = iw.compression_norm(g, g.certified_region())
        assert nrm <= 1.0 - 0.2**2 / 18.0 + 1e-9


def test_compression_region_monotonicity():
    _, _, g = conditioned_graph(3, depth=9, q=0.2)
    cr = g.certified_region()
    small = iw.compression_norm(g, cr[: cr.size // 2 + 1])
    large = iw.compression_norm(g, cr)
    assert small <= large + 1e-9


def test_compression_norm_input_validation():
    _, g = binary_graph(4)
    with pytest.raises(InvalidParams):
        iw.compression_norm(g, g.ocean_ids, iterations=10)
    with pytest.raises(EmptyRegion):
        iw.compression_norm(g, [])
    with pytest.raises(UnknownVertex):
        iw.compression_norm(g, [10**6])


# ---------------------------------------------------------------------------
# induced return probabilities
# ---------------------------------------------------------------------------


def test_return_at_time_zero_is_one():
    _, g = binary_graph(4)
    assert iw.induced_return_prob(g, 0) == 1.0


def test_no_island_return_matches_dense_simple_walk():
    host, g = binary_graph(8)
    deg = host.degree().astype(float)
    P = host.adjacency().toarray() / deg[:, None]
    p = np.zeros(host.n)
    p[host.root] = 1.0
    for t in (2, 4, 6):
        expect = (np.linalg.matrix_power(P.T, t) @ p)[host.root]
        got = iw.induced_return_prob(g, t)
        assert abs(got - expect) < 1e-14


def test_return_is_zero_at_odd_times_without_self_loops():
    _, g = binary_graph(6)
    assert iw.induced_return_prob(g, 3) == 0.0


def test_strict_mode_raises_when_mass_escapes():
    _, g = binary_graph(6)
    with pytest.raises(InsufficientRegion):
        iw.induced_return_prob(g, 2 * 6)


def test_truncated_return_is_a_lower_bound():
    _, small = binary_graph(6)
    _, large = binary_graph(9)
    _, full = binary_graph(12)
    t = 10
    ps = iw.induced_return_prob(small, t, allow_truncation=True)
    pl = iw.induced_return_prob(large, t, allow_truncation=True)
    exact = iw.induced_return_prob(full, t)  # mass stays certified at r=12
    assert ps < pl
    # truncation at radius 8 only drops mass that could not return by t=10
    assert abs(pl - exact) < 1e-15


def test_truncated_return_obeys_norm_power_bound():
    for seed in range(5):
        _, _, g = conditioned_graph(seed, depth=9, q=0.2)
        t = 16
        if g.root is None:
            # root swallowed by an island, no induced return to speak of
            with pytest.raises(InvalidParams):
                iw.induced_return_prob(g, t, allow_truncation=True)
            continue
        val = iw.induced_return_prob(g, t, allow_truncation=True)
        assert val <= (1.0 - 0.2**2 / 18.0) ** t + 1e-12


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_induced_text_round_trip():
    host, dec = star_with_pendant_island()
    g = iw.build_induced(host, dec)
    text = iw.induced_to_text(g)
    prov, weights = iw.induced_weights_from_text(text)
    assert prov == g.provenance
    assert set(prov) == {"host", "q", "decomposition"}
    for (u, v), w in weights.items():
        assert abs(g.weight(u, v) - w) < 1e-15
    coo = iw.sparse.triu(g.W).tocoo()
    assert len(weights) == coo.nnz


def test_provenance_tracks_host_and_decomposition():
    host, dec = star_with_pendant_island()
    g1 = iw.build_induced(host, dec)
    other = iso.IslandDecomposition(
        q=0.4,
        islands=(np.array([4, 5, 6, 7]),),
        iotas=(0.6,),
        ocean=np.array([0, 1, 2, 3]),
        moat=(True,),
    )
    g2 = iw.build_induced(host, other)
    assert g1.provenance["host"] == g2.provenance["host"]
    assert g1.provenance["q"] != g2.provenance["q"]
