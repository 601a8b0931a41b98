import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gwlab import branching as br, ergraph as er, spectra as sp
from gwlab.errors import InvalidParams, SubcriticalModel, TooLarge

POISSON2 = br.OffspringModel.poisson(2.0)
GRID = np.array([0.5, 1.0, 2.0, 4.0, 8.0])

# Lambda_2 and the zero atom for lambda=2; Borel sizes give
# E[1/|T|] = 1 - lam*Lambda/2, so atom = Lambda * (1 - lam*Lambda/2).
LAMBDA_2 = 0.20318786997998
ATOM_2 = 0.16190255947297866


# ---------------------------------------------------------------------------
# sample_er
# ---------------------------------------------------------------------------


def test_tiny_lambda_gives_empty_graph():
    for seed in (1, 2, 3):
        g = er.sample_er(10_000, 1e-9, rng_seed=seed)
        assert g.n_edges == 0
        assert g.n_components == 10_000


def test_mean_degree_concentrates():
    degs = [
        2 * er.sample_er(10_000, 2.0, rng_seed=21, sample_index=i).n_edges / 10_000
        for i in range(20)
    ]
    assert abs(np.mean(degs) - 2.0) <= 0.1


def test_giant_fraction_matches_extinction_complement():
    target = 1.0 - POISSON2.extinction
    fracs = [
        er.sample_er(10_000, 2.0, rng_seed=22, sample_index=i).giant_size / 10_000
        for i in range(20)
    ]
    assert abs(np.mean(fracs) - target) <= 0.02


def test_second_component_is_small():
    # giant uniqueness: second-largest component stays well below N^0.7
    cap = 2000**0.7
    ok = 0
    for i in range(20):
        sizes = np.sort(
            er.sample_er(2000, 2.0, rng_seed=23, sample_index=i).component_sizes()
        )
        second = sizes[-2] if sizes.size > 1 else 0
        ok += second <= cap
    assert ok >= 19


def test_sampling_is_deterministic_per_index():
    a = er.sample_er(500, 2.0, rng_seed=5, sample_index=3)
    b = er.sample_er(500, 2.0, rng_seed=5, sample_index=3)
    c = er.sample_er(500, 2.0, rng_seed=5, sample_index=4)
    assert (a.adjacency != b.adjacency).nnz == 0
    assert (a.adjacency != c.adjacency).nnz > 0


def test_adjacency_is_simple_and_symmetric():
    g = er.sample_er(400, 3.0, rng_seed=8)
    a = g.adjacency
    assert (a != a.T).nnz == 0
    assert a.diagonal().sum() == 0.0
    assert set(np.unique(a.data)) <= {1.0}


def test_labels_partition_and_respect_edges():
    g = er.sample_er(600, 1.5, rng_seed=13)
    assert g.labels.shape == (600,)
    assert np.unique(g.labels).size == g.n_components
    assert g.component_sizes().sum() == 600
    coo = g.adjacency.tocoo()
    assert np.all(g.labels[coo.row] == g.labels[coo.col])
    assert g.giant == int(np.argmax(g.component_sizes()))


def test_sample_er_rejects_bad_params():
    with pytest.raises(InvalidParams):
        er.sample_er(1, 0.5, rng_seed=0)
    with pytest.raises(InvalidParams):
        er.sample_er(100, 0.0, rng_seed=0)
    with pytest.raises(InvalidParams):
        er.sample_er(100, -2.0, rng_seed=0)
    with pytest.raises(InvalidParams):
        er.sample_er(100, 100.0, rng_seed=0)
    with pytest.raises(InvalidParams):
        er.sample_er(100, float("inf"), rng_seed=0)


def test_dense_lambda_edge_density():
    # lambda close to N still obeys the per-pair probability
    g = er.sample_er(60, 30.0, rng_seed=17)
    expect = 0.5 * 59 * 30.0
    assert abs(g.n_edges - expect) <= 5 * np.sqrt(expect)


# ---------------------------------------------------------------------------
# Components vs the Laplacian kernel
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_component_count_equals_kernel_dimension(lam):
    g = er.sample_er(300, lam, rng_seed=31)
    w, _ = sp.laplacian_eigs(g.adjacency, "laplacian")
    assert int(np.sum(np.abs(w) < 1e-8)) == g.n_components


def test_cell_counts_are_permutation_invariant():
    g = er.sample_er(250, 2.0, rng_seed=37)
    rng = np.random.default_rng(0)
    perm = rng.permutation(250)
    shuffled = g.adjacency[perm][:, perm].tocsr()
    assert (shuffled != g.adjacency).nnz > 0
    base = er.spectrum_cell_counts(g, GRID)
    other = er.spectrum_cell_counts(shuffled, GRID)
    assert base[0] == other[0]
    assert np.array_equal(base[1], other[1])
    assert base[2] == other[2]


def test_cell_counts_account_for_every_eigenvalue():
    for i in range(5):
        g = er.sample_er(240, 2.0, rng_seed=41, sample_index=i)
        nc, counts, tail = er.spectrum_cell_counts(g, GRID)
        assert counts.dtype == np.int64
        assert nc + counts.sum() + tail == 240


# ---------------------------------------------------------------------------
# dos_estimate
# ---------------------------------------------------------------------------


def test_dos_total_mass_is_one():
    est = er.dos_estimate(300, 2.0, 4, GRID, rng_seed=43)
    assert abs(est.total - 1.0) < 1e-12
    assert est.n_samples == 4


def test_dos_atom_is_exact_component_density():
    est = er.dos_estimate(300, 2.0, 6, GRID, rng_seed=47)
    comps = [
        er.sample_er(300, 2.0, rng_seed=47, sample_index=i).n_components
        for i in range(6)
    ]
    assert est.atom_at_zero == np.mean(comps) / 300


def test_dos_dense_and_inertia_agree_exactly():
    dense = er.dos_estimate(300, 2.0, 3, GRID, rng_seed=53, method="dense")
    inertia = er.dos_estimate(300, 2.0, 3, GRID, rng_seed=53, method="inertia")
    assert dense.atom_at_zero == inertia.atom_at_zero
    assert np.array_equal(dense.masses, inertia.masses)
    assert dense.tail == inertia.tail
    assert np.array_equal(dense.stderrs, inertia.stderrs)


def test_dos_start_index_extends_the_ensemble():
    head = er.dos_estimate(200, 2.0, 2, GRID, rng_seed=59)
    tail_part = er.dos_estimate(200, 2.0, 2, GRID, rng_seed=59, start_index=2)
    both = er.dos_estimate(200, 2.0, 4, GRID, rng_seed=59)
    merged = 0.5 * (head.atom_at_zero + tail_part.atom_at_zero)
    assert abs(both.atom_at_zero - merged) < 1e-15


def test_dos_size_caps():
    with pytest.raises(TooLarge):
        er.dos_estimate(4001, 2.0, 1, GRID, rng_seed=2, method="dense")
    with pytest.raises(TooLarge):
        er.dos_estimate(6001, 2.0, 1, GRID, rng_seed=2)


def test_dos_rejects_bad_args():
    with pytest.raises(InvalidParams):
        er.dos_estimate(300, 2.0, 0, GRID, rng_seed=1)
    with pytest.raises(InvalidParams):
        er.dos_estimate(300, 2.0, 2, GRID, rng_seed=1, method="magic")
    with pytest.raises(InvalidParams):
        er.dos_estimate(300, 2.0, 2, [2.0, 1.0], rng_seed=1)


def test_dos_round_trips_through_csv():
    est = er.dos_estimate(200, 2.0, 3, GRID, rng_seed=61)
    back = sp.measure_from_csv(sp.measure_to_csv(est))
    assert np.array_equal(back.grid, est.grid)
    assert np.array_equal(back.masses, est.masses)
    assert back.atom_at_zero == est.atom_at_zero
    assert back.tail == est.tail


# ---------------------------------------------------------------------------
# bgw_atom_at_zero
# ---------------------------------------------------------------------------


def test_bgw_atom_matches_analytic_value():
    est = er.bgw_atom_at_zero(POISSON2, 100_000, rng_seed=67)
    assert est.n_samples == 100_000
    assert abs(est.value - ATOM_2) <= 4 * est.stderr
    assert 0 < est.stderr < 1e-3


def test_bgw_atom_strictly_inside_unit_extinction_band():
    est = er.bgw_atom_at_zero(POISSON2, 5_000, rng_seed=71)
    assert 0.0 < est.value <= LAMBDA_2 + 1e-12


def test_bgw_atom_rejects_subcritical_models():
    with pytest.raises(SubcriticalModel):
        er.bgw_atom_at_zero(br.OffspringModel.from_table({0: 1.0}), 100, rng_seed=1)
    with pytest.raises(SubcriticalModel):
        er.bgw_atom_at_zero(br.OffspringModel.poisson(0.9), 100, rng_seed=1)
    with pytest.raises(InvalidParams):
        er.bgw_atom_at_zero(POISSON2, 0, rng_seed=1)


def test_bgw_atom_is_deterministic():
    a = er.bgw_atom_at_zero(POISSON2, 2_000, rng_seed=73)
    b = er.bgw_atom_at_zero(POISSON2, 2_000, rng_seed=73)
    assert a == b


def test_bgw_and_graph_atoms_cross_validate():
    graph_side = er.dos_estimate(800, 2.0, 12, GRID, rng_seed=79)
    tree_side = er.bgw_atom_at_zero(POISSON2, 100_000, rng_seed=79)
    rel = abs(graph_side.atom_at_zero - tree_side.value) / tree_side.value
    assert rel < 0.1


# ---------------------------------------------------------------------------
# giant_spectral_mass
# ---------------------------------------------------------------------------


def test_giant_mass_above_spectrum_counts_everything_but_kernel():
    est = er.giant_spectral_mass(200, 2.0, 5, 500.0, rng_seed=83)
    sizes = np.array([
        er.sample_er(200, 2.0, rng_seed=83, sample_index=i).giant_size
        for i in range(5)
    ])
    expect = np.mean(1.0 - 1.0 / sizes)
    assert abs(est.laplacian_mass - expect) < 1e-12
    assert abs(est.normalized_mass - expect) < 1e-12
    assert est.mean_giant_size == sizes.mean()
    assert est.n_graphs == 5


def test_giant_mass_variant_comparison_holds():
    for E in (0.25, 1.0):
        est = er.giant_spectral_mass(300, 2.0, 10, E, rng_seed=89)
        assert est.comparisons_hold
        assert est.laplacian_mass <= est.normalized_mass + 1e-15
        assert est.energy == E


def test_giant_mass_shrinks_with_energy():
    lo = er.giant_spectral_mass(400, 2.0, 8, 0.25, rng_seed=97)
    hi = er.giant_spectral_mass(400, 2.0, 8, 1.0, rng_seed=97)
    assert 0.0 < lo.laplacian_mass < hi.laplacian_mass < 1.0


def test_giant_mass_rejects_bad_args():
    with pytest.raises(InvalidParams):
        er.giant_spectral_mass(300, 1.0, 2, 0.5, rng_seed=1)
    with pytest.raises(InvalidParams):
        er.giant_spectral_mass(300, 0.5, 2, 0.5, rng_seed=1)
    with pytest.raises(InvalidParams):
        er.giant_spectral_mass(300, 2.0, 2, 0.0, rng_seed=1)
    with pytest.raises(InvalidParams):
        er.giant_spectral_mass(300, 2.0, 0, 0.5, rng_seed=1)


# ---------------------------------------------------------------------------
# Edge-list serialization
# ---------------------------------------------------------------------------


def test_edgelist_layout():
    g = er.sample_er(40, 2.0, rng_seed=101)
    text = er.graph_to_edgelist(g)
    lines = text.splitlines()
    assert lines[0] == "40 2.0"
    assert len(lines) == 1 + g.n_edges
    assert text.endswith("\n")
    pairs = [tuple(map(int, ln.split())) for ln in lines[1:]]
    assert all(i < j for i, j in pairs)
    assert pairs == sorted(pairs)


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(min_value=2, max_value=60),
    lam_frac=st.floats(min_value=0.05, max_value=0.9),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_edgelist_round_trip(n, lam_frac, seed):
    g = er.sample_er(n, lam_frac * n, rng_seed=seed)
    back = er.graph_from_edgelist(er.graph_to_edgelist(g))
    assert back.n == g.n
    assert back.lam == g.lam
    assert (back.adjacency != g.adjacency).nnz == 0
    assert back.n_components == g.n_components
    assert np.array_equal(back.component_sizes(), g.component_sizes())


def test_edgelist_header_only_is_an_empty_graph():
    g = er.graph_from_edgelist("5 0.1\n")
    assert g.n == 5
    assert g.n_edges == 0
    assert g.n_components == 5


def test_edgelist_rejects_malformed_input():
    with pytest.raises(InvalidParams):
        er.graph_from_edgelist("")
    with pytest.raises(InvalidParams):
        er.graph_from_edgelist("5\n")
    with pytest.raises(InvalidParams):
        er.graph_from_edgelist("1 0.5\n")
    with pytest.raises(InvalidParams):
        er.graph_from_edgelist("5 2.0\n3 1\n")
    with pytest.raises(InvalidParams):
        er.graph_from_edgelist("5 2.0\n1 1\n")
    with pytest.raises(InvalidParams):
        er.graph_from_edgelist("5 2.0\n0 7\n")
    with pytest.raises(InvalidParams):
        er.graph_from_edgelist("5 2.0\n0 1\n0 1\n")
    with pytest.raises(InvalidParams):
        er.graph_from_edgelist("5 2.0\n0 1 2\n")
