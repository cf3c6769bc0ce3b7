import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbesag.graph import build_partition, grid_graph
from fbesag.precision import (
    build_precision,
    conditional_params,
    constrained_pseudo_covariance,
    cyclic_rw1_log_gdet,
    cyclic_rw1_precision,
    export_triplets,
    log_density,
    log_generalized_det,
    sample_field,
    stationary_precision,
    sum_to_zero_constraints,
)

from conftest import q_ns, q_s


@pytest.mark.parametrize("tau1,tau2", [(1.0, 1.0), (1.0, 2.0), (0.3, 5.0)])
def test_two_region_matrix_matches_worked_example(five_area_graph, two_region_partition, tau1, tau2):
    prec = build_precision(five_area_graph, two_region_partition, [tau1, tau2])
    np.testing.assert_allclose(prec.q.toarray(), q_ns(tau1, tau2), atol=1e-12)


def test_stationary_matrix(five_area_graph):
    prec = stationary_precision(five_area_graph, 1.3)
    np.testing.assert_allclose(prec.q.toarray(), q_s(1.3), atol=1e-12)


def test_equal_taus_reduce_to_stationary(five_area_graph, two_region_partition):
    prec = build_precision(five_area_graph, two_region_partition, [1.7, 1.7])
    np.testing.assert_allclose(prec.q.toarray(), q_s(1.7), atol=1e-12)


def test_structure_decomposition(five_area_graph, two_region_partition):
    prec = build_precision(five_area_graph, two_region_partition, [0.7, 2.2])
    total = 0.7 * prec.structure_parts[0].toarray() + 2.2 * prec.structure_parts[1].toarray()
    np.testing.assert_array_equal(prec.q.toarray(), total)


def test_with_taus_linearity(five_area_graph, two_region_partition):
    prec = build_precision(five_area_graph, two_region_partition, [1.0, 1.0])
    other = prec.with_taus([3.0, 0.5])
    diff = other.q.toarray() - prec.q.toarray()
    expect = 2.0 * prec.structure_parts[0].toarray() - 0.5 * prec.structure_parts[1].toarray()
    np.testing.assert_array_equal(diff, expect)


def test_rejects_nonpositive_tau(five_area_graph, two_region_partition):
    with pytest.raises(ValueError):
        build_precision(five_area_graph, two_region_partition, [1.0, 0.0])
    with pytest.raises(ValueError):
        build_precision(five_area_graph, two_region_partition, [1.0])


def test_matrix_invariants(five_area_graph, two_region_partition):
    prec = build_precision(five_area_graph, two_region_partition, [0.4, 3.1])
    q = prec.q.toarray()
    np.testing.assert_allclose(q, q.T, atol=0)
    np.testing.assert_allclose(q.sum(axis=1), 0.0, atol=1e-12 * np.max(np.diag(q)))
    off = q - np.diag(np.diag(q))
    assert np.all(off <= 0)
    assert np.all(np.diag(q) >= 0)
    assert prec.rank_deficiency == 1


def test_null_space_per_component():
    g = grid_graph(2, 2)
    from fbesag.graph import AdjacencyGraph
    g2 = AdjacencyGraph.from_edges(6, [(0, 1), (1, 2), (3, 4), (4, 5)])
    part = build_partition(g2, [0, 0, 0, 1, 1, 1])
    prec = build_precision(g2, part, [1.0, 2.5])
    assert prec.rank_deficiency == 2
    for comp in prec.components:
        ind = np.zeros(6)
        ind[sorted(comp)] = 1.0
        np.testing.assert_allclose(prec.q @ ind, 0.0, atol=1e-12)
    del g


def test_conditional_precision_two_region(five_area_graph, two_region_partition):
    tau1, tau2 = 1.0, 2.0
    prec = build_precision(five_area_graph, two_region_partition, [tau1, tau2])
    _, cprec = conditional_params(3, np.zeros(5), prec)
    assert cprec == pytest.approx(1.5 * tau1 + 2.5 * tau2)


def test_conditional_mean_constant_field(five_area_graph):
    prec = stationary_precision(five_area_graph, 0.8)
    for i in range(5):
        mean, _ = conditional_params(i, np.full(5, 3.7), prec)
        assert mean == pytest.approx(3.7)


def test_conditional_matches_dense_formula(five_area_graph, two_region_partition):
    rng = np.random.default_rng(5)
    prec = build_precision(five_area_graph, two_region_partition, [1.0, 2.0])
    q = prec.q.toarray()
    x = rng.standard_normal(5)
    for i in range(5):
        mean, cprec = conditional_params(i, x, prec)
        expect = -(q[i] @ x - q[i, i] * x[i]) / q[i, i]
        assert mean == pytest.approx(expect, abs=1e-12)
        assert cprec == pytest.approx(q[i, i])


def test_conditional_matches_dense_formula_grid():
    rng = np.random.default_rng(11)
    g = grid_graph(6, 6)
    part = build_partition(g, [min(i // 12, 2) for i in range(36)])
    prec = build_precision(g, part, [0.5, 1.5, 4.0])
    q = prec.q.toarray()
    x = rng.standard_normal(36)
    for i in range(36):
        mean, cprec = conditional_params(i, x, prec)
        expect = -(q[i] @ x - q[i, i] * x[i]) / q[i, i]
        assert mean == pytest.approx(expect, abs=1e-12)
        assert cprec == pytest.approx(q[i, i], abs=1e-12)


def test_conditional_isolated_area_errors():
    from fbesag.graph import AdjacencyGraph
    g = AdjacencyGraph.from_edges(2, [])
    prec = stationary_precision(g, 1.0)
    with pytest.raises(ValueError, match="isolated"):
        conditional_params(0, np.zeros(2), prec)


def test_log_density_constant_field_maximal(five_area_graph, two_region_partition):
    prec = build_precision(five_area_graph, two_region_partition, [1.0, 2.0])
    base = log_density(np.full(5, 2.0), prec)
    assert base == pytest.approx(log_density(np.zeros(5), prec))
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert log_density(rng.standard_normal(5), prec) <= base + 1e-12


def test_log_density_quadratic_part(five_area_graph, two_region_partition):
    prec = build_precision(five_area_graph, two_region_partition, [1.0, 2.0])
    x = np.zeros(5)
    x[0] = 1.0
    quad = log_density(x, prec) - log_density(np.zeros(5), prec)
    # Q[0,0] = 1.5*tau1 + 0.5*tau2; quadratic form is -Q00/2
    assert quad == pytest.approx(-(0.75 * 1.0 + 0.25 * 2.0))


def test_log_density_tau_doubling(five_area_graph):
    rng = np.random.default_rng(3)
    x = rng.standard_normal(5)
    p1 = stationary_precision(five_area_graph, 1.0)
    p2 = stationary_precision(five_area_graph, 2.0)
    quad1 = -0.5 * x @ (p1.q @ x)
    d1 = log_density(x, p1)
    d2 = log_density(x, p2)
    assert d2 - d1 == pytest.approx(quad1 + (5 - 1) / 2 * np.log(2.0))


def test_quadratic_form_equivalence(five_area_graph, two_region_partition):
    rng = np.random.default_rng(7)
    taus = np.array([1.0, 2.0])
    prec = build_precision(five_area_graph, two_region_partition, taus)
    labels = two_region_partition.labels
    for _ in range(20):
        x = rng.standard_normal(5)
        direct = 0.0
        for (i, j) in five_area_graph.edges:
            direct += -0.25 * (taus[labels[i]] + taus[labels[j]]) * (x[i] - x[j]) ** 2
        assert direct == pytest.approx(-0.5 * x @ (prec.q @ x), abs=1e-10)


def test_sample_field_constraint_and_determinism(five_area_graph, two_region_partition):
    prec = build_precision(five_area_graph, two_region_partition, [1.0, 2.0])
    x1 = sample_field(prec, None, rng_seed=42)
    x2 = sample_field(prec, None, rng_seed=42)
    np.testing.assert_array_equal(x1, x2)
    assert abs(np.sum(x1)) < 1e-10


def test_sample_field_per_component_constraint():
    from fbesag.graph import AdjacencyGraph
    g = AdjacencyGraph.from_edges(6, [(0, 1), (1, 2), (3, 4), (4, 5)])
    part = build_partition(g, [0] * 6)
    prec = build_precision(g, part, [1.0])
    x = sample_field(prec, None, rng_seed=0)
    assert abs(x[:3].sum()) < 1e-10
    assert abs(x[3:].sum()) < 1e-10


def test_sample_field_covariance(five_area_graph, two_region_partition):
    prec = build_precision(five_area_graph, two_region_partition, [1.0, 2.0])
    xs = sample_field(prec, None, rng_seed=123, size=50_000)
    emp = np.cov(xs.T)
    oracle = constrained_pseudo_covariance(prec)
    rel = np.linalg.norm(emp - oracle) / np.linalg.norm(oracle)
    assert rel < 0.05


def test_cyclic_rw1_small():
    prec = cyclic_rw1_precision(3, 1.0)
    np.testing.assert_allclose(
        prec.q.toarray(), [[2, -1, -1], [-1, 2, -1], [-1, -1, 2]], atol=0
    )
    assert prec.rank_deficiency == 1


def test_cyclic_rw1_wraparound():
    prec = cyclic_rw1_precision(12, 2.0)
    q = prec.q.toarray()
    np.testing.assert_allclose(np.diag(q), 4.0)
    assert q[0, 11] == -2.0 and q[11, 0] == -2.0


def test_cyclic_rw1_eigenvalues():
    n, tau = 17, 0.7
    prec = cyclic_rw1_precision(n, tau)
    got = np.sort(np.linalg.eigvalsh(prec.q.toarray()))
    expect = np.sort(2.0 * tau * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n)))
    np.testing.assert_allclose(got, expect, atol=1e-10)
    assert cyclic_rw1_log_gdet(n, tau) == pytest.approx(log_generalized_det(prec))


def test_cyclic_rw1_rejects_small_n():
    with pytest.raises(ValueError):
        cyclic_rw1_precision(2, 1.0)


def test_export_triplets_roundtrip(five_area_graph, two_region_partition):
    prec = build_precision(five_area_graph, two_region_partition, [1.0, 2.0])
    dense = np.zeros((5, 5))
    for line in export_triplets(prec).strip().splitlines():
        r, c, v = line.split()
        dense[int(r), int(c)] = float(v)
    np.testing.assert_array_equal(dense, prec.q.toarray())


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_reduction_property(data):
    rows = data.draw(st.integers(2, 6))
    cols = data.draw(st.integers(2, 6))
    g = grid_graph(rows, cols)
    p = data.draw(st.integers(1, 4))
    labels = data.draw(
        st.lists(st.integers(0, p - 1), min_size=g.n_areas, max_size=g.n_areas)
    )
    c = data.draw(st.floats(0.01, 100.0))
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        part = build_partition(g, labels)
    flex = build_precision(g, part, np.full(part.n_subregions, c))
    stat = stationary_precision(g, c)
    np.testing.assert_allclose(flex.q.toarray(), stat.q.toarray(), atol=1e-12 * c)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_positive_semidefinite_spot_check(seed):
    from fbesag.graph import AdjacencyGraph
    from conftest import FIVE_AREA_EDGES

    rng = np.random.default_rng(seed)
    g = AdjacencyGraph.from_edges(5, FIVE_AREA_EDGES)
    prec = build_precision(g, build_partition(g, [0, 0, 0, 1, 1]), [0.5, 3.0])
    for _ in range(50):
        x = rng.standard_normal(5)
        assert x @ (prec.q @ x) >= -1e-12


def test_default_constraints_match_rank_deficiency(five_area_graph, two_region_partition):
    prec = build_precision(five_area_graph, two_region_partition, [1.0, 2.0])
    cons = sum_to_zero_constraints(prec)
    assert cons.n_constraints == prec.rank_deficiency
    assert np.linalg.matrix_rank(cons.a) == cons.n_constraints
