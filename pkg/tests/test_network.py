import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from nheavy import (
    AdjacencyMatrix,
    InvalidInputError,
    DataError,
    analytic_density,
    density,
    gen_dyad,
    gen_powerlaw,
    gen_sbm,
    load_edges_csv,
    normalize,
    out_degrees,
    save_edges_csv,
)

from oracles import mc_standard_error


def test_out_degrees_examples():
    assert_array_equal(out_degrees(AdjacencyMatrix(np.array([[0, 1], [1, 0]]))), [1, 1])
    assert_array_equal(out_degrees(AdjacencyMatrix(np.zeros((3, 3)))), [0, 0, 0])
    a = AdjacencyMatrix(np.array([[0, 1, 1], [0, 0, 1], [0, 0, 0]]))
    assert_array_equal(out_degrees(a), [2, 1, 0])


def test_normalize_examples():
    pair = normalize(AdjacencyMatrix(np.array([[0, 1], [1, 0]])))
    assert_allclose(pair.w, [[0.0, 1.0], [1.0, 0.0]])

    complete = normalize(AdjacencyMatrix(np.ones((3, 3)) - np.eye(3)))
    assert_allclose(complete.w, (np.ones((3, 3)) - np.eye(3)) / 2.0)

    # isolated node keeps an all-zero row rather than dividing by zero
    isolated = normalize(AdjacencyMatrix(np.array([[0, 1, 1], [0, 0, 1], [0, 0, 0]])))
    assert_allclose(isolated.w[2], [0.0, 0.0, 0.0])
    assert_allclose(isolated.w[0], [0.0, 0.5, 0.5])
    assert_array_equal(isolated.degrees, [2, 1, 0])


def test_density_examples():
    assert density(AdjacencyMatrix(np.ones((3, 3)) - np.eye(3))) == 1.0
    assert density(AdjacencyMatrix(np.zeros((4, 4)))) == 0.0
    single = np.zeros((5, 5), dtype=int)
    single[0, 3] = 1
    assert density(AdjacencyMatrix(single)) == pytest.approx(0.05)
    with pytest.raises(InvalidInputError):
        density(AdjacencyMatrix(np.zeros((1, 1))))


def test_adjacency_validation():
    with pytest.raises(InvalidInputError):
        AdjacencyMatrix(np.zeros((2, 3)))
    with pytest.raises(InvalidInputError):
        AdjacencyMatrix(np.array([[0, 2], [0, 0]]))
    with pytest.raises(InvalidInputError):
        AdjacencyMatrix(np.array([[1, 0], [0, 0]]))


def test_adjacency_is_immutable():
    a = gen_dyad(25, seed=0)
    with pytest.raises(ValueError):
        a.entries[0, 1] = 1


def test_gen_dyad_mutual_pair_count():
    # at n=25 each of the 300 unordered pairs is mutual w.p. 20/25
    n, reps = 25, 1000
    counts = np.empty(reps)
    for q in range(reps):
        a = gen_dyad(n, seed=q).entries
        counts[q] = ((a == 1) & (a.T == 1)).sum() / 2
    expected = n * (n - 1) / 2 * (20.0 / n)
    se = mc_standard_error(counts)
    assert abs(counts.mean() - expected) <= 3 * se


def test_gen_dyad_analytic_density():
    val = analytic_density("dyad", 25)
    assert val == pytest.approx(20.0 / 25 + 0.5 * 25 ** -0.8)


def test_gen_dyad_rejects_small_n():
    # mutual probability 20/n exceeds 1 below n=20
    with pytest.raises(InvalidInputError):
        gen_dyad(10, seed=0)


def test_gen_powerlaw_degree_law():
    # column sums follow the k^-alpha pmf on {1, ..., n-1}
    from scipy.stats import chisquare

    n, alpha, reps = 10, 2.5, 1000
    observed = np.zeros(n - 1)
    for q in range(reps):
        cols = gen_powerlaw(n, alpha, seed=q).entries.sum(axis=0)
        for k in cols:
            observed[k - 1] += 1
    k = np.arange(1, n, dtype=float)
    pmf = k ** -alpha
    pmf /= pmf.sum()
    stat = chisquare(observed, pmf * observed.sum())
    assert stat.pvalue > 1e-4


def test_gen_powerlaw_edges():
    # n=2 forces in-degree 1 for both nodes: the complete directed graph
    a = gen_powerlaw(2, 2.5, seed=0)
    assert density(a) == 1.0
    with pytest.raises(InvalidInputError):
        gen_powerlaw(10, 0.5, seed=0)
    with pytest.raises(InvalidInputError):
        gen_powerlaw(1, 2.5, seed=0)


def test_gen_sbm_analytic_density():
    n, k = 25, 5
    p_in = 0.3 * n ** -0.3
    p_out = 0.3 / n
    want = p_in / k + (1 - 1 / k) * p_out
    assert analytic_density("sbm", n, k=k) == pytest.approx(want)
    assert want == pytest.approx(0.032, abs=5e-4)


def test_gen_sbm_single_block():
    # k=1 puts everyone in one block: density concentrates at p_in
    assert analytic_density("sbm", 25, k=1) == pytest.approx(0.3 * 25 ** -0.3)
    vals = [density(gen_sbm(25, 1, seed=q)) for q in range(400)]
    se = mc_standard_error(vals)
    assert abs(np.mean(vals) - 0.3 * 25 ** -0.3) <= 4 * se


def test_gen_sbm_rejects_bad_k():
    with pytest.raises(InvalidInputError):
        gen_sbm(10, 11, seed=0)
    with pytest.raises(InvalidInputError):
        gen_sbm(10, 0, seed=0)


@pytest.mark.parametrize("kind,kwargs", [
    ("dyad", {}),
    ("powerlaw", {"alpha": 2.5}),
    ("sbm", {"k": 3}),
])
def test_generator_determinism(kind, kwargs):
    gen = {"dyad": gen_dyad, "powerlaw": gen_powerlaw, "sbm": gen_sbm}[kind]
    a = gen(25, seed=777, **kwargs)
    b = gen(25, seed=777, **kwargs)
    c = gen(25, seed=778, **kwargs)
    assert_array_equal(a.entries, b.entries)
    assert (a.entries != c.entries).any()


@pytest.mark.parametrize("kind,kwargs", [
    ("dyad", {}),
    ("powerlaw", {"alpha": 2.0}),
    ("sbm", {"k": 4}),
])
def test_generator_structural_invariants(kind, kwargs):
    gen = {"dyad": gen_dyad, "powerlaw": gen_powerlaw, "sbm": gen_sbm}[kind]
    for seed, n in [(0, 25), (1, 40), (2, 60)]:
        a = gen(n, seed=seed, **kwargs)
        assert a.entries.shape == (n, n)
        assert np.isin(a.entries, (0, 1)).all()
        assert not np.diag(a.entries).any()


@pytest.mark.parametrize("kind,kwargs", [
    ("dyad", {}),
    ("powerlaw", {"alpha": 2.5}),
    ("sbm", {"k": 5}),
])
def test_empirical_density_matches_analytic(kind, kwargs):
    gen = {"dyad": gen_dyad, "powerlaw": gen_powerlaw, "sbm": gen_sbm}[kind]
    n, reps = 25, 400
    vals = np.array([density(gen(n, seed=q, **kwargs)) for q in range(reps)])
    want = analytic_density(kind, n, **kwargs)
    se = mc_standard_error(vals)
    assert abs(vals.mean() - want) <= 4 * se + 1e-12


def test_row_sums_are_zero_or_one():
    for seed in range(20):
        net = normalize(gen_sbm(30, 4, seed=seed))
        sums = net.w.sum(axis=1)
        isolated = net.degrees == 0
        assert_allclose(sums[~isolated], 1.0, atol=1e-12)
        assert_allclose(sums[isolated], 0.0, atol=0.0)


def test_spectral_radius_at_most_one():
    for seed in range(20):
        net = normalize(gen_dyad(25, seed=seed))
        eig = np.abs(np.linalg.eigvals(net.w))
        assert eig.max() <= 1.0 + 1e-8


def test_edges_csv_round_trip(tmp_path):
    a = gen_sbm(20, 3, seed=5)
    path = tmp_path / "net.csv"
    save_edges_csv(a, path)
    header = path.read_text().splitlines()[0]
    assert header == "src,dst"
    assert_array_equal(load_edges_csv(path, n=20).entries, a.entries)
    # n inferred from the data still reproduces the matrix when the last
    # node participates in some edge
    b = load_edges_csv(path)
    assert b.n <= 20
    assert_array_equal(b.entries, a.entries[: b.n, : b.n])


def test_json_round_trip():
    a = gen_dyad(25, seed=9)
    assert_array_equal(AdjacencyMatrix.from_json(a.to_json()).entries, a.entries)


def test_loader_errors(tmp_path):
    bad_header = tmp_path / "bad1.csv"
    bad_header.write_text("from,to\n0,1\n")
    with pytest.raises(DataError):
        load_edges_csv(bad_header)

    self_loop = tmp_path / "bad2.csv"
    self_loop.write_text("src,dst\n1,1\n")
    with pytest.raises(DataError):
        load_edges_csv(self_loop)

    out_of_bounds = tmp_path / "bad3.csv"
    out_of_bounds.write_text("src,dst\n0,7\n")
    with pytest.raises(DataError):
        load_edges_csv(out_of_bounds, n=3)

    empty = tmp_path / "bad4.csv"
    empty.write_text("src,dst\n")
    with pytest.raises(DataError):
        load_edges_csv(empty)

    garbled = tmp_path / "bad5.csv"
    garbled.write_text("src,dst\n0,x\n")
    with pytest.raises(DataError):
        load_edges_csv(garbled)

    with pytest.raises(DataError):
        AdjacencyMatrix.from_json("{\"n\": 2}")


def test_analytic_density_unknown_kind():
    with pytest.raises(InvalidInputError):
        analytic_density("ring", 10)
