import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_dataset, numeric
from forestsel.forest import ImportanceVector
from forestsel.tuning import (
    EmptySelectionWarning,
    ImportanceMatrix,
    argmin_choice,
    compute_vi_min,
    default_grid,
    quadratic_distance,
    select_m,
    select_variables,
    sweep_candidates,
    threshold_from_matrix,
)


def _sigma_matrix(sigma, q=3):
    """A q x len(sigma) matrix whose column minima are ``sigma``."""
    sigma = np.asarray(sigma, float)
    return np.vstack([sigma, sigma + 1, sigma + 2][:q])


# ---------------------------------------------------------------- threshold


def test_vi_min_hand_values():
    assert threshold_from_matrix(_sigma_matrix([1, 2, 3])).vi_min == pytest.approx(2.0, rel=1e-12)
    t = threshold_from_matrix(_sigma_matrix([0.7] * 5))
    assert t.vi_min == pytest.approx(0.7, rel=1e-12)
    assert threshold_from_matrix(_sigma_matrix([4.0])).vi_min == 4.0


def test_zero_entries_and_columns_skipped():
    M = np.array([[0.0, 0.0, 2.0], [3.0, 0.0, 5.0], [1.0, 0.0, 0.0]])
    t = threshold_from_matrix(M)
    assert t.sigma.tolist() == [1.0, 2.0]
    assert t.skipped == [1]
    assert t.vi_min == pytest.approx(1 + np.std([1.0, 2.0], ddof=1))
    with pytest.raises(ValueError):
        threshold_from_matrix(np.zeros((3, 2)))


def test_sign_conventions():
    M = np.array([[-2.0, 1.0], [3.0, 4.0]])
    signed = threshold_from_matrix(M)
    assert signed.sigma.tolist() == [-2.0, 1.0]
    positive = threshold_from_matrix(M, "positive")
    assert positive.sigma.tolist() == [3.0, 1.0]
    assert positive.to_dict()["sign_convention"] == "positive"
    with pytest.raises(ValueError):
        threshold_from_matrix(M, "absolute")


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 8)), elements=st.floats(0.1, 50)))
def test_threshold_algebra(M):
    t = threshold_from_matrix(M)
    assert t.vi_min >= t.sigma.min()
    assert (t.vi_min == t.sigma.min()) == bool(np.all(t.sigma == t.sigma[0]))
    # shifting every entry by c (no zeros created) shifts the threshold by c
    c = 3.25
    assert threshold_from_matrix(M + c).vi_min == pytest.approx(t.vi_min + c, rel=1e-9)
    for j in range(M.shape[1]):
        assert quadratic_distance(M + c, j) == pytest.approx(quadratic_distance(M, j), abs=1e-9)


def test_compute_vi_min_runs():
    rng = np.random.default_rng(0)
    x = rng.normal(size=120)
    d = make_dataset([numeric("x", x), numeric("z", rng.normal(size=120))], rng.poisson(np.exp(x)))
    a = compute_vi_min(d, "forest", n_r=4, seed=1, ntree=20)
    b = compute_vi_min(d, "forest", n_r=4, seed=1, ntree=20, threads=3)
    assert a.n_r == 4 and a.matrix.entries.shape == (2, 4)
    np.testing.assert_array_equal(a.matrix.entries, b.matrix.entries)
    assert a.vi_min == b.vi_min
    t = compute_vi_min(d, "tree", n_r=5, seed=1)
    assert t.matrix.entries.shape == (2, 5)


def test_compute_vi_min_constant_target():
    d = make_dataset([numeric("x", np.arange(40.0))], np.full(40, 2))
    with pytest.raises(ValueError, match="constant"):
        compute_vi_min(d, "forest", n_r=3, ntree=5)


# ---------------------------------------------------------------- distance and m


def test_quadratic_distance_hand_values():
    M = np.array([[0.0, 2.0], [0.0, 0.0]])
    assert quadratic_distance(M, 0) == pytest.approx(1.0, rel=1e-12)
    assert quadratic_distance(M, 1) == pytest.approx(1.0, rel=1e-12)
    same = np.tile([[1.0], [5.0], [2.0]], (1, 4))
    assert all(quadratic_distance(same, j) == 0 for j in range(4))
    with pytest.raises(IndexError):
        quadratic_distance(M, 2)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-10, 10)), st.randoms())
def test_distance_row_permutation_invariant(M, rnd):
    perm = list(range(M.shape[0]))
    rnd.shuffle(perm)
    for j in range(M.shape[1]):
        d = quadratic_distance(M, j)
        assert d >= 0
        assert quadratic_distance(M[perm], j) == pytest.approx(d, abs=1e-9)


def test_argmin_choice():
    assert argmin_choice([7], np.array([0.3])) == ([7], 7, 7)
    assert argmin_choice([5, 10, 25], np.array([0.2, 0.1, 0.1])) == ([10, 25], 10, 25)
    assert argmin_choice([1, 2, 3], np.array([0.0, 0.0, 0.0])) == ([1, 2, 3], 1, 3)


def test_default_grid():
    assert default_grid("tree", 30) == [1, 2, 3, 5, 8, 13, 21]
    assert default_grid("forest", 30) == [10, 25, 50, 100, 250, 500]


def _signal_data(n=150, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    return make_dataset([numeric("x", x), numeric("z", rng.normal(size=n))], rng.poisson(np.exp(0.8 * x)))


def test_select_m_single_candidate():
    s = select_m(_signal_data(), "tree", [4], seed=0)
    assert s.argmin_set == [4] and s.chosen_min_node_size == 4 == s.chosen_ntree


def test_select_m_engineered_tie():
    # a clean step target: node sizes 1 and 2 grow the same tree on the same bootstrap
    x = np.arange(1, 41, dtype=float)
    d = make_dataset([numeric("x", x)], np.where(x > 20, 6, 0))
    s = select_m(d, "tree", [1, 2], seed=3)
    assert s.distances.tolist() == [0.0, 0.0]
    assert (s.chosen_min_node_size, s.chosen_ntree) == (1, 2)


def test_forest_sweep_uses_prefixes():
    d = _signal_data()
    sweep, models = sweep_candidates(d, "forest", [5, 20, 10], seed=2)
    assert sweep.candidates == [5, 20, 10]
    assert models.forest.ntree == 20
    forest, imp = models.model_for(sweep)
    assert forest.ntree == sweep.chosen_ntree
    j = sweep.candidates.index(sweep.chosen_ntree)
    np.testing.assert_allclose(imp, sweep.matrix.entries[:, j])
    assert np.all(np.isfinite(sweep.distances)) and np.all(sweep.distances >= 0)
    assert sweep.chosen_ntree in sweep.candidates


def test_select_m_deterministic_and_threaded():
    d = _signal_data()
    a = select_m(d, "tree", [1, 5, 10, 25, 50], seed=4)
    b = select_m(d, "tree", [1, 5, 10, 25, 50], seed=4, threads=3)
    assert a.to_dict() == b.to_dict()
    assert a.chosen_min_node_size in a.candidates


def test_select_m_rejects_bad_candidates():
    d = _signal_data(n=20)
    with pytest.raises(ValueError):
        select_m(d, "tree", [0, 5])
    with pytest.raises(ValueError):
        select_m(d, "tree", [21])
    with pytest.raises(ValueError):
        select_m(d, "forest", [0])
    with pytest.raises(ValueError):
        select_m(d, "bagging", [3])


# ---------------------------------------------------------------- selection


def _iv(values):
    return ImportanceVector(np.asarray(values, float), [f"v{i + 1}" for i in range(len(values))])


def test_select_variables_examples():
    assert select_variables(_iv([0.2, 1.4, 3.0]), 1.1) == ["v2", "v3"]
    assert select_variables(_iv([0.0, -0.3, 0.5, 2.0]), 0.0) == ["v3", "v4"]
    with pytest.warns(EmptySelectionWarning):
        assert select_variables(_iv([0.1, 0.2]), 5.0) == []


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.floats(-5, 5), st.floats(0, 3))
def test_selection_monotone(values, t, bump):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySelectionWarning)
        low = set(select_variables(_iv(values), t))
        high = set(select_variables(_iv(values), t + bump))
    assert high <= low


def test_importance_matrix_validation():
    with pytest.raises(ValueError):
        ImportanceMatrix(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        ImportanceMatrix(np.zeros((0, 2)))
