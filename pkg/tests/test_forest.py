import json

import numpy as np
import pytest

from conftest import categorical, make_dataset, numeric
from forestsel.cart import fit_bootstrap_tree, predict_tree
from forestsel.forest import (
    default_subset_size,
    fit_forest,
    forest_importance,
    load_forest,
    oob_error,
    oob_predictions,
    per_tree_importance,
    predict_forest,
    save_forest,
    tree_seed,
)


def _mixed(n=120, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    c = rng.integers(0, 4, n)
    y = rng.poisson(np.exp(0.8 * x + 0.5 * (c == 2)))
    return make_dataset([numeric("x", x), categorical("c", c, 4), numeric("z", rng.normal(size=n))], y)


def test_default_subset_size():
    assert [default_subset_size(q) for q in (1, 2, 3, 9, 160)] == [1, 1, 1, 3, 53]


def test_single_tree_forest_is_bootstrap_tree():
    d = _mixed()
    f = fit_forest(d, ntree=1, min_node_size=3, seed=11)
    t = fit_bootstrap_tree(d, 3, default_subset_size(d.q), tree_seed(11, 0))
    assert f.trees[0].to_json() == t.to_json()


def test_determinism_and_prefix():
    d = _mixed()
    a = fit_forest(d, 30, 5, seed=4)
    b = fit_forest(d, 30, 5, seed=4)
    assert [t.to_json() for t in a.trees] == [t.to_json() for t in b.trees]
    small = fit_forest(d, 12, 5, seed=4)
    assert [t.to_json() for t in a.head(12).trees] == [t.to_json() for t in small.trees]
    c = fit_forest(d, 30, 5, seed=5)
    assert [t.to_json() for t in a.trees] != [t.to_json() for t in c.trees]


def test_threads_match_sequential():
    d = _mixed()
    a = fit_forest(d, 20, 5, seed=1, threads=1)
    b = fit_forest(d, 20, 5, seed=1, threads=4)
    assert [t.to_json() for t in a.trees] == [t.to_json() for t in b.trees]
    np.testing.assert_array_equal(per_tree_importance(a, d, 2, threads=1), per_tree_importance(b, d, 2, threads=3))


def test_oob_fraction():
    d = _mixed(n=200, seed=2)
    f = fit_forest(d, 100, 5, seed=0)
    frac = np.mean([t.oob_mask.mean() for t in f.trees])
    assert 0.33 <= frac <= 0.41
    _, hits = oob_predictions(f, d)
    assert np.all(hits > 0)


def test_additivity_and_mean_bound():
    d = _mixed()
    f = fit_forest(d, 25, 2, seed=3)
    per_tree = np.vstack([predict_tree(t, d) for t in f.trees])
    pred = predict_forest(f, d)
    np.testing.assert_allclose(pred, per_tree.mean(axis=0), rtol=1e-12)
    assert np.all(pred >= per_tree.min(axis=0) - 1e-12)
    assert np.all(pred <= per_tree.max(axis=0) + 1e-12)


def test_constant_target():
    d = make_dataset([numeric("x", np.arange(30.0))], np.full(30, 3))
    f = fit_forest(d, 20, 1, seed=0)
    assert np.all(predict_forest(f, d) == 3.0)
    assert float(oob_error(f, d)) == 0.0
    assert np.all(forest_importance(f, d).values == 0.0)


def test_toy_oob_error_below_variance(toy6):
    f = fit_forest(toy6, 200, 1, seed=0)
    err = oob_error(f, toy6)
    assert err.rows_used == 6
    assert 0 <= err.value < 6.25


def test_oob_error_skips_rows():
    d = _mixed(n=40)
    f = fit_forest(d, 2, 5, seed=0)
    err = oob_error(f, d)
    assert err.rows_used + err.rows_skipped == 40
    assert err.rows_skipped > 0


def test_importance_ranks_signal():
    d = _mixed(n=300, seed=5)
    f = fit_forest(d, 100, 5, seed=0)
    imp = forest_importance(f, d, seed=1)
    assert imp.variable_names == ["x", "c", "z"]
    assert imp.values[0] > imp.values[2]
    np.testing.assert_array_equal(imp.values, per_tree_importance(f, d, 1).mean(axis=0))


def test_noise_importance_centered():
    rng = np.random.default_rng(9)
    means = []
    for s in range(30):
        n = 150
        x = rng.normal(size=n)
        d = make_dataset([numeric("x", x), numeric("noise", rng.normal(size=n))], rng.poisson(np.exp(0.7 * x)))
        means.append(forest_importance(fit_forest(d, 30, 5, seed=s), d, seed=s).values[1])
    means = np.array(means)
    # |mean| within 3 standard errors of 0
    assert abs(means.mean()) < 3 * means.std(ddof=1) / np.sqrt(means.size)


def test_oob_error_variance_shrinks_with_ntree():
    d = _mixed(n=100, seed=7)
    spread = {}
    for ntree in (10, 100, 500):
        errs = [oob_error(fit_forest(d, ntree, 5, seed=s), d).value for s in range(8)]
        spread[ntree] = np.var(errs, ddof=1)
    assert spread[10] > spread[100] > spread[500]


def test_bundle_roundtrip(tmp_path):
    d = _mixed()
    f = fit_forest(d, 5, 3, seed=2)
    save_forest(f, tmp_path / "m", {"note": "x"})
    g, manifest = load_forest(tmp_path / "m")
    assert manifest["note"] == "x" and manifest["ntree"] == 5
    np.testing.assert_array_equal(predict_forest(g, d), predict_forest(f, d))
    m = json.loads((tmp_path / "m" / "manifest.json").read_text())
    m["schema"][0]["name"] = "renamed"
    (tmp_path / "m" / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(ValueError, match="hash"):
        load_forest(tmp_path / "m")


def test_errors():
    d = _mixed()
    with pytest.raises(ValueError):
        fit_forest(d, 0)
    f = fit_forest(d, 3, 5, seed=0)
    with pytest.raises(ValueError, match="not grown"):
        oob_error(f, d.take(np.arange(10)))
