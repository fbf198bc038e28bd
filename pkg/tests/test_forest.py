import numpy as np
import pytest

from walkstress.forest import (ForestError, ForestModel, ForestParams, GridSpec, _tree_seeds, format_mean_sd,
                               gini_importances, grid_search, predict, predict_proba, resolve_max_features,
                               train_forest, tree_proba_sums)
from walkstress.fusion import FeatureMatrix, make_folds


def _matrix(rng, n=200, f=8, informative=2, noise=0.5):
    y = rng.integers(0, 3, n)
    X = rng.normal(size=(n, f))
    X[:, :informative] += y[:, None] * (1.0 / noise)
    labels = np.array(["A", "B", "C"])[y]
    return FeatureMatrix(X, labels, [f"f{i}" for i in range(f)], np.array([f"p{i % 4}" for i in range(n)]),
                         np.zeros(n, str), np.arange(n))


def _gini_n(counts):
    n = counts.sum()
    return n - (counts ** 2).sum() / n


def _best_root_split(X, y, n_classes):
    """Exhaustive search over features and midpoints; ties to lowest feature, then threshold."""
    best = (np.inf, None, None)
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            left = X[:, f] <= thr
            cost = _gini_n(np.bincount(y[left], minlength=n_classes).astype(float)) + \
                _gini_n(np.bincount(y[~left], minlength=n_classes).astype(float))
            if cost < best[0] - 1e-9:
                best = (cost, f, thr)
    return best


def test_root_split_matches_exhaustive_search(rng):
    for trial in range(10):
        m = _matrix(rng, n=60, f=4)
        model = train_forest(m, ForestParams(1, "all", max_depth=1), seed=trial)
        boot_rng, _ = _tree_seeds(trial, 0)
        boot = boot_rng.integers(0, len(m), len(m))
        y = np.searchsorted(model.class_set, m.y[boot])
        _, f, thr = _best_root_split(m.X[boot], y, len(model.class_set))
        t = model.trees[0]
        assert t.feature[0] == f
        assert t.threshold[0] == pytest.approx(thr, abs=1e-12)
        assert t.value[0].sum() == len(m)


def test_single_tree_fits_training_data(rng):
    m = _matrix(rng, n=100)
    # every bootstrap draw of a deep tree is fitted exactly
    model = train_forest(m, ForestParams(1, "all"), seed=0)
    boot_rng, _ = _tree_seeds(0, 0)
    boot = np.unique(boot_rng.integers(0, len(m), len(m)))
    assert np.array_equal(predict(model, m.X[boot]), m.y[boot])


def test_thread_and_prefix_invariance(rng):
    m = _matrix(rng)
    a = train_forest(m, ForestParams(12), seed=4, threads=1)
    b = train_forest(m, ForestParams(12), seed=4, threads=4)
    for s, t in zip(a.trees, b.trees):
        assert np.array_equal(s.feature, t.feature) and np.array_equal(s.threshold, t.threshold)
    c = train_forest(m, ForestParams(5), seed=4)
    assert np.array_equal(tree_proba_sums(a, m.X, (5,))[5], predict_proba(c, m.X))
    assert np.array_equal(a.importances, b.importances)


def test_proba_rows_sum_to_one(rng):
    m = _matrix(rng)
    p = predict_proba(train_forest(m, ForestParams(10), seed=1), m.X)
    assert np.allclose(p.sum(axis=1), 1.0)


def test_importances(rng):
    m = _matrix(rng, informative=2)
    model = train_forest(m, ForestParams(30), seed=2)
    assert model.importances.sum() == pytest.approx(1.0)
    assert set(np.argsort(model.importances)[-2:]) == {0, 1}
    fresh = ForestModel.from_json(model.to_json())
    assert np.allclose(gini_importances(fresh), model.importances, atol=1e-12)


def test_save_load(tmp_path, rng):
    m = _matrix(rng)
    model = train_forest(m, ForestParams(6), seed=3)
    model.save(tmp_path / "m.json")
    back = ForestModel.load(tmp_path / "m.json")
    assert np.array_equal(predict_proba(back, m.X), predict_proba(model, m.X))
    with pytest.raises(ForestError, match="width mismatch"):
        predict_proba(back, m.X[:, :3])


def test_errors(rng):
    m = _matrix(rng, n=10)
    with pytest.raises(ForestError, match="single-class"):
        train_forest(m.subset(np.flatnonzero(m.y == "A")))
    bad = FeatureMatrix(np.where(np.eye(10, 8) > 0, np.nan, m.X), m.y, m.columns, m.participants, m.walks,
                        m.seconds)
    with pytest.raises(ForestError, match="non-finite"):
        train_forest(bad)


def test_max_features_rules():
    assert resolve_max_features("sqrt", 206) == 14
    assert resolve_max_features(0.5, 206) == 7
    assert resolve_max_features(2.0, 206) == 29
    assert resolve_max_features("all", 206) == 206
    assert resolve_max_features(1.0, 3) == 2
    with pytest.raises(ForestError):
        resolve_max_features("log2x", 10)


def test_grid_search_prefix_and_best(rng):
    m = _matrix(rng, n=150)
    grid = GridSpec((4, 8), (1.0, "all"))
    res = grid_search(m, grid, k=3, seed=0)
    assert len(res.cells) == 4
    best = max(res.cells, key=lambda c: c.mean)
    assert max(c.mean for c in res.cells) == pytest.approx(best.mean)
    assert res.model.n_estimators == res.best.n_estimators
    assert res.oof.shape == (150, 3)
    assert format_mean_sd(0.8412, 0.0049) == "84 (0.5)"
