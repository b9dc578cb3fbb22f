import numpy as np
import pytest
from scipy.optimize import minimize

from xrprofile.models import (
    GRIDS, FittedModel, ModelError, ModelKind, ModelSpec, complexity, fit, grid, load_model, predict, save_model,
)
from xrprofile.models.linear import fit_logistic, fit_ridge, lr_gradient, lr_objective, one_hot
from xrprofile.models.tree import build_forest, build_tree, forest_vote


def blobs(rng, n_per=30, k=3, p=4, sep=3.0):
    centers = rng.normal(size=(k, p)) * sep
    X = np.vstack([c + rng.normal(size=(n_per, p)) for c in centers])
    y = np.repeat(np.arange(k), n_per)
    return X, y


def test_grid_sizes():
    assert {k: len(grid(k)) for k in ModelKind} == {
        ModelKind.Dummy: 1, ModelKind.LogisticRegression: 3, ModelKind.Ridge: 8,
        ModelKind.DecisionTree: 9, ModelKind.RandomForest: 27,
    }
    assert GRIDS[ModelKind.Ridge]["alpha"] == (0.01, 0.1, 1.0, 10.0)


def test_unknown_hyperparameter_rejected():
    with pytest.raises(ModelError, match="unknown hyperparameters"):
        ModelSpec(ModelKind.LogisticRegression, {"penalty": "l1"})


def test_complexity_orders_regularization():
    lr = sorted(grid(ModelKind.LogisticRegression), key=complexity)
    assert [s.hyperparameters["C"] for s in lr] == [0.1, 1.0, 10.0]
    ridge = sorted(grid(ModelKind.Ridge), key=complexity)
    assert ridge[0].hyperparameters["alpha"] == 10.0
    dt = sorted(grid(ModelKind.DecisionTree), key=complexity)
    assert dt[0].hyperparameters == {"max_depth": 3, "min_samples_leaf": 5}


def test_lr_objective_by_hand():
    X = np.array([[1.0], [-1.0]])
    Y = one_hot(np.array([0, 1]), 2)
    W = np.array([[1.0, -1.0]])
    b = np.zeros(2)
    # each row: log(1 + e^-2); penalty ||W||^2 / (2 C n) = 2 / 4
    expect = np.log1p(np.exp(-2.0)) + 0.5
    assert lr_objective(W, b, X, Y, C=1.0) == pytest.approx(expect, rel=1e-14)


def test_lr_matches_generic_optimizer(rng):
    X, y = blobs(rng, n_per=20, k=3, p=3, sep=0.8)
    Y = one_hot(y, 3)
    W, b, epochs, gnorm = fit_logistic(X, y, 3, C=1.0)
    assert gnorm < 1e-6 and epochs < 1000

    def f(theta):
        return lr_objective(theta[:9].reshape(3, 3), theta[9:], X, Y, 1.0)

    def g(theta):
        gW, gb = lr_gradient(theta[:9].reshape(3, 3), theta[9:], X, Y, 1.0)
        return np.concatenate([gW.ravel(), gb])

    ref = minimize(f, np.zeros(12), jac=g, method="BFGS", options={"gtol": 1e-10})
    assert lr_objective(W, b, X, Y, 1.0) <= ref.fun + 1e-10
    np.testing.assert_allclose(X @ W + b - (X @ W + b).mean(1, keepdims=True),
                               X @ ref.x[:9].reshape(3, 3) + ref.x[9:]
                               - (X @ ref.x[:9].reshape(3, 3) + ref.x[9:]).mean(1, keepdims=True), atol=1e-4)


def test_ridge_hand_solved():
    X = np.array([[0.0], [1.0], [2.0]])
    W, b = fit_ridge(X, np.array([0, 0, 1]), 2, alpha=1.0, fit_intercept=True)
    np.testing.assert_allclose(W, [[-2 / 3, 2 / 3]], rtol=1e-12)
    np.testing.assert_allclose(b, [1.0, -1.0], rtol=1e-12)


def test_ridge_normal_equations(rng):
    X = rng.normal(size=(25, 4))
    y = rng.integers(0, 3, 25)
    T = 2 * one_hot(y, 3) - 1
    W, b = fit_ridge(X, y, 3, alpha=0.5, fit_intercept=False)
    np.testing.assert_allclose((X.T @ X + 0.5 * np.eye(4)) @ W, X.T @ T, atol=1e-10)
    assert np.all(b == 0)
    W0, _ = fit_ridge(X, y, 3, alpha=0.0, fit_intercept=False)
    np.testing.assert_allclose(W0, np.linalg.lstsq(X, T, rcond=None)[0], atol=1e-12)


def xor_data():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 5, dtype=float)
    y = (X[:, 0] != X[:, 1]).astype(int)
    return X, y


def test_tree_solves_xor():
    X, y = xor_data()
    t = build_tree(X, y, 2, max_depth=2)
    assert np.array_equal(t.predict(X), y)
    assert t.depth == 2
    shallow = build_tree(X, y, 2, max_depth=1)
    assert np.mean(shallow.predict(X) == y) < 1.0


def test_tree_tie_breaks_to_lowest_feature_and_midpoint():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    y = np.array([0, 0, 1, 1])
    t = build_tree(X, y, 2, max_depth=1)
    assert t.feature[0] == 0 and t.threshold[0] == 1.5


def test_tree_min_samples_leaf(rng):
    X = rng.normal(size=(60, 3))
    y = rng.integers(0, 2, 60)
    t = build_tree(X, y, 2, max_depth=10, min_samples_leaf=7)
    leaves = t.counts[t.feature < 0].sum(axis=1)
    assert leaves.min() >= 7
    assert np.array_equal(np.bincount(t.leaf_index(X), minlength=len(t.feature))[t.feature < 0], leaves)


def test_forest_prefix_property(rng):
    X, y = blobs(rng, n_per=15, k=3, p=5, sep=1.0)
    big = build_forest(X, y, 3, 20, 3, 1, seed=9)
    small = build_forest(X, y, 3, 8, 3, 1, seed=9)
    for a, b in zip(big[:8], small):
        assert a.to_dict() == b.to_dict()
    spec = ModelSpec(ModelKind.RandomForest, {"n_estimators": 20, "max_depth": 3}, seed=9)
    m = fit(spec, X, y)
    np.testing.assert_array_equal(predict(m.truncated(8), X),
                                  np.asarray(m.classes, dtype=object)[forest_vote(small, X, 3)])


def test_dummy_follows_prior():
    X = np.zeros((1000, 1))
    y = np.array(["a"] * 700 + ["b"] * 300, dtype=object)
    m = fit(ModelSpec(ModelKind.Dummy, seed=4), X, y)
    pred = predict(m, np.zeros((20000, 1)))
    assert np.mean(pred == "a") == pytest.approx(0.7, abs=0.01)
    assert np.array_equal(pred, predict(m, np.zeros((20000, 1))))


@pytest.mark.parametrize("kind", [k for k in ModelKind if k is not ModelKind.Dummy])
def test_models_learn_separable_blobs(kind, rng):
    X, y = blobs(rng, n_per=25, k=3, p=4, sep=4.0)
    labels = np.array(["p", "q", "r"], dtype=object)[y]
    m = fit(ModelSpec(kind, seed=1), X, labels)
    assert np.mean(predict(m, X) == labels) > 0.95


@pytest.mark.parametrize("kind", list(ModelKind))
def test_save_load_roundtrip(kind, rng, tmp_path):
    X, y = blobs(rng, n_per=10, k=2, p=3)
    ids = ["a", "b", "c"]
    m = fit(ModelSpec(kind, seed=3), X, y.astype(str), ids)
    path = tmp_path / "m.json"
    save_model(m, str(path))
    back = load_model(str(path))
    np.testing.assert_array_equal(predict(back, X, ids), predict(m, X, ids))


def test_predict_reorders_and_checks_columns(rng):
    X, y = blobs(rng, n_per=10, k=2, p=3)
    m = fit(ModelSpec(ModelKind.LogisticRegression), X, y.astype(str), ["a", "b", "c"])
    perm = X[:, [2, 0, 1]]
    np.testing.assert_array_equal(predict(m, perm, ["c", "a", "b"]), predict(m, X, ["a", "b", "c"]))
    with pytest.raises(ModelError, match="column mismatch: missing \\['c'\\], extra \\['d'\\]"):
        predict(m, X, ["a", "b", "d"])


def test_fit_input_errors():
    with pytest.raises(ModelError, match="single class"):
        fit(ModelSpec(ModelKind.Ridge), np.zeros((4, 2)), ["a"] * 4)
    with pytest.raises(ModelError, match="non-finite"):
        fit(ModelSpec(ModelKind.Ridge), np.array([[np.nan], [1.0]]), ["a", "b"])


def test_constant_feature_standardization():
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    y = (np.arange(10) >= 5).astype(str)
    m = fit(ModelSpec(ModelKind.LogisticRegression), X, y)
    assert np.all(np.isfinite(m.params["W"]))
    assert isinstance(m, FittedModel)
