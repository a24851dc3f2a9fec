import itertools
import math

import numpy as np
import pytest

from gridstab.errors import DegenerateData, MissingFeature, SchemaMismatch
from gridstab.metrics import average_precision, stratified_folds
from gridstab.ml import (Dataset, HyperParamSpace, TrainParams, Tree, TreeEnsembleModel, classify,
                         cross_validated_ap, feature_importance, load_model, log_loss, predict, predict_margin,
                         random_search, recursive_feature_elimination, save_model, sigmoid, train_decision_tree,
                         train_gbt, train_model, tree_shap)

SMALL = TrainParams(n_trees=30, learning_rate=0.2, max_depth=3, min_leaf=5)


def _ds(X, y, names=None):
    X = np.asarray(X, float).reshape(len(y), -1)
    return Dataset(X, y, tuple(names or (f"x{i}" for i in range(X.shape[1]))))


def synthetic(n=600, noise=3, seed=0, flip=0.05):
    """Two informative columns, ``noise`` irrelevant ones, a few flipped labels."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2 + noise))
    y = (X[:, 0] + 0.7 * X[:, 1] > 0.3).astype(int)
    y ^= rng.random(n) < flip
    return _ds(X, y, ["a", "b"] + [f"noise{i}" for i in range(noise)])


# ------------------------------------------------------------------ decision tree


def test_dt_one_dimensional_split():
    x = np.linspace(0, 1, 101)
    y = (x > 0.5).astype(int)
    m = train_decision_tree(_ds(x, y), TrainParams(max_depth=3, min_leaf=1))
    t = m.trees[0]
    assert t.n_nodes == 3
    assert t.threshold[0] == pytest.approx(0.505)
    assert np.all((predict(m, x.reshape(-1, 1)) >= 0.5) == y.astype(bool))


def test_dt_degenerate():
    with pytest.raises(DegenerateData):
        train_decision_tree(_ds(np.arange(5.0), np.zeros(5, int)))
    with pytest.raises(DegenerateData):
        train_gbt(_ds(np.arange(5.0), np.ones(5, int)))


def test_dt_leaves_hold_subset_log_odds():
    data = synthetic(400, noise=1, flip=0.2)
    m = train_decision_tree(data, TrainParams(max_depth=4, min_leaf=10))
    t = m.trees[0]
    leaf = t.leaf_index(data.X)
    for nd in np.unique(leaf):
        p = data.y[leaf == nd].mean()
        p = min(max(p, 1e-6), 1 - 1e-6)
        assert t.value[nd] == pytest.approx(math.log(p / (1 - p)), abs=1e-12)
        assert t.cover[nd] == np.sum(leaf == nd)


def _entropy(y):
    p = y.mean()
    return 0.0 if p in (0, 1) else -(p * math.log(p) + (1 - p) * math.log(1 - p))


def test_dt_root_split_maximises_entropy_gain():
    data = synthetic(150, noise=2, flip=0.15, seed=4)
    t = train_decision_tree(data, TrainParams(max_depth=1, min_leaf=1)).trees[0]
    n = len(data)
    best = (-1.0, None)
    for f in range(data.X.shape[1]):
        vals = np.unique(data.X[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            left = data.X[:, f] <= (lo + hi) / 2
            gain = _entropy(data.y) - left.mean() * _entropy(data.y[left]) - (~left).mean() * _entropy(data.y[~left])
            if gain > best[0] + 1e-12:
                best = (gain, (f, (lo + hi) / 2))
    assert (int(t.feature[0]), t.threshold[0]) == (best[1][0], pytest.approx(best[1][1]))
    assert n == t.cover[0]


# ------------------------------------------------------------------ boosting


def test_gbt_balanced_prior_is_zero():
    m = train_gbt(_ds([0, 1, 2, 3], [0, 1, 0, 1]), TrainParams(n_trees=0))
    assert m.base_score == 0.0
    np.testing.assert_allclose(predict(m, np.zeros((3, 1))), 0.5)


def test_gbt_separable_reaches_perfect_ap():
    x = np.linspace(-1, 1, 80)
    y = (x > 0.1).astype(int)
    m = train_gbt(_ds(x, y), TrainParams(n_trees=10, min_leaf=2))
    assert average_precision(predict(m, x.reshape(-1, 1)), y) == 1.0


def test_gbt_single_stump_newton_step():
    # prior 4/6: F0 = log 2, p = 2/3, residuals -2/3 (x2) and 1/3 (x4), hessians 2/9
    x = np.arange(1.0, 7.0)
    y = np.array([0, 0, 1, 1, 1, 1])
    m = train_gbt(_ds(x, y), TrainParams(n_trees=1, learning_rate=1.0, max_depth=1, min_leaf=1))
    assert m.base_score == pytest.approx(math.log(2))
    t = m.trees[0]
    assert t.threshold[0] == 2.5
    # left: (-4/3) / (4/9 + 1); right: (4/3) / (8/9 + 1)
    assert t.value[t.left[0]] == pytest.approx(-12 / 13)
    assert t.value[t.right[0]] == pytest.approx(12 / 17)


def test_training_loss_non_increasing():
    for seed in range(5):
        data = synthetic(300, seed=seed, flip=0.2)
        for kind in ("stumps", "gbt"):
            m = train_model(kind, data, TrainParams(n_trees=40, learning_rate=0.5, min_leaf=3, seed=seed))
            assert np.all(np.diff(m.train_loss) <= 1e-15)
            assert m.train_loss[-1] == pytest.approx(log_loss(data.y, predict_margin(m, data)))


def test_stumps_equal_depth_capped_gbt():
    data = synthetic(300)
    p = TrainParams(n_trees=20, max_depth=4, colsample=0.6, seed=3)
    a = train_model("stumps", data, p)
    b = train_gbt(data, p, depth_cap=1)
    assert a.dumps() == b.dumps()
    assert all(t.depth == 1 for t in a.trees)
    assert max(t.depth for t in train_model("gbt", data, p).trees) > 1


def test_models_deterministic_and_roundtrip(tmp_path):
    data = synthetic(300)
    for kind in ("dt", "stumps", "gbt"):
        p = TrainParams(n_trees=15, colsample=0.7, seed=9)
        a, b = train_model(kind, data, p), train_model(kind, data, p)
        assert a.dumps() == b.dumps()
        save_model(a, tmp_path / f"{kind}.json")
        back = load_model(tmp_path / f"{kind}.json")
        assert back.dumps() == a.dumps()
        np.testing.assert_array_equal(predict(back, data), predict(a, data))
        for t in a.trees:
            assert {data.features[i] for i in t.used_features()} <= set(a.features)
    with pytest.raises(SchemaMismatch):
        TreeEnsembleModel.from_dict({"format": "other"})


def test_affine_feature_transform_keeps_classifications():
    data = synthetic(400)
    fresh = synthetic(200, seed=7)
    moved = Dataset(2 * data.X + 1, data.y, data.features)
    for kind in ("dt", "stumps", "gbt"):
        a = train_model(kind, data, SMALL)
        b = train_model(kind, moved, SMALL)
        np.testing.assert_array_equal(classify(a, data), classify(b, moved))
        np.testing.assert_array_equal(classify(a, fresh.X), classify(b, 2 * fresh.X + 1))


# ------------------------------------------------------------------ prediction


def test_predict_examples():
    m = TreeEnsembleModel("gbt", ("x",), 0.0, 0.1)
    assert predict(m, {"x": 3.0})[0] == 0.5
    X = np.random.default_rng(0).normal(size=(50, 1))
    assert np.all(classify(m, X, 0.0) == "critical")
    assert np.all(classify(m, X, 1 + 1e-12) == "stable")
    with pytest.raises(MissingFeature):
        predict(m, {"y": 1.0})
    with pytest.raises(MissingFeature):
        predict(m, np.zeros((2, 3)))


def test_sigmoid_strictly_increasing():
    f = np.sort(np.random.default_rng(1).uniform(-30, 30, 100))
    y = sigmoid(f)
    assert np.all(np.diff(y) > 0) and np.all((y > 0) & (y < 1))


def test_predict_accepts_named_columns_in_any_order():
    data = synthetic(200)
    m = train_model("gbt", data, SMALL)
    rev = data.select(list(reversed(data.features)))
    np.testing.assert_array_equal(predict(m, rev), predict(m, data))


# ------------------------------------------------------------------ tuning


def test_random_search_single_draw():
    data = synthetic(300)
    space = HyperParamSpace(n_trees=(5, 20), draws=1, seed=3)
    res = random_search(space, data.subset(np.arange(200)), data.subset(np.arange(200, 300)))
    assert res.best == space.sample()[0] and len(res.scores) == 1


def test_random_search_picks_best_draw_and_is_deterministic():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(500, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
    data = _ds(X, y)
    tr, va = data.subset(np.arange(350)), data.subset(np.arange(350, 500))
    space = HyperParamSpace(n_trees=(1, 200), max_depth=(1, 3), min_leaf=(2, 10), draws=6, seed=11)
    res = random_search(space, tr, va)
    scores = [average_precision(predict(train_model("gbt", tr, p), va), va.y) for p in space.sample()]
    assert res.scores == scores
    assert res.best == space.sample()[int(np.argmax(scores))]
    assert random_search(space, tr, va).best == res.best
    # a single shallow tree cannot represent the interaction
    weak = HyperParamSpace(n_trees=(1, 1), max_depth=(1, 1), draws=1)
    assert random_search(weak, tr, va).best_score < res.best_score - 0.2


def test_hyper_space_validation():
    with pytest.raises(ValueError):
        HyperParamSpace(n_trees=(5, 2))
    with pytest.raises(ValueError):
        HyperParamSpace(draws=0)


# ------------------------------------------------------------------ explanations


def _cond_expectation(tree: Tree, x, subset):
    def visit(nd):
        f = tree.feature[nd]
        if f < 0:
            return tree.value[nd]
        l, r = tree.left[nd], tree.right[nd]
        if f in subset:
            return visit(l if x[f] <= tree.threshold[nd] else r)
        return (tree.cover[l] * visit(l) + tree.cover[r] * visit(r)) / tree.cover[nd]
    return visit(0)


def brute_shapley(model: TreeEnsembleModel, x):
    """Shapley values over every feature coalition, with the cover-weighted conditional expectation."""
    m = len(model.features)
    phi = np.zeros(m)
    for t in model.trees:
        for i in range(m):
            rest = [j for j in range(m) if j != i]
            for r in range(m):
                for S in itertools.combinations(rest, r):
                    w = math.factorial(r) * math.factorial(m - r - 1) / math.factorial(m)
                    phi[i] += w * model.learning_rate * (_cond_expectation(t, x, set(S) | {i})
                                                         - _cond_expectation(t, x, set(S)))
    return phi


def test_shap_single_stump():
    m = train_gbt(_ds(np.arange(1.0, 7.0), [0, 0, 1, 1, 1, 1]),
                  TrainParams(n_trees=1, learning_rate=1.0, max_depth=1, min_leaf=1))
    X = np.array([[0.0], [2.0], [3.0], [9.0]])
    phi, base = tree_shap(m, X)
    np.testing.assert_allclose(phi[:, 0], predict_margin(m, X) - base, atol=1e-14)


def test_shap_depth_two_tree_matches_coalitions():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 1])
    m = train_decision_tree(_ds(X, y), TrainParams(max_depth=2, min_leaf=1))
    assert m.trees[0].depth == 2
    phi, base = tree_shap(m, X)
    for i, x in enumerate(X):
        np.testing.assert_allclose(phi[i], brute_shapley(m, x), atol=1e-9)
    np.testing.assert_allclose(phi.sum(1) + base, predict_margin(m, X), atol=1e-9)


def test_shap_matches_coalitions_on_boosted_models():
    data = synthetic(200, noise=2)
    m = train_model("gbt", data, TrainParams(n_trees=5, max_depth=3, min_leaf=5))
    phi, _ = tree_shap(m, data.X[:10])
    for i in range(10):
        np.testing.assert_allclose(phi[i], brute_shapley(m, data.X[i]), atol=1e-9)


def test_shap_local_accuracy_and_unused_features():
    data = synthetic(1000, noise=3)
    for kind in ("dt", "stumps", "gbt"):
        m = train_model(kind, data, TrainParams(n_trees=40, max_depth=4, min_leaf=5, colsample=0.5))
        phi, base = tree_shap(m, data)
        assert np.abs(phi.sum(1) + base - predict_margin(m, data)).max() < 1e-6
        unused = [i for i, f in enumerate(data.features) if f not in m.used_features()]
        assert np.all(phi[:, unused] == 0)
        imp = feature_importance(m, data)
        assert abs(imp.sum() - 1) < 1e-9 and np.all(imp >= 0)
        assert np.all(imp[unused] == 0)


def test_importance_single_feature():
    x = np.linspace(0, 1, 50)
    m = train_model("gbt", _ds(x, (x > 0.4).astype(int)), TrainParams(n_trees=5, min_leaf=2))
    np.testing.assert_array_equal(feature_importance(m, x.reshape(-1, 1)), [1.0])


def test_importance_duplicated_feature_splits_its_share():
    data = synthetic(800, noise=2)
    dup = Dataset(np.column_stack([data.X, data.X[:, 0]]), data.y, data.features + ("a_copy",))
    p = TrainParams(n_trees=40, min_leaf=5, colsample=0.8, seed=2)
    single = feature_importance(train_model("gbt", data, p), data)[0]
    both = feature_importance(train_model("gbt", dup, p), dup)
    assert both[0] + both[-1] == pytest.approx(single, rel=0.2)


# ------------------------------------------------------------------ elimination


@pytest.fixture(scope="module")
def rfe_result():
    return recursive_feature_elimination(synthetic(600, noise=3), "gbt", SMALL, seed=1)


def test_rfe_drops_noise_first(rfe_result):
    dropped = [s.dropped for s in rfe_result.trace]
    assert len(rfe_result.trace) == 4
    assert set(dropped[:3]) == {"noise0", "noise1", "noise2"}
    assert [len(s.features) for s in rfe_result.trace] == [5, 4, 3, 2]


def test_rfe_optimal_set_rule(rfe_result):
    best = max(s.cv_ap for s in rfe_result.trace)
    eligible = [s for s in rfe_result.trace if s.cv_ap >= best - 0.002]
    assert len(rfe_result.optimal) == min(len(s.features) for s in eligible)
    assert set(rfe_result.optimal) >= {"a", "b"}


def test_duplicated_feature_barely_moves_cv_ap():
    for seed in range(3):
        data = synthetic(600, noise=1, seed=seed)
        dup = Dataset(np.column_stack([data.X, data.X[:, 1]]), data.y, data.features + ("b_copy",))
        folds = stratified_folds(data.y, 4, 0)
        a, _ = cross_validated_ap("gbt", dup, SMALL, folds)
        b, _ = cross_validated_ap("gbt", data, SMALL, folds)
        assert abs(a - b) < 0.002
