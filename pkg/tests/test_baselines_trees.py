import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netqos.errors import BadHyper, EmptyTrainSet, KindUnsupported
from netqos.learn import baselines, trees
from netqos.learn.model import baseline_train, labels_from_proba

from conftest import random_split


def gini(y):
    if len(y) == 0:
        return 0.0
    p = np.mean(y)
    return 1.0 - p * p - (1 - p) * (1 - p)


def brute_force_stump(F, y):
    """Lowest weighted Gini over every feature and every midpoint threshold."""
    best = (np.inf, None, None)
    for f in range(F.shape[1]):
        vals = np.unique(F[:, f])
        for a, b in zip(vals, vals[1:]):
            thr = (a + b) / 2
            left = F[:, f] <= thr
            cost = left.sum() * gini(y[left]) + (~left).sum() * gini(y[~left])
            if cost < best[0] - 1e-12:
                best = (cost, f, thr)
    return best


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_stump_matches_brute_force(seed):
    r = np.random.default_rng(seed)
    F = r.integers(0, 6, size=(25, 3)).astype(float)
    y = r.integers(0, 2, 25)
    t = trees.fit_classification_tree(F, y, max_depth=1)
    cost, f, thr = brute_force_stump(F, y)
    if f is None or y.min() == y.max():
        assert len(t) == 1
        return
    left = F[:, t.feature[0]] <= t.threshold[0]
    got = left.sum() * gini(y[left]) + (~left).sum() * gini(y[~left])
    assert got == pytest.approx(cost, abs=1e-9)


def test_tree_memorizes_consistent_labels():
    ds = random_split(n=200, seed=1)
    m = baseline_train("dt", ds, {"max_depth": None})
    assert np.mean(m.predict(ds.train.X) == ds.train.y) == 1.0


def test_tree_respects_depth():
    ds = random_split(n=200, seed=1)
    assert baseline_train("dt", ds, {"max_depth": 3}).tree.depth <= 3


def test_regression_stump_leaves_are_newton_steps():
    F = np.array([[0.0], [1.0], [2.0], [3.0]])
    g = np.array([1.0, 1.0, -2.0, -2.0])
    h = np.array([0.5, 0.5, 0.5, 0.5])
    t = trees.fit_regression_tree(F, g, h, max_depth=1, l2=1.0)
    assert t.threshold[0] == 1.5
    assert t.predict(F).tolist() == [-2.0 / 2.0, -2.0 / 2.0, 4.0 / 2.0, 4.0 / 2.0]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_boosting_loss_is_monotone(seed):
    ds = random_split(n=150, seed=seed)
    m = baseline_train("gbm", ds, {"stages": 30})
    losses = m.meta["train_loss"]
    assert len(losses) == 31
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_boosting_fits_separable_data():
    ds = random_split(n=200, seed=3, separable=True)
    m = baseline_train("gbm", ds)
    assert np.mean(m.predict(ds.test.X) == ds.test.y) >= 0.9


def test_knn_one_neighbor_memorizes():
    ds = random_split(n=100, seed=2)
    m = baseline_train("knn", ds, {"k": 1})
    assert np.mean(m.predict(ds.train.X) == ds.train.y) == 1.0


def test_knn_all_neighbors_is_majority():
    ds = random_split(n=101, seed=4)
    m = baseline_train("knn", ds, {"k": len(ds.train)})
    majority = int(np.mean(ds.train.y) > 0.5)
    assert np.all(m.predict(ds.test.X) == majority)


def test_knn_ties_go_to_lower_index():
    train = np.array([[1.0], [-1.0], [1.0], [3.0]])
    assert baselines.knn_neighbors(train, np.array([[0.0]]), 3).tolist() == [[0, 1, 2]]


def test_exact_vote_tie_is_improvement():
    assert labels_from_proba([0.5, 0.5000001, 0.4999999]).tolist() == [0, 1, 0]


def separable_by_search(F, y):
    """Search unit directions and offsets for a hyperplane that splits the labels perfectly."""
    for a in np.linspace(0, np.pi, 721):
        w = np.array([np.cos(a), np.sin(a)])
        s = F @ w
        lo, hi = s[y == 0], s[y == 1]
        if lo.max() < hi.min() or hi.max() < lo.min():
            return True
    return False


def test_svm_on_separable_blobs():
    r = np.random.default_rng(5)
    def blobs(n):
        y = np.arange(n) % 2
        F = r.normal(0, 0.5, size=(n, 2)) + np.where(y[:, None] == 1, [2.0, 2.0], [-2.0, -2.0])
        return F, y
    F, y = blobs(80)
    Ft, yt = blobs(40)
    assert separable_by_search(np.vstack([F, Ft]), np.concatenate([y, yt]))
    w, b = baselines.fit_linear_svm(F, y, baselines.SvmHyper(lam=1e-3, epochs=30))
    assert np.all((baselines.svm_score(w, b, Ft) > 0) == (yt == 1))


def test_svm_is_seeded():
    ds = random_split(n=100, seed=6)
    a = baseline_train("svm", ds, {"seed": 3})
    b = baseline_train("svm", ds, {"seed": 3})
    assert np.array_equal(a.params["w"], b.params["w"])


def test_feature_vectors_match_direct_formulas():
    Z = np.random.default_rng(0).normal(size=(3, 2, 6, 5))
    F = baselines.feature_vectors(Z)
    s = Z[1, 1, :, 0]
    t = np.arange(6) - 2.5
    expect = [s.mean(), s.std(), s[-1], np.polyfit(np.arange(6), s, 1)[0]]
    assert np.allclose(F[1, 4:8], expect, atol=1e-12)
    assert baselines.feature_names(["a", "b"])[:4] == ["a.mean", "a.std", "a.last", "a.slope"]
    assert np.allclose(F[1, 7], (s * t).sum() / (t * t).sum())


@pytest.mark.parametrize("kind,hyper", [("knn", {"k": 0}), ("knn", {"depth": 3}), ("svm", {"lam": 0.0}),
                                        ("gbm", {"shrinkage": 2.0}), ("dt", {"max_depth": 0}),
                                        ("gbm", {"stages": 1.5}), ("dt", {"kpis": ("nope",)})])
def test_bad_hyperparameters(kind, hyper):
    with pytest.raises(BadHyper):
        baseline_train(kind, random_split(n=20), hyper)


def test_baseline_errors():
    ds = random_split(n=20)
    with pytest.raises(KindUnsupported):
        baseline_train("cnn", ds)
    ds.train = ds.train.take(np.arange(0))
    with pytest.raises(EmptyTrainSet):
        baseline_train("dt", ds)


def test_kpi_subset_restricts_features():
    ds = random_split(n=60)
    m = baseline_train("dt", ds, {"kpis": ("prb_util_dl_rate", "pdcch_util_rate")})
    assert m.hyper["channels"] == (1, 2)
    assert m.features(ds.test.X).shape[1] == 8
