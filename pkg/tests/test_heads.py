import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metarobust.data import Episode, EpisodeShape
from metarobust.errors import ConfigurationError
from metarobust.extractor import ExtractorParams
from metarobust.heads import (
    EpisodeScorer,
    HeadSpec,
    LinearClassifier,
    SupportSet,
    adapt_and_score,
    evaluate_accuracy,
    fit_head,
    fit_prototype,
    fit_ridge,
    fit_svm,
    smo_binary,
)
from metarobust.margin import bisector_hyperplane


def random_support(rng, K, J, e):
    return SupportSet(rng.normal(size=(K * J, e)), np.repeat(np.arange(K), J), K)


def identity(dim):
    return ExtractorParams([np.eye(dim)], [np.zeros(dim)])


def toy_episode():
    # class 0 pool {-1.0, +0.9, -1.1}, class 1 pool {+1.0, +1.1, -0.9}; queries at -1, +1
    pool = np.array([[[-1.0], [0.9], [-1.1]], [[1.0], [1.1], [-0.9]]])
    return Episode(EpisodeShape(2, 1, 3, 1), (0, 1), pool, np.array([[-1.0], [1.0]]),
                   np.array([0, 1]), np.zeros((2, 3), int), np.zeros((2, 1), int))


# -- prototype ---------------------------------------------------------------

def test_one_shot_centroid_is_the_point(rng):
    s = random_support(rng, 4, 1, 3)
    clf = fit_prototype(s)
    np.testing.assert_allclose(clf.weights / 2, s.embeddings)


def test_query_at_centroid(rng):
    s = random_support(rng, 5, 3, 4)
    clf = fit_prototype(s)
    centroids = clf.weights / 2
    np.testing.assert_array_equal(clf.predict(centroids), np.arange(5))


def test_prototype_matches_nearest_centroid(rng):
    for _ in range(1000):
        K, J, e = rng.integers(2, 6), rng.integers(1, 4), rng.integers(1, 6)
        s = random_support(rng, K, J, e)
        q = rng.normal(size=(1, e))
        c = np.array([s.embeddings[s.labels == k].mean(axis=0) for k in range(K)])
        assert fit_prototype(s).predict(q)[0] == np.argmin(((c - q) ** 2).sum(axis=1))


# -- ridge -------------------------------------------------------------------

def test_ridge_hand_solved():
    s = SupportSet(np.array([[1.0], [-1.0]]), np.array([0, 1]))
    clf = fit_ridge(s, 1.0, bias_mode="none")
    np.testing.assert_allclose(clf.weights[:, 0], [1 / 3, -1 / 3], atol=1e-15)


@pytest.mark.parametrize("bias_mode", ["append_one", "none"])
def test_ridge_primal_dual_agree(rng, bias_mode):
    for _ in range(50):
        s = random_support(rng, rng.integers(2, 6), rng.integers(1, 4), rng.integers(2, 12))
        lam = float(rng.uniform(0.1, 5))
        clf = fit_ridge(s, lam, bias_mode)
        phi = s.embeddings
        if bias_mode == "append_one":
            phi = np.hstack([phi, np.ones((len(phi), 1))])
        Y = np.eye(s.num_classes)[s.labels]
        W = np.linalg.solve(phi.T @ phi + lam * np.eye(phi.shape[1]), phi.T @ Y)
        got = clf.weights.T if bias_mode == "none" else np.vstack([clf.weights.T, clf.biases])
        np.testing.assert_allclose(got, W, atol=1e-9)


def test_ridge_stationarity(rng):
    for _ in range(50):
        s = random_support(rng, 3, 2, 8)
        lam = 0.7
        clf = fit_ridge(s, lam, "none")
        phi, Y, W = s.embeddings, np.eye(3)[s.labels], clf.weights.T
        grad = 2 * phi.T @ (phi @ W - Y) + 2 * lam * W
        assert np.linalg.norm(grad) < 1e-8 * (1 + np.linalg.norm(phi.T @ Y))


def test_ridge_heavy_regularisation(rng):
    s = random_support(rng, 5, 2, 6)
    s.embeddings /= np.linalg.norm(s.embeddings, axis=1, keepdims=True)
    lam = 1e9
    clf = fit_ridge(s, lam, "none")
    assert np.linalg.norm(clf.weights) <= 2 * 10 / lam


def test_ridge_rejects_bad_lambda():
    with pytest.raises(ConfigurationError):
        HeadSpec("ridge", lam=0.0)


# -- svm ---------------------------------------------------------------------

def test_svm_hand_solved():
    alpha, w, b, ok, _ = smo_binary(np.array([[1.0], [-1.0]]), np.array([1.0, -1.0]), 1e6, 1e-9, 1000)
    assert ok
    assert w[0] == pytest.approx(1.0, abs=1e-9) and b == pytest.approx(0.0, abs=1e-9)


def test_svm_two_points_is_bisector(rng):
    for _ in range(50):
        e = int(rng.integers(1, 6))
        x1, x0 = rng.normal(size=e), rng.normal(size=e)
        _, w, b, ok, _ = smo_binary(np.vstack([x1, x0]), np.array([1.0, -1.0]), 1e6, 1e-10, 1000)
        assert ok
        h = bisector_hyperplane(x1, x0)
        scale = np.linalg.norm(h.normal) / np.linalg.norm(w)
        # decision w.x + b > 0 matches normal.x > offset
        np.testing.assert_allclose(w * scale, h.normal, atol=1e-6 * np.linalg.norm(h.normal))
        assert -b * scale == pytest.approx(h.offset, abs=1e-6 * max(1.0, abs(h.offset)))


def test_svm_kkt_conditions(rng):
    C, tol = 1.0, 1e-6
    for _ in range(30):
        X = rng.normal(size=(10, 4))
        y = np.where(rng.random(10) < 0.5, 1.0, -1.0)
        y[0], y[1] = 1.0, -1.0
        alpha, w, b, ok, res = smo_binary(X, y, C, tol, 1000)
        assert ok and res < tol
        assert abs(alpha @ y) < 1e-9
        m = y * (X @ w + b)
        # complementary slackness for each dual variable, to within tolerance
        free = (alpha > 1e-9) & (alpha < C - 1e-9)
        assert np.all(np.abs(m[free] - 1) < 10 * tol)
        assert np.all(m[alpha <= 1e-9] >= 1 - 10 * tol)
        assert np.all(m[alpha >= C - 1e-9] <= 1 + 10 * tol)


def test_svm_duplicate_points_hit_box():
    X = np.array([[0.5, 0.5], [0.5, 0.5], [2.0, 0.0], [-2.0, 0.0]])
    y = np.array([1.0, -1.0, 1.0, -1.0])
    alpha, _, _, ok, res = smo_binary(X, y, 1.0, 1e-6, 1000)
    assert alpha[0] == pytest.approx(1.0) and alpha[1] == pytest.approx(1.0)
    assert ok == (res < 1e-6)


def test_svm_reports_non_convergence(rng):
    s = random_support(rng, 5, 5, 3)
    clf = fit_svm(s, 100.0, max_passes=1, kkt_tol=1e-12)
    assert not clf.converged and clf.kkt_residual > 0


def test_svm_rejects_append_one():
    with pytest.raises(ConfigurationError):
        HeadSpec("svm", bias_mode="append_one")


# -- accuracy ----------------------------------------------------------------

def test_perfect_classifier():
    labels = np.array([0, 1, 2, 1])
    clf = LinearClassifier(np.eye(3), np.zeros(3), "x")
    assert evaluate_accuracy(clf, np.eye(3)[labels], labels) == 1.0


def test_ties_go_to_class_zero():
    labels = np.array([0, 1, 2, 2, 0])
    clf = LinearClassifier(np.zeros((3, 2)), np.zeros(3), "x")
    assert evaluate_accuracy(clf, np.ones((5, 2)), labels) == pytest.approx(2 / 5)


def test_random_classifier_baseline():
    rng = np.random.default_rng(0)
    clf = LinearClassifier(rng.normal(size=(5, 8)), np.zeros(5), "x")
    x = rng.normal(size=(100000, 8))
    labels = np.tile(np.arange(5), 20000)
    assert abs(evaluate_accuracy(clf, x, labels) - 0.2) <= 0.01


def test_empty_query_rejected():
    clf = LinearClassifier(np.eye(2), np.zeros(2), "x")
    with pytest.raises(ConfigurationError):
        evaluate_accuracy(clf, np.zeros((0, 2)), np.zeros(0, int))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**6), v=st.lists(st.integers(-5, 5), min_size=3, max_size=3),
       c=st.integers(-5, 5))
def test_common_shift_keeps_argmax(seed, v, c):
    # integer data keeps the arithmetic exact, so ties are compared too
    rng = np.random.default_rng(seed)
    W = rng.integers(-4, 5, size=(4, 3)).astype(float)
    b = rng.integers(-4, 5, size=4).astype(float)
    x = rng.integers(-3, 4, size=(20, 3)).astype(float)
    a = LinearClassifier(W, b, "x").predict(x)
    shifted = LinearClassifier(W + np.array(v, float), b + c, "x").predict(x)
    np.testing.assert_array_equal(shifted, a)


@pytest.mark.parametrize("kind", ["prototype", "ridge", "svm"])
def test_fits_are_deterministic(rng, kind):
    s = random_support(rng, 5, 2, 6)
    a, b = fit_head(HeadSpec(kind), s), fit_head(HeadSpec(kind), s)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)


# -- composition -------------------------------------------------------------

def test_toy_episode_by_hand():
    ep = toy_episode()
    head = HeadSpec("prototype")
    assert adapt_and_score(identity(1), head, ep, np.array([[1], [2]])) == 0.0
    assert adapt_and_score(identity(1), head, ep, np.array([[0], [0]])) == 1.0


def test_collapsed_clusters_are_perfect(rng):
    from metarobust.data import generate_gaussian_universe, sample_episode
    ds, _ = generate_gaussian_universe(6, 4, 1.0, 1e-9, 20, seed=0)
    shape = EpisodeShape(5, 2, 8, 6)
    ep = sample_episode(ds, range(6), shape, 1)
    p = identity(4)
    for _ in range(10):
        Z = np.array([rng.choice(8, 2, replace=False) for _ in range(5)])
        assert adapt_and_score(p, HeadSpec("prototype"), ep, Z) == 1.0


@pytest.mark.parametrize("kind", ["prototype", "ridge", "svm"])
def test_query_order_invariance(small_universe, kind, tiny_params):
    from metarobust.data import sample_episode
    ds, split, _ = small_universe
    ep = sample_episode(ds, split.train_classes, EpisodeShape(3, 2, 6, 5), 3)
    perm = np.random.default_rng(0).permutation(len(ep.query_labels))
    shuffled = Episode(ep.shape, ep.class_ids, ep.support_pool, ep.query_inputs[perm],
                       ep.query_labels[perm], ep.pool_example_ids, ep.query_example_ids)
    Z = np.array([[0, 1], [2, 3], [4, 5]])
    head = HeadSpec(kind)
    assert adapt_and_score(tiny_params, head, ep, Z) == adapt_and_score(tiny_params, head, shuffled, Z)


def test_scorer_matches_direct_call(small_universe, tiny_params):
    from metarobust.data import sample_episode
    ds, split, _ = small_universe
    ep = sample_episode(ds, split.train_classes, EpisodeShape(3, 2, 2, 5), 3)
    Z = np.array([[0, 1]] * 3)
    head = HeadSpec("ridge")
    assert EpisodeScorer(tiny_params, head, ep)(Z) == adapt_and_score(tiny_params, head, ep, Z)


def test_bad_z_shape(tiny_params):
    with pytest.raises(ConfigurationError):
        adapt_and_score(identity(1), HeadSpec(), toy_episode(), np.array([[0, 1]]))
