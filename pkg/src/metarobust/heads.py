"""Adaptation heads: fit a linear classifier on support embeddings.

Three heads are provided:

* prototype -- nearest class centroid, written as a linear scorer
  ``2 c_k . x - |c_k|^2``;
* ridge -- multi-target ridge regression onto one-hot targets, solved in
  the ``n x n`` dual because support sets are far smaller than the
  embedding width;
* svm -- one-vs-rest hinge-loss SVMs solved in the dual with pairwise
  (SMO-style) coordinate updates, keeping an explicit bias through the
  equality constraint ``sum(alpha * y) = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConfigurationError, NumericError
from .extractor import embed

HEAD_KINDS = ("prototype", "ridge", "svm")
RIDGE_COND_LIMIT = 1e13


@dataclass(frozen=True)
class HeadSpec:
    kind: str = "prototype"
    lam: float = 1.0
    C: float = 1.0
    max_passes: int = 1000
    kkt_tol: float = 1e-6
    bias_mode: str | None = None

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ConfigurationError(f"unknown head kind {self.kind!r}")
        if self.bias_mode is None:
            object.__setattr__(self, "bias_mode", "append_one" if self.kind == "ridge" else "none")
        if self.bias_mode not in ("append_one", "none"):
            raise ConfigurationError(f"unknown bias_mode {self.bias_mode!r}")
        if self.kind == "ridge" and not self.lam > 0:
            raise ConfigurationError("ridge lambda must be > 0")
        if self.kind == "svm":
            if not self.C > 0 or not self.kkt_tol > 0 or self.max_passes < 1:
                raise ConfigurationError("svm needs C > 0, kkt_tol > 0, max_passes >= 1")
            if self.bias_mode != "none":
                raise ConfigurationError("svm keeps an explicit bias; use bias_mode='none'")


@dataclass
class LinearClassifier:
    weights: np.ndarray     # (K, e)
    biases: np.ndarray      # (K,)
    head_kind: str
    converged: bool = True
    kkt_residual: float = 0.0

    def scores(self, x):
        return x @ self.weights.T + self.biases

    def predict(self, x):
        # np.argmax returns the first maximum: ties go to the lowest class
        return np.argmax(self.scores(x), axis=1)


@dataclass
class SupportSet:
    embeddings: np.ndarray
    labels: np.ndarray
    num_classes: int | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1
        if self.num_classes < 2:
            raise ConfigurationError("support set needs at least two classes")
        counts = np.bincount(self.labels, minlength=self.num_classes)
        if len(counts) != self.num_classes or counts.min() != counts.max() or counts[0] == 0:
            raise ConfigurationError(f"every class must appear equally often, counts={counts}")
        if self.embeddings.shape[0] != len(self.labels):
            raise ConfigurationError("embeddings and labels disagree in length")

    @property
    def shots(self):
        return len(self.labels) // self.num_classes


def fit_prototype(support):
    K = support.num_classes
    e = support.embeddings
    centroids = one_hot(support.labels, K).T @ e / support.shots
    return LinearClassifier(2.0 * centroids, -np.einsum("ij,ij->i", centroids, centroids), "prototype")


def _design(support, bias_mode):
    phi = support.embeddings
    if bias_mode == "append_one":
        phi = np.hstack([phi, np.ones((phi.shape[0], 1))])
    return phi


def one_hot(labels, K):
    Y = np.zeros((len(labels), K))
    Y[np.arange(len(labels)), labels] = 1.0
    return Y


def fit_ridge(support, lam, bias_mode="append_one"):
    """``W = Phi^T (Phi Phi^T + lam I)^-1 Y``."""
    phi = _design(support, bias_mode)
    Y = one_hot(support.labels, support.num_classes)
    gram = phi @ phi.T
    if (np.trace(gram) + lam) / lam > RIDGE_COND_LIMIT:
        raise NumericError(f"ridge system too ill-conditioned for lambda={lam}")
    gram[np.diag_indices_from(gram)] += lam
    W = phi.T @ np.linalg.solve(gram, Y)
    if bias_mode == "append_one":
        return LinearClassifier(W[:-1].T.copy(), W[-1].copy(), "ridge")
    return LinearClassifier(W.T.copy(), np.zeros(support.num_classes), "ridge")


@numba.njit(cache=True)
def _smo_binary(Kmat, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    converged = False
    gap = np.inf
    for _ in range(max_iter):
        # maximal violating pair
        i = -1
        j = -1
        gmax = -np.inf
        gmin = np.inf
        for t in range(n):
            v = -y[t] * G[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if v > gmax:
                    gmax = v
                    i = t
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                if v < gmin:
                    gmin = v
                    j = t
        gap = gmax - gmin
        if i < 0 or j < 0 or gap < tol:
            converged = True
            break
        Qii = Kmat[i, i]
        Qjj = Kmat[j, j]
        Qij = y[i] * y[j] * Kmat[i, j]
        ai_old = alpha[i]
        aj_old = alpha[j]
        if y[i] != y[j]:
            quad = Qii + Qjj + 2.0 * Qij
            if quad <= 0:
                quad = 1e-12
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = Qii + Qjj - 2.0 * Qij
            if quad <= 0:
                quad = 1e-12
            delta = (G[i] - G[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        for t in range(n):
            G[t] += y[t] * (y[i] * Kmat[t, i] * dai + y[j] * Kmat[t, j] * daj)
    else:
        # recompute the final violation after the last update
        gmax = -np.inf
        gmin = np.inf
        for t in range(n):
            v = -y[t] * G[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                gmax = max(gmax, v)
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                gmin = min(gmin, v)
        gap = gmax - gmin
        converged = gap < tol

    # bias from free support vectors, else the middle of the feasible interval
    total = 0.0
    count = 0
    ub = np.inf
    lb = -np.inf
    for t in range(n):
        v = -y[t] * G[t]
        if 0 < alpha[t] < C:
            total += v
            count += 1
        elif (y[t] > 0 and alpha[t] <= 0) or (y[t] < 0 and alpha[t] >= C):
            lb = max(lb, v)
        else:
            ub = min(ub, v)
    if count > 0:
        b = total / count
    elif np.isfinite(ub) and np.isfinite(lb):
        b = 0.5 * (ub + lb)
    elif np.isfinite(ub):
        b = ub
    elif np.isfinite(lb):
        b = lb
    else:
        b = 0.0
    return alpha, b, converged, max(gap, 0.0)


def smo_binary(X, y, C, kkt_tol, max_passes):
    """Dual hinge-loss SVM on rows of ``X`` with labels ``y`` in {-1, +1}.

    Returns ``(alpha, w, b, converged, kkt_residual)``; the residual is the
    maximal-violating-pair gap.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Kmat = X @ X.T
    alpha, b, ok, gap = _smo_binary(Kmat, y, float(C), float(kkt_tol),
                                    int(max_passes) * max(len(y), 1))
    w = (alpha * y) @ X
    return alpha, w, float(b), bool(ok), float(gap)


def fit_svm(support, C, max_passes=1000, kkt_tol=1e-6):
    """One-vs-rest linear SVMs; ``converged`` is False if any binary problem
    hit ``max_passes``."""
    X = np.ascontiguousarray(support.embeddings, dtype=np.float64)
    Kmat = X @ X.T
    K = support.num_classes
    W = np.empty((K, X.shape[1]))
    b = np.empty(K)
    all_ok, worst = True, 0.0
    max_iter = int(max_passes) * max(len(support.labels), 1)
    for k in range(K):
        y = np.where(support.labels == k, 1.0, -1.0)
        alpha, bk, ok, gap = _smo_binary(Kmat, y, float(C), float(kkt_tol), max_iter)
        W[k] = (alpha * y) @ X
        b[k] = bk
        all_ok &= bool(ok)
        worst = max(worst, float(gap))
    return LinearClassifier(W, b, "svm", converged=all_ok, kkt_residual=worst)


def fit_head(head, support):
    if head.kind == "prototype":
        return fit_prototype(support)
    if head.kind == "ridge":
        return fit_ridge(support, head.lam, head.bias_mode)
    return fit_svm(support, head.C, head.max_passes, head.kkt_tol)


def evaluate_accuracy(classifier, query_embeddings, query_labels):
    query_labels = np.asarray(query_labels)
    if len(query_labels) == 0:
        raise ConfigurationError("empty query set")
    pred = classifier.predict(query_embeddings)
    return float(np.count_nonzero(pred == query_labels)) / len(query_labels)


class EpisodeScorer:
    """The accuracy functional ``Z -> accuracy`` for one episode.

    Pool and query embeddings are computed once; each call only fits the
    head on the selected support rows.
    """

    def __init__(self, params, head, episode):
        self.head = head
        self.episode = episode
        K, M, dim = episode.support_pool.shape
        self.pool_embeddings = embed(params, episode.support_pool.reshape(K * M, dim)).reshape(K, M, -1)
        self.query_embeddings = embed(params, episode.query_inputs)
        self.query_labels = episode.query_labels
        self.K = K

    def support_set(self, Z):
        Z = np.asarray(Z)
        K, J = Z.shape
        emb = self.pool_embeddings[np.arange(K)[:, None], Z].reshape(K * J, -1)
        return SupportSet(emb, np.repeat(np.arange(K), J), K)

    def classifier(self, Z):
        return fit_head(self.head, self.support_set(Z))

    def __call__(self, Z):
        return evaluate_accuracy(self.classifier(Z), self.query_embeddings, self.query_labels)


def adapt_and_score(params, head, episode, Z):
    """Post-adaptation query accuracy for support indices ``Z`` (shape K x J)."""
    Z = np.asarray(Z)
    if Z.shape != (episode.shape.K, episode.shape.J):
        raise ConfigurationError(f"Z has shape {Z.shape}, expected {(episode.shape.K, episode.shape.J)}")
    return EpisodeScorer(params, head, episode)(Z)
