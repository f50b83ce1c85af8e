"""Worst/average/best accuracy ranges, histograms, classical MDS and the
CSV renderings of those results."""

from __future__ import annotations

import csv
import io
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import sample_episode
from .errors import ConfigurationError, ConsistencyError
from .extractor import embed
from .heads import EpisodeScorer
from .rng import derive_seed
from .search import greedy_support_search, random_support_baseline

TABLE_COLUMNS = ["method", "shot", "worst_mean", "worst_std", "avg_mean", "avg_std",
                 "best_mean", "best_std"]


@dataclass
class RangeRecord:
    task_id: int
    worst_acc: float
    avg_acc: float
    avg_std: float
    best_acc: float
    head_kind: str
    shot: int
    worst_initial: float = float("nan")


@dataclass
class RangeResult:
    method: str
    head_kind: str
    shot: int
    records: list
    worst_reports: list = field(default_factory=list, repr=False)
    best_reports: list = field(default_factory=list, repr=False)
    random_values: list = field(default_factory=list, repr=False)

    def validate(self):
        for r in self.records:
            for v in (r.worst_acc, r.avg_acc, r.best_acc):
                if not 0.0 <= v <= 1.0:
                    raise ConsistencyError(f"task {r.task_id}: accuracy {v} outside [0, 1]")
            if r.worst_acc > r.best_acc:
                raise ConsistencyError(
                    f"task {r.task_id}: worst {r.worst_acc} exceeds best {r.best_acc}"
                )

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def aggregate(self):
        """``{column: (mean, std)}`` for worst/avg/best over tasks."""
        out = {}
        for key, col in (("worst", "worst_acc"), ("avg", "avg_acc"), ("best", "best_acc")):
            v = self.column(col)
            out[key] = (float(v.mean()), float(v.std()))
        return out


def evaluate_range(params, head, dataset, split_part, shape, num_tasks, search_config, seed,
                   random_samples=100, threads=1, method="protonet"):
    """Greedy worst, greedy best and random-support accuracy per task."""
    if num_tasks < 1:
        raise ConfigurationError("num_tasks must be >= 1")

    def one(task):
        episode = sample_episode(dataset, split_part, shape, derive_seed(seed, task))
        scorer = EpisodeScorer(params, head, episode)
        worst = greedy_support_search(
            scorer, shape, replace(search_config, mode="worst", seed=derive_seed(seed, task, 1)))
        best = greedy_support_search(
            scorer, shape, replace(search_config, mode="best", seed=derive_seed(seed, task, 2)))
        rand = random_support_baseline(scorer, shape, random_samples, derive_seed(seed, task, 3))
        rec = RangeRecord(task, worst.final_accuracy, float(np.mean(rand)), float(np.std(rand)),
                          best.final_accuracy, head.kind, shape.J,
                          worst_initial=min(worst.restart_initial_accuracies))
        return rec, worst, best, rand

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(one, range(num_tasks)))
    else:
        out = [one(t) for t in range(num_tasks)]
    result = RangeResult(
        method=f"{method}-{head.kind}", head_kind=head.kind, shot=shape.J,
        records=[o[0] for o in out], worst_reports=[o[1] for o in out],
        best_reports=[o[2] for o in out], random_values=[o[3] for o in out],
    )
    result.validate()
    return result


def accuracy_histogram(values, bins=10, value_range=(0.0, 1.0)):
    """Counts over equal-width bins, left-closed except the last."""
    if bins < 1:
        raise ConfigurationError("bins must be >= 1")
    v = np.asarray(values, dtype=float)
    lo, hi = value_range
    if v.size and (v.min() < lo or v.max() > hi):
        raise ConfigurationError(f"values must lie in [{lo}, {hi}]")
    counts, _ = np.histogram(v, bins=bins, range=(lo, hi))
    return counts


@dataclass
class Mds2D:
    coordinates: np.ndarray
    eigenvalues: np.ndarray


def classical_mds(distances, out_dim=2):
    """Torgerson MDS: eigendecompose ``B = -1/2 J D^2 J``.

    Eigenvectors are sign-normalised so their first non-negligible entry is
    positive.  If fewer than ``out_dim`` eigenvalues are positive a warning
    is issued and the output has fewer columns.
    """
    D = np.asarray(distances, dtype=float)
    n = D.shape[0]
    if D.shape != (n, n) or not np.allclose(D, D.T, atol=1e-12) or np.any(D < 0) \
            or np.any(np.diag(D) != 0):
        raise ConfigurationError("distances must be symmetric, non-negative, zero-diagonal")
    Jc = np.eye(n) - 1.0 / n
    B = -0.5 * Jc @ (D ** 2) @ Jc
    B = 0.5 * (B + B.T)
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    tol = 1e-12 * max(1.0, abs(evals[0]) if n else 1.0)
    keep = [i for i in range(min(out_dim, n)) if evals[i] > tol]
    if len(keep) < out_dim:
        warnings.warn(f"only {len(keep)} positive eigenvalues; returning {len(keep)} dimensions",
                      RuntimeWarning, stacklevel=2)
    V = evecs[:, keep]
    for c in range(V.shape[1]):
        nz = np.flatnonzero(np.abs(V[:, c]) > 1e-12)
        if nz.size and V[nz[0], c] < 0:
            V[:, c] = -V[:, c]
    coords = V * np.sqrt(evals[keep])
    coords -= coords.mean(axis=0)
    return Mds2D(coords, evals)


def pairwise_distances(x):
    sq = np.einsum("ij,ij->i", x, x)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    d = np.sqrt(d2)
    return 0.5 * (d + d.T)


@dataclass
class Projection:
    mds: Mds2D
    labels: np.ndarray
    is_support: np.ndarray
    is_highlighted: np.ndarray

    def to_csv(self):
        lines = ["point_id,label,is_support,is_highlighted,x,y"]
        xy = self.mds.coordinates
        for i in range(len(self.labels)):
            x = xy[i, 0] if xy.shape[1] > 0 else 0.0
            y = xy[i, 1] if xy.shape[1] > 1 else 0.0
            lines.append(f"{i},{self.labels[i]},{int(self.is_support[i])},"
                         f"{int(self.is_highlighted[i])},{x:.9g},{y:.9g}")
        return "\n".join(lines) + "\n"


def embed_and_project(params, episode, Z_highlight=None):
    """MDS of query embeddings, plus the highlighted support points if given."""
    x = episode.query_inputs
    labels = episode.query_labels
    support = np.zeros(len(labels), dtype=bool)
    if Z_highlight is not None:
        xs, ys = episode.support_inputs(Z_highlight)
        x = np.vstack([x, xs])
        labels = np.concatenate([labels, ys])
        support = np.concatenate([support, np.ones(len(ys), dtype=bool)])
    emb = embed(params, x)
    mds = classical_mds(pairwise_distances(emb), 2)
    return Projection(mds, labels, support, support.copy())


def scatter_ratio(points, labels):
    """Between-class over within-class scatter (trace ratio)."""
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    mean = points.mean(axis=0)
    between = within = 0.0
    for k in np.unique(labels):
        pk = points[labels == k]
        ck = pk.mean(axis=0)
        between += len(pk) * float(np.sum((ck - mean) ** 2))
        within += float(np.sum((pk - ck) ** 2))
    return between / within if within > 0 else float("inf")


# -- tables ------------------------------------------------------------------

def render_tables(results):
    """One CSV row per (method, shot); accuracies as percentages, 2 decimals."""
    if isinstance(results, RangeResult):
        results = [results]
    lines = [",".join(TABLE_COLUMNS)]
    for res in results:
        res.validate()
        agg = res.aggregate
        vals = [100 * agg[k][i] for k in ("worst", "avg", "best") for i in (0, 1)]
        lines.append(f"{res.method},{res.shot}," + ",".join(f"{v:.2f}" for v in vals))
    return "\n".join(lines) + "\n"


def parse_tables(text):
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        if list(row) != TABLE_COLUMNS:
            raise ConsistencyError(f"unexpected columns {list(row)}")
        rows.append({k: (row[k] if k == "method" else int(row[k]) if k == "shot" else float(row[k]))
                     for k in TABLE_COLUMNS})
    return rows


def render_task_records(results):
    if isinstance(results, RangeResult):
        results = [results]
    lines = ["method,task_id,shot,worst_acc,avg_acc,avg_std,best_acc"]
    for res in results:
        for r in res.records:
            lines.append(f"{res.method},{r.task_id},{r.shot},{r.worst_acc:.6f},"
                         f"{r.avg_acc:.6f},{r.avg_std:.6f},{r.best_acc:.6f}")
    return "\n".join(lines) + "\n"
