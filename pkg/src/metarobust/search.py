"""Greedy coordinate search over support index sets.

A support index set ``Z`` is a ``(K, J)`` integer array; ``Z[k, j]`` picks
candidate ``m`` of class ``k`` from the pool, with distinct indices within
each class.  ``greedy_support_search`` minimises (``mode="worst"``) or
maximises (``mode="best"``) a score callable one coordinate at a time:

    for each iteration:
        for j in range(J):
            for k in range(K):
                Z[k, j] <- best m over candidates not used by other shots of k

Iterations warm-start from the previous one.  A coordinate only moves on
a strict improvement (lowest ``m`` among the improving ties), so a pass
that changes nothing certifies coordinate optimality and ends the run.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SearchError
from .rng import make_rng

MODES = ("worst", "best")


@dataclass(frozen=True)
class SearchConfig:
    mode: str = "worst"
    iterations: int = 3
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be 'worst' or 'best', got {self.mode!r}")
        if self.iterations < 1 or self.restarts < 1:
            raise ConfigurationError("iterations and restarts must be >= 1")


@dataclass
class RoundRecord:
    iteration: int
    shot: int
    klass: int
    chosen_index: int
    accuracy: float


@dataclass
class SearchReport:
    final_indices: np.ndarray
    final_accuracy: float
    initial_accuracy: float
    per_round: list = field(default_factory=list)
    iteration_accuracy: list = field(default_factory=list)
    evaluated_candidates: list = field(default_factory=list)
    evaluation_count: int = 0
    converged: bool = False
    restart_initial_accuracies: list = field(default_factory=list)
    mode: str = "worst"

    @property
    def per_round_accuracy(self):
        return [(r.iteration, r.klass, r.shot, r.accuracy) for r in self.per_round]


def index_hash(Z):
    """Stable 16-hex-digit fingerprint of an index set."""
    Z = np.ascontiguousarray(Z, dtype=np.int64)
    return hashlib.blake2b(Z.tobytes() + bytes(str(Z.shape), "ascii"), digest_size=8).hexdigest()


def random_index_set(shape, rng):
    return np.stack([rng.choice(shape.M, size=shape.J, replace=False) for _ in range(shape.K)])


def validate_index_set(Z, shape):
    Z = np.asarray(Z)
    if Z.shape != (shape.K, shape.J):
        raise ConfigurationError(f"index set shape {Z.shape} != {(shape.K, shape.J)}")
    if Z.min() < 0 or Z.max() >= shape.M:
        raise ConfigurationError("index out of pool range")
    for row in Z:
        if len(set(row.tolist())) != len(row):
            raise ConfigurationError(f"duplicate indices within a class: {row.tolist()}")


def _better(a, b, mode):
    return a < b if mode == "worst" else a > b


class _Evaluator:
    def __init__(self, score, threads=1, record=True):
        self.score = score
        self.threads = max(1, int(threads))
        self.count = 0
        self.record = record
        self.log = []

    def _one(self, Z):
        value = float(self.score(Z))
        if not math.isfinite(value):
            raise SearchError(f"score returned {value} for Z={np.asarray(Z).tolist()}")
        return value

    def many(self, Zs):
        if self.threads > 1 and len(Zs) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                values = list(pool.map(self._one, Zs))
        else:
            values = [self._one(Z) for Z in Zs]
        self.count += len(Zs)
        if self.record:
            self.log.extend((index_hash(Z), v) for Z, v in zip(Zs, values))
        return values


def _single_run(evaluator, shape, config, Z):
    mode = config.mode
    current = evaluator.many([Z.copy()])[0]
    initial = current
    rounds, per_iter = [], []
    converged = False
    for it in range(1, config.iterations + 1):
        changed = False
        for j in range(shape.J):
            for k in range(shape.K):
                taken = set(Z[k, :j].tolist() + Z[k, j + 1:].tolist())
                cands = [m for m in range(shape.M) if m not in taken]
                trials = []
                for m in cands:
                    Zc = Z.copy()
                    Zc[k, j] = m
                    trials.append(Zc)
                values = evaluator.many(trials)
                best_m, best_v = None, current
                for m, v in zip(cands, values):
                    if _better(v, best_v, mode):
                        best_m, best_v = m, v
                if best_m is not None and best_m != Z[k, j]:
                    Z[k, j] = best_m
                    current = best_v
                    changed = True
                rounds.append(RoundRecord(it, j, k, int(Z[k, j]), current))
        per_iter.append(current)
        if not changed:
            converged = True
            break
    return Z, current, initial, rounds, per_iter, converged


def greedy_support_search(score, shape, config, threads=1, record_candidates=True):
    """Coordinate-wise worst/best support search; see module docstring."""
    if shape.M < shape.J:
        raise ConfigurationError("pool smaller than shot count")
    best = None
    inits = []
    evaluator = _Evaluator(score, threads, record_candidates)
    for r in range(config.restarts):
        rng = make_rng(config.seed, r)
        Z0 = random_index_set(shape, rng)
        run = _single_run(evaluator, shape, config, Z0)
        inits.append(run[2])
        if best is None or _better(run[1], best[1], config.mode):
            best = run
    Z, acc, initial, rounds, per_iter, converged = best
    # pad so every report carries one value per configured iteration
    per_iter = per_iter + [per_iter[-1]] * (config.iterations - len(per_iter))
    return SearchReport(
        final_indices=Z, final_accuracy=acc, initial_accuracy=initial,
        per_round=rounds, iteration_accuracy=per_iter,
        evaluated_candidates=evaluator.log, evaluation_count=evaluator.count,
        converged=converged, restart_initial_accuracies=inits, mode=config.mode,
    )


def coordinate_improvement(score, shape, Z, mode):
    """One extra scan: return ``(k, j, m, value)`` of the first strictly
    improving single-coordinate replacement of ``Z``, or None."""
    Z = np.asarray(Z)
    base = float(score(Z))
    for j in range(shape.J):
        for k in range(shape.K):
            taken = set(Z[k, :j].tolist() + Z[k, j + 1:].tolist())
            for m in range(shape.M):
                if m in taken or m == Z[k, j]:
                    continue
                Zc = Z.copy()
                Zc[k, j] = m
                v = float(score(Zc))
                if _better(v, base, mode):
                    return k, j, m, v
    return None


def candidate_count(shape):
    return math.comb(shape.M, shape.J) ** shape.K


def exhaustive_support_search(score, shape, mode, budget=100_000):
    """Global optimum by enumeration in lexicographic order; ties keep the
    lexicographically smallest ``Z``."""
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    total = candidate_count(shape)
    if total > budget:
        raise ConfigurationError(f"exhaustive search needs {total} evaluations, budget is {budget}")
    per_class = list(itertools.combinations(range(shape.M), shape.J))
    best_Z, best_v = None, None
    for combo in itertools.product(per_class, repeat=shape.K):
        Z = np.array(combo, dtype=np.int64)
        v = float(score(Z))
        if not math.isfinite(v):
            raise SearchError(f"score returned {v} for Z={Z.tolist()}")
        if best_v is None or _better(v, best_v, mode):
            best_Z, best_v = Z, v
    return best_Z, best_v


def random_support_baseline(score, shape, samples, seed):
    """Accuracies of ``samples`` uniformly drawn legal index sets."""
    if samples < 1:
        raise ConfigurationError("samples must be >= 1")
    rng = make_rng(seed)
    return [float(score(random_index_set(shape, rng))) for _ in range(samples)]


def convergence_trace(reports):
    """Mean objective after each full iteration across reports."""
    if not reports:
        raise ConfigurationError("no reports given")
    lengths = {len(r.iteration_accuracy) for r in reports}
    if len(lengths) != 1:
        raise ConfigurationError(f"reports disagree on iteration count: {sorted(lengths)}")
    return np.mean(np.array([r.iteration_accuracy for r in reports], dtype=float), axis=0)


# -- CSV ---------------------------------------------------------------------

def report_rows(report):
    lines = ["iteration,shot,class,chosen_index,accuracy"]
    for r in report.per_round:
        lines.append(f"{r.iteration},{r.shot},{r.klass},{r.chosen_index},{r.accuracy:.6f}")
    return "\n".join(lines) + "\n"


def evaluation_rows(report):
    lines = ["candidate_hash,accuracy"]
    lines.extend(f"{h},{v:.6f}" for h, v in report.evaluated_candidates)
    return "\n".join(lines) + "\n"
