import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metarobust.data import EpisodeShape
from metarobust.errors import ConfigurationError, SearchError
from metarobust.heads import EpisodeScorer, HeadSpec
from metarobust.search import (
    SearchConfig,
    candidate_count,
    convergence_trace,
    evaluation_rows,
    exhaustive_support_search,
    greedy_support_search,
    random_support_baseline,
    report_rows,
)

from searchkit import (
    TableScore,
    assert_coordinate_optimal,
    assert_distinct,
    assert_monotone,
    brute_force,
)
from test_heads import identity, toy_episode

CONVERGE = 50     # iteration cap large enough that test runs terminate by convergence


def test_single_feasible_point():
    shape = EpisodeShape(3, 2, 2, 1)
    calls = []

    def score(Z):
        calls.append(Z.copy())
        return 0.5

    rep = greedy_support_search(score, shape, SearchConfig("worst", iterations=3))
    assert rep.converged and len(rep.per_round) == 6
    assert rep.evaluation_count == 1 + 6
    assert {r.accuracy for r in rep.per_round} == {0.5}
    assert sorted(rep.final_indices[0].tolist()) == [0, 1]


def test_separable_objective():
    shape = EpisodeShape(3, 1, 7, 1)
    score = lambda Z: abs(int(Z[0, 0]) - 4) / 10.0
    rep = greedy_support_search(score, shape, SearchConfig("worst", iterations=CONVERGE, seed=2))
    first = [r for r in rep.per_round if r.klass == 0 and r.shot == 0]
    assert all(r.chosen_index == 4 for r in first)
    assert rep.final_accuracy == 0.0
    assert_coordinate_optimal(score, shape, rep)


def test_toy_worst_case_matches_enumeration():
    ep = toy_episode()
    scorer = EpisodeScorer(identity(1), HeadSpec("prototype"), ep)
    shape = ep.shape
    Z_ex, v_ex = exhaustive_support_search(scorer, shape, "worst")
    assert v_ex == 0.0 and Z_ex.tolist() == [[1], [2]]
    hits = 0
    for seed in range(10):
        rep = greedy_support_search(scorer, shape, SearchConfig("worst", iterations=CONVERGE, seed=seed))
        # single starts can stall at the all-correct local optimum
        assert rep.final_accuracy in (0.0, 1.0)
        assert_coordinate_optimal(scorer, shape, rep)
        hits += rep.final_accuracy == 0.0
        if rep.final_accuracy == 0.0:
            assert rep.final_indices.tolist() == [[1], [2]]
    assert hits >= 5
    rep = greedy_support_search(scorer, shape, SearchConfig("worst", CONVERGE, restarts=3, seed=0))
    assert rep.final_accuracy == 0.0 and rep.final_indices.tolist() == [[1], [2]]
    _, v_best = exhaustive_support_search(scorer, shape, "best")
    assert v_best == 1.0


def test_exhaustive_counts_candidates():
    shape = EpisodeShape(2, 1, 3, 1)
    seen = []
    exhaustive_support_search(lambda Z: seen.append(Z.copy()) or 0.0, shape, "worst")
    assert len(seen) == candidate_count(shape) == 9


def test_exhaustive_tie_rule():
    shape = EpisodeShape(3, 2, 4, 1)
    Z, _ = exhaustive_support_search(lambda Z: 0.3, shape, "best")
    assert Z.tolist() == [[0, 1]] * 3


def test_exhaustive_budget():
    shape = EpisodeShape(5, 1, 20, 1)
    with pytest.raises(ConfigurationError, match="3200000"):
        exhaustive_support_search(lambda Z: 0.0, shape, "worst")


@pytest.mark.parametrize("mode", ["worst", "best"])
def test_exhaustive_matches_brute_force(mode):
    rng = np.random.default_rng(17)
    for _ in range(50):
        shape = EpisodeShape(int(rng.integers(2, 4)), int(rng.integers(1, 3)), int(rng.integers(3, 5)), 1)
        score = TableScore(shape, rng, levels=8)
        Z, v = exhaustive_support_search(score, shape, mode)
        Zb, vb = brute_force(score, shape, mode)
        assert v == vb and np.array_equal(Z, Zb)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), K=st.integers(2, 3), J=st.integers(1, 2), M=st.integers(2, 5),
       mode=st.sampled_from(["worst", "best"]), restarts=st.integers(1, 3))
def test_greedy_properties(seed, K, J, M, mode, restarts):
    if M < J:
        return
    rng = np.random.default_rng(seed)
    shape = EpisodeShape(K, J, M, 1)
    score = TableScore(shape, rng, levels=6)
    rep = greedy_support_search(score, shape, SearchConfig(mode, CONVERGE, restarts, seed))
    assert rep.converged
    assert_monotone(rep)
    assert_distinct(rep)
    assert_coordinate_optimal(score, shape, rep)
    inits = rep.restart_initial_accuracies
    assert rep.final_accuracy <= min(inits) if mode == "worst" else rep.final_accuracy >= max(inits)
    _, v_ex = exhaustive_support_search(score, shape, mode)
    assert rep.final_accuracy >= v_ex if mode == "worst" else rep.final_accuracy <= v_ex


def test_iteration_cap_and_padding():
    shape = EpisodeShape(3, 1, 6, 1)
    rng = np.random.default_rng(0)
    score = TableScore(shape, rng)
    rep = greedy_support_search(score, shape, SearchConfig("worst", iterations=1, seed=1))
    assert {r.iteration for r in rep.per_round} == {1}
    assert len(rep.iteration_accuracy) == 1
    rep = greedy_support_search(score, shape, SearchConfig("worst", iterations=CONVERGE, seed=1))
    assert len(rep.iteration_accuracy) == CONVERGE


def test_non_finite_score_rejected():
    shape = EpisodeShape(2, 1, 3, 1)
    with pytest.raises(SearchError, match="Z="):
        greedy_support_search(lambda Z: float("nan") if Z[1, 0] == 2 else 0.5, shape,
                              SearchConfig("worst", seed=0))


def test_rejects_zero_iterations():
    with pytest.raises(ConfigurationError):
        SearchConfig("worst", iterations=0)
    with pytest.raises(ConfigurationError):
        SearchConfig("middle")


def test_thread_count_does_not_change_report(small_universe, tiny_params):
    from metarobust.data import sample_episode
    ds, split, _ = small_universe
    shape = EpisodeShape(3, 2, 8, 6)
    ep = sample_episode(ds, split.train_classes, shape, 5)
    scorer = EpisodeScorer(tiny_params, HeadSpec("svm"), ep)
    cfg = SearchConfig("worst", iterations=CONVERGE, restarts=2, seed=9)
    a = greedy_support_search(scorer, shape, cfg, threads=1)
    b = greedy_support_search(scorer, shape, cfg, threads=4)
    assert report_rows(a) == report_rows(b)
    assert evaluation_rows(a) == evaluation_rows(b)
    assert_coordinate_optimal(scorer, shape, a)


def test_random_baseline():
    shape = EpisodeShape(3, 1, 4, 1)
    assert random_support_baseline(lambda Z: 1.0, shape, 20, 0) == [1.0] * 20
    rng = np.random.default_rng(3)
    score = TableScore(shape, rng)
    assert random_support_baseline(score, shape, 1, 8) == random_support_baseline(score, shape, 1, 8)
    values = np.array(list(score.table.values()))
    sample = np.array(random_support_baseline(score, shape, 1000, 4))
    assert abs(sample.mean() - values.mean()) <= 2 * values.std() / np.sqrt(1000)
    with pytest.raises(ConfigurationError):
        random_support_baseline(score, shape, 0, 0)


class _Fake:
    def __init__(self, trace):
        self.iteration_accuracy = list(trace)


def test_convergence_trace():
    np.testing.assert_allclose(convergence_trace([_Fake((50, 40, 40)), _Fake((30, 30, 30))]),
                               [40, 35, 35])
    np.testing.assert_array_equal(convergence_trace([_Fake((7, 6, 5))]), [7, 6, 5])
    np.testing.assert_array_equal(convergence_trace([_Fake((3, 3))] * 4), [3, 3])
    with pytest.raises(ConfigurationError):
        convergence_trace([])
    with pytest.raises(ConfigurationError):
        convergence_trace([_Fake((1,)), _Fake((1, 2))])


def test_report_csv_layout():
    shape = EpisodeShape(2, 1, 3, 1)
    rep = greedy_support_search(lambda Z: float(Z.sum()) / 10, shape, SearchConfig("best", seed=1))
    rows = report_rows(rep).splitlines()
    assert rows[0] == "iteration,shot,class,chosen_index,accuracy"
    assert len(rows) == 1 + len(rep.per_round)
    ev = evaluation_rows(rep).splitlines()
    assert ev[0] == "candidate_hash,accuracy" and len(ev) == 1 + rep.evaluation_count
