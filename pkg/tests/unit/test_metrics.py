"""Tests for ranking/rating metrics, the evaluation report and meta-test evaluation."""

import numpy as np
import pandas as pd
import pytest

from cmml_cli.core.baseline import BaselineConfig, init_baseline_bundle
from cmml_cli.core.config import EvaluationConfig
from cmml_cli.core.evaluation import evaluate_tasks, evaluation_episode, global_mean_label
from cmml_cli.core.metalearn import EpisodeSampler
from cmml_cli.core.metrics import (
    AGGREGATE,
    EvalReport,
    mae,
    mse,
    ndcg_at_k,
    rank_order,
    recall_at_n,
)
from cmml_cli.models.network import init_bundle
from cmml_cli.utils.exceptions import MetricError
from tests.conftest import make_scenario_task, make_user_task, small_network


def brute_force_recall(scores, ids, positives, n):
    ranked = sorted(zip(scores, ids), key=lambda pair: (-pair[0], pair[1]))
    top = {item for _, item in ranked[:n]}
    return len(top & set(positives)) / len(set(positives))


class TestRanking:
    def test_ties_break_by_item_id(self):
        order = rank_order(np.array([0.5, 0.9, 0.5, 0.9]), np.array([7, 3, 2, 1]))
        assert order.tolist() == [3, 1, 2, 0]

    def test_recall_matches_brute_force(self, rng):
        for _ in range(20):
            size = int(rng.integers(5, 30))
            scores = np.round(rng.standard_normal(size), 1)
            ids = rng.permutation(100)[:size]
            positives = rng.choice(ids, size=int(rng.integers(1, size)), replace=False)
            n = int(rng.integers(1, size + 1))
            assert recall_at_n(scores, ids, positives, n) == pytest.approx(
                brute_force_recall(scores, ids, positives, n)
            )

    def test_recall_bounds(self):
        assert recall_at_n([3.0, 2.0, 1.0], [1, 2, 3], [1, 2], 3) == 1.0
        assert recall_at_n([3.0, 2.0, 1.0], [1, 2, 3], [3], 2) == 0.0

    def test_recall_errors(self):
        with pytest.raises(MetricError):
            recall_at_n([1.0], [1], [], 1)
        with pytest.raises(MetricError):
            recall_at_n([1.0], [1], [1], 0)
        with pytest.raises(MetricError):
            recall_at_n([1.0, 2.0], [1, 2], [1], 3)

    def test_ndcg_by_hand(self):
        value = ndcg_at_k([0.9, 0.8, 0.1], [1.0, 3.0, 2.0], k=2)
        dcg = 1.0 / np.log2(2) + 7.0 / np.log2(3)
        ideal = 7.0 / np.log2(2) + 3.0 / np.log2(3)
        assert value == pytest.approx(dcg / ideal)

    def test_ndcg_perfect_ranking(self, rng):
        ratings = rng.integers(0, 6, size=10).astype(float)
        ratings[0] = 5.0
        assert ndcg_at_k(ratings + 0.01 * np.arange(10)[::-1], ratings, 3) == pytest.approx(1.0)

    def test_ndcg_errors(self):
        with pytest.raises(MetricError):
            ndcg_at_k([1.0, 2.0], [0.0, 0.0], 2)
        with pytest.raises(MetricError):
            ndcg_at_k([1.0], [1.0], 0)
        with pytest.raises(MetricError):
            ndcg_at_k([1.0, 2.0], [1.0], 1)


class TestRatingErrors:
    def test_mae_and_mse(self):
        assert mae([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.5)
        assert mse([1.0, 2.0], [2.0, 4.0]) == pytest.approx(2.5)

    def test_length_mismatch(self):
        with pytest.raises(MetricError):
            mae([1.0], [1.0, 2.0])
        with pytest.raises(MetricError):
            mse([], [])


class TestReport:
    def test_aggregates_are_unweighted_task_means(self, tmp_path):
        report = EvalReport()
        report.add(2, "mae", 1.0)
        report.add(1, "mae", 3.0)
        report.add(1, "mse", 4.0)
        assert report.aggregate() == {"mae": 2.0, "mse": 4.0}
        assert report.task_count("mae") == 2
        frame = pd.read_csv(report.save(tmp_path / "eval.csv"), dtype={"task_id": str})
        assert list(frame.columns) == ["task_id", "metric", "value"]
        assert frame["task_id"].tolist() == ["1", "1", "2", AGGREGATE, AGGREGATE]

    def test_rejects_non_finite(self):
        with pytest.raises(MetricError):
            EvalReport().add(0, "mae", float("nan"))


@pytest.fixture
def cmml_bundle(tiny_schema, tiny_tables):
    return init_bundle(small_network(tiny_schema), seed=0, tables=tiny_tables)


class TestEvaluation:
    def test_regression_metrics(self, cmml_bundle):
        tasks = [make_user_task(t, split="meta-test") for t in range(3)]
        mean = global_mean_label(tasks)
        report = evaluate_tasks(cmml_bundle, tasks, "mse", global_mean=mean)
        assert report.metrics == ["mae", "mae_global_mean", "mse", "ndcg@3"]
        assert report.task_count("mse") == 3

    def test_ranking_metrics_skip_oversized_n(self, cmml_bundle):
        tasks = [make_scenario_task(0), make_scenario_task(1, n_users=6)]
        sampler = EpisodeSampler(n_pos_support=4, n_query=6)
        report = evaluate_tasks(cmml_bundle, tasks, "hinge", sampler=sampler)
        assert report.metrics == ["recall@10"]
        assert all(0.0 <= v <= 1.0 for _, _, v in report.rows)

    def test_repeatable_and_episode_fixed(self, cmml_bundle):
        tasks = [make_user_task(t) for t in range(2)]
        first = evaluate_tasks(cmml_bundle, tasks, "mse", seed=3)
        second = evaluate_tasks(cmml_bundle, tasks, "mse", seed=3)
        assert first.rows == second.rows
        a = evaluation_episode(tasks[0], EpisodeSampler(), seed=3)
        b = evaluation_episode(tasks[0], EpisodeSampler(), seed=3)
        np.testing.assert_array_equal(a.support_items, b.support_items)

    def test_zero_context_changes_scores(self, cmml_bundle):
        tasks = [make_user_task(t) for t in range(2)]
        plain = evaluate_tasks(cmml_bundle, tasks, "mse")
        zero = evaluate_tasks(cmml_bundle, tasks, "mse", config=EvaluationConfig(zero_context=True))
        assert plain.aggregate()["mse"] != zero.aggregate()["mse"]

    def test_baseline_method(self, tiny_schema, tiny_tables):
        bundle = init_baseline_bundle(small_network(tiny_schema), tables=tiny_tables)
        tasks = [make_user_task(t) for t in range(2)]
        report = evaluate_tasks(
            bundle, tasks, "mse", method="baseline", baseline=BaselineConfig(inner_steps=2)
        )
        assert report.task_count("mae") == 2

    def test_global_mean_label(self):
        tasks = [make_user_task(0)]
        labels = [x.label for x in tasks[0].support + tasks[0].query]
        assert global_mean_label(tasks) == pytest.approx(np.mean(labels))

