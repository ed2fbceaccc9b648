"""Meta-test evaluation of CMML and the gradient baseline."""

from typing import Literal, Optional, Sequence

import numpy as np

from cmml_cli.core.baseline import BaselineConfig, baseline_adapt_and_score
from cmml_cli.core.config import EvaluationConfig
from cmml_cli.core.metalearn import EpisodeSampler, LossMode, cmml_infer_episode
from cmml_cli.core.metrics import EvalReport, mae, mse, ndcg_at_k, recall_at_n
from cmml_cli.data.tasks import Episode, Task
from cmml_cli.engine.rng import rng_stream, stream_key
from cmml_cli.models.network import ModelBundle
from cmml_cli.utils.logger import log

Method = Literal["cmml", "baseline"]
EVAL_STREAM = 4


def evaluation_episode(task: Task, sampler: EpisodeSampler, seed: int = 0) -> Episode:
    """The fixed episode a task is evaluated on; identical across runs with one seed."""
    return sampler(task, rng_stream(seed, stream_key(EVAL_STREAM, task.task_id)))


def global_mean_label(tasks: Sequence[Task]) -> float:
    labels = [x.label for task in tasks for x in task.support + task.query]
    return float(np.mean(labels))


def _score(
    bundle: ModelBundle,
    episode: Episode,
    method: Method,
    loss_mode: LossMode,
    config: EvaluationConfig,
    baseline: Optional[BaselineConfig],
) -> np.ndarray:
    if method == "baseline":
        cfg = baseline or BaselineConfig()
        scores, _ = baseline_adapt_and_score(bundle, episode, cfg, loss_mode)
        return scores
    return cmml_infer_episode(bundle, episode, zero_context=config.zero_context).scores


def evaluate_tasks(
    bundle: ModelBundle,
    tasks: Sequence[Task],
    loss_mode: LossMode,
    config: Optional[EvaluationConfig] = None,
    sampler: Optional[EpisodeSampler] = None,
    seed: int = 0,
    method: Method = "cmml",
    baseline: Optional[BaselineConfig] = None,
    global_mean: Optional[float] = None,
) -> EvalReport:
    """Score each task's query and collect metrics.

    Hinge (ranking) tasks report ``recall@N`` over the query candidates. Regression
    tasks report ``mae`` and ``mse``, ``ndcg@K`` when every label is a
    non-negative rating, and ``mae_global_mean`` when ``global_mean`` is given.
    """
    config = config or EvaluationConfig()
    sampler = sampler or EpisodeSampler()
    report = EvalReport()
    for task in sorted(tasks, key=lambda t: t.task_id):
        episode = evaluation_episode(task, sampler, seed)
        scores = _score(bundle, episode, method, loss_mode, config, baseline)
        labels = episode.query_labels
        if loss_mode == "hinge":
            candidates = np.arange(scores.size)
            positives = candidates[labels > 0]
            for n in config.recall_n:
                if n <= scores.size:
                    value = recall_at_n(scores, candidates, positives, n)
                    report.add(task.task_id, f"recall@{n}", value)
            continue

        report.add(task.task_id, "mae", mae(scores, labels))
        report.add(task.task_id, "mse", mse(scores, labels))
        if np.all(labels >= 0) and np.any(labels > 0):
            value = ndcg_at_k(scores, labels, config.ndcg_k, episode.query_items)
            report.add(task.task_id, f"ndcg@{config.ndcg_k}", value)
        if global_mean is not None:
            constant = np.full(labels.shape, global_mean)
            report.add(task.task_id, "mae_global_mean", mae(constant, labels))

    for metric, value in report.aggregate().items():
        log.info(f"{method} {metric}: {value:.4f} over {report.task_count(metric)} tasks")
    return report
