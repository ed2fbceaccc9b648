"""Task-context and route exports for external clustering and plotting."""

from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from cmml_cli.core.evaluation import evaluation_episode
from cmml_cli.core.metalearn import EpisodeSampler, cmml_infer_episode
from cmml_cli.data.tasks import Task
from cmml_cli.models.network import ModelBundle
from cmml_cli.utils.exceptions import ModelConfigError
from cmml_cli.utils.logger import log

ROUTE_COLUMNS = ["task_id", "layer", "from_module", "to_module", "probability"]


def context_frame(
    bundle: ModelBundle,
    tasks: Sequence[Task],
    sampler: Optional[EpisodeSampler] = None,
    seed: int = 0,
) -> pd.DataFrame:
    sampler = sampler or EpisodeSampler()
    rows = []
    for task in sorted(tasks, key=lambda t: t.task_id):
        context = cmml_infer_episode(bundle, evaluation_episode(task, sampler, seed)).context
        rows.append([task.task_id, *context.tolist()])
    width = len(rows[0]) - 1 if rows else 0
    return pd.DataFrame(rows, columns=["task_id", *[f"c{j}" for j in range(width)]])


def route_frame(
    bundle: ModelBundle,
    tasks: Sequence[Task],
    sampler: Optional[EpisodeSampler] = None,
    seed: int = 0,
) -> pd.DataFrame:
    """Per task, the query-averaged route of every layer; ``p[to, from]`` per column."""
    if bundle.config.modulation.variant != "soft":
        raise ModelConfigError("Route export needs a soft-modular model (--modulation soft)")
    sampler = sampler or EpisodeSampler()
    rows = []
    for task in sorted(tasks, key=lambda t: t.task_id):
        routes = cmml_infer_episode(bundle, evaluation_episode(task, sampler, seed)).routes
        mean_route = routes.task_route()
        for layer in range(routes.k):
            for source in range(routes.m):
                for target in range(routes.m):
                    probability = float(mean_route[layer, target, source])
                    rows.append((task.task_id, layer, source, target, probability))
    return pd.DataFrame(rows, columns=ROUTE_COLUMNS)


def export_contexts(path: Path, bundle: ModelBundle, tasks: Sequence[Task], **kwargs) -> Path:
    """CSV ``task_id,c0,...,c{dc-1}``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    context_frame(bundle, tasks, **kwargs).to_csv(path, index=False)
    log.info(f"Wrote contexts of {len(tasks)} tasks to {path}")
    return path


def export_routes(path: Path, bundle: ModelBundle, tasks: Sequence[Task], **kwargs) -> Path:
    """CSV ``task_id,layer,from_module,to_module,probability``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    route_frame(bundle, tasks, **kwargs).to_csv(path, index=False)
    log.info(f"Wrote routes of {len(tasks)} tasks to {path}")
    return path
