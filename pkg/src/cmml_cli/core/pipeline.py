"""Glue between settings, task-set files and models, shared by the commands."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from cmml_cli.core.baseline import init_baseline_bundle
from cmml_cli.core.config import Settings
from cmml_cli.core.metalearn import EpisodeSampler
from cmml_cli.data.interactions import (
    CSVSchema,
    FeatureSchema,
    Interaction,
    load_interactions_csv,
    merge_domains,
)
from cmml_cli.data.io import (
    load_embedding_table,
    load_hidden_vectors,
    load_tasks,
    save_embedding_table,
    save_hidden_vectors,
    save_tasks,
)
from cmml_cli.data.mf import mf_pretrain_embeddings
from cmml_cli.data.synthetic import SyntheticTaskSpec, generate_synthetic_tasks
from cmml_cli.data.tasks import Task, build_scenario_tasks, build_user_tasks, split_tasks
from cmml_cli.engine.rng import rng_stream
from cmml_cli.models.network import ModelBundle, NetworkConfig, init_bundle
from cmml_cli.utils.exceptions import DataError
from cmml_cli.utils.logger import log

TASKS_FILE = "tasks.csv"
USER_TABLE_FILE = "user_embeddings.csv"
ITEM_TABLE_FILE = "item_embeddings.csv"
HIDDEN_FILE = "hidden_vectors.csv"
MF_NEGATIVE_STREAM = 6


@dataclass
class TaskSet:
    """Tasks plus the embedding tables their ids index."""

    tasks: List[Task]
    user_table: np.ndarray
    item_table: np.ndarray
    hidden: Dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def schema(self) -> FeatureSchema:
        return FeatureSchema.for_ids(
            self.user_table.shape[0], self.item_table.shape[0],
            self.user_table.shape[1], self.item_table.shape[1],
        )

    @property
    def tables(self) -> Dict[str, np.ndarray]:
        return {"user_id": self.user_table, "item_id": self.item_table}

    def split(self, name: str) -> List[Task]:
        return split_tasks(self.tasks, name)


def csv_schema(settings: Settings) -> CSVSchema:
    d = settings.data
    return CSVSchema(
        user_column=d.user_column,
        item_column=d.item_column,
        label_column=d.label_column,
        timestamp_column=d.timestamp_column,
        scenario_column=d.scenario_column,
        label_mode=d.label_mode,
        rating_min=d.rating_min,
        rating_max=d.rating_max,
        max_skip_fraction=d.max_skip_fraction,
    )


def sampler_for(settings: Settings) -> EpisodeSampler:
    return EpisodeSampler(n_pos_support=settings.data.n_pos_support, n_query=settings.data.n_query)


def network_config(settings: Settings, schema: FeatureSchema) -> NetworkConfig:
    return NetworkConfig(
        schema=schema,
        backbone=settings.backbone,
        encoder=settings.encoder,
        generator=settings.generator,
        modulation=settings.modulation,
    )


def build_bundle(settings: Settings, task_set: TaskSet, method: str = "cmml") -> ModelBundle:
    config = network_config(settings, task_set.schema)
    if method == "baseline":
        return init_baseline_bundle(config, settings.seed, task_set.tables)
    return init_bundle(config, settings.seed, task_set.tables)


def _mf_pairs(
    interactions: List[Interaction], label_mode: str, n_items: int, seed: int
) -> List[Interaction]:
    """Implicit logs get as many zero-labelled random pairs as observed ones."""
    if label_mode != "implicit":
        return interactions
    observed = {x.pair for x in interactions}
    rng = rng_stream(seed, MF_NEGATIVE_STREAM)
    negatives = []
    for x in interactions:
        item = int(rng.integers(0, n_items))
        if (x.user_id, item) not in observed:
            negatives.append(Interaction(x.user_id, item, 0.0))
    return interactions + negatives


def prepare_from_ratings(settings: Settings) -> TaskSet:
    """Load one or more rating logs, build tasks and pretrain embedding tables."""
    if not settings.data.ratings_paths:
        raise DataError("No ratings file configured; set data.ratings_paths or pass --ratings")
    schema = csv_schema(settings)
    domains = [
        load_interactions_csv(path, schema).interactions for path in settings.data.ratings_paths
    ]
    interactions = merge_domains(domains) if len(domains) > 1 else domains[0]

    d = settings.data
    if d.setting == "scenario":
        tasks = build_scenario_tasks(
            interactions, d.min_items, d.max_items, d.train_ratio, d.support_fraction, settings.seed
        )
    else:
        tasks = build_user_tasks(
            interactions, d.per_user_cap, d.query_size, d.train_ratio, settings.seed
        )

    n_users = max(x.user_id for x in interactions) + 1
    n_items = max(x.item_id for x in interactions) + 1
    train_records = [x for t in split_tasks(tasks, "meta-train") for x in t.support + t.query]
    if not train_records:
        raise DataError("No meta-train task; raise data.train_ratio or add more data")
    tables = mf_pretrain_embeddings(
        _mf_pairs(train_records, d.label_mode, n_items, settings.seed),
        dim=settings.mf.dim,
        epochs=settings.mf.epochs,
        lr=settings.mf.lr,
        reg=settings.mf.reg,
        seed=settings.seed,
        n_users=n_users,
        n_items=n_items,
    )
    return TaskSet(tasks=tasks, user_table=tables.user, item_table=tables.item)


def prepare_synthetic(settings: Settings, spec: Optional[SyntheticTaskSpec] = None) -> TaskSet:
    spec = spec or settings.synthetic.model_copy(update={"seed": settings.seed})
    generated = generate_synthetic_tasks(spec)
    return TaskSet(
        tasks=generated.tasks,
        user_table=generated.user_table,
        item_table=generated.item_table,
        hidden=generated.hidden,
    )


def save_task_set(out_dir: Path, task_set: TaskSet) -> List[Path]:
    written = [
        save_tasks(out_dir / TASKS_FILE, task_set.tasks),
        save_embedding_table(out_dir / USER_TABLE_FILE, task_set.user_table),
        save_embedding_table(out_dir / ITEM_TABLE_FILE, task_set.item_table),
    ]
    if task_set.hidden:
        written.append(save_hidden_vectors(out_dir / HIDDEN_FILE, task_set.hidden))
    for path in written:
        log.info(f"Wrote {path}")
    return written


def load_task_set(out_dir: Path) -> TaskSet:
    tasks = load_tasks(out_dir / TASKS_FILE)
    hidden_path = out_dir / HIDDEN_FILE
    return TaskSet(
        tasks=tasks,
        user_table=load_embedding_table(out_dir / USER_TABLE_FILE),
        item_table=load_embedding_table(out_dir / ITEM_TABLE_FILE),
        hidden=load_hidden_vectors(hidden_path) if hidden_path.exists() else {},
    )


def resolve_loss_mode(settings: Settings, task_set: TaskSet) -> str:
    """Explicit ``training.loss`` wins; otherwise hinge for scenario tasks, mse for the rest."""
    if settings.training.loss is not None:
        return settings.training.loss
    return "hinge" if task_set.tasks and task_set.tasks[0].setting == "scenario" else "mse"
