"""Interaction ingestion, meta-task construction and synthetic data."""

from cmml_cli.data.interactions import (
    CSVLoadResult,
    CSVSchema,
    FeatureSchema,
    Interaction,
    load_interactions_csv,
    merge_domains,
)
from cmml_cli.data.mf import EmbeddingTables, mf_pretrain_embeddings
from cmml_cli.data.synthetic import SyntheticTaskSet, SyntheticTaskSpec, generate_synthetic_tasks
from cmml_cli.data.tasks import (
    Episode,
    Task,
    build_scenario_tasks,
    build_user_tasks,
    sample_episode,
    task_episode,
)

__all__ = [
    "CSVLoadResult",
    "CSVSchema",
    "FeatureSchema",
    "Interaction",
    "load_interactions_csv",
    "merge_domains",
    "EmbeddingTables",
    "mf_pretrain_embeddings",
    "SyntheticTaskSet",
    "SyntheticTaskSpec",
    "generate_synthetic_tasks",
    "Episode",
    "Task",
    "build_scenario_tasks",
    "build_user_tasks",
    "sample_episode",
    "task_episode",
]
