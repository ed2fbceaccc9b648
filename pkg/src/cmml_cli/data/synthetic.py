"""Synthetic cold-start tasks with a known per-task oracle."""

from dataclasses import dataclass
from typing import Dict, List, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from cmml_cli.data.interactions import Interaction
from cmml_cli.data.tasks import Task, split_for
from cmml_cli.engine.rng import rng_stream
from cmml_cli.utils.exceptions import ValidationError
from cmml_cli.utils.logger import log


class SyntheticTaskSpec(BaseModel):
    """Generator settings. Labels are ``dot(w_t, x_item[:latent_dim]) + noise``."""

    model_config = ConfigDict(extra="forbid")

    latent_dim: int = Field(8, gt=0)
    feature_dim: int = Field(8, gt=0)
    noise_sd: float = Field(0.1, ge=0.0)
    support_size: int = Field(64, gt=0)
    query_size: int = Field(32, gt=0)
    n_tasks: int = Field(500, gt=0)
    n_items: int = Field(1000, gt=0)
    n_users: int = Field(200, gt=0)
    mode: Literal["regression", "ctr"] = "regression"
    train_ratio: float = Field(0.8, ge=0.0, le=1.0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_sizes(self) -> "SyntheticTaskSpec":
        if self.latent_dim > self.feature_dim:
            raise ValueError("latent_dim cannot exceed feature_dim")
        if self.support_size + self.query_size > self.n_items:
            raise ValueError("support_size + query_size cannot exceed n_items")
        return self


@dataclass
class SyntheticTaskSet:
    tasks: List[Task]
    hidden: Dict[int, np.ndarray]
    user_table: np.ndarray
    item_table: np.ndarray
    spec: SyntheticTaskSpec


def oracle_labels(w: np.ndarray, item_table: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Noiseless regression labels of ``items`` under hidden vector ``w``."""
    return item_table[np.asarray(items), : w.shape[0]] @ w


def bayes_mse(spec: SyntheticTaskSpec) -> float:
    """Best achievable query MSE for regression tasks."""
    if spec.mode != "regression":
        raise ValidationError("The Bayes MSE floor is defined for regression tasks only")
    return spec.noise_sd**2


def _sample_task(spec: SyntheticTaskSpec, index: int, item_table: np.ndarray):
    rng = rng_stream(spec.seed, index + 1)
    w = rng.normal(0.0, np.sqrt(1.0 / spec.latent_dim), size=spec.latent_dim)
    n = spec.support_size + spec.query_size
    items = rng.choice(spec.n_items, size=n, replace=False)
    users = rng.integers(0, spec.n_users, size=n)
    labels = oracle_labels(w, item_table, items) + spec.noise_sd * rng.standard_normal(n)
    if spec.mode == "ctr":
        labels = np.where(labels >= 0.0, 1.0, -1.0)
    records = [
        Interaction(user_id=int(u), item_id=int(i), label=float(y))
        for u, i, y in zip(users, items, labels)
    ]
    task = Task(
        task_id=index,
        setting="user",
        support=records[: spec.support_size],
        query=records[spec.support_size :],
        split=split_for(index, spec.train_ratio, spec.seed),
    )
    return task, w


def generate_synthetic_tasks(spec: SyntheticTaskSpec) -> SyntheticTaskSet:
    """Draw ``spec.n_tasks`` tasks sharing one user and one item feature table.

    Task ``t`` uses stream ``t + 1`` of ``spec.seed``, so a task depends only on
    the seed and its index.
    """
    tables = rng_stream(spec.seed, 0)
    user_table = tables.standard_normal((spec.n_users, spec.feature_dim))
    item_table = tables.standard_normal((spec.n_items, spec.feature_dim))

    tasks: List[Task] = []
    hidden: Dict[int, np.ndarray] = {}
    for index in range(spec.n_tasks):
        task, w = _sample_task(spec, index, item_table)
        tasks.append(task)
        hidden[index] = w

    log.info(
        f"Generated {spec.n_tasks} synthetic {spec.mode} tasks "
        f"(latent {spec.latent_dim}, noise sd {spec.noise_sd})"
    )
    return SyntheticTaskSet(
        tasks=tasks, hidden=hidden, user_table=user_table, item_table=item_table, spec=spec
    )
