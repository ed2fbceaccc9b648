"""Gradient-based inner-loop baseline on the plain backbone."""

from typing import Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from cmml_cli.core.metalearn import (
    EpisodeSampler,
    EpochStats,
    LossMode,
    TrainConfig,
    episode_loss,
    run_epoch,
    validation_episode,
)
from cmml_cli.data.tasks import Episode, Task
from cmml_cli.engine import ops
from cmml_cli.engine.optim import AdamState
from cmml_cli.engine.rng import rng_stream
from cmml_cli.engine.tensor import Tape, Tensor
from cmml_cli.models.backbone import backbone_forward, embed, embedding_names, init_backbone
from cmml_cli.models.network import ModelBundle, NetworkConfig, frozen_tables
from cmml_cli.utils.exceptions import ModelConfigError, NonFiniteError, NonFiniteLossError

Scope = Literal["head-only", "hidden+head", "all"]


class BaselineConfig(BaseModel):
    """Inner-loop adaptation of the baseline."""

    model_config = ConfigDict(extra="forbid")

    inner_steps: int = Field(5, ge=1)
    inner_lr: float = Field(0.01, ge=0.0)
    scope: Scope = "head-only"


def init_baseline_bundle(
    config: NetworkConfig, seed: int = 0, tables: Optional[Mapping[str, np.ndarray]] = None
) -> ModelBundle:
    """Backbone-only bundle with the same embeddings and hidden stack as the CMML model."""
    params = init_backbone(rng_stream(seed, 0), config.backbone, config.schema, tables)
    return ModelBundle(params, config, frozen_tables(config))


def adapt_names(bundle: ModelBundle, scope: Scope) -> List[str]:
    names = [n for n in bundle.backbone_names if n.startswith("backbone.head.")]
    if scope in ("hidden+head", "all"):
        names += [n for n in bundle.backbone_names if n.startswith("backbone.hidden.")]
    if scope == "all":
        names += embedding_names(bundle.config.schema)
    if not names:
        raise ModelConfigError("Baseline bundle has no backbone head to adapt")
    return sorted(names)


def _scores(params: Mapping[str, Tensor], bundle: ModelBundle, users, items) -> Tensor:
    e_u, e_i = embed(users, items, params, bundle.config.schema)
    return backbone_forward(e_u, e_i, params, bundle.config.backbone).score


def support_loss(scores: Tensor, labels: np.ndarray, loss_mode: LossMode) -> Tensor:
    """Pointwise hinge ``max(0, 1 - y s)`` on ±1 labels, or squared error."""
    target = ops.constant(labels)
    if loss_mode == "hinge":
        return ops.mean(ops.relu(1.0 - ops.mul(target, scores)))
    diff = ops.sub(scores, target)
    return ops.mean(ops.mul(diff, diff))


def _tensors(
    values: Mapping[str, np.ndarray], tape: Optional[Tape], watch: Sequence[str]
) -> Dict[str, Tensor]:
    watched = set(watch)
    return {
        name: tape.watch(v, name) if tape is not None and name in watched else Tensor(v)
        for name, v in values.items()
    }


def inner_adapt(
    bundle: ModelBundle, episode: Episode, cfg: BaselineConfig, loss_mode: LossMode
) -> Tuple[Dict[str, np.ndarray], List[float]]:
    """``cfg.inner_steps`` full-batch SGD steps on the support loss.

    Returns the adapted parameter copies and the support loss before each step.
    """
    names = adapt_names(bundle, cfg.scope)
    current: Dict[str, np.ndarray] = dict(bundle.params)
    users, items = episode.support_fields()
    losses: List[float] = []
    for _ in range(cfg.inner_steps):
        tape = Tape()
        try:
            params = _tensors(current, tape, names)
            scores = _scores(params, bundle, users, items)
            loss = support_loss(scores, episode.support_labels, loss_mode)
        except NonFiniteError:
            raise NonFiniteLossError(episode.task_id, float("nan"))
        losses.append(loss.item())
        grads = tape.backward(loss)
        current = {**current, **{n: current[n] - cfg.inner_lr * grads[n].values for n in names}}
    return current, losses


def baseline_adapt_and_score(
    bundle: ModelBundle,
    episode: Episode,
    cfg: BaselineConfig,
    loss_mode: LossMode = "mse",
) -> Tuple[np.ndarray, float]:
    """Adapt a private copy of the scope to the support set, then score the query.

    Returns the query scores and the L2 norm of the parameter change.
    """
    adapted, _ = inner_adapt(bundle, episode, cfg, loss_mode)
    moved = adapt_names(bundle, cfg.scope)
    delta = float(np.sqrt(sum(np.sum((adapted[n] - bundle.params[n]) ** 2) for n in moved)))
    q_users, q_items = episode.query_fields()
    scores = _scores(_tensors(adapted, None, []), bundle, q_users, q_items)
    return scores.numpy(), delta


def _first_order_gradients(cfg: BaselineConfig):
    def gradient_fn(bundle: ModelBundle, episode: Episode, loss_mode: LossMode):
        adapted, _ = inner_adapt(bundle, episode, cfg, loss_mode)
        tape = Tape()
        params = _tensors(adapted, tape, bundle.trainable_names)
        q_users, q_items = episode.query_fields()
        try:
            loss = episode_loss(_scores(params, bundle, q_users, q_items), episode, loss_mode)
        except NonFiniteError:
            raise NonFiniteLossError(episode.task_id, float("nan"))
        grads = tape.backward(loss)
        return loss.item(), {n: g.values for n, g in grads.items()}

    return gradient_fn


def baseline_epoch_fn(cfg: BaselineConfig) -> Callable:
    """Epoch function for :func:`cmml_cli.core.metalearn.fit` that meta-trains the baseline.

    The outer gradient is taken at the adapted parameters and applied to the
    initial ones; inner-loop gradients are not differentiated through.
    """
    gradient_fn = _first_order_gradients(cfg)

    def epoch_fn(
        bundle: ModelBundle,
        tasks: Sequence[Task],
        config: TrainConfig,
        loss_mode: LossMode,
        seed: int,
        epoch: int,
        state: Optional[AdamState],
        sampler: Optional[EpisodeSampler],
    ) -> Tuple[ModelBundle, AdamState, EpochStats]:
        state = state if state is not None else AdamState(lr=config.lr)
        sampler = sampler or EpisodeSampler()
        return run_epoch(
            bundle, tasks, config, loss_mode, seed, epoch, state, sampler, gradient_fn
        )

    return epoch_fn


def baseline_validation_fn(cfg: BaselineConfig) -> Callable:
    """Validation loss for :func:`cmml_cli.core.metalearn.fit`.

    Each task is adapted on its support before the query is scored.
    """

    def validation_fn(
        bundle: ModelBundle,
        tasks: Sequence[Task],
        loss_mode: LossMode,
        seed: int = 0,
        sampler: Optional[EpisodeSampler] = None,
    ) -> float:
        sampler = sampler or EpisodeSampler()
        values = []
        for task in tasks:
            episode = validation_episode(task, sampler, seed)
            scores, _ = baseline_adapt_and_score(bundle, episode, cfg, loss_mode)
            values.append(episode_loss(ops.constant(scores), episode, loss_mode).item())
        return float(np.mean(values))

    return validation_fn
