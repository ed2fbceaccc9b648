"""Episodic meta-training and feed-forward inference of the CMML network."""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from cmml_cli.data.interactions import Interaction
from cmml_cli.data.tasks import Episode, Task, episode_from_pairs, sample_episode, task_episode
from cmml_cli.engine import ops
from cmml_cli.engine.optim import AdamState, adam_step
from cmml_cli.engine.rng import rng_stream, stream_key
from cmml_cli.engine.tensor import Tape, Tensor
from cmml_cli.models.modulation import RouteTensor
from cmml_cli.models.network import ModelBundle, forward_episode
from cmml_cli.utils.exceptions import NonFiniteError, NonFiniteLossError, ValidationError
from cmml_cli.utils.logger import log

LossMode = Literal["hinge", "mse"]
LOG_COLUMNS = ["epoch", "mean_loss", "tasks", "seconds"]

# stream families under the run seed
SHUFFLE_STREAM = 1
EPISODE_STREAM = 2
VALIDATION_STREAM = 3


class TrainConfig(BaseModel):
    """Outer-loop optimisation settings."""

    model_config = ConfigDict(extra="forbid")

    task_batch_size: int = Field(16, gt=0)
    epochs: int = Field(20, ge=0)
    lr: float = Field(1e-4, ge=0.0)
    # None: hinge for scenario tasks, mse for user tasks
    loss: Optional[LossMode] = None
    validation_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    patience: int = Field(5, gt=0)
    workers: int = Field(1, gt=0)


@dataclass
class EpisodeSampler:
    """Turns a task into the episode used for one training step."""

    n_pos_support: int = 64
    n_query: int = 128

    def __call__(self, task: Task, rng: np.random.Generator) -> Episode:
        if task.setting == "scenario":
            return sample_episode(task, self.n_pos_support, self.n_query, None, rng)
        return task_episode(task, rng)


@dataclass
class TaskLoss:
    task_id: int
    loss: Tensor
    scores: Tensor


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    tasks: int
    batches: int
    seconds: float


def hinge_loss(scores: Tensor, episode: Episode) -> Tensor:
    """Mean of ``max(0, 1 - s_pos + s_neg)`` over the episode's positive/negative pairing."""
    if episode.hinge_pairs is None:
        raise ValidationError(f"Task {episode.task_id}: hinge loss needs a paired scenario episode")
    pos, neg = episode.hinge_pairs
    margin = 1.0 - ops.take(scores, pos) + ops.take(scores, neg)
    return ops.mean(ops.relu(margin))


def mse_loss(scores: Tensor, labels: np.ndarray) -> Tensor:
    diff = ops.sub(scores, ops.constant(labels))
    return ops.mean(ops.mul(diff, diff))


def episode_loss(scores: Tensor, episode: Episode, loss_mode: LossMode) -> Tensor:
    if loss_mode == "hinge":
        return hinge_loss(scores, episode)
    return mse_loss(scores, episode.query_labels)


def cmml_loss_on_task(
    bundle: ModelBundle,
    episode: Episode,
    loss_mode: LossMode,
    tape: Optional[Tape] = None,
    zero_context: bool = False,
) -> TaskLoss:
    """Support -> context -> modulated query scores -> mean per-example query loss."""
    try:
        params = bundle.tensors(tape)
        result = forward_episode(params, bundle.config, episode, zero_context=zero_context)
        loss = episode_loss(result.scores, episode, loss_mode)
    except NonFiniteError:
        raise NonFiniteLossError(episode.task_id, float("nan"))
    return TaskLoss(task_id=episode.task_id, loss=loss, scores=result.scores)


def _task_gradients(
    bundle: ModelBundle, episode: Episode, loss_mode: LossMode
) -> Tuple[float, Dict[str, np.ndarray]]:
    tape = Tape()
    task_loss = cmml_loss_on_task(bundle, episode, loss_mode, tape=tape)
    grads = tape.backward(task_loss.loss)
    return task_loss.loss.item(), {name: g.values for name, g in grads.items()}


def batched(tasks: Sequence[Task], size: int) -> List[List[Task]]:
    return [list(tasks[i : i + size]) for i in range(0, len(tasks), size)]


GradientFn = Callable[[ModelBundle, Episode, LossMode], Tuple[float, Dict[str, np.ndarray]]]


def run_epoch(
    bundle: ModelBundle,
    tasks: Sequence[Task],
    config: TrainConfig,
    loss_mode: LossMode,
    seed: int,
    epoch: int,
    state: AdamState,
    sampler: EpisodeSampler,
    gradient_fn: GradientFn,
) -> Tuple[ModelBundle, AdamState, EpochStats]:
    start = time.perf_counter()
    order = rng_stream(seed, stream_key(SHUFFLE_STREAM, epoch)).permutation(len(tasks))
    shuffled = [tasks[i] for i in order]
    losses: List[float] = []
    batches = batched(shuffled, config.task_batch_size)

    for batch in batches:
        batch = sorted(batch, key=lambda task: task.task_id)
        episodes = [
            sampler(task, rng_stream(seed, stream_key(EPISODE_STREAM, epoch, task.task_id)))
            for task in batch
        ]
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(lambda ep: gradient_fn(bundle, ep, loss_mode), episodes))
        else:
            results = [gradient_fn(bundle, ep, loss_mode) for ep in episodes]

        names = bundle.trainable_names
        total = {name: np.zeros(bundle.params[name].shape) for name in names}
        for value, grads in results:
            losses.append(value)
            for name in names:
                total[name] = total[name] + grads[name]
        mean_grads = {name: total[name] / len(results) for name in names}
        new_params, state = adam_step({n: bundle.params[n] for n in names}, mean_grads, state)
        bundle = bundle.replace(new_params)

    stats = EpochStats(
        epoch=epoch,
        mean_loss=float(np.mean(losses)) if losses else 0.0,
        tasks=len(losses),
        batches=len(batches),
        seconds=time.perf_counter() - start,
    )
    return bundle, state, stats


def train_epoch(
    bundle: ModelBundle,
    tasks: Sequence[Task],
    config: TrainConfig,
    loss_mode: LossMode,
    seed: int = 0,
    epoch: int = 1,
    state: Optional[AdamState] = None,
    sampler: Optional[EpisodeSampler] = None,
) -> Tuple[ModelBundle, AdamState, EpochStats]:
    """One pass over ``tasks``: one Adam step per task batch on all trainable parameters.

    Per-task gradients are averaged in task-id order, so the step equals the
    gradient of the batch-mean loss.
    """
    state = state if state is not None else AdamState(lr=config.lr)
    sampler = sampler or EpisodeSampler()
    return run_epoch(
        bundle, tasks, config, loss_mode, seed, epoch, state, sampler, _task_gradients
    )


def validation_episode(task: Task, sampler: EpisodeSampler, seed: int = 0) -> Episode:
    """The fixed episode a held-out task is scored on in every epoch."""
    return sampler(task, rng_stream(seed, stream_key(VALIDATION_STREAM, task.task_id)))


def validation_loss(
    bundle: ModelBundle,
    tasks: Sequence[Task],
    loss_mode: LossMode,
    seed: int = 0,
    sampler: Optional[EpisodeSampler] = None,
) -> float:
    """Mean query loss of CMML on the validation episodes."""
    sampler = sampler or EpisodeSampler()
    values = [
        cmml_loss_on_task(bundle, validation_episode(task, sampler, seed), loss_mode).loss.item()
        for task in tasks
    ]
    return float(np.mean(values))


def holdout_split(
    tasks: Sequence[Task], fraction: float, seed: int = 0
) -> Tuple[List[Task], List[Task]]:
    """Hold out ``fraction`` of the tasks for validation; the rest train."""
    n_val = int(round(fraction * len(tasks)))
    if n_val == 0 or n_val >= len(tasks):
        return list(tasks), []
    order = rng_stream(seed, stream_key(VALIDATION_STREAM, 0)).permutation(len(tasks))
    val = sorted((tasks[i] for i in order[:n_val]), key=lambda t: t.task_id)
    train = sorted((tasks[i] for i in order[n_val:]), key=lambda t: t.task_id)
    return train, val


@dataclass
class FitResult:
    best: ModelBundle
    last: ModelBundle
    state: AdamState
    history: List[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def write_epoch_log(path: Path, history: Sequence[EpochStats]) -> Path:
    frame = pd.DataFrame(
        [(s.epoch, s.mean_loss, s.tasks, s.seconds) for s in history], columns=LOG_COLUMNS
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def fit(
    bundle: ModelBundle,
    tasks: Sequence[Task],
    config: TrainConfig,
    loss_mode: LossMode,
    seed: int = 0,
    sampler: Optional[EpisodeSampler] = None,
    log_path: Optional[Path] = None,
    epoch_fn: Optional[Callable] = None,
    validation_fn: Optional[Callable] = None,
    on_epoch: Optional[Callable[[EpochStats], None]] = None,
) -> FitResult:
    """Run epochs with early stopping on a held-out share of the training tasks.

    ``epoch_fn`` and ``validation_fn`` default to the CMML update and loss; the
    baseline supplies its own. Without validation tasks the best bundle is the last one.
    """
    sampler = sampler or EpisodeSampler()
    epoch_fn = epoch_fn or train_epoch
    validation_fn = validation_fn or validation_loss
    train_tasks, val_tasks = holdout_split(tasks, config.validation_fraction, seed)
    state = AdamState(lr=config.lr)
    best, best_loss, best_epoch, waited = bundle, float("inf"), 0, 0
    history: List[EpochStats] = []
    stopped = False

    for epoch in range(1, config.epochs + 1):
        bundle, state, stats = epoch_fn(
            bundle, train_tasks, config, loss_mode, seed, epoch, state, sampler
        )
        history.append(stats)
        if log_path is not None:
            write_epoch_log(log_path, history)
        if on_epoch is not None:
            on_epoch(stats)
        log.info(
            f"Epoch {epoch}/{config.epochs}: mean_loss={stats.mean_loss:.6f} "
            f"tasks={stats.tasks} seconds={stats.seconds:.2f}"
        )

        if not val_tasks:
            best, best_epoch = bundle, epoch
            continue
        current = validation_fn(bundle, val_tasks, loss_mode, seed, sampler)
        log.debug(f"Epoch {epoch}: validation loss {current:.6f}")
        if current < best_loss:
            best, best_loss, best_epoch, waited = bundle, current, epoch, 0
        else:
            waited += 1
            if waited >= config.patience:
                log.info(f"Early stop after epoch {epoch}; best epoch {best_epoch}")
                stopped = True
                break

    return FitResult(
        best=best,
        last=bundle,
        state=state,
        history=history,
        best_epoch=best_epoch,
        stopped_early=stopped,
    )


@dataclass
class InferResult:
    scores: np.ndarray
    context: np.ndarray
    routes: Optional[RouteTensor] = None


def cmml_infer_episode(
    bundle: ModelBundle, episode: Episode, zero_context: bool = False
) -> InferResult:
    """Forward-only adaptation: no tape is created and no parameter is written."""
    result = forward_episode(bundle.tensors(), bundle.config, episode, zero_context=zero_context)
    return InferResult(
        scores=result.scores.numpy(), context=result.context.numpy(), routes=result.routes
    )


def cmml_infer(
    bundle: ModelBundle,
    support: Sequence[Interaction],
    query_pairs: Sequence[Tuple[int, int]],
    task_id: int = 0,
) -> np.ndarray:
    """Scores of ``query_pairs`` after conditioning on ``support``."""
    return cmml_infer_episode(bundle, episode_from_pairs(support, query_pairs, task_id)).scores
