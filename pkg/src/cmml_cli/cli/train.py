"""Meta-training and evaluation commands."""

from pathlib import Path
from typing import Optional

import typer
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from cmml_cli.cli.common import (
    CONFIG_OPTION,
    ENCODER_OPTION,
    GENERATOR_OPTION,
    LOSS_OPTION,
    MODULATION_OPTION,
    OUT_OPTION,
    SEED_OPTION,
    checkpoint_path,
    command_errors,
    console,
    load_settings,
    read_checkpoint,
)
from cmml_cli.core.baseline import baseline_epoch_fn, baseline_validation_fn
from cmml_cli.core.checkpoint import Checkpoint, save_checkpoint
from cmml_cli.core.evaluation import evaluate_tasks, global_mean_label
from cmml_cli.core.metalearn import EpochStats, fit
from cmml_cli.core.metrics import EvalReport
from cmml_cli.core.pipeline import build_bundle, load_task_set, resolve_loss_mode, sampler_for
from cmml_cli.utils.exceptions import ValidationError
from cmml_cli.utils.validators import validate_choice
from cmml_cli.utils.logger import log

METHODS = ("cmml", "baseline")
METHOD_OPTION = typer.Option(
    "cmml", "--method", "-m", help="Model to train or score. Allowed values: cmml, baseline"
)


def epoch_log_path(out: Path, method: str) -> Path:
    return out / ("epoch_log.csv" if method == "cmml" else f"{method}-epoch_log.csv")


def report_path(out: Path, method: str, zero_context: bool) -> Path:
    suffix = "_zero_context" if zero_context else ""
    return out / f"eval_{method}{suffix}.csv"


def train(
    ctx: typer.Context,
    method: str = METHOD_OPTION,
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    encoder: Optional[str] = ENCODER_OPTION,
    generator: Optional[str] = GENERATOR_OPTION,
    modulation: Optional[str] = MODULATION_OPTION,
    loss: Optional[str] = LOSS_OPTION,
    out: Optional[Path] = OUT_OPTION,
    epochs: Optional[int] = typer.Option(None, "--epochs", "-e", help="Maximum number of epochs"),
):
    """Meta-train on the meta-train tasks of a prepared run directory.

    Writes best.ckpt, last.ckpt and epoch_log.csv (prefixed with 'baseline-'
    for the gradient baseline).

    Common Variations:
      - FiLM modulation with a sequential encoder (defaults):
          cmml train --out ./runs/synth
      - Soft-modular network with a pooling encoder:
          cmml train --modulation soft --encoder pooling-mean
      - Gradient-based baseline adapting hidden layers and head:
          cmml train --method baseline --baseline.scope=hidden+head
    """
    with command_errors():
        validate_choice("method", method, METHODS)
        extra = {"training.epochs": epochs}
        settings = load_settings(
            ctx, config, seed, encoder, generator, modulation, loss, out, **extra
        )
        task_set = load_task_set(settings.output_path)
        loss_mode = resolve_loss_mode(settings, task_set)
        bundle = build_bundle(settings, task_set, method)
        train_tasks = task_set.split("meta-train")
        baseline = method == "baseline"
        log.info(
            f"Training {method} on {len(train_tasks)} tasks: loss={loss_mode} "
            f"parameters={bundle.parameter_count(bundle.trainable_names)}"
        )

        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TextColumn("{task.completed}/{task.total}"),
            console=console,
        ) as progress:
            bar = progress.add_task(f"Training {method}...", total=settings.training.epochs)

            def on_epoch(stats: EpochStats) -> None:
                description = f"Epoch {stats.epoch} loss {stats.mean_loss:.4f}"
                progress.update(bar, advance=1, description=description)

            result = fit(
                bundle,
                train_tasks,
                settings.training,
                loss_mode,
                settings.seed,
                sampler_for(settings),
                log_path=epoch_log_path(settings.output_path, method),
                epoch_fn=baseline_epoch_fn(settings.baseline) if baseline else None,
                validation_fn=baseline_validation_fn(settings.baseline) if baseline else None,
                on_epoch=on_epoch,
            )

        snapshot = settings.model_dump(mode="json")
        best = save_checkpoint(
            checkpoint_path(settings, method, "best"),
            Checkpoint(result.best, None, result.best_epoch, method, snapshot),
        )
        last = save_checkpoint(
            checkpoint_path(settings, method, "last"),
            Checkpoint(result.last, result.state, len(result.history), method, snapshot),
        )

    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Epoch", justify="right", style="cyan")
    table.add_column("Mean loss", justify="right")
    table.add_column("Tasks", justify="right")
    table.add_column("Seconds", justify="right")
    for stats in result.history:
        table.add_row(str(stats.epoch), f"{stats.mean_loss:.6f}", str(stats.tasks), f"{stats.seconds:.2f}")
    console.print(table)
    if result.stopped_early:
        console.print(f"[yellow]Stopped early; best epoch {result.best_epoch}[/yellow]")
    log.success(f"Checkpoints written to {best} and {last}")


def _report_table(report: EvalReport, method: str) -> Table:
    table = Table(title=f"{method} on meta-test tasks", show_header=True, header_style="bold magenta")
    table.add_column("Metric", style="cyan")
    table.add_column("Mean", justify="right", style="green")
    table.add_column("Tasks", justify="right")
    for metric, value in report.aggregate().items():
        table.add_row(metric, f"{value:.4f}", str(report.task_count(metric)))
    return table


def evaluate(
    ctx: typer.Context,
    method: str = METHOD_OPTION,
    zero_context: bool = typer.Option(
        False, "--zero-context", help="Replace the task context by zeros before hybrid generation"
    ),
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    loss: Optional[str] = LOSS_OPTION,
    out: Optional[Path] = OUT_OPTION,
):
    """Score a trained checkpoint on the meta-test tasks and write the report CSV.

    Common Variations:
      - Trained CMML model:
          cmml eval --out ./runs/synth
      - Zero-context ablation of the same checkpoint:
          cmml eval --zero-context
      - Gradient baseline from its last epoch:
          cmml eval --method baseline --evaluation.checkpoint=last
    """
    with command_errors():
        validate_choice("method", method, METHODS)
        settings = load_settings(
            ctx, config, seed, loss=loss, out=out,
            **{"evaluation.zero_context": True if zero_context else None},
        )
        if method == "baseline" and settings.evaluation.zero_context:
            raise ValidationError("--zero-context only applies to cmml")
        task_set = load_task_set(settings.output_path)
        loss_mode = resolve_loss_mode(settings, task_set)
        checkpoint = read_checkpoint(settings, method)
        global_mean = (
            global_mean_label(task_set.split("meta-train")) if loss_mode == "mse" else None
        )
        report = evaluate_tasks(
            checkpoint.bundle,
            task_set.split(settings.evaluation.split),
            loss_mode,
            settings.evaluation,
            sampler_for(settings),
            settings.seed,
            method=method,
            baseline=settings.baseline,
            global_mean=global_mean,
        )
        zero = settings.evaluation.zero_context
        path = report.save(report_path(settings.output_path, method, zero))

    console.print(_report_table(report, method))
    log.success(f"Evaluation report written to {path}")
