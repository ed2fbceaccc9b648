"""Task-set preparation commands."""

from pathlib import Path
from typing import List, Optional

import typer
from rich.table import Table

from cmml_cli.cli.common import (
    CONFIG_OPTION,
    OUT_OPTION,
    SEED_OPTION,
    command_errors,
    console,
    load_settings,
)
from cmml_cli.core.pipeline import TaskSet, prepare_from_ratings, prepare_synthetic, save_task_set
from cmml_cli.data.synthetic import bayes_mse
from cmml_cli.utils.logger import log


def _summary(task_set: TaskSet) -> Table:
    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Split", style="cyan")
    table.add_column("Tasks", justify="right")
    table.add_column("Support", justify="right")
    table.add_column("Query", justify="right")
    for split in ("meta-train", "meta-test"):
        tasks = task_set.split(split)
        table.add_row(
            split,
            str(len(tasks)),
            str(sum(len(t.support) for t in tasks)),
            str(sum(len(t.query) for t in tasks)),
        )
    return table


def gen_synthetic(
    ctx: typer.Context,
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    n_tasks: Optional[int] = typer.Option(None, "--n-tasks", help="Number of synthetic tasks"),
    mode: Optional[str] = typer.Option(
        None, "--mode", help="Label kind. Allowed values: regression, ctr"
    ),
):
    """Generate synthetic tasks with a known hidden vector per task.

    Example:
        cmml gen-synthetic --out ./runs/synth --n-tasks 500
    """
    with command_errors():
        settings = load_settings(
            ctx, config, seed, out=out, **{"synthetic.n_tasks": n_tasks, "synthetic.mode": mode}
        )
        task_set = prepare_synthetic(settings)
        save_task_set(settings.output_path, task_set)

    console.print(_summary(task_set))
    if settings.synthetic.mode == "regression":
        floor = bayes_mse(settings.synthetic)
        console.print(f"[dim]Bayes floor of query MSE: {floor:.4f}[/dim]")
    log.success(f"Synthetic task set written to {settings.output_path}")


def prepare(
    ctx: typer.Context,
    ratings: Optional[List[Path]] = typer.Option(
        None, "--ratings", "-r", help="Interaction CSV; repeat the option to merge several domains"
    ),
    setting: Optional[str] = typer.Option(
        None, "--setting", help="Task definition. Allowed values: scenario, user"
    ),
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
):
    """Build tasks from interaction logs and pretrain the frozen embedding tables.

    Common Variations:
      - Scenario (genre) tasks from implicit clicks:
          cmml prepare --ratings ratings.csv --setting scenario
      - User tasks from explicit ratings:
          cmml prepare --ratings ratings.csv --setting user --data.label_mode=rating
      - Two domains merged into one task set:
          cmml prepare -r movies.csv -r books.csv --setting user
    """
    with command_errors():
        extra = {"data.setting": setting}
        if ratings:
            extra["data.ratings_paths"] = [str(path) for path in ratings]
        settings = load_settings(ctx, config, seed, out=out, **extra)
        with console.status("[bold cyan]Building tasks and pretraining embeddings..."):
            task_set = prepare_from_ratings(settings)
        save_task_set(settings.output_path, task_set)

    console.print(_summary(task_set))
    log.success(f"Task set written to {settings.output_path}")
