"""Context and route export commands."""

from pathlib import Path
from typing import Optional

import typer

from cmml_cli.cli.common import (
    CONFIG_OPTION,
    OUT_OPTION,
    SEED_OPTION,
    command_errors,
    load_settings,
    read_checkpoint,
)
from cmml_cli.core.exports import export_contexts, export_routes
from cmml_cli.core.pipeline import load_task_set, sampler_for
from cmml_cli.utils.logger import log

CONTEXT_FILE = "contexts.csv"
ROUTE_FILE = "routes.csv"


def export_context(
    ctx: typer.Context,
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
):
    """Write the task-level context vector of every meta-test task to contexts.csv.

    Example:
        cmml export-context --out ./runs/synth
    """
    with command_errors():
        settings = load_settings(ctx, config, seed, out=out)
        task_set = load_task_set(settings.output_path)
        bundle = read_checkpoint(settings, "cmml").bundle
        path = export_contexts(
            settings.output_path / CONTEXT_FILE,
            bundle,
            task_set.split(settings.evaluation.split),
            sampler=sampler_for(settings),
            seed=settings.seed,
        )
    log.success(f"Contexts written to {path}")


def export_routes_command(
    ctx: typer.Context,
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
):
    """Write per-task routing probabilities of a soft-modular checkpoint to routes.csv.

    Example:
        cmml export-routes --out ./runs/soft
    """
    with command_errors():
        settings = load_settings(ctx, config, seed, out=out)
        task_set = load_task_set(settings.output_path)
        bundle = read_checkpoint(settings, "cmml").bundle
        path = export_routes(
            settings.output_path / ROUTE_FILE,
            bundle,
            task_set.split(settings.evaluation.split),
            sampler=sampler_for(settings),
            seed=settings.seed,
        )
    log.success(f"Routes written to {path}")
