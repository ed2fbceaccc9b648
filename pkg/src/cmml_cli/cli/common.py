"""Options, settings loading and error handling shared by every command."""

from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional

import typer
from rich.console import Console
from rich.markup import escape

from cmml_cli.core.checkpoint import Checkpoint, load_checkpoint
from cmml_cli.core.config import Settings, parse_overrides
from cmml_cli.utils.exceptions import CheckpointError, CMMLError
from cmml_cli.utils.logger import log, setup_logging

console = Console()

# Commands accept flat --section.key=value tokens after the named options.
OVERRIDABLE = {"allow_extra_args": True, "ignore_unknown_options": True}

CONFIG_OPTION = typer.Option(None, "--config", "-c", help="YAML run configuration")
SEED_OPTION = typer.Option(None, "--seed", help="Seed of every random stream")
ENCODER_OPTION = typer.Option(
    None, "--encoder", help="Context encoder. Allowed values: pooling-mean, pooling-max, sequential"
)
GENERATOR_OPTION = typer.Option(
    None, "--generator", help="Hybrid context generator. Allowed values: dot, mlp, none"
)
MODULATION_OPTION = typer.Option(
    None, "--modulation", help="Modulation scheme. Allowed values: weight, sigmoid, film, soft"
)
LOSS_OPTION = typer.Option(None, "--loss", help="Training loss. Allowed values: hinge, mse")
OUT_OPTION = typer.Option(None, "--out", "-o", help="Run directory holding every artifact")


def load_settings(
    ctx: typer.Context,
    config: Optional[Path] = None,
    seed: Optional[int] = None,
    encoder: Optional[str] = None,
    generator: Optional[str] = None,
    modulation: Optional[str] = None,
    loss: Optional[str] = None,
    out: Optional[Path] = None,
    **extra: Any,
) -> Settings:
    """Merge file, ``--key=value`` tokens and named flags, then set up logging.

    Later sources win: the YAML file, then the tokens, then the named flags.
    """
    overrides: Dict[str, Any] = parse_overrides(list(ctx.args))
    named = {
        "seed": seed,
        "encoder.variant": encoder,
        "generator.variant": generator,
        "modulation.variant": modulation,
        "training.loss": loss,
        "output_dir": str(out) if out is not None else None,
        **extra,
    }
    overrides.update({key: value for key, value in named.items() if value is not None})

    settings = Settings.from_yaml(str(config) if config is not None else None, overrides)
    setup_logging(settings.logging, settings.output_path)
    log.debug(f"Resolved settings for '{ctx.command.name}' with overrides {sorted(overrides)}")
    return settings


def checkpoint_path(settings: Settings, method: str, which: str) -> Path:
    prefix = "" if method == "cmml" else f"{method}-"
    return settings.output_path / f"{prefix}{which}.ckpt"


def read_checkpoint(settings: Settings, method: str) -> Checkpoint:
    path = checkpoint_path(settings, method, settings.evaluation.checkpoint)
    checkpoint = load_checkpoint(path)
    if checkpoint.method != method:
        raise CheckpointError(f"{path} holds a '{checkpoint.method}' model, expected '{method}'")
    log.info(f"Loaded {path} (epoch {checkpoint.epoch})")
    return checkpoint


@contextmanager
def command_errors() -> Iterator[None]:
    """Turn library errors into a one-line diagnostic and exit status 1."""
    try:
        yield
    except CMMLError as e:
        console.print(f"[bold red]Error:[/bold red] {escape(str(e))}")
        raise typer.Exit(code=1)
