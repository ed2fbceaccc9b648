"""CLI module initialization."""

from cmml_cli.cli.main import app

__all__ = ["app"]
