"""Core module initialization."""

from cmml_cli.core.config import Settings, get_settings

__all__ = [
    "Settings",
    "get_settings",
]
