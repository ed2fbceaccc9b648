"""CMML CLI - cold-start recommendation by feed-forward task-context modulation."""

__version__ = "0.3.0"
__author__ = "CMML CLI"
__license__ = "MIT"

from cmml_cli.core.config import Settings

__all__ = ["Settings", "__version__"]
