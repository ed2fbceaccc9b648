"""Host description stored with benchmark results and shown by ``cmml info``."""

import platform
from functools import lru_cache
from typing import Any, Dict

import numpy as np
import psutil

from cmml_cli.utils.exceptions import BenchmarkError
from cmml_cli.utils.logger import log

GIB = 1024**3


@lru_cache(maxsize=1)
def _cpu() -> Dict[str, Any]:
    return {
        "brand": platform.processor() or platform.machine(),
        "cores_physical": psutil.cpu_count(logical=False),
        "cores_logical": psutil.cpu_count(logical=True),
    }


def _memory() -> Dict[str, float]:
    mem = psutil.virtual_memory()
    return {"total_gb": round(mem.total / GIB, 2), "available_gb": round(mem.available / GIB, 2)}


def _platform() -> Dict[str, str]:
    return {
        "system": platform.system(),
        "release": platform.release(),
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
    }


def describe_host() -> Dict[str, Dict[str, Any]]:
    """CPU, memory and platform sections; the CPU section is read once per process."""
    try:
        return {"cpu": _cpu(), "memory": _memory(), "platform": _platform()}
    except Exception as e:
        log.error(f"Host detection failed: {e}")
        raise BenchmarkError(f"Failed to describe host: {e}")
