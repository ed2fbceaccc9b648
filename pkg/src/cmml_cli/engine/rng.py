"""Deterministic random streams and parameter initialisation."""

from typing import Optional, Tuple

import numpy as np

from cmml_cli.utils.exceptions import ValidationError


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Independent PCG64 stream keyed by ``(seed, stream_id)``.

    The same key yields the same sequence on every platform.
    """
    if seed < 0 or stream_id < 0:
        raise ValidationError(f"seed and stream_id must be >= 0, got ({seed}, {stream_id})")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(stream_id,))
    return np.random.Generator(np.random.PCG64(sequence))


def stream_key(*parts: int) -> int:
    """Pack small non-negative integers (epoch, task id, ...) into one stream id."""
    key = 0
    for part in parts:
        if part < 0:
            raise ValidationError(f"stream key parts must be >= 0, got {part}")
        key = key * 1_000_003 + int(part)
    return key


def glorot_uniform(
    rng: np.random.Generator,
    fan_in: int,
    fan_out: int,
    shape: Optional[Tuple[int, ...]] = None,
) -> np.ndarray:
    """uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))
