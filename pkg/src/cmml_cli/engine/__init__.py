"""Dense tensor engine with reverse-mode differentiation."""

from cmml_cli.engine.tensor import Tape, TapeRecord, Tensor, backward
from cmml_cli.engine.ops import forward_op
from cmml_cli.engine.optim import AdamState, adam_step
from cmml_cli.engine.rng import glorot_uniform, rng_stream, stream_key

__all__ = [
    "Tape",
    "TapeRecord",
    "Tensor",
    "backward",
    "forward_op",
    "AdamState",
    "adam_step",
    "glorot_uniform",
    "rng_stream",
    "stream_key",
]
