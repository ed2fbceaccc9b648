"""Functional building blocks: linear layers, ReLU MLPs and a GRU cell.

Parameters live in flat ``{name: array}`` mappings; forwards receive the matching
``{name: Tensor}`` mapping plus the name prefix of the block.
"""

from typing import Dict, Mapping, Sequence

import numpy as np

from cmml_cli.engine import ops
from cmml_cli.engine.rng import glorot_uniform
from cmml_cli.engine.tensor import Tensor

Params = Dict[str, np.ndarray]
GRU_GATES = ("z", "r", "n")


def init_linear(rng: np.random.Generator, prefix: str, in_dim: int, out_dim: int) -> Params:
    return {
        f"{prefix}.weight": glorot_uniform(rng, in_dim, out_dim),
        f"{prefix}.bias": np.zeros(out_dim),
    }


def linear(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    return ops.add(ops.matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def init_mlp(rng: np.random.Generator, prefix: str, sizes: Sequence[int]) -> Params:
    """Layers ``sizes[0] -> sizes[1] -> ... -> sizes[-1]``."""
    params: Params = {}
    for j, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        params.update(init_linear(rng, f"{prefix}.{j}", fan_in, fan_out))
    return params


def mlp(
    x: Tensor,
    params: Mapping[str, Tensor],
    prefix: str,
    n_layers: int,
    final_activation: bool = False,
) -> Tensor:
    """ReLU between layers; the last layer is linear unless ``final_activation``."""
    for j in range(n_layers):
        x = linear(x, params, f"{prefix}.{j}")
        if j < n_layers - 1 or final_activation:
            x = ops.relu(x)
    return x


def init_gru(rng: np.random.Generator, prefix: str, in_dim: int, hidden: int) -> Params:
    params: Params = {}
    for gate in GRU_GATES:
        params[f"{prefix}.W_{gate}"] = glorot_uniform(rng, in_dim, hidden)
        params[f"{prefix}.U_{gate}"] = glorot_uniform(rng, hidden, hidden)
        params[f"{prefix}.b_{gate}"] = np.zeros(hidden)
    params[f"{prefix}.b_hn"] = np.zeros(hidden)
    return params


def gru_step(x: Tensor, h: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """One update/reset-gate step on ``(1, in)`` input and ``(1, hidden)`` state.

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    n = tanh(x W_n + b_n + r * (h U_n + b_hn))
    h' = (1 - z) * n + z * h
    """
    p = lambda name: params[f"{prefix}.{name}"]  # noqa: E731
    z = ops.sigmoid(ops.add(ops.add(ops.matmul(x, p("W_z")), ops.matmul(h, p("U_z"))), p("b_z")))
    r = ops.sigmoid(ops.add(ops.add(ops.matmul(x, p("W_r")), ops.matmul(h, p("U_r"))), p("b_r")))
    recurrent = ops.add(ops.matmul(h, p("U_n")), p("b_hn"))
    n = ops.tanh(ops.add(ops.add(ops.matmul(x, p("W_n")), p("b_n")), ops.mul(r, recurrent)))
    return ops.add(ops.mul(ops.sub(ops.ones(z.shape), z), n), ops.mul(z, h))


def gru_sequence(xs: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """Run the cell over the rows of ``xs`` from a zero state; returns the final ``(1, hidden)``."""
    hidden = params[f"{prefix}.b_z"].shape[0]
    h = ops.zeros((1, hidden))
    for t in range(xs.shape[0]):
        h = gru_step(ops.take(xs, [t], axis=0), h, params, prefix)
    return h
