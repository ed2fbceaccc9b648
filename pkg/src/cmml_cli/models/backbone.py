"""Backbone recommender: embeddings, a ReLU hidden stack and a linear scoring head."""

from dataclasses import dataclass
from typing import Callable, List, Literal, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from cmml_cli.data.interactions import FeatureSchema
from cmml_cli.engine import ops
from cmml_cli.engine.rng import glorot_uniform
from cmml_cli.engine.tensor import Tensor
from cmml_cli.models.layers import Params, init_linear, linear
from cmml_cli.utils.exceptions import DataError, ShapeError

PREFIX = "backbone"
LayerHook = Callable[[int, Tensor], Tensor]


class BackboneConfig(BaseModel):
    """Hidden sizes and embedding handling of the backbone."""

    model_config = ConfigDict(extra="forbid")

    hidden_sizes: Tuple[int, ...] = (64, 64, 64)
    embedding_mode: Literal["frozen", "learned"] = "frozen"
    output_dim: Literal[1] = 1

    @field_validator("hidden_sizes")
    @classmethod
    def _positive(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value or any(size <= 0 for size in value):
            raise ValueError("hidden_sizes must be a non-empty tuple of positive sizes")
        return value


@dataclass
class BackboneActivations:
    e_u: Tensor
    e_i: Tensor
    layers: List[Tensor]
    score: Tensor

    @property
    def h(self) -> Tensor:
        """Final hidden representation fed to the head."""
        return self.layers[-1]


def table_name(field: str) -> str:
    return f"{PREFIX}.embed.{field}"


def init_backbone(
    rng: np.random.Generator,
    config: BackboneConfig,
    schema: FeatureSchema,
    tables: Optional[Mapping[str, np.ndarray]] = None,
    stack: bool = True,
) -> Params:
    """Embedding tables (pretrained when given), plus hidden layers and head when ``stack``."""
    params: Params = {}
    tables = tables or {}
    for field, vocab in {**schema.user_vocab, **schema.item_vocab}.items():
        dim = schema.embedding_dims[field]
        if field in tables:
            table = np.asarray(tables[field], dtype=np.float64)
            if table.shape != (vocab, dim):
                raise ShapeError(
                    f"Table for '{field}' has shape {table.shape}, schema expects {(vocab, dim)}"
                )
            params[table_name(field)] = table
        else:
            params[table_name(field)] = glorot_uniform(rng, vocab, dim)
    if not stack:
        return params

    widths = [schema.user_dim + schema.item_dim, *config.hidden_sizes]
    for j, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        params.update(init_linear(rng, f"{PREFIX}.hidden.{j}", fan_in, fan_out))
    params.update(init_linear(rng, f"{PREFIX}.head", widths[-1], config.output_dim))
    return params


def embedding_names(schema: FeatureSchema) -> List[str]:
    return [table_name(field) for field in {**schema.user_vocab, **schema.item_vocab}]


def _embed_side(
    fields: Mapping[str, np.ndarray],
    vocab: Mapping[str, int],
    params: Mapping[str, Tensor],
    side: str,
) -> Tensor:
    parts = []
    for field, size in vocab.items():
        if field not in fields:
            raise DataError(f"Missing {side} feature field '{field}'")
        ids = np.asarray(fields[field], dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= size):
            bad = ids[(ids < 0) | (ids >= size)][0]
            raise DataError(f"Out-of-vocabulary id {bad} in field '{field}' (vocabulary {size})")
        parts.append(ops.take(params[table_name(field)], ids, axis=0))
    return parts[0] if len(parts) == 1 else ops.concat(parts, axis=1)


def embed(
    user_features: Mapping[str, np.ndarray],
    item_features: Mapping[str, np.ndarray],
    params: Mapping[str, Tensor],
    schema: FeatureSchema,
) -> Tuple[Tensor, Tensor]:
    """Row lookups per field, concatenated per entity."""
    e_u = _embed_side(user_features, schema.user_vocab, params, "user")
    e_i = _embed_side(item_features, schema.item_vocab, params, "item")
    return e_u, e_i


def backbone_forward(
    e_u: Tensor,
    e_i: Tensor,
    params: Mapping[str, Tensor],
    config: BackboneConfig,
    layer_hook: Optional[LayerHook] = None,
    head: bool = True,
) -> BackboneActivations:
    """``l_j = relu(l_{j-1} W_j + b_j)``; ``o = h w + b``.

    ``layer_hook(j, l_j)`` may replace each hidden output before it feeds layer
    ``j + 1``. With ``head=False`` the score is left as the final hidden layer.
    """
    x = ops.concat([e_u, e_i], axis=1)
    expected = params[f"{PREFIX}.hidden.0.weight"].shape[0]
    if x.shape[1] != expected:
        raise ShapeError(
            f"backbone: input width {x.shape[1]} does not match first layer {expected}"
        )

    layers: List[Tensor] = []
    for j in range(len(config.hidden_sizes)):
        x = ops.relu(linear(x, params, f"{PREFIX}.hidden.{j}"))
        if layer_hook is not None:
            x = layer_hook(j, x)
        layers.append(x)

    score = x
    if head:
        out = linear(x, params, f"{PREFIX}.head")
        score = ops.reshape(out, (out.shape[0],))
    return BackboneActivations(e_u=e_u, e_i=e_i, layers=layers, score=score)
