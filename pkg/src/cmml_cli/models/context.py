"""Support-set context encoders and hybrid context generators."""

from typing import Literal, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from cmml_cli.engine import ops
from cmml_cli.engine.tensor import Tensor
from cmml_cli.models.layers import Params, gru_sequence, init_gru, init_mlp, mlp
from cmml_cli.utils.exceptions import ModelConfigError, ShapeError

ENCODER = "meta.encoder"
GENERATOR = "meta.generator"


class EncoderConfig(BaseModel):
    """How the support set is summarised into the task context C."""

    model_config = ConfigDict(extra="forbid")

    variant: Literal["pooling-mean", "pooling-max", "sequential"] = "sequential"
    mlp_hidden: Tuple[int, ...] = (128, 128)
    gru_hidden: int = Field(64, gt=0)
    # None: width of concat(e_u, e_i)
    context_dim: Optional[int] = Field(None, gt=0)
    use_labels: bool = True
    support_negatives: bool = True


class GeneratorConfig(BaseModel):
    """How C is fused with each query pair into the hybrid context C_h."""

    model_config = ConfigDict(extra="forbid")

    variant: Literal["dot", "mlp", "none"] = "dot"
    mlp_hidden: Tuple[int, ...] = (64,)
    # None: width of concat(e_u, e_i)
    hybrid_dim: Optional[int] = Field(None, gt=0)


def context_width(config: EncoderConfig, pair_dim: int) -> int:
    return config.context_dim or pair_dim


def hybrid_width(config: GeneratorConfig, encoder: EncoderConfig, pair_dim: int) -> int:
    """Width of C_h, the conditioning input of every modulation network."""
    if config.variant == "dot":
        return pair_dim
    if config.variant == "mlp":
        return config.hybrid_dim or pair_dim
    return context_width(encoder, pair_dim)


def init_encoder(rng: np.random.Generator, config: EncoderConfig, pair_dim: int) -> Params:
    in_dim = pair_dim + (1 if config.use_labels else 0)
    out_dim = context_width(config, pair_dim)
    if config.variant == "sequential":
        params = init_gru(rng, f"{ENCODER}.gru", in_dim, config.gru_hidden)
        sizes = [config.gru_hidden, *config.mlp_hidden, out_dim]
        params.update(init_mlp(rng, f"{ENCODER}.mlp", sizes))
        return params
    return init_mlp(rng, f"{ENCODER}.mlp", [in_dim, *config.mlp_hidden, out_dim])


def init_generator(
    rng: np.random.Generator, config: GeneratorConfig, encoder: EncoderConfig, pair_dim: int
) -> Params:
    c_dim = context_width(encoder, pair_dim)
    if config.variant == "dot":
        if c_dim != pair_dim:
            raise ModelConfigError(
                f"Dot hybrid needs context_dim == dim(concat(e_u, e_i)) = {pair_dim}, got {c_dim}"
            )
        return {}
    if config.variant == "mlp":
        out_dim = hybrid_width(config, encoder, pair_dim)
        return init_mlp(rng, f"{GENERATOR}.mlp", [c_dim + pair_dim, *config.mlp_hidden, out_dim])
    return {}


def _pairs(e_u: Tensor, e_i: Tensor, labels: Optional[np.ndarray]) -> Tensor:
    if e_u.shape[0] == 0:
        raise ShapeError("encoder: empty support set")
    parts = [e_u, e_i]
    if labels is not None:
        parts.append(ops.constant(np.asarray(labels, dtype=np.float64).reshape(-1, 1)))
    return ops.concat(parts, axis=1)


def encode_pooling(
    e_u: Tensor,
    e_i: Tensor,
    labels: Optional[np.ndarray],
    params: Mapping[str, Tensor],
    config: EncoderConfig,
) -> Tensor:
    """Per-pair MLP followed by mean or max pooling over the support rows."""
    per_pair = mlp(_pairs(e_u, e_i, labels), params, f"{ENCODER}.mlp", len(config.mlp_hidden) + 1)
    if config.variant == "pooling-max":
        return ops.max_pool_rows(per_pair)
    return ops.mean_pool_rows(per_pair)


def encode_sequential(
    e_u: Tensor,
    e_i: Tensor,
    labels: Optional[np.ndarray],
    params: Mapping[str, Tensor],
    config: EncoderConfig,
) -> Tensor:
    """GRU over the support rows in order, then an MLP on the final output."""
    final = gru_sequence(_pairs(e_u, e_i, labels), params, f"{ENCODER}.gru")
    out = mlp(final, params, f"{ENCODER}.mlp", len(config.mlp_hidden) + 1)
    return ops.reshape(out, (out.shape[1],))


def encode_context(
    e_u: Tensor,
    e_i: Tensor,
    labels: Optional[np.ndarray],
    params: Mapping[str, Tensor],
    config: EncoderConfig,
) -> Tensor:
    labels = labels if config.use_labels else None
    if config.variant == "sequential":
        return encode_sequential(e_u, e_i, labels, params, config)
    return encode_pooling(e_u, e_i, labels, params, config)


def hybrid_dot(C: Tensor, e_u: Tensor, e_i: Tensor) -> Tensor:
    """``C_h = C * concat(e_u, e_i)`` row by row."""
    x = ops.concat([e_u, e_i], axis=1)
    if C.shape != (x.shape[1],):
        raise ShapeError(
            f"hybrid_dot: context shape {C.shape} does not match pair width {x.shape[1]}"
        )
    return ops.mul(x, C)


def hybrid_mlp(
    C: Tensor, e_u: Tensor, e_i: Tensor, params: Mapping[str, Tensor], config: GeneratorConfig
) -> Tensor:
    """``C_h = MLP(concat(C, e_u, e_i))``."""
    if C.ndim != 1:
        raise ShapeError(f"hybrid_mlp: context must be a vector, got shape {C.shape}")
    x = ops.concat([ops.repeat_rows(C, e_u.shape[0]), e_u, e_i], axis=1)
    expected = params[f"{GENERATOR}.mlp.0.weight"].shape[0]
    if x.shape[1] != expected:
        raise ShapeError(f"hybrid_mlp: input width {x.shape[1]} does not match {expected}")
    return mlp(x, params, f"{GENERATOR}.mlp", len(config.mlp_hidden) + 1)


def hybrid_context(
    C: Tensor, e_u: Tensor, e_i: Tensor, params: Mapping[str, Tensor], config: GeneratorConfig
) -> Tensor:
    if config.variant == "dot":
        return hybrid_dot(C, e_u, e_i)
    if config.variant == "mlp":
        return hybrid_mlp(C, e_u, e_i, params, config)
    return ops.repeat_rows(C, e_u.shape[0])
