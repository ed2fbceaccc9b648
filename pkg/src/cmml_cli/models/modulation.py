"""Context-conditioned modulation of the backbone.

Four variants share one signature: given the hybrid context ``C_h`` of every
query pair and the pair embeddings, produce one score per pair.

* ``weight``: a hypernetwork emits the head ``(w_h, b_h)``.
* ``sigmoid``: per hidden layer, a sigmoid gate multiplies the activations.
* ``film``: per hidden layer, ``o = w_h * l + b_h``.
* ``soft``: a route network mixes the modules of a modular base network.
"""

from dataclasses import dataclass
from typing import List, Literal, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from cmml_cli.engine import ops
from cmml_cli.engine.tensor import Tensor
from cmml_cli.models.backbone import BackboneConfig, backbone_forward
from cmml_cli.models.layers import Params, init_linear, init_mlp, linear, mlp
from cmml_cli.utils.exceptions import ModelConfigError, ShapeError

HYPER = "meta.hyper"
ROUTE = "meta.route"
BASE = "backbone.soft"


class ModulationConfig(BaseModel):
    """Variant choice plus hypernetwork and soft-modular sizes."""

    model_config = ConfigDict(extra="forbid")

    variant: Literal["weight", "sigmoid", "film", "soft"] = "film"
    hyper_hidden: Tuple[int, ...] = (64, 64, 64)
    route_hidden: int = Field(64, gt=0)
    k_layers: int = Field(3, gt=0)
    n_modules: int = Field(4, gt=0)
    module_dim: int = Field(32, gt=0)


@dataclass
class RouteTensor:
    """Routing probabilities, shape ``(n_examples, k, m, m)``; every column sums to 1."""

    probabilities: np.ndarray

    @property
    def k(self) -> int:
        return int(self.probabilities.shape[1])

    @property
    def m(self) -> int:
        return int(self.probabilities.shape[2])

    def task_route(self) -> np.ndarray:
        """Mean over examples; still column-stochastic."""
        return self.probabilities.mean(axis=0)


@dataclass
class Block:
    name: str
    start: int
    stop: int


def hyper_layout(config: ModulationConfig, backbone: BackboneConfig) -> List[Block]:
    """Column blocks of the hypernetwork output for the selected variant."""
    sizes = backbone.hidden_sizes
    if config.variant == "weight":
        return [Block("w", 0, sizes[-1]), Block("b", sizes[-1], sizes[-1] + 1)]
    blocks: List[Block] = []
    offset = 0
    for j, width in enumerate(sizes):
        if config.variant == "sigmoid":
            blocks.append(Block(f"gate.{j}", offset, offset + width))
            offset += width
        else:
            blocks.append(Block(f"scale.{j}", offset, offset + width))
            blocks.append(Block(f"shift.{j}", offset + width, offset + 2 * width))
            offset += 2 * width
    return blocks


def _block(out: Tensor, blocks: List[Block], name: str) -> Tensor:
    for block in blocks:
        if block.name == name:
            return ops.columns(out, block.start, block.stop)
    raise ModelConfigError(f"Hypernetwork has no output block '{name}'")


def init_modulation(
    rng: np.random.Generator,
    config: ModulationConfig,
    backbone: BackboneConfig,
    cond_dim: int,
    pair_dim: int,
) -> Params:
    if config.variant == "soft":
        return {
            **init_soft_base(rng, config, backbone, pair_dim),
            **init_route(rng, config, cond_dim),
        }
    out_dim = hyper_layout(config, backbone)[-1].stop
    return init_mlp(rng, f"{HYPER}.mlp", [cond_dim, *config.hyper_hidden, out_dim])


def _hyper(C_h: Tensor, params: Mapping[str, Tensor], config: ModulationConfig) -> Tensor:
    return mlp(C_h, params, f"{HYPER}.mlp", len(config.hyper_hidden) + 1)


def weight_modulation(
    C_h: Tensor, h_ui: Tensor, params: Mapping[str, Tensor], config: ModulationConfig,
    backbone: BackboneConfig,
) -> Tensor:
    """Score ``w_h . h_ui + b_h`` with ``(w_h, b_h)`` generated from ``C_h``."""
    blocks = hyper_layout(config, backbone)
    out = _hyper(C_h, params, config)
    if out.shape[1] != h_ui.shape[1] + 1:
        raise ShapeError(
            f"weight_modulation: hypernetwork emits {out.shape[1]} values, "
            f"needs {h_ui.shape[1] + 1}"
        )
    w_h = _block(out, blocks, "w")
    b_h = ops.reshape(_block(out, blocks, "b"), (out.shape[0],))
    return ops.add(ops.sum(ops.mul(w_h, h_ui), axis=1), b_h)


def _check_width(kind: str, generated: Tensor, layer: Tensor) -> None:
    if generated.shape != layer.shape:
        raise ShapeError(
            f"{kind}: generated shape {generated.shape} does not match layer {layer.shape}"
        )


def layer_mod_sigmoid(
    C_h: Tensor, e_u: Tensor, e_i: Tensor, params: Mapping[str, Tensor],
    config: ModulationConfig, backbone: BackboneConfig,
) -> Tensor:
    blocks = hyper_layout(config, backbone)
    out = _hyper(C_h, params, config)

    def gate(j: int, layer: Tensor) -> Tensor:
        g = ops.sigmoid(_block(out, blocks, f"gate.{j}"))
        _check_width("layer_mod_sigmoid", g, layer)
        return ops.mul(g, layer)

    return backbone_forward(e_u, e_i, params, backbone, layer_hook=gate).score


def layer_mod_film(
    C_h: Tensor, e_u: Tensor, e_i: Tensor, params: Mapping[str, Tensor],
    config: ModulationConfig, backbone: BackboneConfig,
) -> Tensor:
    blocks = hyper_layout(config, backbone)
    out = _hyper(C_h, params, config)

    def film(j: int, layer: Tensor) -> Tensor:
        scale = _block(out, blocks, f"scale.{j}")
        shift = _block(out, blocks, f"shift.{j}")
        _check_width("layer_mod_film", scale, layer)
        return ops.add(ops.mul(scale, layer), shift)

    return backbone_forward(e_u, e_i, params, backbone, layer_hook=film).score


def init_soft_base(
    rng: np.random.Generator, config: ModulationConfig, backbone: BackboneConfig, pair_dim: int
) -> Params:
    d = config.module_dim
    params = init_linear(rng, f"{BASE}.input", pair_dim, d)
    for layer in range(config.k_layers):
        for module in range(config.n_modules):
            params.update(init_linear(rng, f"{BASE}.layer{layer}.module{module}", d, d))
    params.update(init_linear(rng, f"{BASE}.head", d, 1))
    check_soft_parity(params, config, backbone)
    return params


def check_soft_parity(
    params: Mapping[str, np.ndarray], config: ModulationConfig, backbone: BackboneConfig
) -> int:
    """Module weights of each layer match one square backbone hidden layer.

    The reference is a dense layer as wide as the backbone's last hidden
    layer: at ``m=4, d=32`` the four blocks hold the 4096 weights of a
    64-wide layer, the block-diagonal share of a 128-wide one.
    """
    width = backbone.hidden_sizes[-1]
    dense = width * width
    for layer in range(config.k_layers):
        counted = sum(
            params[f"{BASE}.layer{layer}.module{module}.weight"].size
            for module in range(config.n_modules)
        )
        if counted != dense:
            raise ModelConfigError(
                f"Soft-modular layer {layer} holds {counted} module weights but a {width}-wide "
                f"backbone layer holds {dense}; adjust modulation.n_modules, "
                f"modulation.module_dim or backbone.hidden_sizes"
            )
    return dense


def init_route(rng: np.random.Generator, config: ModulationConfig, cond_dim: int) -> Params:
    m, hidden = config.n_modules, config.route_hidden
    params: Params = {}
    width = cond_dim
    for layer in range(config.k_layers):
        params.update(init_linear(rng, f"{ROUTE}.logits.{layer}", width, m * m))
        if layer < config.k_layers - 1:
            params.update(init_linear(rng, f"{ROUTE}.hidden.{layer}", width, hidden))
            width = hidden
    return params


def route_probabilities(
    C_h: Tensor, params: Mapping[str, Tensor], config: ModulationConfig
) -> List[Tensor]:
    """Route chain ``h^0 = C_h``; layer ``l`` logits are a linear head on ``h^l``."""
    n, m = C_h.shape[0], config.n_modules
    routes: List[Tensor] = []
    h = C_h
    for layer in range(config.k_layers):
        logits = ops.reshape(linear(h, params, f"{ROUTE}.logits.{layer}"), (n, m, m))
        routes.append(ops.softmax_columns(logits))
        if layer < config.k_layers - 1:
            h = ops.relu(linear(h, params, f"{ROUTE}.hidden.{layer}"))
    return routes


def soft_modular_forward(
    C_h: Tensor, e_u: Tensor, e_i: Tensor, params: Mapping[str, Tensor], config: ModulationConfig
) -> Tuple[Tensor, RouteTensor]:
    """Modular base network routed by ``C_h``.

    The projected input is copied to every module. At each layer every module
    ``i`` first applies its own ReLU transform ``t_i``; destination ``j`` then
    receives ``sum_i p[j, i] * t_i``. The last layer's module outputs are
    averaged and scored by a linear head.
    """
    x = ops.concat([e_u, e_i], axis=1)
    expected = params[f"{BASE}.input.weight"].shape[0]
    if x.shape[1] != expected:
        raise ShapeError(
            f"soft_modular_forward: input width {x.shape[1]} does not match {expected}"
        )
    n, m, d = x.shape[0], config.n_modules, config.module_dim

    projected = ops.reshape(linear(x, params, f"{BASE}.input"), (n, 1, d))
    modules = ops.concat([projected] * m, axis=1) if m > 1 else projected
    routes = route_probabilities(C_h, params, config)

    for layer, p in enumerate(routes):
        transformed = []
        for module in range(m):
            row = ops.reshape(ops.take(modules, [module], axis=1), (n, d))
            y = ops.relu(linear(row, params, f"{BASE}.layer{layer}.module{module}"))
            transformed.append(ops.reshape(y, (n, 1, d)))
        stacked = ops.concat(transformed, axis=1) if m > 1 else transformed[0]
        modules = ops.matmul(p, stacked)

    pooled = ops.mean(modules, axis=1)
    score = ops.reshape(linear(pooled, params, f"{BASE}.head"), (n,))
    stacked_routes = np.stack([p.values for p in routes], axis=1)
    return score, RouteTensor(probabilities=stacked_routes)


def modulated_scores(
    C_h: Tensor, e_u: Tensor, e_i: Tensor, params: Mapping[str, Tensor],
    config: ModulationConfig, backbone: BackboneConfig,
) -> Tuple[Tensor, Optional[RouteTensor]]:
    """Dispatch on ``config.variant``; routes are returned by ``soft`` only."""
    if config.variant == "weight":
        h = backbone_forward(e_u, e_i, params, backbone, head=False).h
        return weight_modulation(C_h, h, params, config, backbone), None
    if config.variant == "sigmoid":
        return layer_mod_sigmoid(C_h, e_u, e_i, params, config, backbone), None
    if config.variant == "film":
        return layer_mod_film(C_h, e_u, e_i, params, config, backbone), None
    return soft_modular_forward(C_h, e_u, e_i, params, config)
