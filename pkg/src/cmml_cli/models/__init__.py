"""Backbone, context encoders, modulation networks and the parameter bundle."""

from cmml_cli.models.backbone import BackboneActivations, BackboneConfig, backbone_forward, embed
from cmml_cli.models.context import (
    EncoderConfig,
    GeneratorConfig,
    encode_pooling,
    encode_sequential,
    hybrid_dot,
    hybrid_mlp,
)
from cmml_cli.models.modulation import (
    ModulationConfig,
    RouteTensor,
    layer_mod_film,
    layer_mod_sigmoid,
    soft_modular_forward,
    weight_modulation,
)
from cmml_cli.models.network import (
    ForwardResult,
    ModelBundle,
    NetworkConfig,
    forward_episode,
    init_bundle,
)

__all__ = [
    "BackboneActivations",
    "BackboneConfig",
    "backbone_forward",
    "embed",
    "EncoderConfig",
    "GeneratorConfig",
    "encode_pooling",
    "encode_sequential",
    "hybrid_dot",
    "hybrid_mlp",
    "ModulationConfig",
    "RouteTensor",
    "layer_mod_film",
    "layer_mod_sigmoid",
    "soft_modular_forward",
    "weight_modulation",
    "ForwardResult",
    "ModelBundle",
    "NetworkConfig",
    "forward_episode",
    "init_bundle",
]
