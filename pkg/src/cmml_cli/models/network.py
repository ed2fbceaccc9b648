"""The full CMML network: parameter bundle plus the episode forward pass."""

import hashlib
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional

import numpy as np

from cmml_cli.data.interactions import FeatureSchema
from cmml_cli.data.tasks import Episode
from cmml_cli.engine import ops
from cmml_cli.engine.rng import rng_stream
from cmml_cli.engine.tensor import Tape, Tensor
from cmml_cli.models.backbone import BackboneConfig, embed, embedding_names, init_backbone
from cmml_cli.models.context import (
    EncoderConfig,
    GeneratorConfig,
    encode_context,
    hybrid_context,
    hybrid_width,
    init_encoder,
    init_generator,
)
from cmml_cli.models.modulation import (
    ModulationConfig,
    RouteTensor,
    init_modulation,
    modulated_scores,
)
from cmml_cli.utils.exceptions import ModelConfigError, ShapeError


@dataclass(frozen=True)
class NetworkConfig:
    schema: FeatureSchema
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    modulation: ModulationConfig = field(default_factory=ModulationConfig)

    @property
    def pair_dim(self) -> int:
        return self.schema.user_dim + self.schema.item_dim

    @property
    def cond_dim(self) -> int:
        return hybrid_width(self.generator, self.encoder, self.pair_dim)


class ModelBundle:
    """Named parameters split into backbone (``backbone.*``) and meta (``meta.*``) sets.

    Arrays are read-only; updates produce a new bundle through :meth:`replace`.
    The name set is fixed at construction.
    """

    def __init__(
        self,
        params: Mapping[str, np.ndarray],
        config: NetworkConfig,
        frozen: FrozenSet[str] = frozenset(),
    ):
        unknown = [n for n in params if not n.startswith(("backbone.", "meta."))]
        if unknown:
            raise ModelConfigError(
                f"Parameter names must start with backbone. or meta.: {unknown[:3]}"
            )
        missing = set(frozen) - set(params)
        if missing:
            raise ModelConfigError(f"Frozen names not in bundle: {sorted(missing)[:3]}")
        self._params: Dict[str, np.ndarray] = {}
        for name in sorted(params):
            values = np.array(params[name], dtype=np.float64)
            values.setflags(write=False)
            self._params[name] = values
        self.config = config
        self.frozen = frozenset(frozen)

    @property
    def params(self) -> Mapping[str, np.ndarray]:
        return self._params

    @property
    def names(self) -> List[str]:
        return list(self._params)

    @property
    def backbone_names(self) -> List[str]:
        return [n for n in self._params if n.startswith("backbone.")]

    @property
    def meta_names(self) -> List[str]:
        return [n for n in self._params if n.startswith("meta.")]

    @property
    def trainable_names(self) -> List[str]:
        return [n for n in self._params if n not in self.frozen]

    def parameter_count(self, names: Optional[List[str]] = None) -> int:
        selected = names if names is not None else list(self._params)
        return int(sum(self._params[n].size for n in selected))

    def tensors(
        self, tape: Optional[Tape] = None, watch: Optional[List[str]] = None
    ) -> Dict[str, Tensor]:
        """Tensor view of the parameters; names in ``watch`` become tape leaves.

        ``watch`` defaults to every trainable name; without a tape all are constants.
        """
        watched = set(self.trainable_names if watch is None else watch)
        out: Dict[str, Tensor] = {}
        for name, values in self._params.items():
            if tape is not None and name in watched:
                out[name] = tape.watch(values, name)
            else:
                out[name] = Tensor(values)
        return out

    def replace(self, updates: Mapping[str, np.ndarray]) -> "ModelBundle":
        unknown = set(updates) - set(self._params)
        if unknown:
            raise ModelConfigError(f"Cannot add parameters to a bundle: {sorted(unknown)[:3]}")
        for name, values in updates.items():
            if np.shape(values) != self._params[name].shape:
                raise ShapeError(
                    f"Update for '{name}' has shape {np.shape(values)}, "
                    f"expected {self._params[name].shape}"
                )
        return ModelBundle({**self._params, **updates}, self.config, self.frozen)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self._params):
            values = np.ascontiguousarray(self._params[name])
            digest.update(name.encode("utf-8"))
            digest.update(str(values.shape).encode("utf-8"))
            digest.update(values.tobytes())
        return digest.hexdigest()


def init_bundle(
    config: NetworkConfig,
    seed: int = 0,
    tables: Optional[Mapping[str, np.ndarray]] = None,
) -> ModelBundle:
    """Fresh parameters; embedding tables are frozen when the backbone says so."""
    rng = rng_stream(seed, 0)
    soft = config.modulation.variant == "soft"
    params = init_backbone(rng, config.backbone, config.schema, tables, stack=not soft)
    params.update(init_encoder(rng, config.encoder, config.pair_dim))
    params.update(init_generator(rng, config.generator, config.encoder, config.pair_dim))
    params.update(
        init_modulation(rng, config.modulation, config.backbone, config.cond_dim, config.pair_dim)
    )
    return ModelBundle(params, config, frozen_tables(config))


def frozen_tables(config: NetworkConfig) -> FrozenSet[str]:
    """Embedding tables stay fixed in frozen mode."""
    if config.backbone.embedding_mode == "frozen":
        return frozenset(embedding_names(config.schema))
    return frozenset()


@dataclass
class ForwardResult:
    scores: Tensor
    context: Tensor
    routes: Optional[RouteTensor] = None


def support_subset(episode: Episode, config: EncoderConfig) -> np.ndarray:
    """Indices of the support rows the encoder sees."""
    if config.support_negatives:
        return np.arange(episode.n_support)
    keep = np.flatnonzero(episode.support_labels > 0)
    if keep.size == 0:
        raise ShapeError(f"Task {episode.task_id}: no positive support rows left for the encoder")
    return keep


def forward_episode(
    params: Mapping[str, Tensor],
    config: NetworkConfig,
    episode: Episode,
    zero_context: bool = False,
) -> ForwardResult:
    """Support -> C -> per-query C_h -> modulated scores, one per query row."""
    if episode.n_support == 0:
        raise ShapeError(f"Task {episode.task_id}: empty support set")
    rows = support_subset(episode, config.encoder)
    s_users, s_items = episode.support_fields()
    s_u, s_i = embed(
        {k: v[rows] for k, v in s_users.items()},
        {k: v[rows] for k, v in s_items.items()},
        params,
        config.schema,
    )
    C = encode_context(s_u, s_i, episode.support_labels[rows], params, config.encoder)
    if zero_context:
        C = ops.zeros(C.shape)

    q_users, q_items = episode.query_fields()
    q_u, q_i = embed(q_users, q_items, params, config.schema)
    C_h = hybrid_context(C, q_u, q_i, params, config.generator)
    scores, routes = modulated_scores(C_h, q_u, q_i, params, config.modulation, config.backbone)
    return ForwardResult(scores=scores, context=C, routes=routes)
