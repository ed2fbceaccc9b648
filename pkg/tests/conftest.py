"""Test configuration and fixtures."""

from typing import Dict, Optional

import numpy as np
import pytest

from cmml_cli.core.config import Settings
from cmml_cli.data.interactions import FeatureSchema, Interaction
from cmml_cli.data.synthetic import SyntheticTaskSpec
from cmml_cli.data.tasks import Episode, Task
from cmml_cli.engine.rng import rng_stream
from cmml_cli.models.backbone import BackboneConfig
from cmml_cli.models.context import EncoderConfig, GeneratorConfig
from cmml_cli.models.modulation import ModulationConfig
from cmml_cli.models.network import NetworkConfig

N_USERS = 12
N_ITEMS = 40
DIM = 3


@pytest.fixture
def rng():
    return rng_stream(1234, 0)


@pytest.fixture
def tiny_schema():
    """Twelve users, forty items, three-wide embeddings per side."""
    return FeatureSchema.for_ids(N_USERS, N_ITEMS, DIM, DIM)


@pytest.fixture
def tiny_tables():
    gen = rng_stream(77, 0)
    return {
        "user_id": gen.standard_normal((N_USERS, DIM)),
        "item_id": gen.standard_normal((N_ITEMS, DIM)),
    }


def small_network(
    schema: FeatureSchema,
    modulation: str = "film",
    encoder: str = "sequential",
    generator: str = "dot",
    **encoder_kwargs,
) -> NetworkConfig:
    """Few-unit network of the requested variants."""
    return NetworkConfig(
        schema=schema,
        backbone=BackboneConfig(hidden_sizes=(5, 4)),
        encoder=EncoderConfig(variant=encoder, mlp_hidden=(5,), gru_hidden=4, **encoder_kwargs),
        generator=GeneratorConfig(variant=generator, mlp_hidden=(4,)),
        modulation=ModulationConfig(
            variant=modulation,
            hyper_hidden=(5,),
            route_hidden=4,
            k_layers=2,
            n_modules=4,
            module_dim=2,
        ),
    )


@pytest.fixture
def network_factory(tiny_schema):
    def build(modulation="film", encoder="sequential", generator="dot", **kwargs):
        return small_network(tiny_schema, modulation, encoder, generator, **kwargs)

    return build


def random_episode(
    gen: np.random.Generator,
    n_support: int = 6,
    n_query: int = 5,
    task_id: int = 0,
    signed: bool = False,
    hinge: bool = False,
) -> Episode:
    """Episode with ids inside the tiny schema; ``signed`` gives ±1 labels."""
    if signed or hinge:
        support_labels = np.where(np.arange(n_support) % 2 == 0, 1.0, -1.0)
    else:
        support_labels = gen.standard_normal(n_support)
    query_labels = gen.standard_normal(n_query)
    hinge_pairs = None
    if hinge:
        half = n_query // 2
        query_labels = np.concatenate([np.ones(half), -np.ones(n_query - half)])
        hinge_pairs = (gen.permutation(half), half + gen.permutation(half))
    return Episode(
        task_id=task_id,
        support_users=gen.integers(0, N_USERS, size=n_support),
        support_items=gen.integers(0, N_ITEMS, size=n_support),
        support_labels=support_labels,
        query_users=gen.integers(0, N_USERS, size=n_query),
        query_items=gen.integers(0, N_ITEMS, size=n_query),
        query_labels=query_labels,
        permutation=np.arange(n_support),
        hinge_pairs=hinge_pairs,
    )


@pytest.fixture
def episode(rng):
    return random_episode(rng)


def make_scenario_task(
    task_id: int, n_pairs: int = 30, n_users: int = 8, n_items: int = 25, split: str = "meta-train"
) -> Task:
    """Scenario task of distinct positive pairs, first third as support."""
    gen = rng_stream(500, task_id)
    pairs = set()
    while len(pairs) < n_pairs:
        pairs.add((int(gen.integers(0, n_users)), int(gen.integers(0, n_items))))
    records = [Interaction(u, i, 1.0, task_id) for u, i in sorted(pairs)]
    cut = n_pairs // 3
    return Task(task_id, "scenario", records[:cut], records[cut:], split)


def make_user_task(
    task_id: int, n_records: int = 14, split: str = "meta-train", seed: int = 0
) -> Task:
    gen = rng_stream(seed, 900 + task_id)
    items = gen.choice(N_ITEMS, size=n_records, replace=False)
    records = [Interaction(task_id % N_USERS, int(i), float(gen.integers(1, 6))) for i in items]
    return Task(task_id, "user", records[4:], records[:4], split)


@pytest.fixture
def small_synthetic_spec():
    return SyntheticTaskSpec(
        latent_dim=3,
        feature_dim=3,
        support_size=8,
        query_size=6,
        n_tasks=12,
        n_items=60,
        n_users=12,
    )


RATINGS_HEADER = "user_id,item_id,rating,timestamp,scenario_id"


def write_ratings_csv(path, rows, header: str = RATINGS_HEADER) -> str:
    lines = [header] + [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def ml_style_rows(
    n_users: int = 30, n_items: int = 60, per_user: int = 16, seed: int = 3
) -> list:
    """MovieLens-style explicit ratings: users rate items by a shared latent taste."""
    gen = rng_stream(seed, 0)
    user_taste = gen.standard_normal((n_users, 2))
    item_taste = gen.standard_normal((n_items, 2))
    rows = []
    for user in range(n_users):
        for item in gen.choice(n_items, size=per_user, replace=False):
            raw = 3.0 + user_taste[user] @ item_taste[item]
            rating = int(np.clip(np.rint(raw), 1, 5))
            rows.append((user, int(item), rating, 1000 + len(rows), int(item) % 4))
    return rows


@pytest.fixture
def ratings_csv(tmp_path):
    return write_ratings_csv(tmp_path / "ratings.csv", ml_style_rows())


def tensors_of(params: Dict[str, np.ndarray], tape=None, watch: Optional[list] = None):
    """Constant (or watched) tensor view of a raw parameter dict."""
    from cmml_cli.engine.tensor import Tensor

    watched = set(params if watch is None else watch)
    return {
        name: tape.watch(v, name) if tape is not None and name in watched else Tensor(v)
        for name, v in params.items()
    }


SMALL_SETTINGS = {
    "synthetic.latent_dim": 3,
    "synthetic.feature_dim": 3,
    "synthetic.support_size": 8,
    "synthetic.query_size": 6,
    "synthetic.n_tasks": 12,
    "synthetic.n_items": 60,
    "synthetic.n_users": 12,
    "backbone.hidden_sizes": [5, 4],
    "encoder.mlp_hidden": [5],
    "encoder.gru_hidden": 4,
    "generator.mlp_hidden": [4],
    "modulation.hyper_hidden": [5],
    "modulation.route_hidden": 4,
    "modulation.k_layers": 2,
    "modulation.n_modules": 4,
    "modulation.module_dim": 2,
    "mf.dim": 3,
    "mf.epochs": 2,
}


def small_settings(**extra) -> Settings:
    """Run settings sized for unit tests; ``extra`` takes dotted keys."""
    return Settings.from_yaml(overrides={**SMALL_SETTINGS, **extra})
