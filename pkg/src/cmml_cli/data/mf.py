"""Matrix factorization pretraining of user/item embedding tables."""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from cmml_cli.data.interactions import Interaction
from cmml_cli.engine.rng import rng_stream
from cmml_cli.utils.exceptions import DataError
from cmml_cli.utils.validators import validate_positive
from cmml_cli.utils.logger import log

INIT_SD = 0.1


@dataclass
class EmbeddingTables:
    user: np.ndarray
    item: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.user.shape[1])


def mf_initial_tables(n_users: int, n_items: int, dim: int, seed: int = 0) -> EmbeddingTables:
    """Gaussian initialisation used before any SGD epoch."""
    validate_positive("embedding dimension", dim)
    rng = rng_stream(seed, 0)
    return EmbeddingTables(
        user=rng.normal(0.0, INIT_SD, size=(n_users, dim)),
        item=rng.normal(0.0, INIT_SD, size=(n_items, dim)),
    )


def mf_pretrain_embeddings(
    interactions: Sequence[Interaction],
    dim: int = 32,
    epochs: int = 20,
    lr: float = 0.01,
    reg: float = 0.01,
    seed: int = 0,
    n_users: Optional[int] = None,
    n_items: Optional[int] = None,
) -> EmbeddingTables:
    """Fit ``label ~ P[u] . Q[i]`` by per-example SGD with L2 regularisation."""
    validate_positive("embedding dimension", dim)
    if not interactions:
        raise DataError("Matrix factorization needs at least one interaction")

    users = np.array([x.user_id for x in interactions], dtype=np.int64)
    items = np.array([x.item_id for x in interactions], dtype=np.int64)
    labels = np.array([x.label for x in interactions], dtype=np.float64)
    n_users = n_users if n_users is not None else int(users.max()) + 1
    n_items = n_items if n_items is not None else int(items.max()) + 1

    tables = mf_initial_tables(n_users, n_items, dim, seed)
    P, Q = tables.user, tables.item
    shuffle = rng_stream(seed, 1)

    for epoch in range(epochs):
        for idx in shuffle.permutation(len(labels)):
            u, i = users[idx], items[idx]
            p_u = P[u].copy()
            err = labels[idx] - p_u @ Q[i]
            P[u] += lr * (err * Q[i] - reg * p_u)
            Q[i] += lr * (err * p_u - reg * Q[i])
        if not (np.isfinite(P).all() and np.isfinite(Q).all()):
            raise DataError(f"Matrix factorization diverged at epoch {epoch + 1}; lower the lr")
        rmse = float(np.sqrt(np.mean((labels - np.einsum("nd,nd->n", P[users], Q[items])) ** 2)))
        log.debug(f"MF epoch {epoch + 1}/{epochs}: rmse={rmse:.4f}")

    return EmbeddingTables(user=P, item=Q)


def reconstruction_rmse(tables: EmbeddingTables, interactions: Sequence[Interaction]) -> float:
    users = np.array([x.user_id for x in interactions], dtype=np.int64)
    items = np.array([x.item_id for x in interactions], dtype=np.int64)
    labels = np.array([x.label for x in interactions], dtype=np.float64)
    predicted = np.einsum("nd,nd->n", tables.user[users], tables.item[items])
    return float(np.sqrt(np.mean((labels - predicted) ** 2)))
