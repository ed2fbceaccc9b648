"""Meta-task construction and episode sampling."""

import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Sequence, Set, Tuple

import numpy as np

from cmml_cli.data.interactions import Interaction
from cmml_cli.engine.rng import rng_stream
from cmml_cli.utils.exceptions import TaskConstructionError, ValidationError
from cmml_cli.utils.logger import log
from cmml_cli.utils.validators import validate_fraction, validate_positive

Setting = Literal["scenario", "user"]
Split = Literal["meta-train", "meta-test"]

NEGATIVE_DRAW_ROUNDS = 64


@dataclass
class Task:
    """One cold-start unit: a labelled support set and a query set."""

    task_id: int
    setting: Setting
    support: List[Interaction]
    query: List[Interaction]
    split: Split = "meta-train"

    def __post_init__(self):
        if not self.support:
            raise TaskConstructionError(f"Task {self.task_id} has an empty support set")
        if not self.query:
            raise TaskConstructionError(f"Task {self.task_id} has an empty query set")
        overlap = {x.pair for x in self.support} & {x.pair for x in self.query}
        if overlap:
            raise TaskConstructionError(
                f"Task {self.task_id}: {len(overlap)} pair(s) appear in both support and query"
            )

    @property
    def positive_pairs(self) -> Set[Tuple[int, int]]:
        return {x.pair for x in self.support + self.query if x.label > 0}

    @property
    def users(self) -> List[int]:
        return sorted({x.user_id for x in self.support + self.query})

    @property
    def catalog(self) -> np.ndarray:
        """Sorted item ids observed anywhere in the task."""
        return np.array(sorted({x.item_id for x in self.support + self.query}), dtype=np.int64)


@dataclass
class Episode:
    """One sampled (support, query) realisation of a task.

    ``hinge_pairs`` holds index arrays into the query set: position ``j`` pairs
    positive ``pos[j]`` with negative ``neg[j]``.
    """

    task_id: int
    support_users: np.ndarray
    support_items: np.ndarray
    support_labels: np.ndarray
    query_users: np.ndarray
    query_items: np.ndarray
    query_labels: np.ndarray
    permutation: np.ndarray
    flagged: bool = False
    hinge_pairs: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @property
    def n_support(self) -> int:
        return int(self.support_users.shape[0])

    @property
    def n_query(self) -> int:
        return int(self.query_users.shape[0])

    def support_fields(self) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
        return {"user_id": self.support_users}, {"item_id": self.support_items}

    def query_fields(self) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
        return {"user_id": self.query_users}, {"item_id": self.query_items}


def split_for(entity_id: int, train_ratio: float, seed: int = 0) -> Split:
    """Deterministic meta-train/meta-test assignment by hashing the id."""
    digest = hashlib.sha256(f"{seed}:{entity_id}".encode("utf-8")).hexdigest()
    return "meta-train" if int(digest[:8], 16) / 2**32 < train_ratio else "meta-test"


def _arrays(records: Sequence[Interaction]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    users = np.array([x.user_id for x in records], dtype=np.int64)
    items = np.array([x.item_id for x in records], dtype=np.int64)
    labels = np.array([x.label for x in records], dtype=np.float64)
    return users, items, labels


def build_scenario_tasks(
    interactions: Sequence[Interaction],
    min_items: int = 100,
    max_items: int = 1000,
    train_ratio: float = 0.75,
    support_fraction: float = 1.0 / 3.0,
    seed: int = 0,
) -> List[Task]:
    """One task per scenario whose catalog size lies in ``[min_items, max_items]``.

    Each scenario's distinct positive pairs are shuffled with a per-scenario
    stream and split into a support pool and a disjoint query pool.
    """
    validate_fraction("support_fraction", support_fraction)
    by_scenario: Dict[int, Dict[Tuple[int, int], Interaction]] = defaultdict(dict)
    for x in interactions:
        if x.scenario_id is None:
            raise TaskConstructionError("Scenario tasks need interactions that carry scenario_id")
        if x.label > 0:
            by_scenario[x.scenario_id].setdefault(x.pair, x)

    tasks: List[Task] = []
    dropped = 0
    for scenario_id in sorted(by_scenario):
        pairs = by_scenario[scenario_id]
        n_items = len({item for _, item in pairs})
        if not min_items <= n_items <= max_items or len(pairs) < 2:
            dropped += 1
            continue
        records = [pairs[key] for key in sorted(pairs)]
        order = rng_stream(seed, scenario_id).permutation(len(records))
        n_support = min(max(1, math.ceil(support_fraction * len(records))), len(records) - 1)
        shuffled = [records[i] for i in order]
        tasks.append(
            Task(
                task_id=scenario_id,
                setting="scenario",
                support=shuffled[:n_support],
                query=shuffled[n_support:],
                split=split_for(scenario_id, train_ratio, seed),
            )
        )

    if not tasks:
        raise TaskConstructionError(
            f"No scenario has between {min_items} and {max_items} items ({dropped} dropped)"
        )
    log.info(f"Built {len(tasks)} scenario tasks, dropped {dropped} scenarios")
    return tasks


def build_user_tasks(
    interactions: Sequence[Interaction],
    per_user_cap: int = 50,
    query_size: int = 10,
    train_ratio: float = 0.75,
    seed: int = 0,
) -> List[Task]:
    """One task per user: at most ``per_user_cap`` records, ``query_size`` of them as query."""
    validate_positive("query_size", query_size)
    validate_positive("per_user_cap", per_user_cap)
    by_user: Dict[int, Dict[int, Interaction]] = defaultdict(dict)
    for x in interactions:
        by_user[x.user_id].setdefault(x.item_id, x)

    tasks: List[Task] = []
    dropped = 0
    for user_id in sorted(by_user):
        records = [by_user[user_id][item] for item in sorted(by_user[user_id])]
        if len(records) < query_size + 1:
            dropped += 1
            continue
        rng = rng_stream(seed, user_id)
        keep = rng.permutation(len(records))[: min(per_user_cap, len(records))]
        kept = [records[i] for i in keep]
        tasks.append(
            Task(
                task_id=user_id,
                setting="user",
                support=kept[query_size:],
                query=kept[:query_size],
                split=split_for(user_id, train_ratio, seed),
            )
        )

    if not tasks:
        raise TaskConstructionError(f"No user has at least {query_size + 1} records")
    log.info(f"Built {len(tasks)} user tasks, dropped {dropped} users")
    return tasks


def _draw(
    pool: Sequence[Interaction], n: int, rng: np.random.Generator
) -> Tuple[List[Interaction], bool]:
    replace = len(pool) < n
    picks = rng.choice(len(pool), size=n, replace=replace)
    return [pool[i] for i in picks], replace


def _sample_negatives(
    users: np.ndarray,
    negative_pool: np.ndarray,
    positives: Set[Tuple[int, int]],
    rng: np.random.Generator,
    task_id: int,
) -> np.ndarray:
    items = negative_pool[rng.integers(0, len(negative_pool), size=len(users))]
    for _ in range(NEGATIVE_DRAW_ROUNDS):
        clash = np.array([(int(u), int(i)) in positives for u, i in zip(users, items)], dtype=bool)
        if not clash.any():
            return items
        items[clash] = negative_pool[rng.integers(0, len(negative_pool), size=int(clash.sum()))]
    raise TaskConstructionError(
        f"Task {task_id}: could not draw negatives absent from the positive set"
    )


def sample_episode(
    task: Task,
    n_pos_support: int = 64,
    n_query: int = 128,
    negative_pool: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Episode:
    """Balanced episode of a scenario task.

    Support is ``n_pos_support`` positives plus as many negatives in a freshly
    permuted order; query is ``n_query`` positives followed by ``n_query``
    negatives. Negatives pair a drawn positive's user with an item from
    ``negative_pool`` such that the pair is not a known positive.
    """
    if task.setting != "scenario":
        raise ValidationError(
            f"sample_episode needs a scenario task, task {task.task_id} is '{task.setting}'"
        )
    pool = task.catalog if negative_pool is None else np.asarray(negative_pool, dtype=np.int64)
    if pool.size == 0:
        raise ValidationError("negative_pool must not be empty")
    rng = rng if rng is not None else rng_stream(0, task.task_id)
    positives = task.positive_pairs

    support_pos, flag_s = _draw(task.support, n_pos_support, rng)
    query_pos, flag_q = _draw(task.query, n_query, rng)
    flagged = flag_s or flag_q
    if flagged:
        log.warning(
            f"Task {task.task_id}: too few positives, episode sampled with replacement"
        )

    s_users, s_items, _ = _arrays(support_pos)
    q_users, q_items, _ = _arrays(query_pos)
    s_neg = _sample_negatives(s_users, pool, positives, rng, task.task_id)
    q_neg = _sample_negatives(q_users, pool, positives, rng, task.task_id)

    support_users = np.concatenate([s_users, s_users])
    support_items = np.concatenate([s_items, s_neg])
    support_labels = np.concatenate([np.ones(n_pos_support), -np.ones(n_pos_support)])
    permutation = rng.permutation(2 * n_pos_support)
    log.debug(f"Task {task.task_id}: support permutation head {permutation[:4].tolist()}")

    pos_order = rng.permutation(n_query)
    neg_order = n_query + rng.permutation(n_query)
    return Episode(
        task_id=task.task_id,
        support_users=support_users[permutation],
        support_items=support_items[permutation],
        support_labels=support_labels[permutation],
        query_users=np.concatenate([q_users, q_users]),
        query_items=np.concatenate([q_items, q_neg]),
        query_labels=np.concatenate([np.ones(n_query), -np.ones(n_query)]),
        permutation=permutation,
        flagged=flagged,
        hinge_pairs=(pos_order, neg_order),
    )


def task_episode(task: Task, rng: Optional[np.random.Generator] = None) -> Episode:
    """Whole-task episode for labelled (user or synthetic) tasks.

    The support order is permuted when ``rng`` is given; the query keeps task order.
    """
    s_users, s_items, s_labels = _arrays(task.support)
    q_users, q_items, q_labels = _arrays(task.query)
    n = len(task.support)
    permutation = rng.permutation(n) if rng is not None else np.arange(n)
    return Episode(
        task_id=task.task_id,
        support_users=s_users[permutation],
        support_items=s_items[permutation],
        support_labels=s_labels[permutation],
        query_users=q_users,
        query_items=q_items,
        query_labels=q_labels,
        permutation=permutation,
    )


def episode_from_pairs(
    support: Sequence[Interaction],
    query_pairs: Sequence[Tuple[int, int]],
    task_id: int = 0,
) -> Episode:
    """Episode for inference on unlabelled query pairs (labels are zero placeholders)."""
    if not support:
        raise TaskConstructionError(f"Task {task_id}: empty support set")
    if not query_pairs:
        raise TaskConstructionError(f"Task {task_id}: no query pairs")
    s_users, s_items, s_labels = _arrays(support)
    pairs = np.asarray(query_pairs, dtype=np.int64).reshape(-1, 2)
    return Episode(
        task_id=task_id,
        support_users=s_users,
        support_items=s_items,
        support_labels=s_labels,
        query_users=pairs[:, 0],
        query_items=pairs[:, 1],
        query_labels=np.zeros(pairs.shape[0]),
        permutation=np.arange(len(support)),
    )


def split_tasks(tasks: Sequence[Task], split: Split) -> List[Task]:
    return [task for task in tasks if task.split == split]
