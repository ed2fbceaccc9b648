"""Task-set, embedding-table and hidden-vector files."""

from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from cmml_cli.data.interactions import Interaction
from cmml_cli.data.tasks import Task
from cmml_cli.utils.exceptions import DataError

TASK_COLUMNS = ["task_id", "setting", "split", "role", "user_id", "item_id", "label", "scenario_id"]


def save_tasks(path: Path, tasks: Sequence[Task]) -> Path:
    rows = []
    for task in tasks:
        for role, records in (("support", task.support), ("query", task.query)):
            for x in records:
                rows.append(
                    (task.task_id, task.setting, task.split, role, x.user_id, x.item_id, x.label,
                     "" if x.scenario_id is None else x.scenario_id)
                )
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=TASK_COLUMNS).to_csv(path, index=False)
    return path


def load_tasks(path: Path) -> List[Task]:
    if not Path(path).exists():
        raise DataError(f"Task file does not exist: {path}; run 'prepare' or 'gen-synthetic' first")
    frame = pd.read_csv(path, keep_default_na=False, dtype={"scenario_id": str})
    missing = [c for c in TASK_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"Task file {path} lacks column(s): {', '.join(missing)}")

    parts: Dict[int, Dict[str, List[Interaction]]] = defaultdict(
        lambda: {"support": [], "query": []}
    )
    meta: Dict[int, tuple] = {}
    for row in frame.itertuples(index=False):
        scenario = None if row.scenario_id == "" else int(row.scenario_id)
        parts[int(row.task_id)][row.role].append(
            Interaction(int(row.user_id), int(row.item_id), float(row.label), scenario)
        )
        meta[int(row.task_id)] = (row.setting, row.split)
    return [
        Task(task_id=tid, setting=meta[tid][0], split=meta[tid][1],
             support=parts[tid]["support"], query=parts[tid]["query"])
        for tid in sorted(parts)
    ]


def save_embedding_table(path: Path, table: np.ndarray) -> Path:
    """CSV ``entity_id,v0,...,v{dim-1}``."""
    frame = pd.DataFrame(table, columns=[f"v{j}" for j in range(table.shape[1])])
    frame.insert(0, "entity_id", np.arange(table.shape[0]))
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def load_embedding_table(path: Path) -> np.ndarray:
    """Rows are placed by ``entity_id``; ids absent from the file get zero rows."""
    if not Path(path).exists():
        raise DataError(f"Embedding table does not exist: {path}")
    frame = pd.read_csv(path)
    if "entity_id" not in frame.columns:
        raise DataError(f"Embedding table {path} lacks an entity_id column")
    ids = frame["entity_id"].to_numpy(dtype=np.int64)
    values = frame.drop(columns=["entity_id"]).to_numpy(dtype=np.float64)
    if ids.size == 0 or ids.min() < 0:
        raise DataError(f"Embedding table {path} has no rows or a negative entity_id")
    table = np.zeros((int(ids.max()) + 1, values.shape[1]))
    table[ids] = values
    return table


def save_hidden_vectors(path: Path, hidden: Dict[int, np.ndarray]) -> Path:
    ids = sorted(hidden)
    dim = hidden[ids[0]].shape[0]
    frame = pd.DataFrame([hidden[i] for i in ids], columns=[f"w{j}" for j in range(dim)])
    frame.insert(0, "task_id", ids)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def load_hidden_vectors(path: Path) -> Dict[int, np.ndarray]:
    frame = pd.read_csv(path)
    values = frame.drop(columns=["task_id"]).to_numpy(dtype=np.float64)
    return {int(tid): values[n] for n, tid in enumerate(frame["task_id"])}
