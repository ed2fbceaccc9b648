"""Interaction records, CSV ingestion and categorical feature schemas."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from cmml_cli.utils.exceptions import DataError
from cmml_cli.utils.logger import log


@dataclass(frozen=True)
class Interaction:
    """One observed user-item event."""

    user_id: int
    item_id: int
    label: float
    scenario_id: Optional[int] = None
    timestamp: Optional[int] = None

    @property
    def pair(self):
        return (self.user_id, self.item_id)


class CSVSchema(BaseModel):
    """Column names and label interpretation for a ratings file."""

    model_config = ConfigDict(extra="forbid")

    user_column: str = "user_id"
    item_column: str = "item_id"
    label_column: str = "rating"
    timestamp_column: str = "timestamp"
    scenario_column: str = "scenario_id"
    label_mode: Literal["implicit", "rating"] = "implicit"
    rating_min: float = 1.0
    rating_max: float = 5.0
    max_skip_fraction: float = 0.10


@dataclass
class CSVLoadResult:
    """Parsed interactions plus the malformed-row tally."""

    interactions: List[Interaction]
    total_rows: int
    skipped: int


def _parse_scenarios(raw: str) -> Optional[List[int]]:
    """``"3"`` or multi-valued ``"3|7"``; empty means no scenario, None means malformed."""
    if raw == "":
        return []
    try:
        values = [int(part) for part in raw.split("|")]
    except ValueError:
        return None
    if any(v < 0 for v in values):
        return None
    return values


def load_interactions_csv(path: str, schema: Optional[CSVSchema] = None) -> CSVLoadResult:
    """Read a ratings CSV with a header row.

    Rows that cannot be parsed are skipped and tallied; a multi-valued scenario
    cell (``3|7``) yields one interaction per scenario.
    """
    schema = schema or CSVSchema()
    csv_path = Path(path)
    if not csv_path.exists():
        raise DataError(f"Ratings file does not exist: {csv_path}")

    bad_lines: List[List[str]] = []

    def _on_bad_line(line: List[str]):
        bad_lines.append(line)
        return None

    try:
        frame = pd.read_csv(
            csv_path,
            dtype=str,
            keep_default_na=False,
            engine="python",
            on_bad_lines=_on_bad_line,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        raise DataError(f"Ratings file has no header row: {csv_path}")

    required = [schema.user_column, schema.item_column, schema.label_column]
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise DataError(f"Missing required column(s) in {csv_path}: {', '.join(missing)}")

    users = pd.to_numeric(frame[schema.user_column].str.strip(), errors="coerce")
    items = pd.to_numeric(frame[schema.item_column].str.strip(), errors="coerce")
    labels = pd.to_numeric(frame[schema.label_column].str.strip(), errors="coerce")
    valid = users.notna() & items.notna() & labels.notna()
    valid &= (users >= 0) & (items >= 0)
    valid &= (users % 1 == 0) & (items % 1 == 0)
    if schema.label_mode == "rating":
        valid &= (labels >= schema.rating_min) & (labels <= schema.rating_max)

    timestamps = None
    if schema.timestamp_column in frame.columns:
        raw_ts = frame[schema.timestamp_column].str.strip()
        timestamps = pd.to_numeric(raw_ts, errors="coerce")
        valid &= timestamps.notna() | (raw_ts == "")

    scenarios: Optional[List[Optional[List[int]]]] = None
    if schema.scenario_column in frame.columns:
        scenarios = [_parse_scenarios(raw.strip()) for raw in frame[schema.scenario_column]]
        valid &= pd.Series([s is not None for s in scenarios], index=frame.index)

    interactions: List[Interaction] = []
    for row in np.flatnonzero(valid.to_numpy()):
        label = 1.0 if schema.label_mode == "implicit" else float(labels.iat[row])
        ts = None
        if timestamps is not None and not pd.isna(timestamps.iat[row]):
            ts = int(timestamps.iat[row])
        row_scenarios: List[Optional[int]] = [None]
        if scenarios is not None and scenarios[row]:
            row_scenarios = list(scenarios[row])
        for scenario_id in row_scenarios:
            interactions.append(
                Interaction(
                    user_id=int(users.iat[row]),
                    item_id=int(items.iat[row]),
                    label=label,
                    scenario_id=scenario_id,
                    timestamp=ts,
                )
            )

    total = len(frame) + len(bad_lines)
    skipped = int((~valid).sum()) + len(bad_lines)
    if total == 0:
        raise DataError(f"Ratings file has no data rows: {csv_path}")
    if skipped:
        log.warning(f"Skipped {skipped} malformed row(s) of {total} in {csv_path}")
    if skipped / total > schema.max_skip_fraction:
        raise DataError(
            f"{skipped} of {total} rows in {csv_path} are malformed "
            f"(more than {schema.max_skip_fraction:.0%})"
        )

    log.info(f"Loaded {len(interactions)} interactions from {csv_path}")
    return CSVLoadResult(interactions=interactions, total_rows=total, skipped=skipped)


def offset_domain(
    interactions: Iterable[Interaction],
    user_offset: int,
    item_offset: int,
    scenario_offset: int,
) -> List[Interaction]:
    """Shift ids of one domain past the id ranges of the domains merged before it."""
    return [
        Interaction(
            user_id=x.user_id + user_offset,
            item_id=x.item_id + item_offset,
            label=x.label,
            scenario_id=None if x.scenario_id is None else x.scenario_id + scenario_offset,
            timestamp=x.timestamp,
        )
        for x in interactions
    ]


def merge_domains(domains: Sequence[List[Interaction]]) -> List[Interaction]:
    """Concatenate several interaction logs into one collision-free log."""
    merged: List[Interaction] = []
    user_offset = item_offset = scenario_offset = 0
    for domain in domains:
        merged.extend(offset_domain(domain, user_offset, item_offset, scenario_offset))
        if domain:
            user_offset += max(x.user_id for x in domain) + 1
            item_offset += max(x.item_id for x in domain) + 1
            scenario_ids = [x.scenario_id for x in domain if x.scenario_id is not None]
            scenario_offset += (max(scenario_ids) + 1) if scenario_ids else 0
    return merged


@dataclass
class FeatureSchema:
    """Vocabulary size and embedding width of every categorical field."""

    user_vocab: Dict[str, int] = field(default_factory=dict)
    item_vocab: Dict[str, int] = field(default_factory=dict)
    embedding_dims: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for name, size in {**self.user_vocab, **self.item_vocab}.items():
            if size <= 0:
                raise DataError(f"Vocabulary of field '{name}' must be positive, got {size}")
            if self.embedding_dims.get(name, 0) <= 0:
                raise DataError(f"Embedding width of field '{name}' must be positive")

    @classmethod
    def for_ids(cls, n_users: int, n_items: int, user_dim: int, item_dim: int) -> "FeatureSchema":
        return cls(
            user_vocab={"user_id": n_users},
            item_vocab={"item_id": n_items},
            embedding_dims={"user_id": user_dim, "item_id": item_dim},
        )

    @classmethod
    def from_interactions(cls, interactions: Sequence[Interaction], dim: int) -> "FeatureSchema":
        if not interactions:
            raise DataError("Cannot derive a feature schema from no interactions")
        n_users = max(x.user_id for x in interactions) + 1
        n_items = max(x.item_id for x in interactions) + 1
        return cls.for_ids(n_users, n_items, dim, dim)

    @property
    def user_dim(self) -> int:
        return sum(self.embedding_dims[name] for name in self.user_vocab)

    @property
    def item_dim(self) -> int:
        return sum(self.embedding_dims[name] for name in self.item_vocab)

    def check_ids(self, fields: Mapping[str, np.ndarray], side: str) -> None:
        vocab = self.user_vocab if side == "user" else self.item_vocab
        for name, size in vocab.items():
            if name not in fields:
                raise DataError(f"Missing {side} feature field '{name}'")
            ids = np.asarray(fields[name])
            if ids.size and (ids.min() < 0 or ids.max() >= size):
                raise DataError(f"Field '{name}' has an id outside its vocabulary of {size}")
