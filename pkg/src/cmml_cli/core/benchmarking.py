"""Adaptation cost benchmark: feed-forward CMML against the k-step gradient baseline."""

from __future__ import annotations

import json
import statistics
import time
import tracemalloc
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from cmml_cli.core.baseline import BaselineConfig, baseline_adapt_and_score
from cmml_cli.core.metalearn import LossMode, cmml_infer_episode
from cmml_cli.data.tasks import Episode
from cmml_cli.engine.rng import rng_stream
from cmml_cli.models.network import ModelBundle
from cmml_cli.utils.exceptions import BenchmarkError
from cmml_cli.utils.logger import log

BENCH_COLUMNS = ["method", "m", "k", "median_seconds", "alloc_bytes", "repeats"]
BENCH_STREAM = 5
MAX_PARAMETER_RATIO = 2.0


@dataclass
class BenchResult:
    method: str
    m: int
    k: Optional[int]
    median_seconds: float
    alloc_bytes: int
    repeats: int


def summarize_latencies(latencies_seconds: List[float]) -> Dict[str, float]:
    """Create summary statistics from a list of latency measurements."""
    if not latencies_seconds:
        raise BenchmarkError("No latency samples were collected")

    ordered = sorted(latencies_seconds)
    return {
        "runs": len(ordered),
        "median_s": statistics.median(ordered),
        "mean_s": statistics.fmean(ordered),
        "min_s": ordered[0],
        "max_s": ordered[-1],
    }


def bench_episode(bundle: ModelBundle, m: int, loss_mode: LossMode, seed: int = 0) -> Episode:
    """Random episode with ``m`` support and ``m`` query rows inside the bundle's vocabularies."""
    schema = bundle.config.schema
    rng = rng_stream(seed, BENCH_STREAM)
    n_users = schema.user_vocab["user_id"]
    n_items = schema.item_vocab["item_id"]
    if loss_mode == "hinge":
        labels = np.where(rng.random(m) < 0.5, 1.0, -1.0)
    else:
        labels = rng.standard_normal(m)
    return Episode(
        task_id=0,
        support_users=rng.integers(0, n_users, size=m),
        support_items=rng.integers(0, n_items, size=m),
        support_labels=labels,
        query_users=rng.integers(0, n_users, size=m),
        query_items=rng.integers(0, n_items, size=m),
        query_labels=np.zeros(m),
        permutation=np.arange(m),
    )


def measure(
    fn: Callable[[], Any], repeats: int, warmup_runs: int, max_timer_fraction: float
) -> Dict[str, float]:
    """Median wall time over ``repeats`` runs after ``warmup_runs``.

    One extra traced run records the peak allocation.
    """
    if repeats < 5:
        raise BenchmarkError(f"repeats must be >= 5, got {repeats}")
    if warmup_runs < 0:
        raise BenchmarkError("warmup_runs cannot be negative")

    for _ in range(warmup_runs):
        fn()
    latencies: List[float] = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        latencies.append(time.perf_counter() - start)
    summary = summarize_latencies(latencies)

    resolution = time.get_clock_info("perf_counter").resolution
    if resolution > max_timer_fraction * summary["median_s"]:
        raise BenchmarkError(
            f"Timer resolution {resolution:.2e}s exceeds {max_timer_fraction:.0%} of the "
            f"median {summary['median_s']:.2e}s; use a larger m"
        )

    tracemalloc.start()
    try:
        fn()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    summary["alloc_bytes"] = peak
    return summary


def check_comparable(bundle: ModelBundle, baseline_bundle: ModelBundle) -> None:
    cmml = bundle.parameter_count(bundle.backbone_names)
    base = baseline_bundle.parameter_count(baseline_bundle.backbone_names)
    ratio = max(cmml, base) / max(min(cmml, base), 1)
    if ratio > MAX_PARAMETER_RATIO:
        raise BenchmarkError(
            f"Backbones are not comparable: {cmml} vs {base} parameters (ratio {ratio:.2f})"
        )


def run_inference_bench(
    bundle: ModelBundle,
    baseline_bundle: ModelBundle,
    m_values: Sequence[int],
    k_values: Sequence[int],
    repeats: int = 5,
    warmup_runs: int = 2,
    baseline: Optional[BaselineConfig] = None,
    loss_mode: LossMode = "mse",
    max_timer_fraction: float = 0.05,
    seed: int = 0,
    on_result: Optional[Callable[[BenchResult], None]] = None,
) -> List[BenchResult]:
    """Time one adaptation per method for every ``(m, k)``.

    CMML is timed once per ``k`` round as well, although it never reads ``k``;
    its rows carry no ``k``.
    """
    check_comparable(bundle, baseline_bundle)
    baseline = baseline or BaselineConfig()
    results: List[BenchResult] = []

    def emit(result: BenchResult) -> None:
        results.append(result)
        if on_result is not None:
            on_result(result)

    for m in m_values:
        episode = bench_episode(bundle, m, loss_mode, seed)
        for k in k_values:
            cfg = baseline.model_copy(update={"inner_steps": k})
            base = measure(
                lambda: baseline_adapt_and_score(baseline_bundle, episode, cfg, loss_mode),
                repeats, warmup_runs, max_timer_fraction,
            )
            emit(BenchResult("baseline", m, k, base["median_s"], int(base["alloc_bytes"]), repeats))
            cmml = measure(
                lambda: cmml_infer_episode(bundle, episode),
                repeats, warmup_runs, max_timer_fraction,
            )
            emit(BenchResult("cmml", m, None, cmml["median_s"], int(cmml["alloc_bytes"]), repeats))
            log.debug(
                f"m={m} k={k}: baseline {base['median_s']:.4f}s, cmml {cmml['median_s']:.4f}s"
            )
    return results


def analyze_trend(results: Sequence[BenchResult]) -> Dict[str, Dict[str, Any]]:
    """Per ``m``: least-squares fit of baseline time on ``k``, its R², the
    k_max/k_min time ratio and the relative spread of CMML times."""
    report: Dict[str, Dict[str, Any]] = {}
    for m in sorted({r.m for r in results}):
        base = sorted(
            (r for r in results if r.m == m and r.method == "baseline"), key=lambda r: r.k
        )
        cmml = [r.median_seconds for r in results if r.m == m and r.method == "cmml"]
        entry: Dict[str, Any] = dict.fromkeys(("slope", "intercept", "r2", "baseline_ratio"))
        if len(base) >= 2:
            ks = np.array([r.k for r in base], dtype=np.float64)
            times = np.array([r.median_seconds for r in base])
            slope, intercept = np.polyfit(ks, times, 1)
            residual = np.sum((times - (slope * ks + intercept)) ** 2)
            total = np.sum((times - times.mean()) ** 2)
            entry.update(
                slope=float(slope),
                intercept=float(intercept),
                r2=float(1.0 - residual / total) if total > 0 else 0.0,
                baseline_ratio=float(times[-1] / times[0]),
            )
        entry["cmml_variation"] = (
            float((max(cmml) - min(cmml)) / min(cmml)) if cmml else None
        )
        report[str(m)] = entry
    return report


def save_bench_csv(path: Path, results: Sequence[BenchResult]) -> Path:
    """CSV ``method,m,k,median_seconds,alloc_bytes,repeats``; CMML rows leave ``k`` empty."""
    frame = pd.DataFrame([asdict(r) for r in results], columns=BENCH_COLUMNS)
    frame["k"] = frame["k"].astype("Int64")
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def save_trend_json(
    path: Path, trend: Dict[str, Any], host: Optional[Dict[str, Any]] = None
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"trend": trend, "host": host or {}}, f, indent=2, sort_keys=True)
    return path
