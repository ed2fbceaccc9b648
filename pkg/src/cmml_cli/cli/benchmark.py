"""Benchmark and ablation commands."""

import json
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

import typer
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from cmml_cli.cli.common import (
    CONFIG_OPTION,
    ENCODER_OPTION,
    GENERATOR_OPTION,
    MODULATION_OPTION,
    OUT_OPTION,
    SEED_OPTION,
    checkpoint_path,
    command_errors,
    console,
    load_settings,
    read_checkpoint,
)
from cmml_cli.core.ablation import paired_sign_test, run_ablation
from cmml_cli.core.benchmarking import (
    BenchResult,
    analyze_trend,
    run_inference_bench,
    save_bench_csv,
    save_trend_json,
)
from cmml_cli.core.config import Settings
from cmml_cli.core.pipeline import TaskSet, build_bundle, load_task_set, resolve_loss_mode
from cmml_cli.models.network import ModelBundle
from cmml_cli.utils.hardware import describe_host
from cmml_cli.utils.logger import log

BENCH_FILE = "bench.csv"
TREND_FILE = "bench_trend.json"
ABLATION_FILE = "ablation.csv"
SIGN_TEST_FILE = "ablation_sign_test.json"


def _bundle_for(settings: Settings, task_set: TaskSet, method: str) -> ModelBundle:
    """Trained weights when a checkpoint exists; cost does not depend on them."""
    if checkpoint_path(settings, method, settings.evaluation.checkpoint).exists():
        return read_checkpoint(settings, method).bundle
    log.info(f"No {method} checkpoint in {settings.output_path}; timing a freshly initialised model")
    return build_bundle(settings, task_set, method)


def _results_table(results: List[BenchResult]) -> Table:
    table = Table(title="Adaptation cost", show_header=True, header_style="bold magenta")
    table.add_column("Method", style="cyan")
    table.add_column("m", justify="right")
    table.add_column("k", justify="right")
    table.add_column("Median (ms)", justify="right", style="green")
    table.add_column("Peak alloc (KiB)", justify="right")
    for r in results:
        table.add_row(
            r.method,
            str(r.m),
            "-" if r.k is None else str(r.k),
            f"{r.median_seconds * 1000:.3f}",
            f"{r.alloc_bytes / 1024:.1f}",
        )
    return table


def bench(
    ctx: typer.Context,
    m: Optional[List[int]] = typer.Option(None, "--m", help="Support/query size; repeat for several"),
    k: Optional[List[int]] = typer.Option(None, "--k", help="Baseline inner steps; repeat for several"),
    repeats: Optional[int] = typer.Option(None, "--repeats", "-r", help="Timed runs per cell (>= 5)"),
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    encoder: Optional[str] = ENCODER_OPTION,
    generator: Optional[str] = GENERATOR_OPTION,
    modulation: Optional[str] = MODULATION_OPTION,
    out: Optional[Path] = OUT_OPTION,
):
    """Time feed-forward CMML adaptation against the k-step gradient baseline.

    Writes bench.csv and bench_trend.json (trend fit plus host description).

    Common Variations:
      - Default grid (m=256, k in 1,5,10,20):
          cmml bench --out ./runs/synth
      - Custom grid:
          cmml bench --m 64 --m 256 --k 1 --k 10 --repeats 7
    """
    with command_errors():
        extra = {
            "bench.m_values": list(m) if m else None,
            "bench.k_values": list(k) if k else None,
            "bench.repeats": repeats,
        }
        settings = load_settings(
            ctx, config, seed, encoder, generator, modulation, out=out, **extra
        )
        task_set = load_task_set(settings.output_path)
        loss_mode = resolve_loss_mode(settings, task_set)
        cmml_bundle = _bundle_for(settings, task_set, "cmml")
        baseline_bundle = _bundle_for(settings, task_set, "baseline")

        b = settings.bench
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            console=console,
        ) as progress:
            cells = progress.add_task("Timing...", total=2 * len(b.m_values) * len(b.k_values))

            def on_result(result: BenchResult) -> None:
                progress.update(cells, advance=1, description=f"Timed {result.method} m={result.m}")

            results = run_inference_bench(
                cmml_bundle,
                baseline_bundle,
                b.m_values,
                b.k_values,
                repeats=b.repeats,
                warmup_runs=b.warmup_runs,
                baseline=settings.baseline,
                loss_mode=loss_mode,
                max_timer_fraction=b.max_timer_fraction,
                seed=settings.seed,
                on_result=on_result,
            )

        trend = analyze_trend(results)
        csv_path = save_bench_csv(settings.output_path / BENCH_FILE, results)
        host = describe_host()
        save_trend_json(settings.output_path / TREND_FILE, trend, host)

    console.print(_results_table(results))
    trend_table = Table(title="Baseline time vs k", show_header=True, header_style="bold magenta")
    for column in ("m", "slope (s/step)", "R²", "k_max/k_min", "CMML variation"):
        trend_table.add_column(column, justify="right")
    for size, entry in trend.items():
        trend_table.add_row(
            size,
            *(
                "-" if entry[key] is None else f"{entry[key]:.4g}"
                for key in ("slope", "r2", "baseline_ratio", "cmml_variation")
            ),
        )
    console.print(trend_table)
    log.success(f"Benchmark written to {csv_path}")


def ablate(
    ctx: typer.Context,
    variants: Optional[str] = typer.Option(
        None, "--variants", help="Comma-separated encoder/generator labels, e.g. pooling-mean/dot,sequential/dot"
    ),
    n_seeds: Optional[int] = typer.Option(None, "--n-seeds", help="Run seeds 0..N-1"),
    config: Optional[Path] = CONFIG_OPTION,
    modulation: Optional[str] = MODULATION_OPTION,
    out: Optional[Path] = OUT_OPTION,
):
    """Compare encoder/generator variants on synthetic tasks over several seeds.

    Writes ablation.csv (per-seed query MSE) and ablation_sign_test.json.

    Example:
        cmml ablate --variants pooling-mean/dot,sequential/dot --n-seeds 10
    """
    with command_errors():
        labels = [v.strip() for v in variants.split(",") if v.strip()] if variants else None
        extra = {
            "ablation.variants": labels,
            "ablation.seeds": list(range(n_seeds)) if n_seeds is not None else None,
        }
        settings = load_settings(ctx, config, modulation=modulation, out=out, **extra)
        a = settings.ablation
        with console.status(f"[bold cyan]Training {len(a.variants)} variants x {len(a.seeds)} seeds..."):
            result = run_ablation(settings, a.variants, a.seeds)
        csv_path = result.save(settings.output_path / ABLATION_FILE)
        test = None
        if a.reference in result.mse and a.challenger in result.mse:
            test = paired_sign_test(result, a.reference, a.challenger)
            with open(settings.output_path / SIGN_TEST_FILE, "w", encoding="utf-8") as f:
                json.dump(asdict(test), f, indent=2, sort_keys=True)
        else:
            log.warning(f"Sign test skipped: run both '{a.reference}' and '{a.challenger}'")

    table = Table(title="Query MSE by variant", show_header=True, header_style="bold magenta")
    table.add_column("Variant", style="cyan")
    table.add_column("Mean", justify="right", style="green")
    table.add_column("Seeds", justify="right")
    summary = result.to_frame().groupby("variant")["query_mse"].agg(["mean", "count"])
    for variant, row in summary.iterrows():
        table.add_row(str(variant), f"{row['mean']:.5f}", str(int(row["count"])))
    console.print(table)
    if test is not None:
        console.print(
            f"{test.reference} beats {test.challenger} on {test.wins}/{test.wins + test.losses + test.ties} "
            f"seeds (ties {test.ties}); one-sided sign test p={test.p_value:.4f}"
        )
    log.success(f"Ablation written to {csv_path}")
