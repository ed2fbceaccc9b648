"""Main CLI application using Typer."""

import typer
from rich.table import Table

from cmml_cli import __version__
from cmml_cli.cli.benchmark import ablate, bench
from cmml_cli.cli.common import OVERRIDABLE, command_errors, console
from cmml_cli.cli.data import gen_synthetic, prepare
from cmml_cli.cli.export import export_context, export_routes_command
from cmml_cli.cli.train import evaluate, train

app = typer.Typer(
    name="cmml",
    help=(
        "Cold-start recommendation by feed-forward task-context modulation.\n\n"
        "Every command reads and writes one run directory (--out). Settings come from\n"
        "--config, then flat --section.key=value overrides, then the named flags.\n\n"
        "Workflow\n"
        "  gen-synthetic / prepare  Build a task set\n"
        "  train                    Meta-train CMML or the gradient baseline\n"
        "  eval                     Score meta-test tasks\n"
        "  bench                    Time adaptation cost against inner steps\n"
        "  export-context           Dump task context vectors\n"
        "  export-routes            Dump soft-modular routing probabilities\n"
        "  ablate                   Multi-seed encoder/generator comparison\n\n"
        "Quick Examples\n"
        "  cmml gen-synthetic --out ./runs/synth\n"
        "  cmml train --out ./runs/synth --modulation film --training.epochs=5\n"
        "  cmml eval --out ./runs/synth --zero-context"
    ),
    add_completion=True,
    rich_markup_mode="rich",
)

app.command(name="gen-synthetic", context_settings=OVERRIDABLE)(gen_synthetic)
app.command(name="prepare", context_settings=OVERRIDABLE)(prepare)
app.command(name="train", context_settings=OVERRIDABLE)(train)
app.command(name="eval", context_settings=OVERRIDABLE)(evaluate)
app.command(name="bench", context_settings=OVERRIDABLE)(bench)
app.command(name="export-context", context_settings=OVERRIDABLE)(export_context)
app.command(name="export-routes", context_settings=OVERRIDABLE)(export_routes_command)
app.command(name="ablate", context_settings=OVERRIDABLE)(ablate)


@app.command()
def version():
    """Show installed CLI version.

    Example:
        cmml version
    """
    console.print(f"[bold green]cmml-cli[/bold green] version [bold]{__version__}[/bold]")


@app.command()
def info():
    """Show the host description recorded with benchmark results.

    Example:
        cmml info
    """
    from cmml_cli.utils.hardware import describe_host

    with command_errors():
        hw_info = describe_host()

    console.print("\n[bold cyan]System Information[/bold cyan]\n")
    table = Table(show_header=False)
    table.add_column("Key", style="cyan")
    table.add_column("Value")
    table.add_row("cmml-cli", __version__)
    cpu = hw_info["cpu"]
    table.add_row("CPU", str(cpu.get("brand", "unknown")))
    table.add_row("Cores", f"{cpu.get('cores_physical')} physical, {cpu.get('cores_logical')} logical")
    mem = hw_info["memory"]
    table.add_row("Memory", f"{mem.get('total_gb')}GB total, {mem.get('available_gb')}GB available")
    platform = hw_info["platform"]
    table.add_row("Platform", f"{platform['system']} {platform['release']}")
    table.add_row("Python", platform["python_version"])
    table.add_row("NumPy", platform["numpy_version"])
    console.print(table)
    console.print()


if __name__ == "__main__":
    app()
