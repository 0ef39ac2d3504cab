"""CLI entry point for align-lab.

This module provides the command-line interface using Typer with Rich formatting.
"""

from __future__ import annotations

import itertools
from collections.abc import Iterator
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import Any

import typer
from rich.console import Console
from rich.markdown import Markdown
from rich.panel import Panel
from rich.table import Table

from align_lab.core.exceptions import (
    ConfigurationError,
    EnumerationBudgetError,
    LabError,
    NumericAbortError,
)
from align_lab.harness.checks import run_checks
from align_lab.harness.experiment import run_experiment
from align_lab.harness.io import (
    model_to_csv,
    read_domains,
    read_preferences,
    rows_to_csv,
    write_json,
    write_text,
)
from align_lab.harness.schemas import ExperimentConfig, MetricsReport, load_experiment_config
from align_lab.hooks.logging import setup_logging
from align_lab.preference.fitting import FitVariant, fit_reward_model
from align_lab.utils.templates import render_check_report
from align_lab.utils.validation import parse_axis, validate_config_path, validate_output_path

EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

app = typer.Typer(
    name="align",
    help="Exactly-verifiable divergence-minimization alignment experiments.",
    no_args_is_help=True,
)

console = Console()
# stdout may carry command data
err_console = Console(stderr=True)


class OutputFormat(str, Enum):
    JSON = "json"
    CSV = "csv"


@app.callback()
def main(
    log_level: str | None = typer.Option(
        None, "--log-level", "-l", help="Logging level (default from ALIGN_LAB_LOG_LEVEL)"
    ),
) -> None:
    """Configure logging before any command runs."""
    setup_logging(log_level=log_level)


@contextmanager
def _exit_codes() -> Iterator[None]:
    """Map lab errors to process exit codes: 2 for config, 3 for numeric aborts."""
    try:
        yield
    except (ConfigurationError, EnumerationBudgetError) as e:
        console.print(f"[red]Configuration error:[/red] {e}")
        raise typer.Exit(EXIT_CONFIG) from None
    except NumericAbortError as e:
        console.print(f"[red]Numeric abort:[/red] {e}")
        raise typer.Exit(EXIT_NUMERIC) from None
    except LabError as e:
        console.print(f"[red]Error:[/red] {e}")
        raise typer.Exit(1) from None


def _load(config: Path, seed: int | None) -> ExperimentConfig:
    loaded = load_experiment_config(validate_config_path(config))
    return loaded if seed is None else loaded.with_overrides({"seed": seed})


def _emit(text: str, out: Path | None) -> None:
    """Write to ``out``, or print raw text to stdout."""
    if out is None:
        typer.echo(text, nl=False)
    else:
        write_text(validate_output_path(out), text)
        console.print(f"[green]Wrote[/green] {out}")


def _display_report(report: MetricsReport) -> None:
    lines = [
        f"[bold]Objective:[/bold] {report.objective}",
        f"[bold]Seed:[/bold] {report.seed}",
        f"[bold]Config hash:[/bold] {report.config_hash[:12]}",
        f"[bold]FKL / RKL / JS:[/bold] {report.fkl:.4e} / {report.rkl:.4e} / {report.js:.4e}",
        f"[bold]Expected reward:[/bold] {report.expected_reward:.4f}",
        f"[bold]Iterations:[/bold] {report.iterations} "
        f"({'converged' if report.converged else 'not converged'})",
        f"[bold]Wall clock:[/bold] {report.wall_clock_s:.2f}s",
    ]
    if report.mode_mass:
        masses = ", ".join(f"{m:.4f}" for m in report.mode_mass)
        lines.append(f"[bold]Mode masses:[/bold] {masses}")
    if report.disc_gap is not None:
        lines.append(f"[bold]Discriminator gap:[/bold] {report.disc_gap:.3e}")
    console.print(Panel("\n".join(lines), title=report.name, border_style="blue"))


@app.command()
def run(
    config: Path = typer.Option(..., "--config", "-c", help="Experiment config (TOML)"),
    seed: int | None = typer.Option(None, "--seed", "-s", help="Override the config seed"),
    out: Path | None = typer.Option(None, "--out", "-o", help="Output file (default: stdout)"),
    fmt: OutputFormat = typer.Option(
        OutputFormat.JSON, "--format", "-f", help="json report or csv history"
    ),
) -> None:
    """Run one experiment and write its metrics report."""
    with _exit_codes():
        report = run_experiment(_load(config, seed))
        if fmt is OutputFormat.JSON:
            text = report.to_json() + "\n"
        else:
            text = rows_to_csv([row.model_dump() for row in report.history])
        _emit(text, out)
    if out is not None:
        _display_report(report)


def _sweep_configs(
    base: ExperimentConfig, axes: list[tuple[str, list[Any]]]
) -> list[tuple[dict[str, Any], ExperimentConfig]]:
    """Cartesian product of the axes, first axis outermost."""
    keys = [key for key, _ in axes]
    configs = []
    for values in itertools.product(*(vals for _, vals in axes)):
        overrides = dict(zip(keys, values, strict=True))
        configs.append((overrides, base.with_overrides(overrides)))
    return configs


@app.command()
def sweep(
    config: Path = typer.Option(..., "--config", "-c", help="Base experiment config (TOML)"),
    axis: list[str] = typer.Option(
        ..., "--axis", "-a", help="KEY=V1,V2,... (repeatable; seed is a valid key)"
    ),
    out: Path | None = typer.Option(None, "--out", "-o", help="CSV output (default: stdout)"),
    workers: int = typer.Option(1, "--workers", "-w", min=1, help="Parallel experiment processes"),
) -> None:
    """Run the cartesian product of axis values; one CSV row per config, in config order."""
    with _exit_codes():
        axes = [parse_axis(a) for a in axis]
        if len({key for key, _ in axes}) != len(axes):
            raise ConfigurationError("Each sweep axis key may appear only once")
        jobs = _sweep_configs(_load(config, None), axes)
        configs = [cfg for _, cfg in jobs]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                reports = list(pool.map(run_experiment, configs))
        else:
            reports = [run_experiment(cfg) for cfg in configs]
        rows = [
            {**overrides, **report.summary_row()}
            for (overrides, _), report in zip(jobs, reports, strict=True)
        ]
        _emit(rows_to_csv(rows), out)
    if out is not None:
        console.print(f"[bold]{len(rows)}[/bold] experiments")


@app.command()
def btfit(
    data: Path = typer.Option(..., "--data", "-d", help="Preference CSV (prompt, winner, loser)"),
    variant: FitVariant = typer.Option(
        FitVariant.FULL, "--variant", "-v", help="full or simplified"
    ),
    out: Path | None = typer.Option(None, "--out", "-o", help="Model CSV (default: stdout)"),
    seed: int = typer.Option(0, "--seed", "-s", help="Seed for the held-out split"),
    heldout: float = typer.Option(0.2, "--heldout", min=0.0, max=0.9, help="Held-out fraction"),
    domains: Path | None = typer.Option(
        None, "--domains", help="CSV (prompt, response, domain); center R per domain"
    ),
) -> None:
    """Fit a Bradley-Terry reward model to preference data."""
    with _exit_codes():
        dataset = read_preferences(data)
        labels = read_domains(domains) if domains is not None else None
        model, report = fit_reward_model(
            dataset, variant, heldout=heldout, seed=seed, domains=labels
        )
        _emit(model_to_csv(model), out)

    table = Table(title=f"Bradley-Terry fit ({report.variant.value})")
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    for key, value in report.as_dict().items():
        table.add_row(key, f"{value:.6f}" if isinstance(value, float) else str(value))
    (console if out is not None else err_console).print(table)


@app.command()
def check(
    out: Path | None = typer.Option(
        None, "--out", "-o", help="JSON report; a markdown summary is written next to it"
    ),
    quick: bool = typer.Option(False, "--quick", "-q", help="Fewer instances, no training checks"),
    seed: int = typer.Option(0, "--seed", "-s", help="Seed for the random instances"),
) -> None:
    """Run the invariant suite and the position-weighting audit."""
    with _exit_codes():
        report = run_checks(quick=quick, seed=seed)
        data = report.as_dict()
        markdown = render_check_report(data)
        if out is None:
            console.print(Markdown(markdown))
        else:
            target = validate_output_path(out)
            write_json(target, data)
            write_text(target.with_suffix(".md"), markdown)
            console.print(f"[green]Wrote[/green] {target} and {target.with_suffix('.md')}")

    if not report.passed:
        names = ", ".join(r.name for r in report.failures)
        console.print(f"[bold red]Failed checks:[/bold red] {names}")
        raise typer.Exit(EXIT_CHECK_FAILED)
    console.print("[bold green]All checks passed.[/bold green]")


@app.command()
def version() -> None:
    """Show the version information."""
    from align_lab import __version__

    console.print(f"[bold]align-lab[/bold] version {__version__}")


if __name__ == "__main__":
    app()
