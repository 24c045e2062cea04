"""
CLI entry point for Pairwise Continual.

Provides the command-line interface for running experiments, density
sweeps, dataset downloads and report re-aggregation.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import NoReturn

import click

from .. import __version__
from ..checkpoint import CheckpointError
from ..config import ConfigError, ConfigValidationError, ExperimentConfig, load_config, validate_config
from ..data import DATASETS, DatasetError
from ..errors import ProtocolError
from ..layers import NumericalError
from ..model import ARCHITECTURE_PRESETS, ModelStateError, build_network, resolve_architecture
from ..report import AggregateReport, ReportError


KNOWN_ERRORS = (
    ConfigError,
    ConfigValidationError,
    DatasetError,
    ProtocolError,
    NumericalError,
    ModelStateError,
    ReportError,
    CheckpointError,
)


def _fail(error: Exception) -> NoReturn:
    click.echo(f"Error: {error}", err=True)
    sys.exit(1)


def _load(config: Path, **overrides: object) -> ExperimentConfig:
    cfg = load_config(config)
    changes = {k: v for k, v in overrides.items() if v is not None}
    if changes:
        cfg = cfg.replace(**changes)
        errors = validate_config(cfg)
        if errors:
            raise ConfigValidationError(errors)
    return cfg


def _print_summary(report: AggregateReport) -> None:
    click.echo(f"Runs:             {report.n_runs}")
    click.echo(f"Parameters:       {report.param_count:,}")
    click.echo(f"Overall accuracy: {report.mean_final_micro:.4f} ± {report.se_final_micro:.4f}")
    click.echo(f"Task mean:        {report.mean_final_macro:.4f} ± {report.se_final_macro:.4f}")
    per_task = ", ".join(f"{a:.4f}" for a in report.per_task_mean)
    click.echo(f"Per task:         {per_task}")


def _parse_densities(value: str) -> list[float]:
    try:
        densities = [float(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated percentages, got {value!r}")
    if not densities:
        raise click.BadParameter("at least one density is required")
    return densities


@click.group()
@click.version_option(version=__version__, prog_name="pcl")
def cli() -> None:
    """Pairwise Continual - task-agnostic online continual learning benchmarks.

    Trains k-WTA networks with pairwise interaction heads on Split and
    Permuted MNIST / Fashion-MNIST streams, one pass over the data.
    """
    pass


@cli.command()
@click.option("-c", "--config", type=click.Path(exists=True, path_type=Path), required=True,
              help="Experiment config (.json or .yaml).")
@click.option("--runs", type=int, default=None, help="Override the number of runs.")
@click.option("--master-seed", type=int, default=None, help="Override the master seed.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
              help="Override the output directory.")
@click.option("--workers", type=int, default=None, help="Parallel run processes.")
@click.option("--progress/--no-progress", default=None, help="Show a progress bar per run.")
def run(
    config: Path,
    runs: int | None,
    master_seed: int | None,
    out_dir: Path | None,
    workers: int | None,
    progress: bool | None,
) -> None:
    """Run an experiment and write report.json and curves.csv."""
    from ..runner import run_experiment

    try:
        cfg = _load(config, runs=runs, master_seed=master_seed, out_dir=out_dir,
                    workers=workers, progress=progress)
        report = run_experiment(cfg)
    except KNOWN_ERRORS as e:
        _fail(e)

    _print_summary(report)
    click.echo(f"Report: {cfg.out_dir}")


@cli.command()
@click.option("-c", "--config", type=click.Path(exists=True, path_type=Path), required=True,
              help="Base experiment config.")
@click.option("--densities", default="5,10,20,40,70", show_default=True,
              help="Comma-separated k-WTA densities in percent.")
@click.option("--runs", type=int, default=None, help="Override the number of runs.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
              help="Override the output directory.")
def sweep(config: Path, densities: str, runs: int | None, out_dir: Path | None) -> None:
    """Run the experiment once per density and write sweep.csv."""
    from ..runner import density_sweep

    values = _parse_densities(densities)
    try:
        cfg = _load(config, runs=runs, out_dir=out_dir)
        rows = density_sweep(cfg, values)
    except KNOWN_ERRORS as e:
        _fail(e)

    click.echo(f"{'density':>8}  {'k':>6}  {'accuracy':>10}  {'se':>8}")
    for row in rows:
        click.echo(f"{row.density_pct:>7g}%  {row.k:>6}  {row.mean_micro:>10.4f}  {row.se_micro:>8.4f}")
    click.echo(f"Sweep table: {cfg.out_dir / 'sweep.csv'}")


@cli.command("fetch-data")
@click.option("--dataset", type=click.Choice(DATASETS), required=True, help="Dataset to download.")
@click.option("--dir", "data_dir", type=click.Path(path_type=Path), default=Path("data"),
              show_default=True, help="Data directory.")
@click.option("--mirror", default=None, help="Alternative base URL for the .gz files.")
def fetch_data(dataset: str, data_dir: Path, mirror: str | None) -> None:
    """Download and unpack the IDX files of a dataset."""
    from ..fetch import FetchError, fetch_datasets

    try:
        results = fetch_datasets(data_dir, dataset, mirror_url=mirror)
    except (FetchError, ConfigError) as e:
        _fail(e)

    for r in results:
        status = "downloaded" if r.downloaded else "present"
        click.echo(f"   {r.name}: {status} ({r.size:,} bytes)")
    click.echo(f"✅ {dataset} ready in {results[0].path.parent}")


@cli.command()
@click.option("--in", "in_dir", type=click.Path(exists=True, file_okay=False, path_type=Path),
              required=True, help="Directory containing report.json.")
def report(in_dir: Path) -> None:
    """Recompute aggregates from the per-run data of a report."""
    from ..report import reaggregate

    try:
        fresh = reaggregate(in_dir)
    except KNOWN_ERRORS as e:
        _fail(e)
    _print_summary(fresh)


@cli.command()
@click.option("-c", "--config", type=click.Path(exists=True, path_type=Path), default=None,
              help="Describe the architecture of this config.")
@click.option("--preset", type=click.Choice(sorted(ARCHITECTURE_PRESETS)), default=None,
              help="Describe a named architecture.")
def describe(config: Path | None, preset: str | None) -> None:
    """Print the layers and exact parameter count of an architecture."""
    if (config is None) == (preset is None):
        _fail(click.UsageError("give exactly one of --config or --preset"))
    try:
        spec = load_config(config).architecture if config else resolve_architecture(preset)
        net = build_network(spec, seed=0)
    except KNOWN_ERRORS as e:
        _fail(e)

    for line in net.describe():
        click.echo(f"   {line}")
    click.echo(f"Parameters: {net.param_count():,}")


@cli.command()
def version() -> None:
    """Show version information."""
    click.echo(f"Pairwise Continual v{__version__}")


if __name__ == "__main__":
    cli()
