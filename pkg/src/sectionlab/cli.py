"""Command-line entry point: one subcommand per experiment plus ``validate``."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .experiments.config import EXPERIMENT_NAMES
from .experiments.runner import run_experiment
from .utils.errors import ConfigError
from .utils.logging import configure_logging, console, get_logger
from .validation import ConfigValidator

logger = get_logger(__name__)

CONFIG_ERROR_EXIT = 2


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log solver progress at DEBUG level.")
@click.version_option(package_name="sectionlab")
def cli(verbose: bool) -> None:
    """Numerical laboratory for Monge-Ampere sections and Harnack-type estimates."""
    configure_logging(verbose)


def _experiment_command(name: str) -> click.Command:
    @click.command(name=name, help=f"Run the '{name}' experiment.")
    @click.option(
        "--config",
        "config_path",
        required=True,
        type=click.Path(dir_okay=False, path_type=Path),
        help="Experiment configuration (.toml or .json).",
    )
    @click.option("--out", type=click.Path(file_okay=False, path_type=Path), help="Report directory.")
    @click.option("--seed", type=int, help="Override the configured seed.")
    @click.option("--grid", type=int, help="Override grid.resolution (cells per axis).")
    def command(config_path: Path, out: Path | None, seed: int | None, grid: int | None) -> None:
        overrides = {"experiment.name": name, "seed": seed, "grid.resolution": grid}
        try:
            outcome = run_experiment(config_path, overrides, out)
        except ConfigError as e:
            console.print(f"❌ Config error in {e.field}: {e.reason}")
            sys.exit(CONFIG_ERROR_EXIT)
        sys.exit(outcome.exit_code)

    return command


for _name in EXPERIMENT_NAMES:
    cli.add_command(_experiment_command(_name))


@cli.command()
@click.option(
    "--config",
    "config_path",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="Experiment configuration to check.",
)
def validate(config_path: Path) -> None:
    """Check a configuration without running anything."""
    sys.exit(0 if ConfigValidator(config_path).validate() else 1)


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
