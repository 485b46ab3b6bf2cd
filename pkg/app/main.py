import sys

import click

from app.services.config_service import parse_config
from app.services.report_service import EXIT_USAGE_ERROR, run_diagnostics, run_scan
from app.utils.common import setup_logging
from app.utils.exceptions import ConfigurationError


def _load(path: str):
    try:
        with open(path, encoding="utf-8") as handle:
            return parse_config(handle.read())
    except ConfigurationError as error:
        click.echo(f"Error in {path}: {error}", err=True)
        sys.exit(EXIT_USAGE_ERROR)


@click.group()
def cli():
    """Decoy-state CHSH-MDI-QKD key-rate simulator.

    Worker processes and logging are set through CHSH_MDI_* environment variables.
    """
    setup_logging()


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Run file (key=value)")
@click.option("--refine", is_flag=True, help="Rescan around the secure distance at the refinement step")
def scan(config_path: str, refine: bool):
    """Optimized key-rate scan over the configured distances, written as CSV."""
    sys.exit(run_scan(_load(config_path), refine=refine))


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Run file (key=value)")
@click.option("--distance", required=True, type=float, help="Alice-Bob distance in km")
@click.option("--signal", type=float, default=None, help="Signal intensity; optimized over the grid when omitted")
@click.option("--dump-dir", type=click.Path(file_okay=False), default=None, help="Directory for observed/Fock CSVs and the yield LP")
def diag(config_path: str, distance: float, signal, dump_dir):
    """Bound report, oracle comparison, LP statuses and mixture residuals at one distance."""
    sys.exit(run_diagnostics(_load(config_path), distance, signal=signal, dump_dir=dump_dir))


if __name__ == "__main__":
    cli()
