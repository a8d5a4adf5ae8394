"""`mdmsim` command-line interface.

Exit codes: 0 = all cells pass the FEC threshold, 2 = at least one cell
fails, 1 = configuration or execution error.
"""

from __future__ import annotations

import sys

import click

from . import __version__, bench


def _load(config_path: str) -> bench.ScenarioConfig:
    return bench.load_config(config_path)


@click.group()
@click.version_option(__version__, prog_name="mdmsim")
def main():
    """Mode- and wavelength-division multiplexed link simulator."""


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Scenario JSON file.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              default=None, help="Output directory (default: config value).")
@click.option("--seed", type=click.IntRange(min=0), default=None,
              help="Override the scenario seed.")
@click.option("--full", is_flag=True,
              help="Run all grid wavelengths instead of the desk subset.")
def run(config_path, out_dir, seed, full):
    """Run a scenario and write report.json plus CSV tables and figures."""
    try:
        cfg = _load(config_path)
        report, code = bench.run_scenario(cfg, out_dir=out_dir,
                                          seed_override=seed, full=full)
    except bench.BenchError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    n_cells = len(report["cells"])
    n_pass = sum(c["pass"] for c in report["cells"])
    click.echo(f"{n_pass}/{n_cells} cells under the "
               f"{report['fec_threshold']:.1e} FEC threshold")
    sys.exit(code)


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--param", required=True,
              help="Dotted config path, e.g. imp.osnr_db.")
@click.option("--values", required=True,
              help="Comma-separated numeric values.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--full", is_flag=True)
def sweep(config_path, param, values, out_dir, full):
    """Re-run a scenario across parameter values; write sweep_table.csv."""
    try:
        vals = [float(v) for v in values.split(",") if v.strip()]
        cfg = _load(config_path)
        rows, code = bench.sweep(cfg, param, vals, out_dir=out_dir, full=full)
    except ValueError as exc:  # includes BenchError
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"swept {param} over {len(vals)} values ({len(rows)} rows)")
    sys.exit(code)


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def sorter(config_path, out_dir):
    """Run the physical sorter pipeline alone; emit phase maps, focal
    spot images and the port coupling matrix."""
    try:
        cfg = _load(config_path)
        summary, code = bench.run_sorter(cfg, out_dir=out_dir)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"worst neighbor coupling: {summary['worst_neighbor_db']:.2f} dB")
    sys.exit(code)


if __name__ == "__main__":
    main()
