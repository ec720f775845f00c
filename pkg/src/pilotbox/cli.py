"""Command-line entry point: ``pilotbox run|trajectories|tau|presets``."""
import logging
import sys

import click

from . import experiments
from .exceptions import ConfigError


def _estimators(value):
    if value is None:
        return None
    return tuple(v.strip() for v in value.split(",") if v.strip())


def _load(config, seed, out, full_scale=False, estimators=None):
    try:
        return experiments.load_config(config, seed=seed, out=out, full_scale=full_scale,
                                       estimators=_estimators(estimators))
    except ConfigError as exc:
        for v in exc.violations:
            click.echo(f"config error: {v}", err=True)
        sys.exit(2)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress per sample time.")
def main(verbose):
    """Pilot-wave dynamics in an expanding box and coarse-grained H-functions."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")


@main.command()
@click.argument("config")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--full-scale", is_flag=True, help="D=32 and P=4e6 instead of the desk-scale defaults.")
@click.option("--estimators", default=None, help="Comma list of back,forward,tilde.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker threads for integration.")
def run(config, seed, out, full_scale, estimators, jobs):
    """Run an H-function experiment from a CONFIG file or preset name."""
    cfg = _load(config, seed, out, full_scale, estimators)
    reports = experiments.run_experiment(cfg, n_jobs=jobs)
    click.echo(f"{len(reports)} sample times written to {cfg.outputs}/report.csv")
    first, last = reports[0], reports[-1]
    if first.h_back > 0 and last.h_back == last.h_back:
        click.echo(f"h_back: {first.h_back:.6g} -> {last.h_back:.6g} "
                   f"({100 * (last.h_back / first.h_back - 1):+.2f}%)")


@main.command()
@click.argument("config")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
def trajectories(config, seed, out):
    """Integrate the trajectory cases of a CONFIG file or preset."""
    cfg = _load(config, seed, out)
    for r in experiments.run_trajectories(cfg):
        status = r.get("file") or f"FAILED: {r['error']}"
        extra = f" round-trip error {r['round_trip_error']:.2e}" if "round_trip_error" in r else ""
        click.echo(f"case {r['case']}: v_e={r['v_expand']:.6g} t_f={r['t_final']:.6g} -> {status}{extra}")


@main.command()
@click.argument("config")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def tau(config, out):
    """Write the retarded-time table t, tau(t)."""
    cfg = _load(config, None, out)
    t, tau_values = experiments.run_tau(cfg)
    click.echo(f"{len(t)} rows written to {cfg.outputs}/tau.csv")


@main.group()
def presets():
    """Built-in experiment presets."""


@presets.command("list")
def presets_list():
    for name in experiments.PRESETS:
        click.echo(f"{name:18s} {experiments.PRESET_HELP.get(name, '')}")


@presets.command("show")
@click.argument("name")
def presets_show(name):
    """Print the config text of preset NAME."""
    if name not in experiments.PRESETS:
        raise click.BadParameter(f"unknown preset {name!r}")
    click.echo(experiments.PRESETS[name].strip())


if __name__ == "__main__":
    main()
