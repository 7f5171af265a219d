"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 runtime numerical error,
4 failed checks when ``--assert`` is given.
"""
import os
import sys

import click

from ..exceptions import ConfigInvalidError, CPDecideError
from .config import load_config
from .experiments import run_experiment
from .results import write_atomic

THREADS_ENV = "CPDECIDE_THREADS"

EXIT_CONFIG, EXIT_RUNTIME, EXIT_ASSERT = 2, 3, 4


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@click.group()
@click.version_option(package_name="artifact", prog_name="cpdecide")
def main():
    """Split conformal prediction sets as decision support: simulation experiments."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
              help="Experiment config (JSON).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="CSV destination; defaults to the config's 'output' or stdout.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Override the config seed.")
@click.option("--assert", "do_assert", is_flag=True, help="Exit 4 if any built-in check fails.")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help=f"Worker threads (default: ${THREADS_ENV} or 1).")
def run(config_path, out_path, seed, do_assert, threads):
    """Run the experiment described by a config file."""
    try:
        cfg = load_config(config_path, seed=seed)
    except ConfigInvalidError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        with_threads = threads if threads is not None else _default_threads()
        table = run_experiment(cfg, threads=with_threads)
    except ConfigInvalidError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)
    except (CPDecideError, FloatingPointError, ArithmeticError) as err:
        click.echo(f"runtime error: {err}", err=True)
        sys.exit(EXIT_RUNTIME)
    text = table.to_csv()
    dest = out_path or cfg.output
    if dest:
        write_atomic(dest, text)
    else:
        click.echo(text, nl=False)
    for c in table.checks:
        status = "pass" if c.passed else "FAIL"
        click.echo(f"[{status}] {c.name} {c.detail}".rstrip(), err=True)
    if do_assert and not table.all_passed:
        sys.exit(EXIT_ASSERT)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
def validate(config_path):
    """Check a config file without running it."""
    try:
        cfg = load_config(config_path)
    except ConfigInvalidError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)
    click.echo(f"ok: {cfg.experiment} experiment, config_sha256 {cfg.config_hash()}")


if __name__ == "__main__":
    main()
