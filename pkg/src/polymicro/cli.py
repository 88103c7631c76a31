"""Batch front-end.

Every subcommand reads a run-configuration file, executes its pipeline and
writes a result bundle into the output directory.  Exit codes are stable:
0 success, 1 configuration error, 2 numerical failure, 3 I/O error.  The
POLYMICRO_LOG environment variable (error|warn|info|debug) sets verbosity.
"""

from __future__ import annotations

import logging
import os
import sys

import click

from polymicro import config as cfg_mod
from polymicro import export, pipelines

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
           "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = _LEVELS.get(os.environ.get("POLYMICRO_LOG", "warn").lower(),
                        logging.WARNING)
    logging.basicConfig(level=level,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s",
                        datefmt="%H:%M:%S")


def _run(analysis, config, out, seed, threads, deterministic):
    _setup_logging()
    log = logging.getLogger("polymicro")
    try:
        cfg = cfg_mod.parse_config(config)
    except cfg_mod.ConfigError as exc:
        for err in exc.errors:
            click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)
    if cfg.analysis != analysis:
        click.echo(f"config error: config declares analysis "
                   f"{cfg.analysis!r}, subcommand is {analysis!r}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        bundle = pipelines.run_pipeline(cfg, out, seed=seed, threads=threads,
                                        deterministic=deterministic)
    except export.IoError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        sys.exit(EXIT_IO)
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        sys.exit(EXIT_IO)
    except Exception as exc:
        log.debug("pipeline failure", exc_info=True)
        click.echo(f"numerical failure: {type(exc).__name__}: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    click.echo(f"wrote {os.path.join(out, 'summary.json')}")
    sys.exit(EXIT_OK)


def _common(f):
    f = click.option("--config", required=True,
                     type=click.Path(), help="run-configuration file")(f)
    f = click.option("--out", required=True, type=click.Path(),
                     help="output directory for the result bundle")(f)
    f = click.option("--seed", type=int, default=None,
                     help="override the configured RNG seed")(f)
    f = click.option("--threads", type=int, default=1,
                     help="worker cap for ensemble members")(f)
    f = click.option("--deterministic", is_flag=True,
                     help="serial reductions, byte-reproducible bundles")(f)
    return f


@click.group()
def main():
    """2D micromechanics toolkit: polygonal virtual elements, boundary-element
    inclusions, homogenization, damage and crack growth."""


for _name in ("mesh-gen", "patch-test", "solve", "homogenize", "damage",
              "crack"):
    def _make(name):
        @main.command(name=name)
        @_common
        def _cmd(config, out, seed, threads, deterministic):
            _run(name, config, out, seed, threads, deterministic)
        return _cmd
    _make(_name)


if __name__ == "__main__":
    main()
