"""Stage-oriented command line: one subcommand per pipeline stage.

Exit codes: 0 ok, 1 stage error (including missing/stale upstream
checkpoints), 2 configuration error. Failures print a machine-readable
JSON error report to stderr.
"""

from __future__ import annotations

import functools
import json
import sys

import click

from .config import ConfigError, load_config
from .pipeline import Pipeline, StageError, UpstreamError, STAGES


def _fail(kind: str, message: str, code: int) -> None:
    click.echo(json.dumps({"error": kind, "message": message}), err=True)
    sys.exit(code)


def _run(config_path: str, stages: list[str], resume: bool, workers: int | None, stub: bool) -> None:
    try:
        cfg = load_config(config_path)
        if workers is not None:
            cfg.workers = workers
        if stub:
            cfg.providers.stub = True
        cfg.validate()
    except ConfigError as exc:
        _fail("config", str(exc), 2)
        return
    pipeline = Pipeline(cfg)
    for stage in stages:
        try:
            summary = pipeline.run_stage(stage, resume=resume)
        except UpstreamError as exc:
            _fail("upstream", str(exc), 1)
            return
        except StageError as exc:
            _fail("stage", str(exc), 1)
            return
        except Exception as exc:  # deterministic pipeline: anything else is a stage bug
            _fail("stage", f"{type(exc).__name__}: {exc}", 1)
            return
        click.echo(json.dumps(summary, sort_keys=True))


def _stage_options(fn):
    @click.option("--config", "config_path", required=True, type=click.Path(), help="pipeline TOML")
    @click.option("--resume", is_flag=True, help="skip stages whose checkpoint is already valid")
    @click.option("--workers", type=int, default=None, help="worker pool size override")
    @click.option("--stub-providers", "stub", is_flag=True, help="force deterministic stub providers")
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return fn(*args, **kwargs)

    return wrapper


@click.group()
def main():
    """Deterministic visual-logic puzzle dataset pipeline."""


def _register(stage: str):
    @main.command(name=stage)
    @_stage_options
    def _cmd(config_path, resume, workers, stub, _stage=stage):
        _run(config_path, [_stage], resume, workers, stub)

    _cmd.__doc__ = f"Run the {stage} stage."
    return _cmd


for _stage in STAGES:
    _register(_stage)


@main.command(name="run-all")
@_stage_options
def run_all(config_path, resume, workers, stub):
    """Run every stage in order."""
    _run(config_path, list(STAGES), resume, workers, stub)


@main.command(name="run")
@click.option("--stage", required=True, type=click.Choice(STAGES), help="stage to run")
@_stage_options
def run_single(stage, config_path, resume, workers, stub):
    """Run one stage selected by --stage."""
    _run(config_path, [stage], resume, workers, stub)


if __name__ == "__main__":
    main()
