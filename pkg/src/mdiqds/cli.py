"""Command line interface: analytic | simulate | protocol | tables."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .errors import ValidationError
from .scenario import (
    EXIT_VALIDATION,
    load_scenario,
    render_report,
    run,
    scenario_from_dict,
    table_rows_to_csv,
)


def _load(config, preset, mode, seed, scale, output_format):
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if scale is not None:
        overrides["scale_factor"] = scale
    if output_format is not None:
        overrides["format"] = output_format
    if config is not None:
        scenario = load_scenario(config, preset=preset)
        raw = None
    else:
        scenario = scenario_from_dict({"mode": mode, **overrides}, preset=preset)
        return scenario
    for name, value in {**overrides, "mode": mode}.items():
        setattr(scenario, name, value)
    scenario.__post_init__()
    return scenario


def _emit(code: int, payload: dict, out: str | None, output_format: str):
    if output_format == "csv" and payload.get("mode") == "table-sweep":
        text = table_rows_to_csv(payload["rows"])
    else:
        text = render_report(payload)
    if out:
        Path(out).write_text(text)
        click.echo(f"report written to {out}")
    else:
        click.echo(text, nl=False)
    sys.exit(code)


def _common_options(fn):
    fn = click.option("--config", type=click.Path(), default=None,
                      help="scenario JSON file")(fn)
    fn = click.option("--preset", default=None, help="detector preset name")(fn)
    fn = click.option("--seed", type=int, default=None, help="64-bit RNG seed")(fn)
    fn = click.option("--scale", type=float, default=None,
                      help="desk-scale divisor for pulse budgets")(fn)
    fn = click.option("--out", type=click.Path(), default=None, help="output path")(fn)
    fn = click.option("--format", "output_format",
                      type=click.Choice(["json", "csv"]), default=None)(fn)
    return fn


def _dispatch(mode, config, preset, seed, scale, out, output_format):
    try:
        scenario = _load(config, preset, mode, seed, scale, output_format)
        code, payload = run(scenario)
    except ValidationError as exc:
        click.echo(f"validation error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    _emit(code, payload, out, scenario.output_format)


@click.group()
def main():
    """Simulator and finite-size security calculator for
    measurement-device-independent quantum digital signatures."""


@main.command()
@_common_options
def analytic(config, preset, seed, scale, out, output_format):
    """Replay the security pipeline from configured inputs."""
    _dispatch("analytic", config, preset, seed, scale, out, output_format)


@main.command()
@_common_options
def simulate(config, preset, seed, scale, out, output_format):
    """Monte-Carlo key generation at a scaled pulse budget."""
    _dispatch("montecarlo", config, preset, seed, scale, out, output_format)


@main.command()
@_common_options
def protocol(config, preset, seed, scale, out, output_format):
    """Signing-protocol trial batteries against the analytic bounds."""
    _dispatch("protocol", config, preset, seed, scale, out, output_format)


@main.command()
@_common_options
def tables(config, preset, seed, scale, out, output_format):
    """Replay the published raw-key-generation-time rows."""
    _dispatch("table-sweep", config, preset, seed, scale, out, output_format)


if __name__ == "__main__":
    main()
