"""Command line entry point: ``rvdarwin <subcommand> --config PATH --set k=v --out DIR``."""
import json
import math
import os
import sys
from pathlib import Path

import click

from . import _accel
from .cli_io import (
    ConfigError,
    SeriesSink,
    ensure_writable,
    format_float,
    parse_config,
    plot_decay,
    read_series,
    resolve,
    write_outputs,
)
from .field_solver import FieldNonConvergenceError
from .simulation import RunConfig, fs_monitor, lifespan_bound, run_picard, run_simulation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_VERIFY = 4


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load(config_path, overrides, out):
    try:
        ensure_writable(out)
    except OSError as exc:
        _fail(EXIT_CONFIG, f"output directory {out!r} is not writable: {exc}")
    try:
        if config_path is None:
            if overrides:
                raise ConfigError("--set needs --config")
            cfg = resolve(RunConfig())
        else:
            cfg = parse_config(config_path, overrides, out_dir=out)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    return cfg


def _common(f):
    f = click.option("--out", "out", default="out", show_default=True, type=click.Path(), help="Output directory.")(f)
    f = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config key.")(f)
    f = click.option("--config", "config_path", type=click.Path(), default=None, help="JSON run config.")(f)
    return f


@click.group()
@click.option("--threads", type=int, default=None, help="Worker threads (falls back to RVD_THREADS).")
def main(threads):
    """Smoothed-particle relativistic Vlasov-Darwin runs and checks."""
    _accel.set_threads(threads)


@main.command()
@_common
def simulate(config_path, overrides, out):
    """Time-stepping run streaming series.csv into the output directory."""
    cfg = _load(config_path, overrides, out)
    sink = SeriesSink(out)
    record = run_simulation(cfg, sink=sink)
    report = fs_monitor(record)
    write_outputs(record, out)
    click.echo(
        f"{len(record)} rows to t={record.rows[-1]['t']:.6g}; "
        f"FS ok: {report.all_ok}; continuation ok: {report.continuation_ok}"
    )
    if record.meta.get("nonconvergence"):
        _fail(EXIT_NONCONVERGENCE, record.abort_reason)


@main.command()
@_common
@click.option("--iterates", default=6, show_default=True, type=int)
@click.option("--t-bar", "t_bar", default=None, type=float, help="Horizon (default t_star/4).")
def picard(config_path, overrides, out, iterates, t_bar):
    """Picard iterates of the characteristic flow and their sup differences."""
    cfg = _load(config_path, overrides, out)
    life = lifespan_bound(cfg.datum)
    if t_bar is None:
        t_bar = life.t_star / 4 if math.isfinite(life.t_star) else 1.0
    try:
        rep = run_picard(cfg, iterates, t_bar)
    except FieldNonConvergenceError as exc:
        _fail(EXIT_NONCONVERGENCE, str(exc))
    except ValueError as exc:
        _fail(EXIT_CONFIG, str(exc))
    path = Path(out) / "picard.csv"
    with open(path, "w") as fh:
        fh.write("iterate,sup_difference\n")
        for n, d in rep:
            fh.write(f"{n},{format_float(d)}\n")
            click.echo(f"iterate {n}: {d:.6e}")
    ratios = rep.ratios()
    if ratios:
        click.echo(f"max ratio {max(ratios):.4f}")


@main.command("verify-kernels")
def verify_kernels_cmd():
    """Analytic and finite-difference checks; exits 4 on any failure."""
    from .verification import verify_kernels

    bad = 0
    for c in verify_kernels():
        click.echo(f"{'PASS' if c.ok else 'FAIL'}  {c.name}: {c.value:.3e} (tol {c.tolerance:.0e})")
        bad += not c.ok
    if bad:
        _fail(EXIT_VERIFY, f"{bad} check(s) failed")


@main.command("decay-study")
@_common
@click.option("--series", type=click.Path(exists=True), default=None, help="Fit an existing series.csv.")
@click.option("--window", nargs=2, type=float, default=(10.0, 50.0), show_default=True)
def decay_study(config_path, overrides, out, series, window):
    """Fit decay exponents and write one SVG per fitted column."""
    if series is not None:
        try:
            ensure_writable(out)
        except OSError as exc:
            _fail(EXIT_CONFIG, f"output directory {out!r} is not writable: {exc}")
        record = read_series(series)
    else:
        cfg = _load(config_path, overrides, out)
        record = run_simulation(cfg, sink=SeriesSink(out))
        if record.meta.get("nonconvergence"):
            _fail(EXIT_NONCONVERGENCE, record.abort_reason)
    fits, _ = plot_decay(out, record, tuple(window))
    (Path(out) / "fits.json").write_text(json.dumps(
        {k: (None if v is None else {"exponent": v[0], "r_squared": v[1]}) for k, v in fits.items()}, indent=2
    ) + "\n")
    for k, v in fits.items():
        click.echo(f"{k}: " + ("undefined" if v is None else f"{v[0]:.4f} (r2 {v[1]:.4f})"))


@main.command()
@_common
def lifespan(config_path, overrides, out):
    """Life-span constant, blow-up time and the momentum envelope."""
    cfg = _load(config_path, overrides, out)
    rep = lifespan_bound(cfg.datum)
    data = {"c_f0": rep.c_f0, "t_star": rep.t_star if math.isfinite(rep.t_star) else "inf",
            "p_radius": rep.p_radius}
    (Path(out) / "lifespan.json").write_text(json.dumps(data, indent=2) + "\n")
    with open(Path(out) / "lifespan.csv", "w") as fh:
        fh.write("t,p_envelope\n")
        for t, p in zip(rep.times, rep.p_curve):
            fh.write(f"{format_float(t)},{format_float(p)}\n")
    click.echo(f"c_f0 = {rep.c_f0:.6g}, t_star = {rep.t_star:.6g}")


if __name__ == "__main__":
    main()
