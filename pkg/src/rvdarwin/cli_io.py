"""Configuration parsing and output serialization (CSV series, JSON snapshots, SVG plots)."""
import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .diagnostics import SERIES_COLUMNS, FLAG_COLUMNS, RunRecord, decay_fit, FitUndefinedError
from .phase_space import BumpDatum, InvalidDatumError
from .simulation import InvalidConfigError, ProbeSpec, RunConfig, SolverSpec, initial_ensemble

__all__ = [
    "ConfigError",
    "ConfigFileError",
    "ConfigSyntaxError",
    "ConfigValidationError",
    "DatumConfigError",
    "parse_config",
    "config_to_dict",
    "write_outputs",
    "read_series",
    "SeriesSink",
    "ensure_writable",
    "format_float",
    "DECAY_COLUMNS",
]


class ConfigError(Exception):
    """Base of all configuration problems; ``field`` is the dotted path or ``None``."""

    def __init__(self, message, field=None):
        Exception.__init__(self, f"{field}: {message}" if field else message)
        self.field = field


class ConfigFileError(ConfigError):
    pass


class ConfigSyntaxError(ConfigError):
    pass


class ConfigValidationError(ConfigError):
    pass


class DatumConfigError(ConfigValidationError, InvalidDatumError):
    def __init__(self, message, field):
        ConfigValidationError.__init__(self, message, field)


_REAL = "real"
_INT = "int"
_BOOL = "bool"
_STR = "str"
_NPAIR = "n_per_axis"

SCHEMA = {
    "datum": {"delta": _REAL, "x_radius": _REAL, "p_radius": _REAL, "kappa": _INT},
    "n_per_axis": _NPAIR,
    "dt": _REAL,
    "t_final": _REAL,
    "softening": _REAL,
    "softening_mode": _STR,
    "softening_factor": _REAL,
    "h": _REAL,
    "jitter": _BOOL,
    "seed": _INT,
    "field_policy": _STR,
    "probes": {"half_width": _REAL, "levels": _INT, "cells": _INT},
    "solver": {"tol": _REAL, "damping": _REAL, "max_iter": _INT},
    "beta": _REAL,
    "poisson": _BOOL,
    "snapshot_every": _INT,
    "abort_on_monitor": _BOOL,
    "max_cells": _INT,
}
NULLABLE = {"softening", "h", "beta", "probes.half_width", "probes.levels", "solver.tol"}


def _check_value(path, kind, value):
    if value is None:
        if path in NULLABLE:
            return None
        raise ConfigValidationError("may not be null", path)
    if kind == _REAL:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigValidationError(f"expected a number, got {value!r}", path)
        if not math.isfinite(value):
            raise ConfigValidationError("must be finite", path)
        return float(value)
    if kind == _INT:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigValidationError(f"expected an integer, got {value!r}", path)
        return int(value)
    if kind == _BOOL:
        if not isinstance(value, bool):
            raise ConfigValidationError(f"expected true or false, got {value!r}", path)
        return value
    if kind == _STR:
        if not isinstance(value, str):
            raise ConfigValidationError(f"expected a string, got {value!r}", path)
        return value
    if kind == _NPAIR:
        if isinstance(value, list) and len(value) == 2:
            return [_check_value(f"{path}[{i}]", _INT, v) for i, v in enumerate(value)]
        return _check_value(path, _INT, value)
    raise AssertionError(kind)


def _validate(obj, schema, prefix=""):
    if not isinstance(obj, dict):
        raise ConfigValidationError("expected a JSON object", prefix.rstrip(".") or None)
    out = {}
    for key, value in obj.items():
        path = prefix + key
        if key not in schema:
            raise ConfigValidationError("unknown key", path)
        kind = schema[key]
        out[key] = _validate(value, kind, path + ".") if isinstance(kind, dict) else _check_value(path, kind, value)
    return out


def _parse_override(text):
    if "=" not in text:
        raise ConfigValidationError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _apply_override(tree, key, value):
    parts = key.split(".")
    schema = SCHEMA
    node = tree
    for i, part in enumerate(parts):
        path = ".".join(parts[: i + 1])
        if not isinstance(schema, dict) or part not in schema:
            raise ConfigValidationError("unknown key", path)
        schema = schema[part]
        if i < len(parts) - 1:
            if not isinstance(schema, dict):
                raise ConfigValidationError("unknown key", ".".join(parts))
            node = node.setdefault(part, {})
        else:
            if isinstance(schema, dict):
                raise ConfigValidationError("expects an object; set its fields instead", path)
            node[part] = value


def _build(tree):
    datum_kw = tree.get("datum", {})
    try:
        datum = BumpDatum(**datum_kw)
    except InvalidDatumError as exc:
        raise DatumConfigError(str(exc).split(": ", 1)[-1], exc.field) from None
    except TypeError as exc:
        raise ConfigValidationError(str(exc), "datum") from None
    kw = {k: v for k, v in tree.items() if k not in ("datum", "probes", "solver")}
    if "n_per_axis" in kw and isinstance(kw["n_per_axis"], list):
        kw["n_per_axis"] = tuple(kw["n_per_axis"])
    try:
        probes = ProbeSpec(**tree.get("probes", {}))
        solver = SolverSpec(**tree.get("solver", {}))
        return RunConfig(datum=datum, probes=probes, solver=solver, **kw)
    except InvalidConfigError as exc:
        raise ConfigValidationError(str(exc).split(": ", 1)[-1], exc.field) from None


def config_to_dict(config):
    d = config.to_dict()
    d["datum"]["kappa"] = int(d["datum"]["kappa"])
    return d


def resolve(config):
    """Fill the rule-based defaults: the initial softening and, for fixed softening, ``h``."""
    if config.softening is None:
        config = config.replace(softening=initial_ensemble(config).softening)
    if config.h is None and config.softening_mode == "fixed":
        config = config.replace(h=config.softening)
    return config


def parse_config(path, overrides=(), out_dir=None):
    """Read a JSON config, apply ``key=value`` overrides and validate everything.

    Defaults follow the documented rules; the resolved config is written to
    ``out_dir/config.resolved.json`` when ``out_dir`` is given.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigFileError(f"config file {str(p)!r} not found")
    try:
        tree = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(f"malformed JSON: {exc}") from None
    except OSError as exc:
        raise ConfigFileError(str(exc)) from None
    tree = _validate(tree, SCHEMA)
    for text in overrides:
        key, value = _parse_override(text)
        _apply_override(tree, key, value)
    tree = _validate(tree, SCHEMA)
    config = resolve(_build(tree))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        resolved = config_to_dict(config)
        resolved["rules"] = {
            "solver.tol": "1e-10 * max(1, sup |T[A_start]|) when null",
            "h": "follows the softening when null",
        }
        (out / "config.resolved.json").write_text(json.dumps(resolved, indent=2) + "\n")
    return config


# ---------------------------------------------------------------- writing


def format_float(v):
    """Shortest decimal that parses back to the same double."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def ensure_writable(directory):
    """Create ``directory`` and prove it is writable; raises ``OSError`` otherwise."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    probe = d / ".write-probe"
    with open(probe, "w") as fh:
        fh.write("ok")
    probe.unlink()
    return d


class SeriesSink:
    """Streams rows to ``series.csv``/``extras.csv`` (flushed per row) and snapshots to JSON."""

    def __init__(self, directory):
        self.dir = ensure_writable(directory)
        self._series = open(self.dir / "series.csv", "w", newline="")
        self._series.write(",".join(SERIES_COLUMNS) + "\n")
        self._series.flush()
        self._extras = None
        self._extra_keys = None

    def row(self, row, extra):
        self._series.write(",".join(format_float(row[c]) for c in SERIES_COLUMNS) + "\n")
        self._series.flush()
        if extra:
            if self._extras is None:
                self._extra_keys = list(extra)
                self._extras = open(self.dir / "extras.csv", "w", newline="")
                self._extras.write(",".join(["t"] + self._extra_keys) + "\n")
            vals = [format_float(row["t"])]
            vals += [format_float(extra.get(k, float("nan"))) for k in self._extra_keys]
            self._extras.write(",".join(vals) + "\n")
            self._extras.flush()

    def snapshot(self, index, ensemble, self_field):
        write_snapshot(self.dir, index, ensemble, self_field)

    def close(self, record=None):
        self._series.close()
        if self._extras is not None:
            self._extras.close()
        if record is not None:
            write_meta(self.dir, record)


def write_snapshot(directory, index, ensemble, self_field=None):
    d = Path(directory) / "snapshots"
    d.mkdir(parents=True, exist_ok=True)
    data = {
        "t": ensemble.t,
        "softening": ensemble.softening,
        "x": ensemble.x.tolist(),
        "pi": ensemble.pi.tolist(),
        "w": ensemble.w.tolist(),
    }
    if self_field is not None:
        data["a"] = self_field.a_at_markers.tolist()
    path = d / f"{int(index):04d}.json"
    path.write_text(json.dumps(data))
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def write_meta(directory, record):
    meta = dict(record.meta)
    meta["rows"] = len(record)
    meta["aborted"] = record.aborted
    meta["abort_reason"] = record.abort_reason
    path = Path(directory) / "record.json"
    path.write_text(json.dumps(_jsonable(meta), indent=2) + "\n")
    return path


def write_series(directory, record):
    path = Path(directory) / "series.csv"
    with open(path, "w", newline="") as fh:
        fh.write(",".join(SERIES_COLUMNS) + "\n")
        for row in record.rows:
            fh.write(",".join(format_float(row[c]) for c in SERIES_COLUMNS) + "\n")
    paths = [path]
    keys = record.extra_columns()
    if keys:
        epath = Path(directory) / "extras.csv"
        with open(epath, "w", newline="") as fh:
            fh.write(",".join(["t"] + keys) + "\n")
            for row, extra in zip(record.rows, record.extras):
                vals = [format_float(row["t"])] + [format_float(extra.get(k, float("nan"))) for k in keys]
                fh.write(",".join(vals) + "\n")
        paths.append(epath)
    return paths


def read_series(path):
    """Parse ``series.csv`` (and a sibling ``extras.csv`` if present) into a RunRecord."""
    path = Path(path)
    record = RunRecord()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != SERIES_COLUMNS:
            raise ValueError(f"unexpected series header {header}")
        rows = [[float(v) for v in line] for line in reader if line]
    extras = [{} for _ in rows]
    epath = path.with_name("extras.csv")
    if epath.is_file():
        with open(epath, newline="") as fh:
            reader = csv.reader(fh)
            eh = next(reader)[1:]
            elines = [line for line in reader if line]
        for k, line in enumerate(elines[: len(rows)]):
            extras[k] = {name: float(v) for name, v in zip(eh, line[1:])}
    for vals, extra in zip(rows, extras):
        row = dict(zip(SERIES_COLUMNS, vals))
        for c in FLAG_COLUMNS:
            row[c] = int(row[c])
        record.append(row, extra)
    return record


# ---------------------------------------------------------------- plots

DECAY_COLUMNS = {
    "sup_rho": False,
    "sup_grad_phi": False,
    "sup_grad_a": False,
    "sup_dtA": False,
    "sup_d2phi": True,
    "sup_d2a": True,
    "l2_dtdxA": False,
    "l2_sqrtrho_dtA": False,
}


def _svg_loglog(path, title, t, y, fit=None):
    W, H, m = 480, 340, 56
    ok = (t > 0) & (y > 0)
    lt, ly = np.log10(t[ok]), np.log10(y[ok])
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<rect x="{m}" y="{m / 2 + 8}" width="{W - 1.5 * m}" height="{H - 1.5 * m - 8}" fill="none" stroke="black"/>',
    ]
    if lt.size >= 2:
        x0, x1 = lt.min(), lt.max()
        y0, y1 = ly.min(), ly.max()
        if x1 == x0:
            x1 = x0 + 1.0
        if y1 == y0:
            y1 = y0 + 1.0

        def px(a):
            return m + (a - x0) / (x1 - x0) * (W - 1.5 * m)

        def py(b):
            return H - m - (b - y0) / (y1 - y0) * (H - 1.5 * m - 8)

        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(lt, ly))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f4e9c" stroke-width="1.5"/>')
        for v, anchor in ((x0, "start"), (x1, "end")):
            parts.append(
                f'<text x="{px(v):.1f}" y="{H - m + 16}" text-anchor="{anchor}" font-family="sans-serif" '
                f'font-size="11">t={10 ** v:.3g}</text>'
            )
        for v in (y0, y1):
            parts.append(
                f'<text x="{m - 4}" y="{py(v):.1f}" text-anchor="end" font-family="sans-serif" '
                f'font-size="11">{10 ** v:.2e}</text>'
            )
        if fit is not None:
            slope, icpt, (ta, tb), corr = fit
            xs = np.linspace(np.log10(ta), np.log10(tb), 20)
            ys = (slope * xs * np.log(10) + icpt) / np.log(10)
            if corr:
                ys = ys + np.log10(np.log1p(10**xs))
            fpts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, ys))
            parts.append(f'<polyline points="{fpts}" fill="none" stroke="#c0392b" stroke-dasharray="5,3"/>')
            label = f"fitted slope {slope:.3f}" + (" (log corrected)" if corr else "")
            parts.append(
                f'<text x="{W - m / 2}" y="{m / 2 + 26}" text-anchor="end" font-family="sans-serif" '
                f'font-size="12" fill="#c0392b">{label}</text>'
            )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
    return Path(path)


def plot_decay(directory, record, window=(10.0, 50.0), columns=None):
    """One log-log SVG per decay column with the fitted slope over ``window``.

    Returns ``{column: (exponent, r_squared) or None}`` and the written paths.
    """
    d = Path(directory) / "plots"
    d.mkdir(parents=True, exist_ok=True)
    t = record.t
    fits = {}
    paths = []
    for col, corr in (columns or DECAY_COLUMNS).items():
        y = record.column(col)
        fit = None
        try:
            slope, r2 = decay_fit(record, col, window, log_correction=corr)
            sel = (t >= window[0]) & (t <= window[1])
            ly = np.log(y[sel]) - (np.log(np.log1p(t[sel])) if corr else 0.0)
            icpt = float(np.mean(ly - slope * np.log(t[sel])))
            fit = (slope, icpt, (max(window[0], t[sel].min()), min(window[1], t[sel].max())), corr)
            fits[col] = (slope, r2)
        except FitUndefinedError:
            fits[col] = None
        paths.append(_svg_loglog(d / f"{col}.svg", col, t, y, fit))
    return fits, paths


def write_outputs(record, directory, window=(10.0, 50.0), plots=True):
    """Write series/extras CSV, record metadata and decay plots; returns the paths."""
    if len(record) == 0:
        raise ValueError("cannot write an empty record")
    d = ensure_writable(directory)
    paths = write_series(d, record)
    paths.append(write_meta(d, record))
    if plots:
        _, p = plot_decay(d, record, window)
        paths.extend(p)
    return paths
