import json
import os

import numpy as np
import pytest
from click.testing import CliRunner
from hypothesis import given
from hypothesis import strategies as st

from rvdarwin.cli import main
from rvdarwin.cli_io import (
    ConfigFileError,
    ConfigSyntaxError,
    ConfigValidationError,
    DatumConfigError,
    format_float,
    parse_config,
    read_series,
    write_outputs,
)
from rvdarwin.diagnostics import SERIES_COLUMNS, RunRecord
from rvdarwin.simulation import ProbeSpec, RunConfig, run_simulation

TINY = {"datum": {"delta": 0.01}, "n_per_axis": [3, 2], "dt": 0.05, "t_final": 0.1, "probes": {"levels": 1, "cells": 8}}


def _write(tmp_path, tree, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(tree))
    return p


def test_minimal_config_resolves_defaults(tmp_path):
    p = _write(tmp_path, {"datum": {"delta": 0.01}})
    cfg = parse_config(p, out_dir=tmp_path / "out")
    assert cfg.datum.delta == 0.01 and cfg.n_per_axis == (5, 4)
    assert cfg.softening > 0 and cfg.h == cfg.softening
    resolved = json.loads((tmp_path / "out" / "config.resolved.json").read_text())
    assert resolved["softening"] == cfg.softening


def test_overrides_apply_and_leave_file_alone(tmp_path):
    p = _write(tmp_path, TINY)
    before = p.read_bytes()
    cfg = parse_config(p, ["dt=0.025", "datum.kappa=3", "solver.damping=0.5", "softening_mode=adaptive"])
    assert cfg.dt == 0.025 and cfg.datum.kappa == 3 and cfg.solver.damping == 0.5
    assert cfg.softening_mode == "adaptive"
    assert p.read_bytes() == before


@pytest.mark.parametrize(
    "tree, field",
    [
        ({"datum": {"delta": -1.0}}, "datum.delta"),
        ({"datum": {"delta": 0.1, "kappa": 1}}, "datum.kappa"),
        ({"dt": "fast"}, "dt"),
        ({"datum": {"delta": 0.1}, "dt": 0}, "dt"),
        ({"bogus": 1}, "bogus"),
        ({"dt": 0.1}, "datum"),
        ({"datum": {"delta": 0.1}, "probes": {"cells": 10}}, "probes.cells"),
        ({"n_per_axis": [4, 1.5]}, "n_per_axis[1]"),
    ],
)
def test_invalid_values_name_their_field(tmp_path, tree, field):
    with pytest.raises(ConfigValidationError) as err:
        parse_config(_write(tmp_path, tree))
    assert err.value.field == field


def test_datum_error_is_also_an_invalid_datum(tmp_path):
    from rvdarwin.phase_space import InvalidDatumError

    with pytest.raises(InvalidDatumError):
        parse_config(_write(tmp_path, {"datum": {"delta": -1}}))
    with pytest.raises(DatumConfigError):
        parse_config(_write(tmp_path, {"datum": {"delta": -1}}))


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigFileError):
        parse_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigSyntaxError):
        parse_config(bad)
    with pytest.raises(ConfigValidationError):
        parse_config(_write(tmp_path, TINY), ["no_equals_sign"])


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_float_round_trips(v):
    assert float(format_float(v)) == v


def test_series_round_trip(tmp_path):
    cfg = RunConfig(n_per_axis=(3, 2), dt=0.05, t_final=0.15, probes=ProbeSpec(levels=1, cells=8))
    rec = run_simulation(cfg)
    write_outputs(rec, tmp_path)
    header = (tmp_path / "series.csv").read_text().splitlines()[0]
    assert header == ",".join(SERIES_COLUMNS)
    back = read_series(tmp_path / "series.csv")
    assert len(back) == len(rec)
    for c in SERIES_COLUMNS:
        np.testing.assert_array_equal(back.column(c), rec.column(c))
    np.testing.assert_array_equal(back.column("softening"), rec.column("softening"))
    meta = json.loads((tmp_path / "record.json").read_text())
    assert meta["rows"] == len(rec) and not meta["aborted"]


def test_single_row_record_writes_undefined_fits(tmp_path):
    rec = RunRecord()
    rec.append({c: (1 if c.startswith("fs_ok") else 0.5) for c in SERIES_COLUMNS})
    paths = write_outputs(rec, tmp_path)
    assert len(read_series(tmp_path / "series.csv")) == 1
    assert any(str(p).endswith("sup_rho.svg") for p in paths)
    with pytest.raises(ValueError):
        write_outputs(RunRecord(), tmp_path)


def test_cli_simulate_and_decay_study(tmp_path):
    cfg = _write(tmp_path, TINY)
    out = tmp_path / "out"
    runner = CliRunner()
    res = runner.invoke(main, ["simulate", "--config", str(cfg), "--set", "t_final=0.15", "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert len(read_series(out / "series.csv")) == 4
    res = runner.invoke(main, ["decay-study", "--series", str(out / "series.csv"), "--out", str(tmp_path / "fit"),
                               "--window", "0.05", "0.15"])
    assert res.exit_code == 0, res.output
    svgs = sorted(os.listdir(tmp_path / "fit" / "plots"))
    assert "sup_rho.svg" in svgs and len(svgs) == 8
    fits = json.loads((tmp_path / "fit" / "fits.json").read_text())
    assert set(fits) == {s[:-4] for s in svgs}


def test_cli_exit_codes(tmp_path):
    runner = CliRunner()
    bad = _write(tmp_path, {"datum": {"delta": -1.0}})
    res = runner.invoke(main, ["simulate", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert res.exit_code == 2 and "datum.delta" in res.output
    blocked = tmp_path / "file"
    blocked.write_text("")
    res = runner.invoke(main, ["simulate", "--config", str(_write(tmp_path, TINY)), "--out", str(blocked / "x")])
    assert res.exit_code == 2
    hard = dict(TINY, datum={"delta": 5.0}, softening=0.01, solver={"max_iter": 2})
    res = runner.invoke(main, ["simulate", "--config", str(_write(tmp_path, hard, "hard.json")),
                               "--out", str(tmp_path / "h")])
    assert res.exit_code == 3


def test_cli_lifespan_and_picard(tmp_path):
    runner = CliRunner()
    cfg = _write(tmp_path, TINY)
    res = runner.invoke(main, ["lifespan", "--config", str(cfg), "--out", str(tmp_path / "l")])
    assert res.exit_code == 0
    data = json.loads((tmp_path / "l" / "lifespan.json").read_text())
    assert data["t_star"] == pytest.approx(10.0775, rel=1e-4)
    res = runner.invoke(main, ["picard", "--config", str(cfg), "--iterates", "2", "--t-bar", "0.2",
                               "--out", str(tmp_path / "p")])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "p" / "picard.csv").read_text().startswith("iterate,sup_difference")
    res = runner.invoke(main, ["picard", "--config", str(cfg), "--t-bar", "50", "--out", str(tmp_path / "p")])
    assert res.exit_code == 2


def test_cli_verify_kernels():
    res = CliRunner().invoke(main, ["verify-kernels"])
    assert res.exit_code == 0, res.output
    assert "FAIL" not in res.output
