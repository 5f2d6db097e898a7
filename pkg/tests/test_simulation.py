import math

import numpy as np
import pytest

from rvdarwin.diagnostics import SERIES_COLUMNS
from rvdarwin.phase_space import BumpDatum
from rvdarwin.simulation import (
    InvalidConfigError,
    ProbeSpec,
    RunConfig,
    SolverSpec,
    fs_monitor,
    initial_ensemble,
    lifespan_bound,
    run_picard,
    run_simulation,
)

SMALL = RunConfig(n_per_axis=(3, 2), dt=0.05, t_final=0.2, probes=ProbeSpec(levels=1, cells=8))


def test_zero_length_run_has_one_row():
    rec = run_simulation(SMALL.replace(t_final=0.0))
    assert len(rec) == 1
    assert rec.rows[0]["t"] == 0.0
    assert rec.rows[0]["sup_dtA"] == 0.0


def test_rows_are_spaced_by_dt():
    rec = run_simulation(SMALL)
    np.testing.assert_allclose(rec.t, 0.05 * np.arange(5), atol=1e-12)
    assert set(SERIES_COLUMNS) <= set(rec.rows[0])
    assert not rec.aborted


def test_zero_datum_run_is_identically_zero():
    rec = run_simulation(SMALL.replace(datum=BumpDatum(0.0)))
    assert len(rec) == 5
    for c in SERIES_COLUMNS:
        if c in ("t", "fs_ok_1", "fs_ok_2"):
            continue
        assert np.all(rec.column(c) == 0.0), c
    rep = fs_monitor(rec)
    assert rep.all_ok and rep.continuation_ok


def test_rerun_is_bit_identical():
    cfg = SMALL.replace(jitter=True, seed=11)
    a, b = run_simulation(cfg), run_simulation(cfg)
    for c in SERIES_COLUMNS:
        np.testing.assert_array_equal(a.column(c), b.column(c))


def test_fields_scale_linearly_with_amplitude():
    cfg = SMALL.replace(t_final=0.1, softening=0.2)
    big = run_simulation(cfg.replace(datum=BumpDatum(2e-3)))
    small = run_simulation(cfg.replace(datum=BumpDatum(1e-3)))
    for c in ("sup_rho", "sup_grad_phi", "sup_grad_a", "sup_dtA"):
        ratio = big.column(c)[-1] / small.column(c)[-1]
        assert 1.8 <= ratio <= 2.2, c


def test_adaptive_softening_tracks_the_cloud():
    rec = run_simulation(SMALL.replace(softening_mode="adaptive", softening_factor=1.0, t_final=0.5, dt=0.25))
    eps = rec.column("softening")
    assert np.all(np.diff(eps) >= 0)


def test_lifespan_examples():
    rep = lifespan_bound(BumpDatum(1e-2))
    assert rep.c_f0 == pytest.approx(0.0992312, rel=1e-5)
    assert rep.t_star == pytest.approx(10.0775, rel=1e-4)
    assert rep.envelope(rep.t_star / 2) == pytest.approx(2 * rep.p_radius)
    assert np.isinf(rep.envelope(rep.t_star))
    # c_f0 is homogeneous of degree one in the amplitude
    assert lifespan_bound(BumpDatum(8e-2)).c_f0 == pytest.approx(8 * rep.c_f0, rel=1e-12)
    zero = lifespan_bound(BumpDatum(0.0))
    assert zero.c_f0 == 0.0 and math.isinf(zero.t_star)
    assert np.all(zero.p_curve == zero.p_radius)


def test_picard_zero_datum_and_horizon():
    cfg = SMALL.replace(datum=BumpDatum(0.0))
    rep = run_picard(cfg, 3, 0.5)
    assert [d for _, d in rep] == [0.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        run_picard(SMALL, 2, 20.0)
    with pytest.raises(ValueError):
        run_picard(SMALL, 0, 0.1)


def test_picard_differences_shrink_for_small_data():
    cfg = SMALL.replace(datum=BumpDatum(1e-2), softening=0.3, dt=0.1)
    rep = run_picard(cfg, 3, 0.5)
    d = [v for _, v in rep]
    assert d[1] < d[0] and d[2] < d[1]
    assert rep.trajectories.shape == (len(rep.times), len(initial_ensemble(cfg)), 6)


def test_fs_monitor_with_given_beta():
    rec = run_simulation(SMALL)
    huge = fs_monitor(rec, beta=1e9)
    tiny = fs_monitor(rec, beta=1e-12)
    assert huge.all_ok and not tiny.all_ok
    assert fs_monitor(rec).beta == pytest.approx(rec.meta["beta"])


@pytest.mark.parametrize(
    "kwargs, name",
    [
        ({"dt": 0.0}, "dt"),
        ({"n_per_axis": (1, 4)}, "n_per_axis"),
        ({"softening_mode": "wild"}, "softening_mode"),
        ({"field_policy": "sometimes"}, "field_policy"),
        ({"t_final": -1.0}, "t_final"),
    ],
)
def test_invalid_config_names_field(kwargs, name):
    with pytest.raises(InvalidConfigError) as err:
        RunConfig(**kwargs)
    assert err.value.field == name


def test_invalid_solver_and_probe_specs():
    with pytest.raises(InvalidConfigError) as err:
        SolverSpec(damping=0.0)
    assert err.value.field == "solver.damping"
    with pytest.raises(InvalidConfigError) as err:
        ProbeSpec(cells=6)
    assert err.value.field == "probes.cells"


def test_nonconvergence_flags_the_record():
    cfg = SMALL.replace(datum=BumpDatum(5.0), softening=0.01, solver=SolverSpec(max_iter=2))
    rec = run_simulation(cfg)
    assert rec.aborted and rec.meta.get("nonconvergence")
