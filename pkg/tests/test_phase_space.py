import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rvdarwin.phase_space import (
    BumpDatum,
    Ensemble,
    InvalidDatumError,
    datum_norms,
    datum_w1inf,
    radial_profile_integral,
    sample_bump,
    support_radii,
)

# (4 pi * 8/105)^2: closed-form radial integral of (1 - s^2)^2 s^2 over [0, 1]
L1_UNIT_BUMP = 0.9166870663687531


def test_zero_datum_gives_empty_ensemble():
    ens = sample_bump(BumpDatum(0.0, 2.0, 3.0), 6)
    assert len(ens) == 0
    assert ens.total_weight() == 0.0


def test_total_weight_close_to_l1():
    ens = sample_bump(BumpDatum(1.0), 8)
    assert abs(ens.total_weight() - L1_UNIT_BUMP) / L1_UNIT_BUMP < 0.05


def test_midpoint_rule_converges_at_second_order():
    err8 = abs(sample_bump(BumpDatum(1.0), 8).total_weight() - L1_UNIT_BUMP)
    err16 = abs(sample_bump(BumpDatum(1.0), 16).total_weight() - L1_UNIT_BUMP)
    assert err8 / err16 >= 3.0


def test_radial_integral_matches_closed_form():
    assert radial_profile_integral(2) == pytest.approx(8.0 / 105.0, rel=1e-14)
    assert radial_profile_integral(3) == pytest.approx(16.0 / 315.0, rel=1e-14)


def test_datum_norms():
    assert datum_norms(BumpDatum(1.0)) == pytest.approx((L1_UNIT_BUMP, 1.0), rel=1e-13)
    assert datum_norms(BumpDatum(0.0)) == (0.0, 0.0)
    l1, linf = datum_norms(BumpDatum(0.5, 2.0, 0.5))
    assert linf == 0.5
    assert l1 == pytest.approx(0.5 * L1_UNIT_BUMP * 8.0 * 0.125, rel=1e-13)


def test_datum_values():
    d = BumpDatum(0.3, 2.0, 0.5)
    assert d(np.zeros(3), np.zeros(3)) == pytest.approx(0.3)
    assert d([2.1, 0, 0], [0, 0, 0]) == 0.0
    assert d([0, 0, 0], [0, 0.6, 0]) == 0.0
    pts = np.random.default_rng(0).normal(size=(500, 6))
    assert np.all(d(pts[:, :3], pts[:, 3:]) >= 0)


def test_w1inf_of_unit_bump():
    # sup |f| = 1 and sup |grad| over the product: max_s 4 s (1 - s^2) = 8 / (3 sqrt 3)
    assert datum_w1inf(BumpDatum(1.0)) == pytest.approx(1.0 + 8.0 / (3.0 * np.sqrt(3.0)), rel=1e-5)


@pytest.mark.parametrize(
    "kwargs, field",
    [
        ({"delta": -1.0}, "datum.delta"),
        ({"delta": 1.0, "x_radius": 0.0}, "datum.x_radius"),
        ({"delta": 1.0, "p_radius": -2.0}, "datum.p_radius"),
        ({"delta": 1.0, "kappa": 1}, "datum.kappa"),
    ],
)
def test_invalid_datum(kwargs, field):
    with pytest.raises(InvalidDatumError) as info:
        BumpDatum(**kwargs)
    assert info.value.field == field


def test_lattice_needs_two_points():
    with pytest.raises(ValueError):
        sample_bump(BumpDatum(1.0), 1)


def test_support_radii():
    empty = Ensemble(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), 0.1)
    assert support_radii(empty) == (0.0, 0.0)
    x_bar, p_bar = support_radii(sample_bump(BumpDatum(1.0), 6))
    assert x_bar <= 1.0 and p_bar <= 1.0


def test_free_streaming_support_growth():
    ens = sample_bump(BumpDatum(1.0), 5)
    v = ens.pi / np.sqrt(1.0 + np.sum(ens.pi**2, axis=1, keepdims=True))
    t = 3.0
    moved = ens.replace(x=ens.x + t * v, t=t)
    assert support_radii(moved)[0] <= 1.0 + t


def test_jittered_markers_stay_in_cells():
    plain = sample_bump(BumpDatum(1.0), 4)
    jit = sample_bump(BumpDatum(1.0), 4, seed=3, jitter=True)
    assert np.all(np.linalg.norm(jit.x, axis=1) < 1.0)
    assert np.all(jit.w > 0)
    assert abs(jit.total_weight() - plain.total_weight()) < 0.1 * plain.total_weight()


def test_ensemble_arrays_are_read_only():
    ens = sample_bump(BumpDatum(1.0), 4)
    with pytest.raises(ValueError):
        ens.x[0, 0] = 5.0
    with pytest.raises(ValueError):
        Ensemble(np.zeros((1, 3)), np.zeros((1, 3)), [-1.0], 0.1)
    with pytest.raises(ValueError):
        Ensemble(np.zeros((1, 3)), np.zeros((1, 3)), [1.0], 0.0)


@given(
    delta=st.floats(0.0, 10.0),
    xr=st.floats(0.1, 5.0),
    pr=st.floats(0.1, 5.0),
    n=st.integers(2, 6),
    seed=st.integers(0, 2**16),
    jitter=st.booleans(),
)
def test_sampling_is_deterministic(delta, xr, pr, n, seed, jitter):
    d = BumpDatum(delta, xr, pr)
    a = sample_bump(d, n, seed=seed, jitter=jitter)
    b = sample_bump(d, n, seed=seed, jitter=jitter)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.pi, b.pi) and np.array_equal(a.w, b.w)
    assert a.softening == b.softening
    assert np.all(a.w > 0)


@given(n=st.integers(2, 5), extra=st.integers(1, 20), seed=st.integers(0, 1000))
def test_support_radii_monotone(n, extra, seed):
    ens = sample_bump(BumpDatum(1.0), n)
    rng = np.random.default_rng(seed)
    big = ens.replace(
        x=np.vstack([ens.x, rng.normal(size=(extra, 3))]),
        pi=np.vstack([ens.pi, rng.normal(size=(extra, 3))]),
        w=np.concatenate([ens.w, rng.random(extra)]),
    )
    xs, ps = support_radii(ens)
    xb, pb = support_radii(big)
    assert xb >= xs and pb >= ps
