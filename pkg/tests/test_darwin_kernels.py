import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rvdarwin.darwin_kernels import (
    InvalidExponentsError,
    KernelConfig,
    SingularPairError,
    VectorSource,
    coulomb_vector_sum,
    darwin_kernel_sum,
    equivalent_vector_potential,
    grid_sources,
    pallard_bound,
    pallard_constant,
    scalar_kernel_sum,
    transversal_projection,
)
from rvdarwin.grid import Grid3, SupportOverflowError, laplacian_interior
from rvdarwin.verification import random_cloud

EXACT = KernelConfig(0.0)


def _unit_source(v=0.7):
    return VectorSource.from_arrays([[0.0, 0.0, 0.0]], [[v, 0.0, 0.0]], [1.0])


def _targets(n, seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1)[:, None] * rng.uniform(1.5, 2.5, (n, 1))


def _box(n=64, half=1.6):
    h = 2.0 * half / n
    g = Grid3(np.full(3, -half), h, (n, n, n), np.zeros((n, n, n, 3)))
    c = g.centers()
    return g, c, np.sum(c * c, axis=1)


def test_single_source_scalar():
    phi, gphi = scalar_kernel_sum(_unit_source(), [[2.0, 0.0, 0.0]], EXACT)
    assert abs(phi[0] - 0.5) <= 1e-12
    # the gradient of 1/|x| at (2, 0, 0) points back towards the source
    assert np.max(np.abs(gphi[0] - [-0.25, 0.0, 0.0])) <= 1e-12


def test_single_source_vector_on_and_off_axis():
    v, r = 0.7, 2.0
    d = darwin_kernel_sum(_unit_source(v), [[r, 0, 0], [0, r, 0]], EXACT, with_direct_curl=True)
    assert np.max(np.abs(d.a[0] - [v / r, 0, 0])) <= 1e-12
    assert np.max(np.abs(d.a[1] - [v / (2 * r), 0, 0])) <= 1e-12
    np.testing.assert_allclose(d.curl_a, d.curl_direct, atol=1e-15)


def test_zero_sources():
    phi, gphi = scalar_kernel_sum(VectorSource.empty(), np.ones((4, 3)), KernelConfig(0.1))
    assert not phi.any() and not gphi.any()
    d = darwin_kernel_sum(VectorSource.empty(), np.ones((4, 3)), KernelConfig(0.1))
    assert not d.a.any() and not d.grad_a.any() and not d.curl_a.any()


def test_singular_pair_rejected():
    with pytest.raises(SingularPairError):
        scalar_kernel_sum(_unit_source(), [[0.0, 0.0, 0.0]], EXACT)
    with pytest.raises(SingularPairError):
        darwin_kernel_sum(_unit_source(), [[0.0, 0.0, 0.0]], EXACT)


def test_softened_self_evaluation_is_finite():
    phi, _ = scalar_kernel_sum(_unit_source(), [[0.0, 0.0, 0.0]], KernelConfig(0.5))
    assert phi[0] == pytest.approx(2.0)


def _fd(fun, pts, step=1e-4):
    cols = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        cols.append((fun(pts + e) - fun(pts - e)) / (2 * step))
    return np.stack(cols, axis=-1)


@pytest.mark.parametrize("eps", [0.0, 0.3])
def test_gradients_match_finite_differences(eps):
    src = random_cloud(64, 0)
    pts = _targets(32, 1)
    cfg = KernelConfig(eps)
    _, gphi = scalar_kernel_sum(src, pts, cfg)
    fd_phi = _fd(lambda p: scalar_kernel_sum(src, p, cfg)[0], pts)
    assert np.max(np.abs(fd_phi - gphi)) / np.max(np.abs(gphi)) <= 1e-6
    ga = darwin_kernel_sum(src, pts, cfg).grad_a
    fd_a = _fd(lambda p: darwin_kernel_sum(src, p, cfg).a, pts)
    assert np.max(np.abs(fd_a - ga)) / np.max(np.abs(ga)) <= 1e-6


def test_trace_free_at_zero_softening():
    ga = darwin_kernel_sum(random_cloud(64, 2), _targets(64, 3), EXACT).grad_a
    assert np.max(np.abs(np.trace(ga, axis1=1, axis2=2))) <= 1e-12 * np.max(np.abs(ga))


def test_softened_trace_vanishes_quadratically():
    # away from the sources the softened kernel's trace is O(eps^2)
    src = random_cloud(64, 2)
    pts = _targets(50, 1)
    tr = []
    for eps in (0.05, 0.025, 0.0125):
        ga = darwin_kernel_sum(src, pts, KernelConfig(eps)).grad_a
        tr.append(np.max(np.abs(np.trace(ga, axis1=1, axis2=2))))
    assert tr[0] / tr[1] == pytest.approx(4.0, rel=0.05)
    assert tr[1] / tr[2] == pytest.approx(4.0, rel=0.05)


def test_curl_agrees_with_direct_kernel():
    d = darwin_kernel_sum(random_cloud(64, 7), _targets(40, 8) * 0.3, KernelConfig(0.2), with_direct_curl=True)
    scale = np.max(np.abs(d.curl_direct))
    assert np.max(np.abs(d.curl_a - d.curl_direct)) <= 1e-12 * scale


@given(n1=st.integers(1, 20), n2=st.integers(1, 20), seed=st.integers(0, 10_000), eps=st.floats(0.01, 1.0))
def test_linearity_in_sources(n1, n2, seed, eps):
    a = random_cloud(n1, seed)
    b = random_cloud(n2, seed + 1)
    pts = np.random.default_rng(seed + 2).normal(size=(7, 3))
    cfg = KernelConfig(eps)
    both = darwin_kernel_sum(a.concat(b), pts, cfg)
    da = darwin_kernel_sum(a, pts, cfg)
    db = darwin_kernel_sum(b, pts, cfg)
    scale = max(1.0, np.max(np.abs(both.grad_a)))
    assert np.max(np.abs(both.a - da.a - db.a)) <= 1e-12 * scale
    assert np.max(np.abs(both.grad_a - da.grad_a - db.grad_a)) <= 1e-12 * scale
    pa, ga = scalar_kernel_sum(a.concat(b), pts, cfg)
    p1, g1 = scalar_kernel_sum(a, pts, cfg)
    p2, g2 = scalar_kernel_sum(b, pts, cfg)
    assert np.max(np.abs(pa - p1 - p2)) <= 1e-12 * max(1.0, np.max(np.abs(pa)))


def test_sums_are_deterministic_across_chunks():
    src = random_cloud(300, 9)
    pts = _targets(50, 10)
    a = darwin_kernel_sum(src, pts, KernelConfig(0.1, parallel_chunk=7))
    b = darwin_kernel_sum(src, pts, KernelConfig(0.1, parallel_chunk=7))
    assert np.array_equal(a.grad_a, b.grad_a)
    c = darwin_kernel_sum(src, pts, KernelConfig(0.1, parallel_chunk=1000))
    np.testing.assert_allclose(a.grad_a, c.grad_a, rtol=1e-12, atol=1e-14)


def test_softened_poisson_property_under_refinement():
    # lap_h phi + 4 pi rho_eps -> 0 as h shrinks relative to eps
    src = VectorSource.from_arrays([[0.05, -0.02, 0.01]], None, [1.0])
    eps = 0.2
    errs = []
    for h in (eps / 4, eps / 8):
        n = int(round(1.2 / h))
        g = Grid3(np.full(3, -n * h / 2), h, (n, n, n), np.zeros((n, n, n)))
        c = g.centers()
        phi, _ = scalar_kernel_sum(src, c, KernelConfig(eps))
        s2 = np.sum((c - src.y[0]) ** 2, axis=1) + eps * eps
        rho = 3 * eps * eps / (4 * np.pi * s2**2.5)
        lap = laplacian_interior(phi.reshape(g.dims), h)
        inner = (slice(1, -1),) * 3
        res = lap[inner] + 4 * np.pi * rho.reshape(g.dims)[inner]
        errs.append(np.max(np.abs(res)) / np.max(4 * np.pi * rho))
    assert errs[0] / errs[1] > 3.5
    assert errs[1] < 0.02


# ---------------------------------------------------------------- gridded currents


def _smooth_current(c, r2, n):
    bump = np.clip(1 - r2, 0, None) ** 3
    return np.stack([bump * (1 + c[:, 1]), bump * c[:, 0] * c[:, 2], bump * (0.5 - c[:, 0])], 1).reshape(n, n, n, 3)


def _curl_current(c, r2, n):
    # j = curl(psi e_z) = (d_y psi, -d_x psi, 0) with psi = (1 - r^2)^4
    b = -8 * np.clip(1 - r2, 0, None) ** 3
    return np.stack([b * c[:, 1], -b * c[:, 0], 0 * b], 1).reshape(n, n, n, 3)


def _gradient_current(c, r2, n):
    b = -8 * np.clip(1 - r2, 0, None) ** 3
    return np.stack([b * c[:, a] for a in range(3)], 1).reshape(n, n, n, 3)


TARGETS = np.array([[0.1, 0.2, -0.3], [0.5, 0, 0], [1.2, 0.3, 0.1], [0, 0, 0], [2.0, 1, 0.5]])


def test_equivalent_representation_zero_current():
    g, _, _ = _box(16)
    out = equivalent_vector_potential(g, TARGETS, KernelConfig(0.1))
    assert not out.any()


def test_equivalent_representation_divergence_free_current():
    n = 64
    g, c, r2 = _box(n)
    gj = g.with_values(_curl_current(c, r2, n))
    cfg = KernelConfig(g.h)
    full = equivalent_vector_potential(gj, TARGETS, cfg)
    plain = coulomb_vector_sum(gj, TARGETS, cfg)
    assert np.max(np.abs(full - plain)) <= 1e-3 * np.max(np.abs(plain))


def test_equivalent_representation_matches_kernel_sum():
    n = 64
    g, c, r2 = _box(n)
    gj = g.with_values(_smooth_current(c, r2, n))
    cfg = KernelConfig(g.h)
    a1 = equivalent_vector_potential(gj, TARGETS, cfg)
    a2 = darwin_kernel_sum(grid_sources(gj), TARGETS, cfg).a
    assert np.max(np.abs(a1 - a2)) <= 1e-3 * np.max(np.abs(a2))


def test_support_overflow():
    n = 16
    g, c, r2 = _box(n, half=0.9)
    with pytest.raises(SupportOverflowError):
        equivalent_vector_potential(g.with_values(_smooth_current(c, r2, n)), TARGETS, KernelConfig(0.1))
    with pytest.raises(SupportOverflowError):
        transversal_projection(g.with_values(_smooth_current(c, r2, n)), KernelConfig(0.1))


def test_projection_fixes_divergence_free_current():
    n = 64
    g, c, r2 = _box(n)
    j = _curl_current(c, r2, n)
    p = transversal_projection(g.with_values(j), EXACT)
    assert np.linalg.norm(p.values - j) <= 1e-3 * np.linalg.norm(j)


def test_projection_removes_gradient_current():
    n = 64
    g, c, r2 = _box(n)
    j = _gradient_current(c, r2, n)
    p = transversal_projection(g.with_values(j), EXACT)
    assert np.linalg.norm(p.values) <= 1e-2 * np.linalg.norm(j)


def test_projection_divergence_shrinks_with_resolution():
    ratios = []
    for n in (32, 64):
        g, c, r2 = _box(n)
        p = transversal_projection(g.with_values(_smooth_current(c, r2, n)), EXACT)
        ratios.append(p.meta["div_max"] / p.meta["div_in_max"])
    assert ratios[1] <= 1e-2
    assert ratios[1] < ratios[0]


# ---------------------------------------------------------------- interpolation inequality


def test_pallard_constants():
    # closed form 3 (4 pi / m)^(m/3) / (3 - m)
    # oracle values from 50-digit arithmetic of the closed form
    assert pallard_constant(1) == pytest.approx(3.48734205452888, rel=1e-13)
    assert pallard_constant(2) == pytest.approx(10.2150657644303, rel=1e-13)
    assert pallard_constant(1, 1.2, 4.0) > 0


@pytest.mark.parametrize("m, r, s", [(1, 0.5, np.inf), (1, 2.0, np.inf), (2, 1.0, 2.0), (3, 1.0, np.inf)])
def test_pallard_exponent_order(m, r, s):
    with pytest.raises(InvalidExponentsError):
        pallard_constant(m, r, s)


def _random_bump(seed, n=20):
    rng = np.random.default_rng(seed)
    g, c, _ = _box(n, half=1.0)
    vals = np.zeros(n**3)
    for _ in range(rng.integers(1, 4)):
        ctr = rng.uniform(-0.4, 0.4, 3)
        rad = rng.uniform(0.2, 0.5)
        r2 = np.sum((c - ctr) ** 2, axis=1) / rad**2
        vals += rng.uniform(0.1, 3.0) * np.clip(1 - r2, 0, None) ** rng.integers(0, 3)
    return g.with_values(vals.reshape(n, n, n))


@pytest.mark.parametrize("m", [1, 2])
def test_pallard_inequality_holds(m):
    for seed in range(5):
        lhs, rhs, const = pallard_bound(m, _random_bump(seed))
        assert 0 < lhs <= rhs
        assert const == pallard_constant(m)


def test_pallard_fallback_is_conservative():
    lhs, rhs, _ = pallard_bound(1, _random_bump(3), r=1.2, s=6.0)
    assert lhs <= rhs
