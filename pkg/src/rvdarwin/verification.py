"""Analytic and finite-difference checks of the kernels and the characteristic system."""
import time
from typing import NamedTuple

import numpy as np

from .darwin_kernels import KernelConfig, VectorSource, darwin_kernel_sum, scalar_kernel_sum
from .dynamics import characteristic_rhs, hamiltonian, velocity_jet
from .field_solver import FieldSample

__all__ = ["Check", "verify_kernels", "random_cloud", "rhs_divergence"]


class Check(NamedTuple):
    name: str
    ok: bool
    value: float
    tolerance: float
    seconds: float = 0.0


def _rel(a, b):
    scale = float(np.max(np.abs(b)))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) / (scale if scale > 0 else 1.0)


def random_cloud(n=64, seed=0, radius=1.0):
    rng = np.random.default_rng(seed)
    y = rng.uniform(-radius, radius, (n, 3))
    u = rng.normal(size=(n, 3)) * 0.3
    w = rng.uniform(0.5, 1.5, n)
    return VectorSource(y, u, w)


def _targets(n, seed, lo=1.5, hi=2.5):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * rng.uniform(lo, hi, (n, 1))


def _single_source_checks():
    src = VectorSource(np.zeros((1, 3)), np.array([[0.7, 0.0, 0.0]]), np.ones(1))
    cfg = KernelConfig(0.0)
    r = 2.0
    phi, gphi = scalar_kernel_sum(src, [[r, 0.0, 0.0]], cfg)
    on = darwin_kernel_sum(src, [[r, 0.0, 0.0]], cfg)
    off = darwin_kernel_sum(src, [[0.0, r, 0.0]], cfg)
    errs = [
        abs(phi[0] - 1.0 / r),
        np.max(np.abs(gphi[0] - [-1.0 / r**2, 0.0, 0.0])),
        np.max(np.abs(on.a[0] - [0.7 / r, 0.0, 0.0])),
        np.max(np.abs(off.a[0] - [0.7 / (2 * r), 0.0, 0.0])),
    ]
    return float(max(errs))


def _fd_gradients(src, pts, eps, step=1e-4):
    cfg = KernelConfig(eps)
    _, gphi = scalar_kernel_sum(src, pts, cfg)
    ga = darwin_kernel_sum(src, pts, cfg).grad_a
    fd_phi = np.zeros_like(gphi)
    fd_a = np.zeros_like(ga)
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        pp, _ = scalar_kernel_sum(src, pts + e, cfg)
        pm, _ = scalar_kernel_sum(src, pts - e, cfg)
        fd_phi[:, k] = (pp - pm) / (2 * step)
        ap = darwin_kernel_sum(src, pts + e, cfg).a
        am = darwin_kernel_sum(src, pts - e, cfg).a
        fd_a[:, :, k] = (ap - am) / (2 * step)
    return _rel(fd_phi, gphi), _rel(fd_a, ga)


def _jet_checks(n=1000, seed=3, step=1e-6):
    rng = np.random.default_rng(seed)
    pi = rng.normal(size=(n, 3))
    a = rng.normal(size=(n, 3)) * 0.5
    jet = velocity_jet(pi, a)
    worst_dv = worst_dx = worst_dt = 0.0
    grad_a = rng.normal(size=(n, 3, 3))
    dta = rng.normal(size=(n, 3))
    fd_dv = np.zeros((n, 3, 3))
    fd_da = np.zeros((n, 3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        fd_dv[:, :, k] = (velocity_jet(pi + e, a).v - velocity_jet(pi - e, a).v) / (2 * step)
        fd_da[:, :, k] = (velocity_jet(pi, a + e).v - velocity_jet(pi, a - e).v) / (2 * step)
    worst_dv = _rel(fd_dv, jet.dv)
    worst_da = _rel(fd_da, -jet.dv)
    # chain rule along a direction in x (or t) through A(x) = a + grad_a . x
    dx = np.einsum("nij,njk->nik", -jet.dv, grad_a)
    fd_x = np.zeros((n, 3, 3))
    for k in range(3):
        da = grad_a[:, :, k] * step
        fd_x[:, :, k] = (velocity_jet(pi, a + da).v - velocity_jet(pi, a - da).v) / (2 * step)
    worst_dx = _rel(fd_x, dx)
    dt_an = np.einsum("nij,nj->ni", -jet.dv, dta)
    fd_t = (velocity_jet(pi, a + dta * step).v - velocity_jet(pi, a - dta * step).v) / (2 * step)
    worst_dt = _rel(fd_t, dt_an)
    g2 = np.sum(jet.g**2, axis=1)
    det_err = float(np.max(np.abs(np.linalg.det(jet.dv) / (1 + g2) ** -2.5 - 1.0)))
    return worst_dv, worst_da, worst_dx, worst_dt, det_err


def _hamiltonian_check(n=1000, seed=4, step=1e-6):
    rng = np.random.default_rng(seed)
    pi = rng.normal(size=(n, 3))
    a = rng.normal(size=(n, 3)) * 0.5
    phi = rng.normal(size=n)
    fd = np.zeros((n, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        fd[:, k] = (hamiltonian(pi + e, a, phi) - hamiltonian(pi - e, a, phi)) / (2 * step)
    return _rel(fd, velocity_jet(pi, a).v)


def rhs_divergence(src, x, pi, eps, step=1e-5):
    """Finite-difference phase-space divergence of the characteristic field and its scale."""
    cfg = KernelConfig(eps)

    def rhs(xx, pp):
        phi, gphi = scalar_kernel_sum(src, xx, cfg)
        d = darwin_kernel_sum(src, xx, cfg)
        r = characteristic_rhs(pp, FieldSample(phi, gphi, d.a, d.grad_a))
        return r.x_dot, r.pi_dot

    div = np.zeros(len(x))
    scale = np.zeros(len(x))
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        xp, _ = rhs(x + e, pi)
        xm, _ = rhs(x - e, pi)
        _, pp = rhs(x, pi + e)
        _, pm = rhs(x, pi - e)
        dxk = (xp[:, k] - xm[:, k]) / (2 * step)
        dpk = (pp[:, k] - pm[:, k]) / (2 * step)
        div += dxk + dpk
        scale = np.maximum(scale, np.maximum(np.abs(dxk), np.abs(dpk)))
    return div, scale


def verify_kernels(seed=0):
    """Run the analytic and finite-difference checks; returns a list of :class:`Check`."""
    out = []

    def run(name, fn, tol):
        t0 = time.perf_counter()
        val = float(fn())
        out.append(Check(name, bool(val <= tol), val, tol, time.perf_counter() - t0))

    src = random_cloud(64, seed)
    pts = _targets(32, seed + 1)
    run("single-source closed forms", _single_source_checks, 1e-12)
    fd = {}

    def fd_once():
        if not fd:
            fd["v"] = _fd_gradients(src, pts, 0.0)
        return fd["v"]

    run("grad phi vs finite differences", lambda: fd_once()[0], 1e-6)
    run("grad A vs finite differences", lambda: fd_once()[1], 1e-6)
    run("grad A (softened) vs finite differences", lambda: _fd_gradients(src, pts, 0.3)[1], 1e-6)

    def trace0():
        g = darwin_kernel_sum(src, pts, KernelConfig(0.0)).grad_a
        return np.max(np.abs(np.trace(g, axis1=1, axis2=2))) / np.max(np.abs(g))

    run("trace of grad A at zero softening", trace0, 1e-12)

    def curl_agree():
        d = darwin_kernel_sum(src, pts, KernelConfig(0.2), with_direct_curl=True)
        return _rel(d.curl_a, d.curl_direct)

    run("curl: antisymmetric part vs direct kernel", curl_agree, 1e-12)
    jets = {}

    def jet(i):
        if not jets:
            jets["v"] = _jet_checks()
        return jets["v"][i]

    run("Dv vs finite differences in pi", lambda: jet(0), 1e-6)
    run("dv/dA = -Dv", lambda: jet(1), 1e-6)
    run("d_x v = -Dv d_x A", lambda: jet(2), 1e-6)
    run("d_t v = -Dv d_t A", lambda: jet(3), 1e-6)
    run("det Dv closed form", lambda: jet(4), 1e-12)
    run("grad_pi H = v", _hamiltonian_check, 1e-6)

    def incompressible():
        rng = np.random.default_rng(seed + 7)
        x = _targets(1000, seed + 8, 0.0, 1.5)
        pi = rng.normal(size=(1000, 3))
        div, scale = rhs_divergence(random_cloud(32, seed + 9), x, pi, 0.2)
        return float(np.max(np.abs(div) / scale))

    run("phase-space divergence of the characteristic field", incompressible, 1e-6)
    return out
