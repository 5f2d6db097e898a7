"""Pairwise kernel sums over sources, numba and numpy implementations.

Every routine sums sources in ascending index order for each target, so the
result does not depend on the thread count.  The numpy path reduces fixed-size
source chunks and adds the chunk partials in chunk order.

Conventions: ``d = y - x`` (source minus target), ``s = sqrt(|d|^2 + eps^2)``.
"""
import numpy as np

from ._accel import USE_NUMBA, njit, prange

_PAIR_BUDGET = 1 << 21


# ---------------------------------------------------------------- numba
# Sources arrive as (3, n) rows so the inner loop vectorises.  Reassociation
# is allowed inside one target's reduction; infinities stay IEEE so a
# coincident pair at zero softening shows up as a non-finite output.

_FASTMATH = {"nsz", "arcp", "contract", "afn", "reassoc"}


@njit(parallel=True, cache=True, fastmath=_FASTMATH, error_model="numpy")
def _nb_scalar(s, w, tgt, eps2, phi, grad):
    sx = s[0]
    sy = s[1]
    sz = s[2]
    for i in prange(tgt.shape[0]):
        x0 = tgt[i, 0]
        x1 = tgt[i, 1]
        x2 = tgt[i, 2]
        p = 0.0
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        for l in range(sx.shape[0]):
            d0 = sx[l] - x0
            d1 = sy[l] - x1
            d2 = sz[l] - x2
            r2 = d0 * d0 + d1 * d1 + d2 * d2 + eps2
            wi = w[l] / np.sqrt(r2)
            p += wi
            wi3 = wi / r2
            g0 += wi3 * d0
            g1 += wi3 * d1
            g2 += wi3 * d2
        phi[i] = p
        grad[i, 0] = g0
        grad[i, 1] = g1
        grad[i, 2] = g2


@njit(parallel=True, cache=True, fastmath=_FASTMATH, error_model="numpy")
def _nb_vector(s, u, tgt, eps2, a):
    sx = s[0]
    sy = s[1]
    sz = s[2]
    ux = u[0]
    uy = u[1]
    uz = u[2]
    for i in prange(tgt.shape[0]):
        x0 = tgt[i, 0]
        x1 = tgt[i, 1]
        x2 = tgt[i, 2]
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        for l in range(sx.shape[0]):
            d0 = sx[l] - x0
            d1 = sy[l] - x1
            d2 = sz[l] - x2
            r2 = d0 * d0 + d1 * d1 + d2 * d2 + eps2
            inv = 1.0 / np.sqrt(r2)
            u0 = ux[l]
            u1 = uy[l]
            u2 = uz[l]
            du = (d0 * u0 + d1 * u1 + d2 * u2) / r2
            a0 += (u0 + d0 * du) * inv
            a1 += (u1 + d1 * du) * inv
            a2 += (u2 + d2 * du) * inv
        a[i, 0] = 0.5 * a0
        a[i, 1] = 0.5 * a1
        a[i, 2] = 0.5 * a2


@njit(parallel=True, cache=True, fastmath=_FASTMATH, error_model="numpy")
def _nb_full(s, w, u, tgt, eps2, phi, gphi, a, ga, curl):
    sx = s[0]
    sy = s[1]
    sz = s[2]
    ux = u[0]
    uy = u[1]
    uz = u[2]
    for i in prange(tgt.shape[0]):
        x0 = tgt[i, 0]
        x1 = tgt[i, 1]
        x2 = tgt[i, 2]
        p = 0.0
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        m00 = 0.0
        m01 = 0.0
        m02 = 0.0
        m10 = 0.0
        m11 = 0.0
        m12 = 0.0
        m20 = 0.0
        m21 = 0.0
        m22 = 0.0
        for l in range(sx.shape[0]):
            d0 = sx[l] - x0
            d1 = sy[l] - x1
            d2 = sz[l] - x2
            r2 = d0 * d0 + d1 * d1 + d2 * d2 + eps2
            inv = 1.0 / np.sqrt(r2)
            inv2 = inv * inv
            inv3 = inv * inv2
            wi = w[l] * inv
            p += wi
            wi3 = wi * inv2
            g0 += wi3 * d0
            g1 += wi3 * d1
            g2 += wi3 * d2
            u0 = ux[l]
            u1 = uy[l]
            u2 = uz[l]
            du = d0 * u0 + d1 * u1 + d2 * u2
            dui2 = du * inv2
            a0 += (u0 + d0 * dui2) * inv
            a1 += (u1 + d1 * dui2) * inv
            a2 += (u2 + d2 * dui2) * inv
            # d_k A_i kernel: (u_i d_k - d_i u_k - delta_ik du)/s^3 + 3 d_i d_k du/s^5
            c3 = 3.0 * dui2 * inv3
            dd = du * inv3
            m00 += c3 * d0 * d0 - dd
            m11 += c3 * d1 * d1 - dd
            m22 += c3 * d2 * d2 - dd
            t01 = (u0 * d1 - d0 * u1) * inv3
            t02 = (u0 * d2 - d0 * u2) * inv3
            t12 = (u1 * d2 - d1 * u2) * inv3
            s01 = c3 * d0 * d1
            s02 = c3 * d0 * d2
            s12 = c3 * d1 * d2
            m01 += t01 + s01
            m10 += s01 - t01
            m02 += t02 + s02
            m20 += s02 - t02
            m12 += t12 + s12
            m21 += s12 - t12
        phi[i] = p
        gphi[i, 0] = g0
        gphi[i, 1] = g1
        gphi[i, 2] = g2
        a[i, 0] = 0.5 * a0
        a[i, 1] = 0.5 * a1
        a[i, 2] = 0.5 * a2
        ga[i, 0, 0] = 0.5 * m00
        ga[i, 0, 1] = 0.5 * m01
        ga[i, 0, 2] = 0.5 * m02
        ga[i, 1, 0] = 0.5 * m10
        ga[i, 1, 1] = 0.5 * m11
        ga[i, 1, 2] = 0.5 * m12
        ga[i, 2, 0] = 0.5 * m20
        ga[i, 2, 1] = 0.5 * m21
        ga[i, 2, 2] = 0.5 * m22
        curl[i, 0] = 0.5 * (m21 - m12)
        curl[i, 1] = 0.5 * (m02 - m20)
        curl[i, 2] = 0.5 * (m10 - m01)


@njit(parallel=True, cache=True, fastmath=_FASTMATH, error_model="numpy")
def _nb_curl(s, u, tgt, eps2, curl):
    sx = s[0]
    sy = s[1]
    sz = s[2]
    ux = u[0]
    uy = u[1]
    uz = u[2]
    for i in prange(tgt.shape[0]):
        x0 = tgt[i, 0]
        x1 = tgt[i, 1]
        x2 = tgt[i, 2]
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        for l in range(sx.shape[0]):
            d0 = sx[l] - x0
            d1 = sy[l] - x1
            d2 = sz[l] - x2
            r2 = d0 * d0 + d1 * d1 + d2 * d2 + eps2
            inv3 = 1.0 / (r2 * np.sqrt(r2))
            u0 = ux[l]
            u1 = uy[l]
            u2 = uz[l]
            c0 += (d1 * u2 - d2 * u1) * inv3
            c1 += (d2 * u0 - d0 * u2) * inv3
            c2 += (d0 * u1 - d1 * u0) * inv3
        curl[i, 0] = c0
        curl[i, 1] = c1
        curl[i, 2] = c2


@njit(parallel=True, cache=True, fastmath=_FASTMATH, error_model="numpy")
def _nb_power(s, psi, tgt, eps2, half_m, out):
    sx = s[0]
    sy = s[1]
    sz = s[2]
    for i in prange(tgt.shape[0]):
        x0 = tgt[i, 0]
        x1 = tgt[i, 1]
        x2 = tgt[i, 2]
        acc = 0.0
        for l in range(sx.shape[0]):
            d0 = sx[l] - x0
            d1 = sy[l] - x1
            d2 = sz[l] - x2
            r2 = d0 * d0 + d1 * d1 + d2 * d2 + eps2
            acc += psi[l] * np.exp(-half_m * np.log(r2))
        out[i] = acc


@njit(parallel=True, cache=True, fastmath=_FASTMATH, error_model="numpy")
def _nb_direction(s, q, tgt, eps2, out):
    sx = s[0]
    sy = s[1]
    sz = s[2]
    for i in prange(tgt.shape[0]):
        x0 = tgt[i, 0]
        x1 = tgt[i, 1]
        x2 = tgt[i, 2]
        o0 = 0.0
        o1 = 0.0
        o2 = 0.0
        for l in range(sx.shape[0]):
            d0 = sx[l] - x0
            d1 = sy[l] - x1
            d2 = sz[l] - x2
            qi = q[l] / np.sqrt(d0 * d0 + d1 * d1 + d2 * d2 + eps2)
            o0 += qi * d0
            o1 += qi * d1
            o2 += qi * d2
        out[i, 0] = o0
        out[i, 1] = o1
        out[i, 2] = o2


# ---------------------------------------------------------------- numpy


def _chunks(ns, nt, chunk):
    if chunk is None or chunk <= 0:
        chunk = max(1, _PAIR_BUDGET // max(nt, 1))
    return [(s, min(s + chunk, ns)) for s in range(0, ns, chunk)]


def _geometry(src, tgt, eps2):
    d = src[None, :, :] - tgt[:, None, :]
    r2 = np.einsum("tsk,tsk->ts", d, d) + eps2
    bad = int(np.count_nonzero(r2 == 0.0))
    if bad:
        r2 = np.where(r2 == 0.0, np.inf, r2)
    inv = 1.0 / np.sqrt(r2)
    return d, r2, inv, bad


def _np_scalar(src, w, tgt, eps2, chunk=None):
    nt = tgt.shape[0]
    phi = np.zeros(nt)
    grad = np.zeros((nt, 3))
    bad = 0
    for lo, hi in _chunks(src.shape[0], nt, chunk):
        d, r2, inv, b = _geometry(src[lo:hi], tgt, eps2)
        bad += b
        wi = w[lo:hi][None, :] * inv
        phi += wi.sum(axis=1)
        grad += np.einsum("ts,tsk->tk", wi / r2, d)
    return phi, grad, bad


def _np_vector(src, u, tgt, eps2, chunk=None):
    nt = tgt.shape[0]
    a = np.zeros((nt, 3))
    bad = 0
    for lo, hi in _chunks(src.shape[0], nt, chunk):
        d, r2, inv, b = _geometry(src[lo:hi], tgt, eps2)
        bad += b
        uc = u[lo:hi]
        du = np.einsum("tsk,sk->ts", d, uc) * inv * inv
        a += np.einsum("ts,sk->tk", inv, uc) + np.einsum("ts,tsk->tk", du * inv, d)
    return 0.5 * a, bad


def _np_full(src, w, u, tgt, eps2, chunk=None):
    nt = tgt.shape[0]
    phi = np.zeros(nt)
    gphi = np.zeros((nt, 3))
    a = np.zeros((nt, 3))
    ga = np.zeros((nt, 3, 3))
    eye = np.eye(3)
    bad = 0
    for lo, hi in _chunks(src.shape[0], nt, max(1, (chunk or 0) // 4) if chunk else None):
        d, r2, inv, b = _geometry(src[lo:hi], tgt, eps2)
        bad += b
        uc = u[lo:hi]
        inv2 = inv * inv
        inv3 = inv * inv2
        wi = w[lo:hi][None, :] * inv
        phi += wi.sum(axis=1)
        gphi += np.einsum("ts,tsk->tk", wi * inv2, d)
        du = np.einsum("tsk,sk->ts", d, uc)
        a += np.einsum("ts,sk->tk", inv, uc) + np.einsum("ts,tsk->tk", du * inv2 * inv, d)
        ga += (
            np.einsum("ts,si,tsk->tik", inv3, uc, d)
            - np.einsum("ts,tsi,sk->tik", inv3, d, uc)
            - np.einsum("ts,ik->tik", du * inv3, eye)
            + np.einsum("ts,tsi,tsk->tik", 3.0 * du * inv2 * inv3, d, d)
        )
    a *= 0.5
    ga *= 0.5
    curl = np.stack(
        [ga[:, 2, 1] - ga[:, 1, 2], ga[:, 0, 2] - ga[:, 2, 0], ga[:, 1, 0] - ga[:, 0, 1]], axis=1
    )
    return phi, gphi, a, ga, curl, bad


def _np_curl(src, u, tgt, eps2, chunk=None):
    nt = tgt.shape[0]
    curl = np.zeros((nt, 3))
    bad = 0
    for lo, hi in _chunks(src.shape[0], nt, chunk):
        d, r2, inv, b = _geometry(src[lo:hi], tgt, eps2)
        bad += b
        cr = np.cross(d, u[lo:hi][None, :, :])
        curl += np.einsum("ts,tsk->tk", inv * inv * inv, cr)
    return curl, bad


def _np_power(src, psi, tgt, eps2, half_m, chunk=None):
    nt = tgt.shape[0]
    out = np.zeros(nt)
    bad = 0
    for lo, hi in _chunks(src.shape[0], nt, chunk):
        d, r2, inv, b = _geometry(src[lo:hi], tgt, eps2)
        bad += b
        out += (psi[lo:hi][None, :] * r2 ** (-half_m)).sum(axis=1)
    return out, bad


def _np_direction(src, q, tgt, eps2, chunk=None):
    nt = tgt.shape[0]
    out = np.zeros((nt, 3))
    bad = 0
    for lo, hi in _chunks(src.shape[0], nt, chunk):
        d, r2, inv, b = _geometry(src[lo:hi], tgt, eps2)
        bad += b
        out += np.einsum("ts,tsk->tk", q[lo:hi][None, :] * inv, d)
    return out, bad


# ---------------------------------------------------------------- dispatch


class SingularPairError(ValueError):
    """A target coincides with a source while the softening is zero."""


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _rows(a):
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64).T)


def _check(bad):
    if bad:
        raise SingularPairError(f"{bad} target/source pair(s) coincide with zero softening")


def _check_finite(eps, *outs):
    # only a zero softening can produce a coincident pair
    if eps == 0.0 and not all(np.isfinite(o).all() for o in outs):
        raise SingularPairError("a target coincides with a source at zero softening")


def scalar_sum(src, w, tgt, eps, chunk=None):
    """Softened Coulomb sums: ``phi = sum w/s`` and ``grad = sum w d/s^3``."""
    tgt = _f64(tgt)
    eps = float(eps)
    if USE_NUMBA:
        phi = np.empty(tgt.shape[0])
        grad = np.empty((tgt.shape[0], 3))
        _nb_scalar(_rows(src), _f64(w), tgt, eps * eps, phi, grad)
        _check_finite(eps, phi)
    else:
        phi, grad, bad = _np_scalar(_f64(src), _f64(w), tgt, eps * eps, chunk)
        _check(bad)
    return phi, grad


def vector_sum(src, u, tgt, eps, chunk=None):
    """Darwin vector potential ``a = 1/2 sum (u + d (d.u)/s^2)/s``."""
    tgt = _f64(tgt)
    eps = float(eps)
    if USE_NUMBA:
        a = np.empty((tgt.shape[0], 3))
        _nb_vector(_rows(src), _rows(u), tgt, eps * eps, a)
        _check_finite(eps, a)
    else:
        a, bad = _np_vector(_f64(src), _f64(u), tgt, eps * eps, chunk)
        _check(bad)
    return a


def full_sum(src, w, u, tgt, eps, chunk=None):
    """All potentials at once: ``phi, grad_phi, a, grad_a, curl_a``.

    ``grad_a[t, i, k]`` is the derivative of component ``i`` along ``k``.
    The curl returned here is the antisymmetric part of ``grad_a``.
    """
    tgt = _f64(tgt)
    eps = float(eps)
    if USE_NUMBA:
        nt = tgt.shape[0]
        phi = np.empty(nt)
        gphi = np.empty((nt, 3))
        a = np.empty((nt, 3))
        ga = np.empty((nt, 3, 3))
        curl = np.empty((nt, 3))
        _nb_full(_rows(src), _f64(w), _rows(u), tgt, eps * eps, phi, gphi, a, ga, curl)
        _check_finite(eps, phi, ga)
    else:
        phi, gphi, a, ga, curl, bad = _np_full(_f64(src), _f64(w), _f64(u), tgt, eps * eps, chunk)
        _check(bad)
    return phi, gphi, a, ga, curl


def curl_sum(src, u, tgt, eps, chunk=None):
    """Direct magnetic kernel ``sum (d x u)/s^3``."""
    tgt = _f64(tgt)
    eps = float(eps)
    if USE_NUMBA:
        curl = np.empty((tgt.shape[0], 3))
        _nb_curl(_rows(src), _rows(u), tgt, eps * eps, curl)
        _check_finite(eps, curl)
    else:
        curl, bad = _np_curl(_f64(src), _f64(u), tgt, eps * eps, chunk)
        _check(bad)
    return curl


def power_sum(src, psi, tgt, eps, m, chunk=None):
    """``sum psi / s^m`` for the Riesz-type bound."""
    tgt = _f64(tgt)
    eps = float(eps)
    if USE_NUMBA:
        out = np.empty(tgt.shape[0])
        _nb_power(_rows(src), _f64(psi), tgt, eps * eps, 0.5 * float(m), out)
        _check_finite(eps, out)
    else:
        out, bad = _np_power(_f64(src), _f64(psi), tgt, eps * eps, 0.5 * float(m), chunk)
        _check(bad)
    return out


def direction_sum(src, q, tgt, eps, chunk=None):
    """``sum q d / s``, the unit-direction kernel of the equivalent representation."""
    tgt = _f64(tgt)
    eps = float(eps)
    if USE_NUMBA:
        out = np.empty((tgt.shape[0], 3))
        _nb_direction(_rows(src), _f64(q), tgt, eps * eps, out)
        _check_finite(eps, out)
    else:
        out, bad = _np_direction(_f64(src), _f64(q), tgt, eps * eps, chunk)
        _check(bad)
    return out
