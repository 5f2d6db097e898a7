"""Softened Darwin kernels over marker sources or gridded densities.

Softening replaces ``|y - x|`` by ``s = sqrt(|y - x|^2 + eps^2)`` and the unit
vector ``omega`` by ``(y - x)/s`` everywhere.
"""
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.signal import fftconvolve

from . import _kernels
from ._kernels import SingularPairError
from .grid import check_contained, central_diff, divergence

__all__ = [
    "VectorSource",
    "KernelConfig",
    "DarwinSample",
    "SingularPairError",
    "InvalidExponentsError",
    "scalar_kernel_sum",
    "darwin_kernel_sum",
    "direct_curl",
    "equivalent_vector_potential",
    "coulomb_vector_sum",
    "transversal_projection",
    "pallard_constant",
    "pallard_bound",
    "grid_sources",
]


class InvalidExponentsError(ValueError):
    pass


# fourth-order centred differences for the grid divergence and gradient
DIFF_ORDER = 4


@dataclass(frozen=True)
class KernelConfig:
    softening: float
    parallel_chunk: int = 256

    def __post_init__(self):
        if not self.softening >= 0:
            raise ValueError(f"softening must be >= 0, got {self.softening}")
        if int(self.parallel_chunk) < 1:
            raise ValueError("parallel_chunk must be >= 1")


@dataclass(frozen=True)
class VectorSource:
    """Point sources: positions ``y`` (N, 3), vector payload ``u`` (N, 3), scalar ``w`` (N,)."""

    y: np.ndarray
    u: np.ndarray
    w: np.ndarray

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))

    @classmethod
    def from_arrays(cls, y, u=None, w=None):
        y = np.asarray(y, dtype=np.float64).reshape(-1, 3)
        n = y.shape[0]
        u = np.zeros((n, 3)) if u is None else np.asarray(u, dtype=np.float64).reshape(n, 3)
        w = np.zeros(n) if w is None else np.asarray(w, dtype=np.float64).reshape(n)
        return cls(y, u, w)

    def __len__(self):
        return self.y.shape[0]

    def concat(self, other):
        return VectorSource(
            np.vstack([self.y, other.y]), np.vstack([self.u, other.u]), np.concatenate([self.w, other.w])
        )


class DarwinSample(NamedTuple):
    a: np.ndarray
    grad_a: np.ndarray
    curl_a: np.ndarray
    curl_direct: Optional[np.ndarray] = None


def _targets(targets):
    return np.asarray(targets, dtype=np.float64).reshape(-1, 3)


def scalar_kernel_sum(sources, targets, cfg):
    """``phi`` (T,) and ``grad_phi`` (T, 3) from the scalar payload ``w``."""
    tgt = _targets(targets)
    if len(sources) == 0:
        return np.zeros(tgt.shape[0]), np.zeros((tgt.shape[0], 3))
    return _kernels.scalar_sum(sources.y, sources.w, tgt, cfg.softening, cfg.parallel_chunk)


def darwin_kernel_sum(sources, targets, cfg, with_direct_curl=False):
    """Vector potential, its derivative ``grad_a[t, i, k] = d_k a_i`` and the curl.

    The curl is taken from the antisymmetric part of ``grad_a``; the direct
    ``omega x u / s^2`` kernel is added on request.
    """
    tgt = _targets(targets)
    nt = tgt.shape[0]
    if len(sources) == 0:
        z = np.zeros((nt, 3))
        return DarwinSample(z, np.zeros((nt, 3, 3)), z.copy(), z.copy() if with_direct_curl else None)
    _, _, a, ga, curl = _kernels.full_sum(
        sources.y, sources.w, sources.u, tgt, cfg.softening, cfg.parallel_chunk
    )
    direct = None
    if with_direct_curl:
        direct = _kernels.curl_sum(sources.y, sources.u, tgt, cfg.softening, cfg.parallel_chunk)
    return DarwinSample(a, ga, curl, direct)


def direct_curl(sources, targets, cfg):
    tgt = _targets(targets)
    if len(sources) == 0:
        return np.zeros((tgt.shape[0], 3))
    return _kernels.curl_sum(sources.y, sources.u, tgt, cfg.softening, cfg.parallel_chunk)


def grid_sources(grid, scalar=None):
    """Cell-centre point sources carrying ``value * h^3`` (nonzero cells only)."""
    pts = grid.centers()
    vol = grid.cell_volume
    vals = grid.values
    if vals.ndim == 3:
        w = vals.reshape(-1) * vol
        keep = w != 0
        return VectorSource(pts[keep], np.zeros((int(keep.sum()), 3)), w[keep])
    u = vals.reshape(-1, 3) * vol
    w = np.zeros(u.shape[0]) if scalar is None else np.asarray(scalar).reshape(-1) * vol
    keep = np.any(u != 0, axis=1) | (w != 0)
    return VectorSource(pts[keep], u[keep], w[keep])


def coulomb_vector_sum(grid_j, targets, cfg):
    """Componentwise Coulomb integral ``sum j h^3 / s``."""
    tgt = _targets(targets)
    src = grid_sources(grid_j)
    out = np.zeros((tgt.shape[0], 3))
    if len(src) == 0:
        return out
    for c in range(3):
        out[:, c] = _kernels.power_sum(src.y, src.u[:, c], tgt, cfg.softening, 1.0, cfg.parallel_chunk)
    return out


def equivalent_vector_potential(grid_j, targets, cfg):
    """``int j/|y-x| + 1/2 int (div j) omega`` by midpoint quadrature.

    The divergence uses centred differences on the grid, so the support of
    ``j`` must stay clear of the boundary layer.
    """
    check_contained(grid_j, layers=1)
    tgt = _targets(targets)
    first = coulomb_vector_sum(grid_j, tgt, cfg)
    div = divergence(grid_j.values, grid_j.h, order=DIFF_ORDER)
    q = div.reshape(-1) * grid_j.cell_volume
    keep = q != 0
    if not np.any(keep):
        return first
    pts = grid_j.centers()[keep]
    second = _kernels.direction_sum(pts, q[keep], tgt, cfg.softening, cfg.parallel_chunk)
    return first + 0.5 * second


def _coulomb_convolve(values, h, eps):
    """``sum_y values(y) h^3 / s(y - x)`` at every cell centre via zero-padded FFT."""
    n = values.shape
    offs = [np.arange(-(m - 1), m) * h for m in n]
    gx, gy, gz = np.meshgrid(*offs, indexing="ij")
    r2 = gx * gx + gy * gy + gz * gz + eps * eps
    with np.errstate(divide="ignore"):
        kern = np.where(r2 > 0, 1.0 / np.sqrt(r2), 0.0) * h**3
    if eps == 0:
        # exact self-cell integral of 1/|y| over a cube of side h
        kern[tuple(m - 1 for m in n)] = 2.3800772 * h**2
    return fftconvolve(values, kern, mode="same")


def transversal_projection(grid_j, cfg):
    """``P j = j + (1/4 pi) grad int (div j)/|y - x|`` on the grid of ``j``.

    The result carries ``meta['div_max']`` (sup of its centred divergence) and
    ``meta['div_in_max']`` (the same for the input) for the caller's report.
    """
    check_contained(grid_j, layers=2)
    h = grid_j.h
    div = divergence(grid_j.values, h, order=DIFF_ORDER)
    # potential on a grid two cells wider so the gradient stencil stays on-grid
    pad = 2
    pot = _coulomb_convolve(np.pad(div, pad), h, cfg.softening)
    grad = np.stack([central_diff(pot, a, h, DIFF_ORDER) for a in range(3)], axis=-1)
    grad = grad[pad:-pad, pad:-pad, pad:-pad]
    proj = grid_j.values + grad / (4.0 * np.pi)
    div_out = divergence(proj, h, order=DIFF_ORDER)
    inner = (slice(pad, -pad),) * 3
    return grid_j.with_values(
        proj,
        div_max=float(np.max(np.abs(div_out[inner]))),
        div_in_max=float(np.max(np.abs(div[inner]))),
    )


def pallard_constant(m, r=1.0, s=np.inf):
    """Constant of the interpolation inequality for the Riesz-type kernel ``|y|^-m``.

    ``(1, inf)`` uses the closed form ``3 (4 pi/m)^(m/3)/(3 - m)``.  Other
    exponents come from optimising the split radius of the near/far Holder
    estimate, which is a conservative bound rather than a sharp value.
    """
    m = float(m)
    r = float(r)
    s = float(s)
    if not 1.0 <= m < 3.0:
        raise InvalidExponentsError(f"m must lie in [1, 3), got {m}")
    r0 = 3.0 / (3.0 - m)
    if not (1.0 <= r < r0 < s):
        raise InvalidExponentsError(f"need 1 <= r < {r0} < s, got r={r}, s={s}")
    if r == 1.0 and np.isinf(s):
        return 3.0 * (4.0 * np.pi / m) ** (m / 3.0) / (3.0 - m)
    s_conj = 1.0 if np.isinf(s) else s / (s - 1.0)
    # near field: || |y|^-m 1_{B_R} ||_{s'} = (4 pi/(3 - m s'))^{1/s'} R^{3/s' - m}
    alpha = (4.0 * np.pi / (3.0 - m * s_conj)) ** (1.0 / s_conj)
    a_exp = 3.0 / s_conj - m
    if r == 1.0:
        beta, b_exp = 1.0, m
    else:
        r_conj = r / (r - 1.0)
        beta = (4.0 * np.pi / (m * r_conj - 3.0)) ** (1.0 / r_conj)
        b_exp = m - 3.0 / r_conj
    # unit norms: the optimum is scale-free and equals the constant
    rad = (b_exp * beta / (a_exp * alpha)) ** (1.0 / (a_exp + b_exp))
    return float(alpha * rad**a_exp + beta * rad ** (-b_exp))


def _lambda(m, r, s):
    r0 = 3.0 / (3.0 - m)
    return (1.0 - r / r0) / (1.0 - (0.0 if np.isinf(s) else r / s))


def pallard_bound(m, psi_grid, r=1.0, s=np.inf, softening=None):
    """Check ``sup_x int psi/|y - x|^m <= C ||psi||_r^(1-lam) ||psi||_s^lam``.

    ``lhs`` is the largest softened cell-quadrature value over the cell
    centres (softening defaults to ``h/2``).  Returns ``(lhs, rhs, constant)``.
    """
    const = pallard_constant(m, r, s)
    psi = np.asarray(psi_grid.values, dtype=np.float64)
    if np.any(psi < 0):
        raise ValueError("psi must be non-negative")
    vol = psi_grid.cell_volume
    eps = 0.5 * psi_grid.h if softening is None else float(softening)
    flat = psi.reshape(-1)
    if not np.any(flat > 0):
        return 0.0, 0.0, const
    # the cell sum over all centre pairs is a discrete convolution
    n = psi.shape
    offs = np.meshgrid(*[np.arange(-(k - 1), k) * psi_grid.h for k in n], indexing="ij")
    kern = (offs[0] ** 2 + offs[1] ** 2 + offs[2] ** 2 + eps * eps) ** (-0.5 * float(m))
    vals = fftconvolve(psi * vol, kern, mode="valid")
    lhs = float(vals.max())
    norm_r = float(np.sum(flat**r) * vol) ** (1.0 / r)
    norm_s = float(flat.max()) if np.isinf(s) else float(np.sum(flat**s) * vol) ** (1.0 / s)
    lam = _lambda(m, r, s)
    rhs = const * norm_r ** (1.0 - lam) * norm_s**lam
    return lhs, float(rhs), const
