"""Uniform cell-centred grids, cloud-in-cell deposition and finite differences."""
from dataclasses import dataclass, field

import numpy as np

from ._accel import USE_NUMBA, njit


class SupportOverflowError(ValueError):
    """Gridded data touches the grid boundary, so the support is not contained."""


class GridMismatchError(ValueError):
    """Two grids that must coincide (origin, h, dims) do not."""


@dataclass(frozen=True)
class Grid3:
    """Cell ``(i, j, k)`` is centred at ``origin + (index + 1/2) * h``.

    ``values`` has shape ``dims`` for scalars or ``dims + (3,)`` for vectors.
    """

    origin: np.ndarray
    h: float
    dims: tuple
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if not self.h > 0:
            raise ValueError(f"grid cell size must be > 0, got {self.h}")
        if tuple(self.values.shape[:3]) != self.dims:
            raise ValueError(f"values shape {self.values.shape} does not match dims {self.dims}")

    @property
    def cell_volume(self):
        return self.h**3

    def axes(self):
        return [self.origin[a] + (np.arange(self.dims[a]) + 0.5) * self.h for a in range(3)]

    def centers(self):
        gx, gy, gz = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)

    def with_values(self, values, **meta):
        m = dict(self.meta)
        m.update(meta)
        return Grid3(self.origin, self.h, self.dims, values, m)

    def same_layout(self, other):
        return (
            self.dims == other.dims
            and self.h == other.h
            and np.array_equal(self.origin, other.origin)
        )

    def integral(self):
        return np.sum(self.values, axis=(0, 1, 2)) * self.cell_volume

    def sample(self, points):
        """Trilinear interpolation at ``points``; zero outside the grid."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        vals = self.values
        scalar = vals.ndim == 3
        if scalar:
            vals = vals[..., None]
        out = np.zeros((pts.shape[0], vals.shape[-1]))
        _cic_gather(pts, self.origin, float(self.h), vals, out)
        return out[:, 0] if scalar else out


def layout_for(points, h, guard=2, anchor=0.0, extra=None):
    """Grid layout (origin, dims) aligned to multiples of ``h`` around ``points``.

    The cloud-in-cell stencil touches one neighbour, so ``guard`` cells are
    added beyond that on every side.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if extra is not None:
        pts = np.vstack([pts, np.asarray(extra, dtype=np.float64).reshape(-1, 3)])
    if pts.shape[0] == 0:
        lo = np.zeros(3)
        hi = np.zeros(3)
    else:
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
    pad = guard + 1
    i_lo = np.floor((lo - anchor) / h).astype(np.int64) - pad
    i_hi = np.ceil((hi - anchor) / h).astype(np.int64) + pad
    origin = anchor + i_lo * h
    dims = tuple(int(v) for v in (i_hi - i_lo))
    return origin, dims


def empty_grid(origin, h, dims, components=None):
    shape = tuple(dims) if components is None else tuple(dims) + (components,)
    return Grid3(origin, h, dims, np.zeros(shape))


@njit(cache=True)
def _cic_deposit(pos, payload, origin, h, out):
    # out has shape dims + (ncomp,); payload (N, ncomp) already divided by h^3
    n = pos.shape[0]
    nx = out.shape[0]
    ny = out.shape[1]
    nz = out.shape[2]
    nc = out.shape[3]
    outside = 0
    for k in range(n):
        fx = (pos[k, 0] - origin[0]) / h - 0.5
        fy = (pos[k, 1] - origin[1]) / h - 0.5
        fz = (pos[k, 2] - origin[2]) / h - 0.5
        ix = int(np.floor(fx))
        iy = int(np.floor(fy))
        iz = int(np.floor(fz))
        if ix < 0 or iy < 0 or iz < 0 or ix + 1 >= nx or iy + 1 >= ny or iz + 1 >= nz:
            outside += 1
            continue
        tx = fx - ix
        ty = fy - iy
        tz = fz - iz
        for a in range(2):
            wx = tx if a == 1 else 1.0 - tx
            for b in range(2):
                wy = ty if b == 1 else 1.0 - ty
                for c in range(2):
                    wz = tz if c == 1 else 1.0 - tz
                    wgt = wx * wy * wz
                    for m in range(nc):
                        out[ix + a, iy + b, iz + c, m] += wgt * payload[k, m]
    return outside


@njit(cache=True)
def _cic_gather(pos, origin, h, vals, out):
    nx = vals.shape[0]
    ny = vals.shape[1]
    nz = vals.shape[2]
    nc = vals.shape[3]
    for k in range(pos.shape[0]):
        fx = (pos[k, 0] - origin[0]) / h - 0.5
        fy = (pos[k, 1] - origin[1]) / h - 0.5
        fz = (pos[k, 2] - origin[2]) / h - 0.5
        ix = int(np.floor(fx))
        iy = int(np.floor(fy))
        iz = int(np.floor(fz))
        tx = fx - ix
        ty = fy - iy
        tz = fz - iz
        for a in range(2):
            wx = tx if a == 1 else 1.0 - tx
            jx = ix + a
            if jx < 0 or jx >= nx:
                continue
            for b in range(2):
                wy = ty if b == 1 else 1.0 - ty
                jy = iy + b
                if jy < 0 or jy >= ny:
                    continue
                for c in range(2):
                    wz = tz if c == 1 else 1.0 - tz
                    jz = iz + c
                    if jz < 0 or jz >= nz:
                        continue
                    for m in range(nc):
                        out[k, m] += wx * wy * wz * vals[jx, jy, jz, m]


def _corners(pos, origin, h):
    f = (pos - origin) / h - 0.5
    i0 = np.floor(f).astype(np.int64)
    t = f - i0
    for a in range(2):
        for b in range(2):
            for c in range(2):
                off = np.array([a, b, c])
                wgt = np.prod(np.where(off == 1, t, 1.0 - t), axis=1)
                yield i0 + off, wgt


def _np_deposit(pos, payload, origin, h, out):
    f = (pos - origin) / h - 0.5
    i0 = np.floor(f).astype(np.int64)
    dims = np.array(out.shape[:3])
    ok = np.all((i0 >= 0) & (i0 + 1 < dims), axis=1)
    for idx, wgt in _corners(pos[ok], origin, h):
        for m in range(out.shape[3]):
            np.add.at(out[..., m], (idx[:, 0], idx[:, 1], idx[:, 2]), wgt * payload[ok, m])
    return int(np.count_nonzero(~ok))


def _np_gather(pos, origin, h, vals, out):
    dims = np.array(vals.shape[:3])
    for idx, wgt in _corners(pos, origin, h):
        ok = np.all((idx >= 0) & (idx < dims), axis=1)
        sel = idx[ok]
        out[ok] += wgt[ok, None] * vals[sel[:, 0], sel[:, 1], sel[:, 2]]


if not USE_NUMBA:
    _cic_deposit = _np_deposit  # noqa: F811
    _cic_gather = _np_gather  # noqa: F811


def cic_deposit(points, payload, origin, h, dims):
    """Cloud-in-cell deposition of a density: cell values integrate to ``sum(payload)``."""
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    pay = np.asarray(payload, dtype=np.float64)
    scalar = pay.ndim == 1
    ncomp = 1 if scalar else int(np.prod(pay.shape[1:]))
    pay = np.ascontiguousarray(pay.reshape(pts.shape[0], ncomp) / h**3)
    out = np.zeros(tuple(dims) + (pay.shape[1],))
    outside = _cic_deposit(pts, pay, np.asarray(origin, dtype=np.float64), float(h), out)
    if outside:
        raise SupportOverflowError(f"{outside} marker(s) outside the deposition grid")
    return out[..., 0] if scalar else out


_STENCILS = {
    2: ((1, 0.5),),
    4: ((1, 2.0 / 3.0), (2, -1.0 / 12.0)),
}


def central_diff(values, axis, h, order=2):
    """Centred difference (order 2 or 4) with zero values assumed outside the grid."""
    f = np.asarray(values)
    stencil = _STENCILS[order]
    reach = stencil[-1][0]
    pad = [(0, 0)] * f.ndim
    pad[axis] = (reach, reach)
    g = np.pad(f, pad)
    n = f.shape[axis]
    out = np.zeros(f.shape)
    for off, coef in stencil:
        hi = np.take(g, np.arange(reach + off, n + reach + off), axis=axis)
        lo = np.take(g, np.arange(reach - off, n + reach - off), axis=axis)
        out += coef * (hi - lo)
    return out / h


def divergence(vec_values, h, order=2):
    return sum(central_diff(vec_values[..., a], a, h, order) for a in range(3))


def gradient(values, h, order=2):
    """Gradient of a scalar grid with zero exterior; shape dims + (3,)."""
    return np.stack([central_diff(values, a, h, order) for a in range(3)], axis=-1)


def laplacian_interior(values, h):
    """Seven-point Laplacian on interior cells (boundary layer set to zero)."""
    f = values
    lap = np.zeros_like(f)
    c = f[1:-1, 1:-1, 1:-1]
    lap[1:-1, 1:-1, 1:-1] = (
        f[2:, 1:-1, 1:-1] + f[:-2, 1:-1, 1:-1]
        + f[1:-1, 2:, 1:-1] + f[1:-1, :-2, 1:-1]
        + f[1:-1, 1:-1, 2:] + f[1:-1, 1:-1, :-2]
        - 6.0 * c
    ) / h**2
    return lap


def check_contained(grid, layers=1):
    """Raise when nonzero values sit within ``layers`` cells of the boundary."""
    v = grid.values
    mag = np.abs(v) if v.ndim == 3 else np.linalg.norm(v, axis=-1)
    inner = np.zeros(mag.shape, dtype=bool)
    inner[layers:-layers, layers:-layers, layers:-layers] = True
    if np.any(mag[~inner] != 0.0):
        raise SupportOverflowError("gridded support touches the grid boundary")
