"""Grid deposition, norms, residuals, energy, bound margins and decay fits."""
import math
from typing import NamedTuple

import numpy as np

from . import _kernels
from .darwin_kernels import pallard_constant
from .field_solver import EMFields, history_window, time_derivative
from .grid import Grid3, GridMismatchError, SupportOverflowError, cic_deposit, divergence, layout_for
from .grid import laplacian_interior
from .phase_space import relativistic_velocity

__all__ = [
    "SERIES_COLUMNS",
    "RunRecord",
    "Residuals",
    "FitUndefinedError",
    "deposit_grid",
    "norms_and_residuals",
    "poisson_residual",
    "plummer_density",
    "transversal_l2",
    "transversal_fields",
    "energy",
    "potential_bound_check",
    "decay_fit",
]

SERIES_COLUMNS = (
    "t", "sup_rho", "sup_j", "sup_grad_phi", "sup_grad_a", "sup_dtA", "sup_d2phi", "sup_d2a",
    "l2_dtdxA", "l2_sqrtrho_dtA", "energy", "gauge_residual", "continuity_residual",
    "x_bar", "p_bar", "h_drift", "fs_ok_1", "fs_ok_2",
)
FLAG_COLUMNS = ("fs_ok_1", "fs_ok_2")

# the kernel matrix of grad A has Frobenius norm sqrt(6)/2 per unit |j|/r^2
GRAD_A_PREFACTOR = math.sqrt(6.0) / 2.0


class FitUndefinedError(ValueError):
    pass


class RunRecord:
    """Time series of diagnostics: frozen ``SERIES_COLUMNS`` plus free-form extras."""

    def __init__(self, meta=None):
        self.rows = []
        self.extras = []
        self.meta = dict(meta or {})
        self.aborted = False
        self.abort_reason = ""

    def __len__(self):
        return len(self.rows)

    def append(self, row, extra=None):
        missing = [c for c in SERIES_COLUMNS if c not in row]
        if missing:
            raise KeyError(f"row lacks columns {missing}")
        if self.rows and not row["t"] > self.rows[-1]["t"]:
            raise ValueError("record rows must be strictly increasing in t")
        self.rows.append({c: row[c] for c in SERIES_COLUMNS})
        self.extras.append(dict(extra or {}))

    def column(self, name):
        if name in SERIES_COLUMNS:
            return np.array([r[name] for r in self.rows], dtype=float)
        return np.array([e.get(name, np.nan) for e in self.extras], dtype=float)

    @property
    def t(self):
        return self.column("t")

    def extra_columns(self):
        names = []
        for e in self.extras:
            for k in e:
                if k not in names:
                    names.append(k)
        return names


# ---------------------------------------------------------------- deposition


def marker_currents(ensemble, self_field):
    return ensemble.w[:, None] * relativistic_velocity(ensemble.pi - self_field.a_at_markers)


def deposit_grid(ensemble, self_field, h, layout=None, extra_points=None, max_cells=64_000_000):
    """Cloud-in-cell ``rho`` and ``j`` on a grid of cell size ``h``.

    ``layout = (origin, dims)`` pins the grid; markers outside it make the
    grid grow to cover them and the result carries ``meta['expanded']``.
    """
    if not h > 0:
        raise ValueError(f"cell size must be > 0, got {h}")
    expanded = False
    if layout is None:
        origin, dims = layout_for(ensemble.x, h, extra=extra_points)
    else:
        origin, dims = layout
        origin = np.asarray(origin, dtype=float)
        lo = origin + 1.5 * h
        hi = origin + (np.asarray(dims) - 1.5) * h
        x = ensemble.x
        if len(x) and (np.any(x < lo) or np.any(x > hi)):
            origin, dims = layout_for(np.vstack([x, lo, hi]), h)
            expanded = True
    if int(np.prod(dims)) > max_cells:
        raise SupportOverflowError(f"deposition grid of {dims} cells exceeds the cap of {max_cells}")
    rho = cic_deposit(ensemble.x, ensemble.w, origin, h, dims)
    j = cic_deposit(ensemble.x, marker_currents(ensemble, self_field), origin, h, dims)
    meta = {"expanded": expanded}
    return Grid3(origin, h, dims, rho, dict(meta)), Grid3(origin, h, dims, j, dict(meta))


class Residuals(NamedTuple):
    sup_rho: float
    sup_j: float
    continuity_residual: float
    poisson_residual: float


def plummer_density(ensemble, points):
    """Density whose potential is the softened ``sum w / s``: ``sum 3 w eps^2 / (4 pi s^5)``."""
    eps = ensemble.softening
    if len(ensemble) == 0:
        return np.zeros(len(points))
    vals = _kernels.power_sum(ensemble.x, ensemble.w, points, eps, 5.0)
    return 3.0 * eps * eps / (4.0 * np.pi) * vals


def poisson_residual(ensemble, grid):
    """``sup |lap_h phi + 4 pi rho_eps| / sup |4 pi rho_eps|`` over interior cells of ``grid``."""
    if len(ensemble) == 0 or ensemble.total_weight() == 0:
        return 0.0
    pts = grid.centers()
    phi, _ = _kernels.scalar_sum(ensemble.x, ensemble.w, pts, ensemble.softening)
    phi = phi.reshape(grid.dims)
    rho_eps = plummer_density(ensemble, pts).reshape(grid.dims)
    lap = laplacian_interior(phi, grid.h)
    inner = (slice(1, -1),) * 3
    res = lap[inner] + 4.0 * np.pi * rho_eps[inner]
    scale = 4.0 * np.pi * np.max(np.abs(rho_eps[inner]))
    return float(np.max(np.abs(res)) / scale) if scale > 0 else 0.0


def norms_and_residuals(rho, j, rho_prev=None, j_mid=None, dt=None, ensemble=None):
    """Sup norms plus continuity and (optionally) Poisson residuals.

    The continuity residual is ``sup |(rho - rho_prev)/dt + div j_mid|``
    divided by the larger of the two terms' sups, so it is relative and
    vanishes for an empty ensemble.  The Poisson residual needs ``ensemble``
    and is evaluated on the grid of ``rho``.
    """
    sup_rho = float(np.max(np.abs(rho.values))) if rho.values.size else 0.0
    jmag = np.linalg.norm(j.values, axis=-1)
    sup_j = float(jmag.max()) if jmag.size else 0.0
    cont = 0.0
    if rho_prev is not None:
        if j_mid is None or dt is None:
            raise ValueError("continuity residual needs j_mid and dt")
        if not (rho.same_layout(rho_prev) and rho.same_layout(j_mid)):
            raise GridMismatchError("continuity residual needs rho, rho_prev and j_mid on one grid")
        drho = (rho.values - rho_prev.values) / dt
        divj = divergence(j_mid.values, rho.h, order=2)
        scale = max(float(np.max(np.abs(drho))), float(np.max(np.abs(divj))))
        cont = float(np.max(np.abs(drho + divj)) / scale) if scale > 0 else 0.0
    pois = poisson_residual(ensemble, rho) if ensemble is not None else 0.0
    return Residuals(sup_rho, sup_j, cont, pois)


# ---------------------------------------------------------------- probes


def _probe_rho(probes, rho):
    pts = probes.points
    if rho.values.size and len(pts) == int(np.prod(rho.dims)) and np.allclose(pts, rho.centers()):
        return rho.values.reshape(-1)
    return rho.sample(pts)


def transversal_fields(probe_history, rho, dt, at=None, stencil="central", weights=None):
    """Both transversal L2 quantities together with the probe EM fields.

    ``rho`` is a density grid or the density already read off at the probes.

    Returns ``(l2_dtdxA, l2_sqrtrho_dtA, em, dtdxa)``.
    """
    probes = probe_history
    t, sample, window = history_window(probes, dt, at, stencil)
    dta = time_derivative([s.a for s in window], dt, stencil)
    dtdxa = time_derivative([s.grad_a for s in window], dt, stencil)
    em = EMFields(t, -sample.grad_phi, -dta, sample.curl_a, np.abs(sample.trace_a))
    wq = probes.weights if weights is None else np.asarray(weights)
    l2_dx = math.sqrt(float(np.sum(wq * np.sum(dtdxa * dtdxa, axis=(1, 2)))))
    r = _probe_rho(probes, rho) if isinstance(rho, Grid3) else np.asarray(rho, dtype=float)
    r = np.clip(r, 0.0, None)
    l2_rho = math.sqrt(float(np.sum(wq * r * np.sum(dta * dta, axis=1))))
    return l2_dx, l2_rho, em, dtdxa


def transversal_l2(probe_history, rho, dt, at=None, stencil="central", weights=None):
    """``||dt dx A||_2`` and ``||rho^(1/2) dt A||_2`` by probe quadrature.

    Time derivatives are finite differences of the stored probe samples; the
    density is read at the probes from the ``rho`` grid (cell values when the
    probes are its cell centres, trilinear otherwise).
    """
    l2_dx, l2_rho, _, _ = transversal_fields(probe_history, rho, dt, at, stencil, weights)
    return l2_dx, l2_rho


def energy(ensemble, self_field, probe_sample, weights):
    """Kinetic ``sum w sqrt(1 + |pi - A|^2)`` plus ``(|E_L|^2 + |B|^2)/8 pi`` by quadrature.

    Returns ``(total, kinetic, field)``.
    """
    g = ensemble.pi - self_field.a_at_markers
    kin = float(np.sum(ensemble.w * np.sqrt(1.0 + np.sum(g * g, axis=1))))
    b = probe_sample.curl_a
    dens = np.sum(probe_sample.grad_phi**2, axis=1) + np.sum(b * b, axis=1)
    fld = float(np.sum(np.asarray(weights) * dens) / (8.0 * np.pi))
    return kin + fld, kin, fld


def potential_bound_check(rho, j, sups):
    """Margins ``lhs / rhs`` for the potential estimates with the explicit constants.

    ``sups`` maps ``phi``, ``grad_phi``, ``a`` and ``grad_a`` to measured sup
    norms (missing keys are skipped).  ``L^1`` norms use cell quadrature and
    ``L^inf`` norms the cell maxima.  The logarithmic second-derivative
    estimate has no explicit constant and is not part of the report.
    """
    vol = rho.cell_volume
    rv = np.abs(rho.values)
    jv = np.linalg.norm(j.values, axis=-1)
    norms = {
        "rho": (float(rv.sum() * vol), float(rv.max()) if rv.size else 0.0),
        "j": (float(jv.sum() * vol), float(jv.max()) if jv.size else 0.0),
    }
    c1 = pallard_constant(1.0)
    c2 = pallard_constant(2.0)
    table = {
        "phi": ("rho", 1.0 * c1, 2.0 / 3.0, 1.0 / 3.0),
        "grad_phi": ("rho", 1.0 * c2, 1.0 / 3.0, 2.0 / 3.0),
        "a": ("j", 1.0 * c1, 2.0 / 3.0, 1.0 / 3.0),
        "grad_a": ("j", GRAD_A_PREFACTOR * c2, 1.0 / 3.0, 2.0 / 3.0),
    }
    out = {}
    for name, (src, const, e1, einf) in table.items():
        if name not in sups:
            continue
        n1, ninf = norms[src]
        rhs = const * n1**e1 * ninf**einf
        lhs = float(sups[name])
        out[name] = lhs / rhs if rhs > 0 else 0.0
    return out


# ---------------------------------------------------------------- fits


def decay_fit(record, column, t_window, log_correction=False, min_rows=10):
    """Least-squares slope of ``log value`` against ``log t`` over ``t_window``.

    With ``log_correction`` the fitted quantity is ``log value - log log(1 + t)``.
    Returns ``(exponent, r_squared)``.
    """
    t0, t1 = t_window
    if t0 < 1.0:
        raise FitUndefinedError("fit window must start at t >= 1")
    if isinstance(record, RunRecord):
        t = record.t
        y = record.column(column)
    else:
        t = np.asarray(record["t"], dtype=float)
        y = np.asarray(record[column], dtype=float)
    sel = (t >= t0) & (t <= t1)
    if int(sel.sum()) < min_rows:
        raise FitUndefinedError(f"only {int(sel.sum())} rows in window {t_window}")
    t = t[sel]
    y = y[sel]
    if np.any(~(y > 0)):
        raise FitUndefinedError(f"column {column} has non-positive values in the window")
    ly = np.log(y)
    if log_correction:
        ly = ly - np.log(np.log1p(t))
    lt = np.log(t)
    slope, icpt = np.polyfit(lt, ly, 1)
    fit = slope * lt + icpt
    ss_res = float(np.sum((ly - fit) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)
