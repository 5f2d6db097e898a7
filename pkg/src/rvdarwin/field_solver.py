"""Self-consistent vector potential, field evaluation and probe bookkeeping.

The vector potential at the markers solves ``A = T[A]`` with

    T[A](x_k) = 1/2 sum_l [id + w w^T] w_l v(pi_l - A_l) / s_kl

which is iterated with damping.  Once ``A`` is known the sources are frozen
into a :class:`FieldSources` value and evaluated anywhere.
"""
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .phase_space import relativistic_velocity

__all__ = [
    "FieldNonConvergenceError",
    "StaleFieldError",
    "HistoryError",
    "SelfField",
    "FieldSample",
    "FieldSources",
    "ProbeSet",
    "ProbeLevel",
    "EMFields",
    "solve_self_consistent_A",
    "field_sources",
    "eval_fields",
    "em_fields_from_potentials",
    "history_window",
    "time_derivative",
    "nested_probe_set",
    "grid_probe_set",
]


class FieldNonConvergenceError(RuntimeError):
    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class StaleFieldError(ValueError):
    pass


class HistoryError(ValueError):
    pass


@dataclass(frozen=True)
class SelfField:
    a_at_markers: np.ndarray
    iterations: int
    residual: float
    time: float = 0.0
    tol: float = 0.0
    theta: float = 1.0
    residual_history: tuple = ()

    def __post_init__(self):
        a = np.array(self.a_at_markers, dtype=np.float64).reshape(-1, 3)
        a.flags.writeable = False
        object.__setattr__(self, "a_at_markers", a)


class FieldSample(NamedTuple):
    phi: np.ndarray
    grad_phi: np.ndarray
    a: np.ndarray
    grad_a: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 3, 3)))

    def take(self, idx):
        return FieldSample(self.phi[idx], self.grad_phi[idx], self.a[idx], self.grad_a[idx])

    @property
    def curl_a(self):
        g = self.grad_a
        return np.stack([g[:, 2, 1] - g[:, 1, 2], g[:, 0, 2] - g[:, 2, 0], g[:, 1, 0] - g[:, 0, 1]], axis=1)

    @property
    def trace_a(self):
        return np.trace(self.grad_a, axis1=1, axis2=2)


def _kinetic_currents(ensemble, a):
    return ensemble.w[:, None] * relativistic_velocity(ensemble.pi - a)


def _apply_T(ensemble, a, eps):
    u = _kinetic_currents(ensemble, a)
    return _kernels.vector_sum(ensemble.x, u, ensemble.x, eps)


def solve_self_consistent_A(ensemble, cfg=None, tol=None, damping=1.0, max_iter=200,
                            warm_start=None, max_halvings=6):
    """Damped fixed-point iteration for ``A`` at the markers.

    ``tol`` defaults to ``1e-10 * max(1, ||T[A_start]||)``; the first
    evaluation is ``T[0]`` for a cold start.  The damping halves whenever the
    update grows, at most ``max_halvings`` times.
    """
    n = len(ensemble)
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    eps = ensemble.softening if cfg is None else cfg.softening
    if not eps > 0:
        raise ValueError("self-consistent solve needs a positive softening")
    if n == 0:
        return SelfField(np.zeros((0, 3)), 0, 0.0, ensemble.t, tol or 0.0, damping)
    if warm_start is not None and warm_start.a_at_markers.shape[0] == n:
        a = np.array(warm_start.a_at_markers)
    else:
        a = np.zeros((n, 3))
    theta = float(damping)
    halvings = 0
    prev = np.inf
    history = []
    for it in range(1, max_iter + 1):
        ta = _apply_T(ensemble, a, eps)
        if tol is None:
            tol = 1e-10 * max(1.0, float(np.max(np.abs(ta))))
        new = (1.0 - theta) * a + theta * ta
        res = float(np.max(np.abs(new - a)))
        while res > prev and halvings < max_halvings:
            theta *= 0.5
            halvings += 1
            new = (1.0 - theta) * a + theta * ta
            res = float(np.max(np.abs(new - a)))
        if not np.isfinite(res):
            raise FieldNonConvergenceError("vector potential iteration diverged", res, it)
        history.append(res)
        a = new
        prev = res
        if res <= tol:
            return SelfField(a, it, res, ensemble.t, tol, theta, tuple(history))
    raise FieldNonConvergenceError("vector potential iteration did not converge", prev, max_iter)


@dataclass(frozen=True)
class FieldSources:
    """Frozen sources: positions, charges ``w`` and currents ``w v(pi - A)``."""

    y: np.ndarray
    w: np.ndarray
    u: np.ndarray
    softening: float
    time: float = 0.0

    def __len__(self):
        return self.w.shape[0]

    def evaluate(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self) == 0:
            return FieldSample.zeros(pts.shape[0])
        phi, gphi, a, ga, _ = _kernels.full_sum(self.y, self.w, self.u, pts, self.softening)
        return FieldSample(phi, gphi, a, ga)

    def vector_potential(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self) == 0:
            return np.zeros((pts.shape[0], 3))
        return _kernels.vector_sum(self.y, self.u, pts, self.softening)


def field_sources(ensemble, self_field):
    if self_field.a_at_markers.shape[0] != len(ensemble):
        raise StaleFieldError("self field and ensemble have different marker counts")
    if self_field.time != ensemble.t:
        raise StaleFieldError(f"self field at t={self_field.time} used for ensemble at t={ensemble.t}")
    u = _kinetic_currents(ensemble, self_field.a_at_markers)
    return FieldSources(np.array(ensemble.x), np.array(ensemble.w), u, ensemble.softening, ensemble.t)


def eval_fields(ensemble, self_field, points):
    """Field bundle at ``points`` from the ensemble and its converged potential."""
    return field_sources(ensemble, self_field).evaluate(points)


# ---------------------------------------------------------------- probes


class ProbeLevel(NamedTuple):
    start: int
    dims: tuple
    h: float
    origin: np.ndarray


class ProbeSet:
    """Fixed probe points with quadrature weights and a short field history.

    Points laid out as cell centres of one or more uniform blocks (``levels``)
    also support centred second differences and cell quadrature.
    """

    def __init__(self, points, weights=None, levels=(), keep=5):
        pts = np.array(points, dtype=np.float64).reshape(-1, 3)
        pts.flags.writeable = False
        self._points = pts
        w = np.zeros(pts.shape[0]) if weights is None else np.array(weights, dtype=np.float64)
        w.flags.writeable = False
        self.weights = w
        self.levels = tuple(levels)
        self.history = deque(maxlen=keep)

    @property
    def points(self):
        return self._points

    def __len__(self):
        return self._points.shape[0]

    def record(self, t, sample):
        if self.history and not t > self.history[-1][0]:
            raise HistoryError("probe samples must be recorded in increasing time")
        self.history.append((float(t), sample))

    def clear(self):
        self.history.clear()

    def level_view(self, values, level):
        n = int(np.prod(level.dims))
        block = values[level.start:level.start + n]
        return block.reshape(tuple(level.dims) + block.shape[1:])

    def second_derivative_sups(self, sample):
        """Sup over interior level cells of ``|d^2 phi|`` and ``|d^2 A|`` (Frobenius).

        The second derivatives are centred differences of the gradient fields.
        """
        d2phi = 0.0
        d2a = 0.0
        for lev in self.levels:
            if min(lev.dims) < 3:
                continue
            gp = self.level_view(sample.grad_phi, lev)
            ga = self.level_view(sample.grad_a, lev)
            sq_p = 0.0
            sq_a = 0.0
            for ax in range(3):
                lo = [slice(1, -1)] * 3
                hi = [slice(1, -1)] * 3
                lo[ax] = slice(0, -2)
                hi[ax] = slice(2, None)
                sq_p = sq_p + np.sum(((gp[tuple(hi)] - gp[tuple(lo)]) / (2 * lev.h)) ** 2, axis=-1)
                sq_a = sq_a + np.sum(((ga[tuple(hi)] - ga[tuple(lo)]) / (2 * lev.h)) ** 2, axis=(-2, -1))
            d2phi = max(d2phi, float(np.sqrt(np.max(sq_p))))
            d2a = max(d2a, float(np.sqrt(np.max(sq_a))))
        return d2phi, d2a


def _block(origin, h, dims):
    axes = [origin[a] + (np.arange(dims[a]) + 0.5) * h for a in range(3)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack(g, axis=-1).reshape(-1, 3)


def nested_probe_set(half_width, levels, n=12, keep=5):
    """Nested cubes of ``n^3`` cell centres with half widths ``half_width * 2^k``.

    Quadrature weights skip the cells of level ``k`` already covered by level
    ``k - 1``, so the weights tile the outermost cube exactly once.
    """
    if n % 4 != 0 or n < 4:
        raise ValueError("probe cells per axis must be a positive multiple of 4")
    pts = []
    wts = []
    levs = []
    start = 0
    for k in range(int(levels)):
        L = half_width * 2.0**k
        h = 2.0 * L / n
        origin = np.full(3, -L)
        block = _block(origin, h, (n, n, n))
        w = np.full((n, n, n), h**3)
        if k > 0:
            q = n // 4
            w[q:n - q, q:n - q, q:n - q] = 0.0
        pts.append(block)
        wts.append(w.reshape(-1))
        levs.append(ProbeLevel(start, (n, n, n), h, origin))
        start += n**3
    return ProbeSet(np.vstack(pts), np.concatenate(wts), levs, keep=keep)


def grid_probe_set(origin, h, dims, keep=5):
    """Probes at the cell centres of one uniform grid, with ``h^3`` weights."""
    origin = np.asarray(origin, dtype=np.float64)
    pts = _block(origin, h, dims)
    return ProbeSet(pts, np.full(pts.shape[0], h**3), [ProbeLevel(0, tuple(dims), h, origin)], keep=keep)


# ---------------------------------------------------------------- E and B


class EMFields(NamedTuple):
    t: float
    e_long: np.ndarray
    e_trans: np.ndarray
    b: np.ndarray
    gauge_residual: np.ndarray


_STENCILS = {
    "central": (-1, (-0.5, 0.0, 0.5)),
    "forward": (0, (-1.5, 2.0, -0.5)),
    "backward": (-2, (0.5, -2.0, 1.5)),
    "forward2": (0, (-1.0, 1.0)),
    "backward2": (-1, (-1.0, 1.0)),
    "forward4": (0, (-11.0 / 6.0, 3.0, -1.5, 1.0 / 3.0)),
    "backward4": (-3, (-1.0 / 3.0, 1.5, -3.0, 11.0 / 6.0)),
}


def time_derivative(samples, dt, stencil="central"):
    """Weighted difference of the ``a`` arrays in ``samples`` (oldest first)."""
    _, coefs = _STENCILS[stencil]
    if len(samples) != len(coefs):
        raise HistoryError(f"stencil {stencil!r} needs {len(coefs)} samples, got {len(samples)}")
    out = np.zeros_like(samples[0])
    for c, s in zip(coefs, samples):
        if c != 0.0:
            out = out + c * s
    return out / dt


def history_window(probe_history, dt, at=None, stencil="central"):
    """Return ``(t, sample, window)``: the entry at ``at`` and the stencil's samples."""
    hist = list(probe_history.history) if isinstance(probe_history, ProbeSet) else list(probe_history)
    if stencil not in _STENCILS:
        raise ValueError(f"unknown stencil {stencil!r}")
    offset, coefs = _STENCILS[stencil]
    width = len(coefs)
    if len(hist) < width:
        raise HistoryError(f"need at least {width} stored steps, have {len(hist)}")
    if at is None:
        at = len(hist) - width - offset
    at = at % len(hist)
    lo = at + offset
    if lo < 0 or lo + width > len(hist):
        raise HistoryError("stencil reaches outside the stored history")
    window = hist[lo:lo + width]
    times = np.array([t for t, _ in window])
    if not np.allclose(np.diff(times), dt, rtol=1e-9, atol=1e-12 * max(1.0, abs(times[-1]))):
        raise HistoryError("stored probe samples are not spaced by dt")
    t, sample = hist[at]
    return t, sample, [s for _, s in window]


def em_fields_from_potentials(probe_history, dt, at=None, stencil="central"):
    """Electric and magnetic fields at the probes from the stored potentials.

    ``at`` indexes the history entry where the fields are wanted; it defaults
    to the newest entry the stencil can reach.  ``e_trans = -dA/dt`` uses the
    chosen finite-difference stencil in time.
    """
    t, sample, window = history_window(probe_history, dt, at, stencil)
    dadt = time_derivative([s.a for s in window], dt, stencil)
    return EMFields(t, -sample.grad_phi, -dadt, sample.curl_a, np.abs(sample.trace_a))
