"""Initial datum, marker sampling and support radii.

The datum is the separable bump

    f0(x, pi) = delta * (1 - |x/X|^2)_+^kappa * (1 - |pi/P|^2)_+^kappa

sampled by the midpoint rule on a tensor lattice over the cube enclosing the
two balls.  Markers carry the integral of f0 over their cell and never change
weight afterwards.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

LIGHT_SPEED = 1.0


class InvalidDatumError(ValueError):
    """Raised for a datum outside its admissible range; ``field`` names the offender."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class BumpDatum:
    delta: float
    x_radius: float = 1.0
    p_radius: float = 1.0
    kappa: int = 2

    def __post_init__(self):
        if not np.isfinite(self.delta) or self.delta < 0:
            raise InvalidDatumError("datum.delta", f"must be >= 0, got {self.delta}")
        if not np.isfinite(self.x_radius) or self.x_radius <= 0:
            raise InvalidDatumError("datum.x_radius", f"must be > 0, got {self.x_radius}")
        if not np.isfinite(self.p_radius) or self.p_radius <= 0:
            raise InvalidDatumError("datum.p_radius", f"must be > 0, got {self.p_radius}")
        if int(self.kappa) != self.kappa or self.kappa < 2:
            raise InvalidDatumError("datum.kappa", f"must be an integer >= 2, got {self.kappa}")

    def profile(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s < 1.0, np.clip(1.0 - s * s, 0.0, None) ** int(self.kappa), 0.0)

    def __call__(self, x, pi):
        """Datum value at points ``x`` and ``pi`` of shape (..., 3)."""
        rx = np.linalg.norm(np.asarray(x, dtype=float), axis=-1) / self.x_radius
        rp = np.linalg.norm(np.asarray(pi, dtype=float), axis=-1) / self.p_radius
        return self.delta * self.profile(rx) * self.profile(rp)


class Marker(NamedTuple):
    x: np.ndarray
    pi: np.ndarray
    w: float


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Ensemble:
    """Marker arrays: ``x`` and ``pi`` of shape (N, 3), weights ``w`` of shape (N,)."""

    x: np.ndarray
    pi: np.ndarray
    w: np.ndarray
    softening: float
    t: float = 0.0
    light_speed: float = LIGHT_SPEED
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = _frozen(np.reshape(self.x, (-1, 3)))
        pi = _frozen(np.reshape(self.pi, (-1, 3)))
        w = _frozen(np.reshape(self.w, (-1,)))
        if not (x.shape[0] == pi.shape[0] == w.shape[0]):
            raise ValueError("x, pi and w must have matching marker counts")
        if np.any(w < 0):
            raise ValueError("marker weights must be non-negative")
        if not self.softening > 0:
            raise ValueError(f"softening must be > 0, got {self.softening}")
        if self.light_speed != LIGHT_SPEED:
            raise ValueError("only c = 1 units are supported")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.w.shape[0]

    @property
    def markers(self):
        return tuple(Marker(self.x[k], self.pi[k], float(self.w[k])) for k in range(len(self)))

    def replace(self, **changes):
        kw = dict(x=self.x, pi=self.pi, w=self.w, softening=self.softening, t=self.t,
                  light_speed=self.light_speed, meta=self.meta)
        kw.update(changes)
        return Ensemble(**kw)

    def total_weight(self):
        return float(np.sum(self.w))


def _axis_counts(n_per_axis):
    if np.ndim(n_per_axis) == 0:
        n_x = n_p = int(n_per_axis)
    else:
        n_x, n_p = (int(v) for v in n_per_axis)
    if n_x < 2 or n_p < 2:
        raise ValueError(f"n_per_axis must be >= 2, got {n_per_axis}")
    return n_x, n_p


def _ball_lattice(n, radius):
    c = ((np.arange(n) + 0.5) / n * 2.0 - 1.0) * radius
    pts = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)
    return pts, 2.0 * radius / n


def _touches_ball(centers, side, radius):
    # a cell can hold points of the open ball only if its nearest point lies inside
    near = np.clip(np.abs(centers) - 0.5 * side, 0.0, None)
    return np.sum(near * near, axis=1) < radius * radius


def mean_spacing(x_bar, n_markers):
    """Mean inter-marker spacing of ``n_markers`` spread over a ball of radius ``x_bar``."""
    if n_markers <= 0 or x_bar <= 0:
        return 0.0
    return float((4.0 * np.pi / 3.0 * x_bar**3 / n_markers) ** (1.0 / 3.0))


def default_softening(datum, n_markers, factor=0.2):
    """``factor`` times the mean spacing of the initial cloud; never zero."""
    s = mean_spacing(datum.x_radius, n_markers)
    return factor * s if s > 0 else factor * datum.x_radius


def sample_bump(datum, n_per_axis, seed=0, jitter=False, softening=None, softening_factor=0.2):
    """Lattice (midpoint-rule) sampling of ``datum``.

    ``n_per_axis`` is either one count for all six axes or a pair
    ``(n_x, n_p)``.  With ``jitter`` each lattice point moves uniformly inside
    its own 6-D cell using ``seed`` and the weight is the datum at the moved
    point times the cell volume; the default is the deterministic midpoint
    lattice.
    """
    if not isinstance(datum, BumpDatum):
        raise TypeError("datum must be a BumpDatum")
    n_x, n_p = _axis_counts(n_per_axis)
    xs, side_x = _ball_lattice(n_x, datum.x_radius)
    ps, side_p = _ball_lattice(n_p, datum.p_radius)
    vol = side_x**3 * side_p**3
    if datum.delta == 0:
        x = np.zeros((0, 3))
        pi = np.zeros((0, 3))
        w = np.zeros(0)
    elif jitter:
        # every marker moves independently inside its own 6-D cell
        xs = xs[_touches_ball(xs, side_x, datum.x_radius)]
        ps = ps[_touches_ball(ps, side_p, datum.p_radius)]
        gx, gp = np.meshgrid(np.arange(len(xs)), np.arange(len(ps)), indexing="ij")
        rng = np.random.default_rng(seed)
        x = xs[gx.ravel()] + (rng.random((gx.size, 3)) - 0.5) * side_x
        pi = ps[gp.ravel()] + (rng.random((gp.size, 3)) - 0.5) * side_p
        w = datum(x, pi) * vol
    else:
        fx = datum.profile(np.linalg.norm(xs, axis=1) / datum.x_radius)
        fp = datum.profile(np.linalg.norm(ps, axis=1) / datum.p_radius)
        ix = np.flatnonzero(fx > 0)
        ip = np.flatnonzero(fp > 0)
        gx, gp = np.meshgrid(ix, ip, indexing="ij")
        x = xs[gx.ravel()]
        pi = ps[gp.ravel()]
        w = datum.delta * fx[gx.ravel()] * fp[gp.ravel()] * vol
    keep = w > 0
    x, pi, w = x[keep], pi[keep], w[keep]
    if softening is None:
        softening = default_softening(datum, max(len(w), 1), softening_factor)
    meta = {"n_x": n_x, "n_p": n_p, "jitter": bool(jitter), "seed": int(seed)}
    return Ensemble(x=x, pi=pi, w=w, softening=float(softening), t=0.0, meta=meta)


def radial_profile_integral(kappa, nodes=64):
    """``int_0^1 (1 - s^2)^kappa s^2 ds`` by Gauss-Legendre quadrature."""
    s, wq = np.polynomial.legendre.leggauss(nodes)
    s = 0.5 * (s + 1.0)
    return float(0.5 * np.sum(wq * (1.0 - s * s) ** kappa * s * s))


def datum_norms(datum):
    """Return ``(l1, linf)`` of the datum over phase space."""
    if datum.delta == 0:
        return 0.0, 0.0
    i = radial_profile_integral(int(datum.kappa))
    l1 = datum.delta * (4.0 * np.pi * datum.x_radius**3 * i) * (4.0 * np.pi * datum.p_radius**3 * i)
    return float(l1), float(datum.delta)


def datum_w1inf(datum, samples=2001):
    """``sup |f0| + sup |grad f0|`` over phase space (gradient in all six variables)."""
    if datum.delta == 0:
        return 0.0
    k = int(datum.kappa)
    s = np.linspace(0.0, 1.0, samples)
    g = (1.0 - s * s) ** k
    dg = 2.0 * k * s * (1.0 - s * s) ** (k - 1)
    gx = (dg[:, None] * g[None, :]) / datum.x_radius
    gp = (g[:, None] * dg[None, :]) / datum.p_radius
    grad = datum.delta * float(np.max(np.hypot(gx, gp)))
    return datum.delta + grad


def support_radii(ensemble):
    """Maxima of ``|x_k|`` and ``|pi_k|`` over markers with positive weight."""
    live = ensemble.w > 0
    if not np.any(live):
        return 0.0, 0.0
    x_bar = float(np.max(np.linalg.norm(ensemble.x[live], axis=1)))
    p_bar = float(np.max(np.linalg.norm(ensemble.pi[live], axis=1)))
    return x_bar, p_bar


def relativistic_velocity(g):
    """``v = g / sqrt(1 + |g|^2)`` for kinetic momenta ``g`` of shape (..., 3)."""
    g = np.asarray(g, dtype=np.float64)
    return g / np.sqrt(1.0 + np.sum(g * g, axis=-1, keepdims=True))
