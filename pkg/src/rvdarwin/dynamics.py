"""Characteristics in the generalized variables ``(x, pi)`` and their integrator.

With ``g = pi - A`` the velocity is ``v = g / sqrt(1 + |g|^2)`` and the
characteristics read

    x' = v,    pi' = -grad phi + (grad A)^T v

which is the Hamiltonian flow of ``H = sqrt(1 + |pi - A|^2) + phi``.
"""
import warnings
from typing import NamedTuple, Optional

import numpy as np

from .field_solver import FieldSample, field_sources, solve_self_consistent_A
from .phase_space import relativistic_velocity

__all__ = [
    "VelocityJet",
    "RhsSample",
    "StepResult",
    "JacobianResult",
    "ExtrapolationWarning",
    "velocity_jet",
    "hamiltonian",
    "characteristic_rhs",
    "rk4_step",
    "step",
    "bundle_offsets",
    "bundle_jacobians",
    "flow_jacobians",
]

FIELD_POLICIES = ("frozen", "per-stage")


class ExtrapolationWarning(UserWarning):
    pass


class VelocityJet(NamedTuple):
    v: np.ndarray
    dv: np.ndarray
    g: np.ndarray


class RhsSample(NamedTuple):
    x_dot: np.ndarray
    pi_dot: np.ndarray


def velocity_jet(pi, a):
    """Velocity and its momentum derivative ``dv = (id - v v^T) / sqrt(1 + |g|^2)``.

    Works on single vectors or stacks of shape (..., 3).  Derivatives in
    ``x`` and ``t`` follow by the chain rule: ``d v = -dv . d A``.
    """
    g = np.asarray(pi, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    gamma = np.sqrt(1.0 + np.sum(g * g, axis=-1))
    v = g / gamma[..., None]
    dv = (np.eye(3) - v[..., :, None] * v[..., None, :]) / gamma[..., None, None]
    return VelocityJet(v, dv, g)


def hamiltonian(pi, a, phi):
    g = np.asarray(pi, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    return np.sqrt(1.0 + np.sum(g * g, axis=-1)) + phi


def _rhs(pi, field):
    v = relativistic_velocity(pi - field.a)
    # (grad A)^T v with grad_a[..., i, k] = d_k A_i
    pi_dot = -field.grad_phi + np.einsum("...ik,...i->...k", field.grad_a, v)
    return v, pi_dot


def characteristic_rhs(marker, field):
    """Right-hand side at one marker (or a stack of momenta) for a field sample."""
    pi = marker.pi if hasattr(marker, "pi") else marker
    v, pi_dot = _rhs(np.asarray(pi, dtype=np.float64), field)
    return RhsSample(v, pi_dot)


class StepResult(NamedTuple):
    ensemble: object
    tracers: Optional[tuple]
    self_field: object
    solves: int


def _stage_fields(evaluate, x, tracer_x):
    if tracer_x is None:
        return evaluate(x), None
    both = evaluate(np.vstack([x, tracer_x]))
    n = x.shape[0]
    return both.take(slice(0, n)), both.take(slice(n, None))


def rk4_step(ensemble, dt, field_policy="frozen", self_field=None, tracers=None,
             field_fn=None, solver=None):
    """Classical RK4 step of markers and optional passive ``tracers = (x, pi)``.

    ``frozen`` keeps the sources from the start of the step (positions,
    weights and currents) and evaluates them at the stage positions;
    ``per-stage`` re-solves the vector potential for each stage state.
    ``field_fn(points, t)`` replaces the self-consistent field entirely.
    ``self_field`` (when current) is used as is, otherwise it warm-starts
    the solve.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if field_policy not in FIELD_POLICIES:
        raise ValueError(f"field policy must be one of {FIELD_POLICIES}, got {field_policy!r}")
    solver = dict(solver or {})
    t0 = ensemble.t
    solves = 0
    x0 = np.array(ensemble.x)
    p0 = np.array(ensemble.pi)
    tx0 = tp0 = None
    if tracers is not None:
        tx0 = np.asarray(tracers[0], dtype=np.float64).reshape(-1, 3)
        tp0 = np.asarray(tracers[1], dtype=np.float64).reshape(-1, 3)

    current = None
    if field_fn is None:
        if self_field is not None and self_field.time == t0 and self_field.a_at_markers.shape[0] == len(ensemble):
            current = self_field
        else:
            current = solve_self_consistent_A(ensemble, warm_start=self_field, **solver)
            solves += 1
        frozen = field_sources(ensemble, current)

    def evaluate_at(t, x, pi):
        nonlocal current, solves
        if field_fn is not None:
            return lambda pts: field_fn(pts, t)
        if field_policy == "frozen" or t == t0:
            return frozen.evaluate
        stage = ensemble.replace(x=x, pi=pi, t=t)
        sf = solve_self_consistent_A(stage, warm_start=current, **solver)
        solves += 1
        return field_sources(stage, sf).evaluate

    def deriv(t, x, pi, tx, tp):
        f_m, f_t = _stage_fields(evaluate_at(t, x, pi), x, tx)
        v, pd = _rhs(pi, f_m)
        if tx is None:
            return v, pd, None, None
        tv, tpd = _rhs(tp, f_t)
        return v, pd, tv, tpd

    def axpy(base, k, c):
        return None if base is None else base + c * k

    h = float(dt)
    k1 = deriv(t0, x0, p0, tx0, tp0)
    s2 = [axpy(b, k, 0.5 * h) for b, k in zip((x0, p0, tx0, tp0), k1)]
    k2 = deriv(t0 + 0.5 * h, *s2)
    s3 = [axpy(b, k, 0.5 * h) for b, k in zip((x0, p0, tx0, tp0), k2)]
    k3 = deriv(t0 + 0.5 * h, *s3)
    s4 = [axpy(b, k, h) for b, k in zip((x0, p0, tx0, tp0), k3)]
    k4 = deriv(t0 + h, *s4)

    def combine(b, i):
        if b is None:
            return None
        return b + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])

    x1, p1, tx1, tp1 = (combine(b, i) for i, b in enumerate((x0, p0, tx0, tp0)))
    new = ensemble.replace(x=x1, pi=p1, t=t0 + h)
    return StepResult(new, None if tx1 is None else (tx1, tp1), current, solves)


def step(ensemble, dt, field_policy="frozen", **kwargs):
    """Advance the ensemble by one RK4 step; weights are carried unchanged."""
    return rk4_step(ensemble, dt, field_policy, **kwargs).ensemble


# ---------------------------------------------------------------- Jacobians


class JacobianResult(NamedTuple):
    vol_det: np.ndarray
    disp_det: np.ndarray
    t: float
    warnings: tuple = ()


def bundle_offsets(x_scale, p_scale, rel_step=1e-4):
    """Offsets of the 13-point bundle: centre, then +/- along x1..x3, pi1..pi3."""
    hs = np.array([x_scale] * 3 + [p_scale] * 3) * rel_step
    off = np.zeros((13, 6))
    for a in range(6):
        off[1 + 2 * a, a] = hs[a]
        off[2 + 2 * a, a] = -hs[a]
    return off, hs


def _bundle_matrix(states, hs):
    states = np.asarray(states, dtype=np.float64)
    jac = np.empty(states.shape[:1] + (6, 6))
    for a in range(6):
        jac[:, :, a] = (states[:, 1 + 2 * a] - states[:, 2 + 2 * a]) / (2.0 * hs[a])
    return jac


def _determinants(jac):
    return np.linalg.det(jac), np.linalg.det(jac[:, :3, 3:])


def bundle_jacobians(states, hs):
    """Determinants from bundle end states of shape (P, 13, 6)."""
    return _determinants(_bundle_matrix(states, hs))


def flow_jacobians(config, datum, probe_points, t_final, rel_step=1e-4, region=None, extrapolate=False):
    """Phase-space and dispersion Jacobian determinants along given characteristics.

    Each probe ``(x, pi)`` is integrated together with its 12 displaced
    neighbours as passive tracers of a full run configured by ``config``.
    ``region`` (a radius) marks where the field is trusted; bundles leaving
    it produce an :class:`ExtrapolationWarning`.

    ``extrapolate=True`` adds a second bundle at twice the step and combines
    the two difference quotients so the Jacobian is fourth order in the step.
    The truncation floor of the plain bundle (about ``rel_step**2``) then no
    longer hides the time-integration error.
    """
    from .simulation import iterate_run

    probes = np.asarray(probe_points, dtype=np.float64).reshape(-1, 6)
    off, hs = bundle_offsets(datum.x_radius, datum.p_radius, rel_step)
    width = 13
    if extrapolate:
        off = np.vstack([off, 2.0 * off[1:]])
        width = 25
    start = (probes[:, None, :] + off[None, :, :]).reshape(-1, 6)
    cfg = config.replace(datum=datum, t_final=float(t_final))
    state = None
    for state in iterate_run(cfg, tracers=(start[:, :3], start[:, 3:])):
        pass
    end = np.hstack(state.tracers).reshape(probes.shape[0], width, 6)
    jac = _bundle_matrix(end[:, :13], hs)
    if extrapolate:
        wide = _bundle_matrix(np.concatenate([end[:, :1], end[:, 13:]], axis=1), 2.0 * hs)
        jac = (4.0 * jac - wide) / 3.0
    vol, disp = _determinants(jac)
    notes = []
    if region is not None:
        far = np.linalg.norm(end[..., :3], axis=-1).max(axis=1) > region
        if np.any(far):
            msg = f"{int(far.sum())} bundle(s) left the resolved region of radius {region}"
            warnings.warn(msg, ExtrapolationWarning, stacklevel=2)
            notes.append(msg)
    return JacobianResult(vol, disp, state.ensemble.t, tuple(notes))
