"""Run drivers: time stepping with diagnostics, Picard iterates, life span and monitors."""
import dataclasses
import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .diagnostics import (
    SERIES_COLUMNS,
    RunRecord,
    deposit_grid,
    energy,
    norms_and_residuals,
    potential_bound_check,
    transversal_fields,
)
from .dynamics import FIELD_POLICIES, rk4_step
from .field_solver import (
    FieldNonConvergenceError,
    field_sources,
    nested_probe_set,
    solve_self_consistent_A,
)
from .grid import Grid3, layout_for
from .phase_space import BumpDatum, datum_norms, datum_w1inf, mean_spacing, sample_bump, support_radii

__all__ = [
    "InvalidConfigError",
    "ProbeSpec",
    "SolverSpec",
    "RunConfig",
    "RunState",
    "LifespanReport",
    "PicardReport",
    "FSReport",
    "lifespan_bound",
    "initial_ensemble",
    "iterate_run",
    "run_simulation",
    "run_picard",
    "fs_monitor",
    "softening_at",
    "make_probes",
]

SOFTENING_MODES = ("fixed", "adaptive")


class InvalidConfigError(ValueError):
    """A run setting violates its invariant; ``field`` is the dotted config path."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _require(ok, field_name, message):
    if not ok:
        raise InvalidConfigError(field_name, message)


@dataclass(frozen=True)
class ProbeSpec:
    """Nested probe cubes: ``levels`` cubes of ``cells^3`` points, half widths doubling."""

    half_width: Optional[float] = None
    levels: Optional[int] = None
    cells: int = 12

    def __post_init__(self):
        _require(self.half_width is None or self.half_width > 0, "probes.half_width", "must be > 0")
        _require(self.levels is None or int(self.levels) >= 1, "probes.levels", "must be >= 1")
        _require(int(self.cells) >= 4 and int(self.cells) % 4 == 0, "probes.cells",
                 "must be a positive multiple of 4")


@dataclass(frozen=True)
class SolverSpec:
    tol: Optional[float] = None
    damping: float = 1.0
    max_iter: int = 200

    def __post_init__(self):
        _require(self.tol is None or self.tol > 0, "solver.tol", "must be > 0")
        _require(0.0 < self.damping <= 1.0, "solver.damping", "must lie in (0, 1]")
        _require(int(self.max_iter) >= 1, "solver.max_iter", "must be >= 1")

    def kwargs(self):
        return {"tol": self.tol, "damping": self.damping, "max_iter": int(self.max_iter)}


@dataclass(frozen=True)
class RunConfig:
    datum: BumpDatum = field(default_factory=lambda: BumpDatum(0.01))
    n_per_axis: tuple = (5, 4)
    dt: float = 0.01
    t_final: float = 1.0
    softening: Optional[float] = None
    softening_mode: str = "fixed"
    softening_factor: float = 0.2
    h: Optional[float] = None
    jitter: bool = False
    seed: int = 0
    field_policy: str = "frozen"
    probes: ProbeSpec = field(default_factory=ProbeSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    beta: Optional[float] = None
    poisson: bool = False
    snapshot_every: int = 0
    abort_on_monitor: bool = False
    max_cells: int = 8_000_000

    def __post_init__(self):
        n = self.n_per_axis
        n = (int(n), int(n)) if np.ndim(n) == 0 else tuple(int(v) for v in n)
        _require(len(n) == 2 and min(n) >= 2, "n_per_axis", "must be >= 2 (one count or an (n_x, n_p) pair)")
        object.__setattr__(self, "n_per_axis", n)
        _require(self.dt > 0, "dt", "must be > 0")
        _require(self.t_final >= 0, "t_final", "must be >= 0")
        _require(self.softening is None or self.softening > 0, "softening", "must be > 0")
        _require(self.softening_mode in SOFTENING_MODES, "softening_mode", f"must be one of {SOFTENING_MODES}")
        _require(self.softening_factor > 0, "softening_factor", "must be > 0")
        _require(self.h is None or self.h > 0, "h", "must be > 0")
        _require(self.field_policy in FIELD_POLICIES, "field_policy", f"must be one of {FIELD_POLICIES}")
        _require(self.beta is None or self.beta > 0, "beta", "must be > 0")
        _require(int(self.snapshot_every) >= 0, "snapshot_every", "must be >= 0")
        _require(int(self.max_cells) >= 1, "max_cells", "must be >= 1")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def n_steps(self):
        return steps_for(self.t_final, self.dt)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["n_per_axis"] = list(self.n_per_axis)
        return d


def steps_for(t_final, dt):
    """Number of steps of size ``dt`` to reach ``t_final`` (rounding up, with slack)."""
    return int(math.ceil(t_final / dt - 1e-9)) if t_final > 0 else 0


# ---------------------------------------------------------------- life span


@dataclass(frozen=True)
class LifespanReport:
    c_f0: float
    t_star: float
    p_radius: float
    times: np.ndarray
    p_curve: np.ndarray

    def envelope(self, t):
        """``P(t) = P0 / (1 - c P0 t)``, infinite from ``t_star`` on."""
        t = np.asarray(t, dtype=float)
        if self.c_f0 == 0:
            return np.full(t.shape, self.p_radius)
        with np.errstate(divide="ignore"):
            val = self.p_radius / (1.0 - self.c_f0 * self.p_radius * t)
        return np.where(t < self.t_star, val, np.inf)


def lifespan_bound(datum, times=None, samples=200):
    """Momentum envelope and its blow-up time from the datum's ``L^1`` and ``L^inf`` norms.

    A zero datum has ``c_f0 = 0`` and ``t_star = inf``.
    """
    l1, linf = datum_norms(datum)
    c = 3.0 * (2.0 * np.pi) ** (2.0 / 3.0) * l1 ** (1.0 / 3.0) * linf ** (2.0 / 3.0)
    t_star = math.inf if c == 0 else 1.0 / (c * datum.p_radius)
    if times is None:
        end = t_star if math.isfinite(t_star) else 1.0
        times = np.linspace(0.0, end, samples, endpoint=False)
    times = np.asarray(times, dtype=float)
    rep = LifespanReport(float(c), float(t_star), float(datum.p_radius), times, np.zeros(0))
    return dataclasses.replace(rep, p_curve=rep.envelope(times))


# ---------------------------------------------------------------- setup


def initial_ensemble(config):
    eps = config.softening
    return sample_bump(
        config.datum, config.n_per_axis, seed=config.seed, jitter=config.jitter,
        softening=eps, softening_factor=config.softening_factor,
    )


def cloud_radius(ensemble):
    """Radius of the uniform ball with the same rms spread as the markers."""
    if len(ensemble) == 0:
        return 0.0
    x = ensemble.x - ensemble.x.mean(axis=0)
    return float(math.sqrt(5.0 / 3.0 * np.mean(np.sum(x * x, axis=1))))


def softening_at(config, ensemble):
    """Softening for the current state: fixed, or a fixed fraction of the mean spacing."""
    if config.softening_mode == "fixed" or len(ensemble) == 0:
        return ensemble.softening
    r = max(cloud_radius(ensemble), config.datum.x_radius)
    return config.softening_factor * mean_spacing(r, len(ensemble))


def _speed_bound(datum):
    p = datum.p_radius
    return min(1.0, 1.1 * p / math.sqrt(1.0 + p * p))


def make_probes(config, keep=3):
    probe_spec = config.probes
    L0 = probe_spec.half_width if probe_spec.half_width is not None else 1.25 * config.datum.x_radius
    levels = probe_spec.levels
    if levels is None:
        reach = config.datum.x_radius + _speed_bound(config.datum) * config.t_final
        levels = 1 + max(0, math.ceil(math.log2(max(reach / L0, 1.0))))
    return nested_probe_set(L0, int(levels), int(probe_spec.cells), keep=keep)


# ---------------------------------------------------------------- stepping


class RunState(NamedTuple):
    index: int
    ensemble: object
    self_field: object
    tracers: Optional[tuple]


def iterate_run(config, tracers=None, ensemble=None):
    """Yield the solved state at every step time ``k * dt``, ``k = 0..n_steps``."""
    ens = initial_ensemble(config) if ensemble is None else ensemble
    solver = config.solver.kwargs()
    sf = None
    n = config.n_steps
    for k in range(n + 1):
        eps = softening_at(config, ens)
        if eps != ens.softening:
            ens = ens.replace(softening=eps)
        sf = solve_self_consistent_A(ens, warm_start=sf, **solver)
        yield RunState(k, ens, sf, tracers)
        if k == n:
            break
        res = rk4_step(ens, config.dt, config.field_policy, self_field=sf, tracers=tracers, solver=solver)
        ens = res.ensemble.replace(t=(k + 1) * config.dt)
        tracers = res.tracers


class _Pending(NamedTuple):
    t: float
    row: dict
    extra: dict
    rho_at_probes: np.ndarray


def _frob(m):
    return np.sqrt(np.sum(m * m, axis=(-2, -1)))


class _Recorder:
    """Builds record rows; rows wait for the next probe sample so ``dA/dt`` is centred."""

    def __init__(self, config, record, sink=None):
        self.config = config
        self.record = record
        self.sink = sink
        self.probes = make_probes(config)
        self.pending = deque()
        self.samples = 0
        self.prev = None
        self.h0 = None
        self.beta = config.beta
        self.fail = None

    def observe(self, state):
        cfg = self.config
        ens, sf = state.ensemble, state.self_field
        srcs = field_sources(ens, sf)
        sample = srcs.evaluate(self.probes.points)
        self.probes.record(ens.t, sample)
        self.samples += 1

        h = cfg.h if cfg.h is not None else ens.softening
        extra_pts = None if self.prev is None else self.prev[0].x
        origin, dims = layout_for(ens.x, h, extra=extra_pts)
        rho, j = deposit_grid(ens, sf, h, layout=(origin, dims), max_cells=cfg.max_cells)
        if self.prev is None:
            res = norms_and_residuals(rho, j, ensemble=ens if cfg.poisson else None)
        else:
            rho_p, j_p = deposit_grid(self.prev[0], self.prev[1], h, layout=(origin, dims), max_cells=cfg.max_cells)
            j_mid = j.with_values(0.5 * (j.values + j_p.values))
            res = norms_and_residuals(rho, j, rho_p, j_mid, cfg.dt, ensemble=ens if cfg.poisson else None)
        self.prev = (ens, sf)

        live = ens.w > 0
        g = ens.pi - sf.a_at_markers
        x_bar, pi_bar = support_radii(ens)
        p_bar = float(np.max(np.linalg.norm(g[live], axis=1))) if np.any(live) else 0.0
        if len(ens):
            phi_m, _ = _kernels.scalar_sum(ens.x, ens.w, ens.x, ens.softening)
            ham = np.sqrt(1.0 + np.sum(g * g, axis=1)) + phi_m
        else:
            ham = np.zeros(0)
        if self.h0 is None:
            self.h0 = ham
        tw = ens.total_weight()
        h_drift = float(np.sum(ens.w * (ham - self.h0)) / tw) if tw > 0 else 0.0
        e_tot, e_kin, e_fld = energy(ens, sf, sample, self.probes.weights)
        d2phi, d2a = self.probes.second_derivative_sups(sample)
        sup_gphi = float(np.max(np.linalg.norm(sample.grad_phi, axis=1)))
        sup_ga = float(np.max(_frob(sample.grad_a)))
        sups = {
            "phi": float(np.max(np.abs(sample.phi))),
            "grad_phi": sup_gphi,
            "a": float(np.max(np.linalg.norm(sample.a, axis=1))),
            "grad_a": sup_ga,
        }
        margins = potential_bound_check(rho, j, sups)
        gauge = float(np.max(np.abs(sample.trace_a)))
        row = {
            "t": ens.t,
            "sup_rho": res.sup_rho,
            "sup_j": res.sup_j,
            "sup_grad_phi": sup_gphi,
            "sup_grad_a": sup_ga,
            "sup_d2phi": d2phi,
            "sup_d2a": d2a,
            "energy": e_tot,
            "gauge_residual": gauge,
            "continuity_residual": res.continuity_residual,
            "x_bar": x_bar,
            "p_bar": p_bar,
            "h_drift": h_drift,
        }
        extra = {
            "softening": ens.softening,
            "cell_h": h,
            "grid_cells": int(np.prod(dims)),
            "grid_expanded": int(bool(rho.meta.get("expanded", False))),
            "kinetic_energy": e_kin,
            "field_energy": e_fld,
            "total_weight": tw,
            "max_weight": float(ens.w.max()) if len(ens) else 0.0,
            "pi_bar": pi_bar,
            "sup_phi": sups["phi"],
            "sup_a": sups["a"],
            "gauge_ratio": gauge / (ens.softening * sup_ga) if sup_ga > 0 else 0.0,
            "solve_iterations": sf.iterations,
            "solve_residual": sf.residual,
            "poisson_residual": res.poisson_residual,
        }
        for k, v in margins.items():
            extra[f"margin_{k}"] = v
        self.pending.append(_Pending(ens.t, row, extra, rho.sample(self.probes.points)))
        if cfg.snapshot_every and state.index % int(cfg.snapshot_every) == 0 and self.sink is not None:
            self.sink.snapshot(state.index, ens, sf)
        self._flush()

    def _time_part(self, pend, stencil, pos):
        l2_dx, l2_rho, em, _ = transversal_fields(
            self.probes, pend.rho_at_probes, self.config.dt, at=pos, stencil=stencil
        )
        return {
            "sup_dtA": float(np.max(np.linalg.norm(em.e_trans, axis=1))),
            "l2_dtdxA": l2_dx,
            "l2_sqrtrho_dtA": l2_rho,
        }

    def _flush(self, final=False):
        # samples 0..S-1 exist, the history holds the newest ones and rows
        # R..S-1 wait; row R needs samples R-1..R+1 (one-sided at the ends)
        S = self.samples
        first = S - len(self.probes.history)
        while self.pending:
            R = len(self.record)
            pend = self.pending[0]
            if R == 0 and S >= 3:
                stencil = "forward"
            elif 0 < R < S - 1:
                stencil = "central"
            elif not final:
                return
            elif S == 1:
                stencil = None
            elif S == 2:
                stencil = "forward2" if R == 0 else "backward2"
            else:
                stencil = "backward"
            if stencil is None:
                part = {"sup_dtA": 0.0, "l2_dtdxA": 0.0, "l2_sqrtrho_dtA": 0.0}
            else:
                part = self._time_part(pend, stencil, R - first)
            self._emit(pend, part)

    def _emit(self, pend, part):
        row = dict(pend.row)
        row.update(part)
        s1 = row["sup_dtA"] + row["sup_grad_a"] + row["sup_grad_phi"]
        s2 = row["sup_d2a"] + row["sup_d2phi"]
        if self.beta is None:
            self.beta = 2.0 * max(s1, s2)
            self.record.meta["beta"] = self.beta
            self.record.meta["beta_calibrated"] = True
        tt = 1.0 + row["t"]
        row["fs_ok_1"] = int(s1 <= self.beta * tt**-1.5)
        row["fs_ok_2"] = int(s2 <= self.beta * tt**-2.5)
        self.pending.popleft()
        self.record.append(row, pend.extra)
        if self.sink is not None:
            self.sink.row(self.record.rows[-1], self.record.extras[-1])
        if self.config.abort_on_monitor and not (row["fs_ok_1"] and row["fs_ok_2"]):
            self.fail = f"free-streaming condition failed at t={row['t']}"

    def finish(self):
        self._flush(final=True)


def run_simulation(config, sink=None, ensemble=None):
    """Full run with one record row per step time; rows are passed to ``sink`` as they finish.

    Field non-convergence stops the run and flags the returned record.
    """
    record = RunRecord(meta={"config": config.to_dict(), "w1inf": datum_w1inf(config.datum)})
    rec = _Recorder(config, record, sink)
    try:
        for state in iterate_run(config, ensemble=ensemble):
            rec.observe(state)
            if rec.fail:
                record.aborted = True
                record.abort_reason = rec.fail
                break
    except FieldNonConvergenceError as exc:
        record.aborted = True
        record.abort_reason = f"field non-convergence: {exc}"
        record.meta["nonconvergence"] = True
    rec.finish()
    if sink is not None:
        sink.close(record)
    return record


# ---------------------------------------------------------------- Picard


@dataclass
class PicardReport:
    """Sup trajectory differences between successive Picard iterates."""

    differences: list
    times: np.ndarray
    trajectories: np.ndarray
    t_star: float
    dt: float

    def __iter__(self):
        return iter(self.differences)

    def __len__(self):
        return len(self.differences)

    def __getitem__(self, i):
        return self.differences[i]

    def ratios(self, floor=1e-12):
        """Successive ratios, skipping pairs whose difference has reached ``floor``."""
        d = [v for _, v in self.differences]
        return [d[i + 1] / d[i] for i in range(len(d) - 1) if d[i] > floor and d[i + 1] > floor]


def _integrate(ens0, times, fields_at, dt):
    """RK4 through fields given at the sample times, linear in time in between."""
    traj = np.empty((len(times), len(ens0), 6))
    ens = ens0
    traj[0] = np.hstack([ens.x, ens.pi])
    for m in range(len(times) - 1):
        f0, f1 = fields_at(m), fields_at(m + 1)
        tm = times[m]

        def field_fn(pts, t, f0=f0, f1=f1, tm=tm):
            lam = (t - tm) / dt
            if lam <= 0.0 or f1 is f0:
                return f0.evaluate(pts)
            if lam >= 1.0:
                return f1.evaluate(pts)
            a, b = f0.evaluate(pts), f1.evaluate(pts)
            return type(a)(*[(1.0 - lam) * u + lam * v for u, v in zip(a, b)])

        ens = rk4_step(ens, dt, field_fn=field_fn).ensemble.replace(t=times[m + 1])
        traj[m + 1] = np.hstack([ens.x, ens.pi])
    return traj


def run_picard(config, n_iterates, t_bar, ensemble=None):
    """Picard iterates of the characteristic flow on ``[0, t_bar]``.

    Iterate 0 streams the markers in the frozen fields of the datum; iterate
    ``n + 1`` moves them in the fields generated by iterate ``n``.  The
    difference of iterate ``n`` is the sup over markers and sample times of
    the phase-space distance to iterate ``n - 1``.
    """
    life = lifespan_bound(config.datum)
    if not 0.0 <= t_bar < life.t_star:
        raise ValueError(f"t_bar = {t_bar} must lie in [0, t_star = {life.t_star})")
    if int(n_iterates) < 1:
        raise ValueError("n_iterates must be >= 1")
    steps = max(1, int(math.ceil(t_bar / config.dt - 1e-9)))
    dt = t_bar / steps if t_bar > 0 else config.dt
    times = np.arange(steps + 1) * dt
    ens0 = initial_ensemble(config) if ensemble is None else ensemble
    ens0 = ens0.replace(softening=softening_at(config, ens0))
    solver = config.solver.kwargs()
    sf0 = solve_self_consistent_A(ens0, **solver)
    frozen = field_sources(ens0, sf0)
    traj = _integrate(ens0, times, lambda m: frozen, dt)
    diffs = []
    for n in range(1, int(n_iterates) + 1):
        sources = []
        sf = sf0
        for m, t in enumerate(times):
            ens = ens0.replace(x=traj[m, :, :3], pi=traj[m, :, 3:], t=t)
            ens = ens.replace(softening=softening_at(config, ens))
            sf = solve_self_consistent_A(ens, warm_start=sf, **solver)
            sources.append(field_sources(ens, sf))
        new = _integrate(ens0, times, lambda m: sources[m], dt)
        diff = float(np.max(np.linalg.norm(new - traj, axis=2))) if new.size else 0.0
        diffs.append((n, diff))
        traj = new
    return PicardReport(diffs, times, traj, life.t_star, dt)


# ---------------------------------------------------------------- monitors


@dataclass(frozen=True)
class FSReport:
    beta: float
    t: np.ndarray
    ok_first: np.ndarray
    ok_second: np.ndarray
    within_lifespan: np.ndarray
    p_envelope_ok: np.ndarray
    p_unit_ok: np.ndarray

    @property
    def all_ok(self):
        return bool(np.all(self.ok_first) and np.all(self.ok_second))

    @property
    def continuation_ok(self):
        return bool(np.all(self.p_envelope_ok[self.within_lifespan]) and np.all(self.p_unit_ok))


def calibrate_beta(record, factor=2.0):
    """``factor`` times the larger of the two free-streaming sums at the first row."""
    r = record.rows[0]
    s1 = r["sup_dtA"] + r["sup_grad_a"] + r["sup_grad_phi"]
    s2 = r["sup_d2a"] + r["sup_d2phi"]
    return factor * max(s1, s2)


def fs_monitor(record, beta=None, datum=None):
    """Free-streaming verdicts per row and the momentum continuation report.

    ``beta`` defaults to the record's calibrated value (or a fresh
    calibration).  The momentum support is compared with the life-span
    envelope for ``t < t_star`` and with ``P0 + 1`` everywhere.
    """
    if beta is None:
        beta = record.meta.get("beta")
    if beta is None:
        beta = calibrate_beta(record)
    t = record.t
    s1 = record.column("sup_dtA") + record.column("sup_grad_a") + record.column("sup_grad_phi")
    s2 = record.column("sup_d2a") + record.column("sup_d2phi")
    ok1 = s1 <= beta * (1.0 + t) ** -1.5
    ok2 = s2 <= beta * (1.0 + t) ** -2.5
    if datum is None:
        cfg = record.meta.get("config", {})
        datum = BumpDatum(**cfg["datum"]) if "datum" in cfg else None
    p = record.column("p_bar")
    if datum is None:
        inside = np.zeros(t.shape, dtype=bool)
        env_ok = np.ones(t.shape, dtype=bool)
        unit_ok = np.ones(t.shape, dtype=bool)
    else:
        life = lifespan_bound(datum)
        inside = t < life.t_star
        env_ok = p <= life.envelope(t)
        unit_ok = p <= datum.p_radius + 1.0
    return FSReport(float(beta), t, ok1, ok2, inside, env_ok, unit_ok)
