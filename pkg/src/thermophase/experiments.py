"""Numerical experiments: refinement convergence study and the sintering run."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from .diagnostics import totals
from .fem import assembler, interpolate
from .mesh import build_uniform, refine
from .scheme import SolverConfig, Stepper, StepFailure, NewtonError, DomainError

__all__ = [
    "COLUMNS",
    "REFERENCE_TABLE",
    "ConvergenceTable",
    "ErrorAccumulator",
    "error_quantities",
    "eoc",
    "convergence_initial_data",
    "convergence_study",
    "AppliedConfig",
    "AppliedResult",
    "applied_initial_data",
    "applied_experiment",
    "SNAPSHOT_TIMES",
]

log = logging.getLogger(__name__)

COLUMNS = ("e", "rho", "theta", "eta", "mu_rho", "grad_theta", "mu_eta")

# Published reference errors for levels 0..5, columns in COLUMNS order.
REFERENCE_TABLE = {
    0: (4.66e-1, 3.08e-1, 9.32e-3, 9.29e-3, 8.44e-3, 1.31e-1, 2.94e-6),
    1: (2.74e-1, 2.13e-1, 8.03e-4, 5.00e-3, 3.92e-3, 5.15e-2, 1.02e-6),
    2: (8.97e-2, 7.29e-2, 5.55e-5, 1.50e-3, 1.20e-3, 1.41e-2, 1.62e-7),
    3: (2.69e-2, 2.26e-2, 3.64e-6, 3.99e-4, 3.47e-4, 3.60e-3, 2.49e-8),
    4: (7.89e-3, 6.79e-3, 2.75e-7, 1.02e-4, 9.46e-5, 9.04e-4, 4.08e-9),
    5: (2.19e-3, 1.91e-3, 3.53e-8, 2.58e-5, 2.53e-5, 2.26e-4, 8.93e-10),
}
REFERENCE_EOC = {
    1: (0.76, 0.53, 3.54, 0.89, 1.11, 1.34, 1.52),
    2: (1.61, 1.55, 3.86, 1.74, 1.70, 1.87, 2.66),
    3: (1.74, 1.69, 3.93, 1.91, 1.80, 1.97, 2.70),
    4: (1.77, 1.73, 3.73, 1.97, 1.86, 1.99, 2.50),
    5: (1.85, 1.83, 2.96, 1.99, 1.92, 2.00, 2.30),
}

T_FINAL = 0.16
SNAPSHOT_TIMES = (0.5, 1.5, 7.5, 10.0)


def eoc(errors):
    """log2 ratios of successive errors; the first entry is nan."""
    e = np.asarray(errors, dtype=float)
    out = np.full(e.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[1:] = np.log2(e[:-1] / e[1:])
    return out


@dataclass
class ConvergenceTable:
    """Squared errors per level; ``rows[k]`` maps column name to value."""

    h: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def add(self, h, tau, errors):
        missing = set(COLUMNS) - set(errors)
        if missing:
            raise ValueError(f"missing error columns {sorted(missing)}")
        self.h.append(float(h))
        self.tau.append(float(tau))
        self.rows.append({c: float(errors[c]) for c in COLUMNS})

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def eoc(self, name):
        return eoc(self.column(name))

    def header(self):
        cols = ["k", "h", "tau"]
        for c in COLUMNS:
            cols += [c, f"eoc_{c}"]
        return cols

    def records(self):
        eocs = {c: self.eoc(c) for c in COLUMNS}
        for k, row in enumerate(self.rows):
            vals = [k, self.h[k], self.tau[k]]
            for c in COLUMNS:
                vals += [row[c], eocs[c][k]]
            yield vals

    def to_csv(self):
        lines = [",".join(self.header())]
        for vals in self.records():
            lines.append(",".join([str(vals[0])] + [f"{v:.16e}" for v in vals[1:]]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        head = lines[0].split(",")
        table = cls()
        for ln in lines[1:]:
            d = dict(zip(head, ln.split(",")))
            table.add(float(d["h"]), float(d["tau"]), {c: float(d[c]) for c in COLUMNS})
        return table

    def to_text(self):
        titles = {"e": "e_h,tau", "rho": "e^rho", "theta": "e^theta", "eta": "e^eta",
                  "mu_rho": "e^mu_rho", "grad_theta": "e^grad_theta",
                  "mu_eta": "e^mu_eta"}
        head = f"{'k':>2}" + "".join(f" | {titles[c]:>12} {'eoc':>5}" for c in COLUMNS)
        out = [head, "-" * len(head)]
        eocs = {c: self.eoc(c) for c in COLUMNS}
        for k, row in enumerate(self.rows):
            line = f"{k:>2}"
            for c in COLUMNS:
                r = eocs[c][k]
                rs = "---" if np.isnan(r) else f"{r:.2f}"
                line += f" | {row[c]:>12.3e} {rs:>5}"
            out.append(line)
        return "\n".join(out) + "\n"


def _check_pair(coarse, fine):
    if fine.mesh.n != 2 * coarse.mesh.n:
        raise ValueError("fine mesh must have twice the resolution of the coarse mesh")
    if abs(fine.t - coarse.t) > 1e-12 * max(1.0, abs(coarse.t)):
        raise ValueError(f"time mismatch: coarse t={coarse.t}, fine t={fine.t}")


class ErrorAccumulator:
    """Streams coarse/fine state pairs at the coarse time nodes.

    ``update`` must be called at t^0 first and then at every coarse node;
    sup-in-time terms include t^0, L2-in-time terms use the values at the
    right end of every coarse interval with weight tau.
    """

    def __init__(self, prolongation, tau):
        self.P = prolongation
        self.tau = float(tau)
        self.fine_mesh = None
        self.calls = 0
        self.sup = dict(rho=0.0, theta=0.0, eta=0.0)
        self.l2 = dict(mu_rho=0.0, grad_theta=0.0, mu_eta=0.0)

    def _forms(self, mesh):
        if self.fine_mesh is not mesh:
            a = assembler(mesh)
            self.fine_mesh = mesh
            self.M, self.K = a.mass(), a.stiffness()

    def update(self, coarse, fine):
        _check_pair(coarse, fine)
        self._forms(fine.mesh)
        M, K, P = self.M, self.K, self.P

        def diff(name):
            return P(getattr(coarse, name)) - getattr(fine, name)

        def l2(d):
            return float(d @ (M @ d))

        def h1(d):
            return float(d @ (M @ d) + d @ (K @ d))

        d_r, d_t, d_e = diff("rho"), diff("theta"), diff("eta")
        self.sup["rho"] = max(self.sup["rho"], h1(d_r))
        self.sup["theta"] = max(self.sup["theta"], l2(d_t))
        self.sup["eta"] = max(self.sup["eta"], h1(d_e))
        if self.calls > 0:
            self.l2["mu_rho"] += self.tau * h1(diff("mu_rho"))
            self.l2["grad_theta"] += self.tau * h1(d_t)
            self.l2["mu_eta"] += self.tau * l2(diff("mu_eta"))
        self.calls += 1

    def result(self):
        out = dict(self.sup)
        out.update(self.l2)
        out["e"] = sum(out[c] for c in COLUMNS[1:])
        return {c: out[c] for c in COLUMNS}


def error_quantities(coarse_traj, fine_traj, prolongation, tau=None):
    """Seven squared errors between two stored trajectories.

    ``coarse_traj`` holds the states at every coarse node t^0..t^N; the fine
    trajectory holds either every fine step (2N + 1 states) or only the
    coarse nodes (N + 1 states).
    """
    nc = len(coarse_traj)
    if len(fine_traj) == 2 * nc - 1:
        fine_traj = fine_traj[::2]
    if len(fine_traj) != nc:
        raise ValueError(
            f"trajectory lengths {nc} and {len(fine_traj)} do not match")
    for c, f in zip(coarse_traj, fine_traj):
        _check_pair(c, f)
    if tau is None:
        if nc < 2:
            raise ValueError("tau is required for a single-node trajectory")
        tau = coarse_traj[1].t - coarse_traj[0].t
    fine_mesh = fine_traj[0].mesh
    a = assembler(fine_mesh)
    M, K = a.mass(), a.stiffness()
    P = prolongation.matrix

    def stack(traj, name):
        return np.array([getattr(s, name) for s in traj])

    def D(name):
        return stack(coarse_traj, name) @ P.T - stack(fine_traj, name)

    def l2(d):
        return np.einsum("ti,ti->t", d, (M @ d.T).T)

    def semi(d):
        return np.einsum("ti,ti->t", d, (K @ d.T).T)

    d_r, d_t, d_e = D("rho"), D("theta"), D("eta")
    d_mr, d_me = D("mu_rho")[1:], D("mu_eta")[1:]
    out = {
        "rho": float(np.max(l2(d_r) + semi(d_r))),
        "theta": float(np.max(l2(d_t))),
        "eta": float(np.max(l2(d_e) + semi(d_e))),
        "mu_rho": float(tau * np.sum(l2(d_mr) + semi(d_mr))),
        "grad_theta": float(tau * np.sum(l2(d_t[1:]) + semi(d_t[1:]))),
        "mu_eta": float(tau * np.sum(l2(d_me))),
    }
    out["e"] = sum(out[c] for c in COLUMNS[1:])
    return {c: out[c] for c in COLUMNS}


def convergence_initial_data(mesh):
    tp = 2 * np.pi
    rho = interpolate(lambda x, y: 0.5 + 0.01 * np.cos(tp * x) * np.cos(tp * y), mesh)
    theta = interpolate(lambda x, y: 1 + 0.6 * np.sin(tp * x) * np.sin(tp * y), mesh)
    return rho, theta, rho


def level_resolution(k, mesh_scale=2):
    """(n, tau) of refinement level k: h = 2^-(k+1), tau = 0.001 h.

    The mesh has ``mesh_scale`` cells per length h in each direction.
    """
    h = 2.0 ** -(k + 1)
    return mesh_scale * 2 ** (k + 1), 0.001 * h


def _trajectory(k, params, mobility, linear_solver, t_final, on_state, mesh_scale):
    n, tau = level_resolution(k, mesh_scale)
    mesh = build_uniform(n)
    cfg = SolverConfig(tau=tau, t_final=t_final, linear_solver=linear_solver)
    stepper = Stepper(mesh, params, mobility, cfg)
    state = stepper.initial_state(*convergence_initial_data(mesh))
    on_state(0, state)
    older = None
    for j in range(cfg.num_steps):
        try:
            new, _ = stepper.step(state, guess=stepper.predict(state, older))
        except (NewtonError, DomainError) as exc:
            raise RuntimeError(f"level {k} run failed") from StepFailure(j, exc)
        new.t = (j + 1) * tau
        on_state(j + 1, new)
        older, state = state, new
    return mesh


def _run_levels(first, last, params, mobility, linear_solver, t_final, mesh_scale,
                progress=None):
    """Errors of levels first..last from one chain of runs first..last+1.

    Each run after the first is compared with the stored trajectory of the
    previous one while it is computed, so at most one trajectory is kept.
    """
    rows = []
    prev = None              # (coarse trajectory, its tau, its mesh)
    for k in range(first, last + 2):
        keep = k <= last
        traj = []
        acc = None
        if prev is not None:
            ctraj, ctau, cmesh = prev
            acc = ErrorAccumulator(refine(cmesh)[1], ctau)

        def on_state(j, s):
            if keep:
                traj.append(s)
            if acc is not None and j % 2 == 0:
                acc.update(ctraj[j // 2], s)

        mesh = _trajectory(k, params, mobility, linear_solver, t_final, on_state,
                           mesh_scale)
        if acc is not None:
            rows.append((2.0 ** -k, level_resolution(k - 1)[1], acc.result()))
            if progress:
                progress(k - 1, rows[-1][2])
        prev = (traj, level_resolution(k, mesh_scale)[1], mesh) if keep else None
    return rows


def _one_level(args):
    return _run_levels(*args)[0]


def convergence_study(levels=3, params=None, mobility=None, linear_solver="lagged",
                      t_final=T_FINAL, progress=None, mesh_scale=2, workers=1):
    """Convergence table for levels 0..``levels``.

    Level k compares runs with h = 2^-(k+1) and h/2 on meshes with
    ``mesh_scale`` cells per h. With ``workers > 1`` every level runs its own
    coarse/fine pair in a separate process (twice the work, same numbers).
    """
    params = params or model.ModelParams()
    mobility = mobility or model.convergence_mobility()
    table = ConvergenceTable()
    if workers <= 1:
        rows = _run_levels(0, levels, params, mobility, linear_solver, t_final,
                           mesh_scale, progress)
    else:
        from concurrent.futures import ProcessPoolExecutor

        jobs = [(k, k, params, mobility, linear_solver, t_final, mesh_scale)
                for k in range(levels + 1)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_one_level, jobs))
    for h, tau, errors in rows:
        table.add(h, tau, errors)
    return table


# -- applied experiment -------------------------------------------------------

@dataclass(frozen=True)
class AppliedConfig:
    n: int = 64
    tau: float = 0.004
    t_final: float = 10.0
    snapshot_times: tuple = SNAPSHOT_TIMES
    linear_solver: str = "lagged"
    split_x: float = 0.35
    # tight enough that energy drift stays below 1e-9 over 2500 steps
    newton_rtol: float = 1e-12
    newton_atol: float = 1e-14


@dataclass
class AppliedResult:
    profile: str
    initial: object
    snapshots: dict
    records: list
    initial_totals: tuple


def _theta_profile(profile):
    tp = 2 * np.pi
    profiles = {
        "A": lambda x, y: np.ones_like(x),
        "B": lambda x, y: 1 + 0.6 * np.sin(tp * y),
        "C": lambda x, y: 1 - 0.6 * np.sin(tp * y),
    }
    if profile not in profiles:
        raise ValueError(f"unknown temperature profile {profile!r}; use A, B or C")
    return profiles[profile]


def applied_initial_data(mesh, profile, params=None, split_x=0.35):
    """Two touching grains: the small one left of ``split_x``, the large one right.

    The order parameter is 1 in the right grain and 0 in the left grain, so
    the grain indicator rho (2 eta - 1) is +1 and -1 there.
    """
    params = params or model.ModelParams()
    eps = math.sqrt(2 * params.gamma_rho)

    def rho0(x, y):
        w1 = np.hypot(x - 11 / 40, y - 0.5) - 0.1
        w2 = np.hypot(x - 5 / 8, y - 0.5) - 0.2
        return (1 - 0.5 * np.tanh(np.maximum(-w1, w2) / eps)
                - 0.5 * np.tanh(np.maximum(-w2, w1) / eps))

    def eta0(x, y):
        return 0.5 + 0.5 * rho0(x, y) * np.where(x >= split_x, 1.0, -1.0)

    return (interpolate(rho0, mesh), interpolate(_theta_profile(profile), mesh),
            interpolate(eta0, mesh))


def applied_experiment(profile, params=None, config=None, observer=None):
    """Run one temperature profile; returns snapshots and per-step diagnostics."""
    from .diagnostics import record

    params = params or model.ModelParams()
    config = config or AppliedConfig()
    _theta_profile(profile)
    mesh = build_uniform(config.n)
    L = model.applied_mobility()
    cfg = SolverConfig(tau=config.tau, t_final=config.t_final,
                       linear_solver=config.linear_solver,
                       newton_rtol=config.newton_rtol, newton_atol=config.newton_atol)
    nsteps = cfg.num_steps
    snap_steps = {}
    for t in config.snapshot_times:
        j = round(t / config.tau)
        if abs(j * config.tau - t) > 1e-12 * max(1.0, t) or not 0 <= j <= nsteps:
            raise ValueError(f"snapshot time {t} is not on the time grid")
        snap_steps[j] = t
    stepper = Stepper(mesh, params, L, cfg)
    state = stepper.initial_state(*applied_initial_data(mesh, profile, params,
                                                        config.split_x))
    result = AppliedResult(profile, state.copy(), {}, [], totals(state, params))
    if 0 in snap_steps:
        result.snapshots[snap_steps[0]] = state.copy()
    older = None
    for j in range(nsteps):
        try:
            new, rep = stepper.step(state, guess=stepper.predict(state, older))
        except (NewtonError, DomainError) as exc:
            raise StepFailure(j, exc) from exc
        new.t = (j + 1) * config.tau
        rec = record(state, new, config.tau, params, mesh, L, rep)
        result.records.append(rec)
        if observer is not None:
            observer(new, rep, rec)
        if j + 1 in snap_steps:
            result.snapshots[snap_steps[j + 1]] = new
        older, state = state, new
    return result
