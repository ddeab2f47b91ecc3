"""Command-line driver, run configuration and file formats.

Config files are flat ``key = value`` lines grouped under optional
``[run]``, ``[model]`` and ``[solver]`` headers, with ``#`` comments.
Every omitted key takes its documented default; an empty file gives the
convergence-test setup.
"""

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import experiments, model
from .diagnostics import DiagnosticsRecord, totals
from .mesh import build_uniform
from .scheme import SolverConfig, Stepper, State, StepFailure, run

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_config",
    "serialize_config",
    "write_diagnostics",
    "read_diagnostics",
    "write_snapshot",
    "read_snapshot",
    "main",
]

DIAG_HEADER = ("t", "mass", "energy", "entropy", "dissipation", "numdiss",
               "newton_iters", "residual")
SNAP_COLUMNS = ("x", "y", "rho", "theta", "eta", "mu_rho", "mu_eta", "grain")


class ConfigError(ValueError):
    def __init__(self, message, line=None, key=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.message = message
        self.line = line
        self.key = key


def _float_tuple(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(float(v) for v in text.split(","))


_MODEL_KEYS = ("gamma_rho", "gamma_eta", "c1", "c2", "d1", "d2", "alpha", "lam",
               "theta_min", "theta_max")

# key -> (section, parser)
_KEYS = {
    "kind": ("run", str),
    "n": ("run", int),
    "tau": ("run", float),
    "t_final": ("run", float),
    "mobility": ("run", str),
    "initial": ("run", str),
    "levels": ("run", int),
    "mesh_scale": ("run", int),
    "snapshot_times": ("run", _float_tuple),
    "out": ("run", str),
    "format": ("run", str),
    **{k: ("model", float) for k in _MODEL_KEYS},
    "newton_rtol": ("solver", float),
    "newton_atol": ("solver", float),
    "max_newton_iters": ("solver", int),
    "linear_solver": ("solver", str),
    "linear_tol": ("solver", float),
}

# defaults that change with the experiment kind
_APPLIED_DEFAULTS = dict(n=64, tau=0.004, t_final=10.0, mobility="applied",
                         initial="A", snapshot_times=experiments.SNAPSHOT_TIMES,
                         newton_rtol=1e-12, newton_atol=1e-14)


@dataclass(frozen=True)
class RunConfig:
    kind: str = "single"                 # single | converge | applied
    n: int = 8
    tau: float = 0.00025
    t_final: float = 0.16
    mobility: str = "convergence"        # convergence | applied
    initial: str = "convergence"         # convergence | A | B | C
    levels: int = 3
    mesh_scale: int = 2
    snapshot_times: tuple = None         # default: (t_final,)
    out: str = "out"
    format: str = "grid-csv"             # grid-csv | vtk
    params: model.ModelParams = field(default_factory=model.ModelParams)
    newton_rtol: float = 1e-10
    newton_atol: float = 1e-12
    max_newton_iters: int = 50
    linear_solver: str = "lagged"
    linear_tol: float = 1e-12

    def __post_init__(self):
        if self.snapshot_times is None:
            object.__setattr__(self, "snapshot_times", (float(self.t_final),))
        checks = [
            (self.kind in ("single", "converge", "applied"), "kind",
             "kind must be single, converge or applied"),
            (self.n >= 2, "n", "n must be at least 2"),
            (self.tau > 0, "tau", "tau must be positive"),
            (self.t_final >= 0, "t_final", "t_final must be nonnegative"),
            (self.mobility in ("convergence", "applied"), "mobility",
             "mobility must be convergence or applied"),
            (self.initial in ("convergence", "A", "B", "C"), "initial",
             "initial must be convergence, A, B or C"),
            (self.levels >= 0, "levels", "levels must be nonnegative"),
            (self.mesh_scale >= 1, "mesh_scale", "mesh_scale must be positive"),
            (self.format in ("grid-csv", "vtk"), "format",
             "format must be grid-csv or vtk"),
            (self.linear_solver in ("direct", "lagged", "iterative"), "linear_solver",
             "linear_solver must be direct, lagged or iterative"),
            (self.newton_rtol > 0 and self.newton_atol > 0, "newton_rtol",
             "Newton tolerances must be positive"),
            (self.max_newton_iters >= 1, "max_newton_iters",
             "max_newton_iters must be positive"),
        ]
        for ok, key, msg in checks:
            if not ok:
                raise ConfigError(msg, key=key)
        try:
            self.solver_config()
        except ValueError as exc:
            raise ConfigError(str(exc), key="t_final") from None
        for t in self.snapshot_times:
            j = round(t / self.tau)
            if abs(j * self.tau - t) > 1e-12 or t > self.t_final + 1e-12 or t < 0:
                raise ConfigError(f"snapshot time {t!r} is not on the time grid",
                                  key="snapshot_times")

    def solver_config(self):
        cfg = SolverConfig(tau=self.tau, t_final=self.t_final,
                           newton_rtol=self.newton_rtol, newton_atol=self.newton_atol,
                           max_newton_iters=self.max_newton_iters,
                           linear_solver=self.linear_solver, linear_tol=self.linear_tol)
        cfg.num_steps
        return cfg

    def mobility_matrix(self):
        if self.mobility == "applied":
            return model.applied_mobility()
        return model.convergence_mobility()


def parse_config(text, default_kind="single"):
    """Parse config text into a validated ``RunConfig``.

    ``default_kind`` applies when the text has no ``kind`` entry; it selects
    the defaults of the omitted keys.

    Errors (unknown key, bad value, violated invariant) raise ``ConfigError``
    carrying the line number of the offending entry.
    """
    values, lines = {}, {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", lineno)
            section = line[1:-1].strip()
            if section not in ("run", "model", "solver"):
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        sect, conv = _KEYS[key]
        if section is not None and section != sect:
            raise ConfigError(f"key {key!r} belongs in section [{sect}]", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        if key == "lam" and value.lower() == "none":
            parsed = None
        else:
            try:
                parsed = conv(value)
            except ValueError:
                raise ConfigError(
                    f"{key} expects {getattr(conv, '__name__', 'a value')}, "
                    f"got {value!r}", lineno) from None
            if isinstance(parsed, float) and not math.isfinite(parsed):
                raise ConfigError(f"{key} must be finite", lineno)
        values[key] = parsed
        lines[key] = lineno

    kind = values.setdefault("kind", default_kind)
    if kind == "applied":
        for k, v in _APPLIED_DEFAULTS.items():
            values.setdefault(k, v)
    mkeys = {k: values.pop(k) for k in _MODEL_KEYS if k in values}
    try:
        params = model.ModelParams(**mkeys)
    except ValueError as exc:
        bad = next((k for k in mkeys if k in str(exc)), None) or next(iter(mkeys), None)
        raise ConfigError(str(exc), lines.get(bad)) from None
    try:
        return RunConfig(params=params, **values)
    except ConfigError as exc:
        line = lines.get(exc.key)
        if line is None and exc.key == "t_final":
            line = lines.get("tau")
        raise ConfigError(exc.message, line, exc.key) from None


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, tuple):
        return ", ".join(f"{x:.17g}" for x in v)
    if v is None:
        return "none"
    return str(v)


def serialize_config(cfg):
    """Config text with every key explicit (floats to 17 significant digits)."""
    out = []
    for sect in ("run", "model", "solver"):
        out.append(f"[{sect}]")
        for key, (s, _) in _KEYS.items():
            if s != sect:
                continue
            v = getattr(cfg.params, key) if sect == "model" else getattr(cfg, key)
            out.append(f"{key} = {_fmt(v)}")
        out.append("")
    return "\n".join(out)


# -- diagnostics files ----------------------------------------------------------

def write_diagnostics(records, path):
    with open(path, "w", newline="") as f:
        f.write(",".join(DIAG_HEADER) + "\n")
        for r in records:
            vals = []
            for name in DIAG_HEADER:
                v = getattr(r, name)
                vals.append(str(int(v)) if name == "newton_iters" else f"{v:.16e}")
            f.write(",".join(vals) + "\n")


def read_diagnostics(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != DIAG_HEADER:
        raise ValueError(f"{path}: not a diagnostics file")
    out = []
    for row in rows[1:]:
        d = dict(zip(DIAG_HEADER, row))
        out.append(DiagnosticsRecord(**{k: int(v) if k == "newton_iters" else float(v)
                                        for k, v in d.items()}))
    return out


# -- snapshots ------------------------------------------------------------------

def _snapshot_columns(state):
    m = state.mesh
    return {
        "x": m.nodes[:, 0], "y": m.nodes[:, 1], "rho": state.rho,
        "theta": state.theta, "eta": state.eta, "mu_rho": state.mu_rho,
        "mu_eta": state.mu_eta, "grain": state.rho * (2 * state.eta - 1),
    }


def write_snapshot(state, path, format="grid-csv"):
    cols = _snapshot_columns(state)
    n = state.mesh.n
    if format == "grid-csv":
        with open(path, "w") as f:
            f.write(",".join(SNAP_COLUMNS) + "\n")
            data = np.column_stack([cols[c] for c in SNAP_COLUMNS])
            for row in data:
                f.write(",".join(f"{v:.16e}" for v in row) + "\n")
    elif format in ("vtk", "vtk-legacy"):
        N = n * n
        with open(path, "w") as f:
            f.write("# vtk DataFile Version 3.0\n")
            f.write(f"thermophase snapshot t={state.t:.17g}\n")
            f.write("ASCII\nDATASET STRUCTURED_GRID\n")
            f.write(f"DIMENSIONS {n} {n} 1\n")
            f.write(f"POINTS {N} double\n")
            for x, y in zip(cols["x"], cols["y"]):
                f.write(f"{x:.16e} {y:.16e} 0\n")
            f.write(f"POINT_DATA {N}\n")
            for name in SNAP_COLUMNS[2:]:
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                f.write("\n".join(f"{v:.16e}" for v in cols[name]) + "\n")
    else:
        raise ValueError(f"unknown snapshot format {format!r}")


def read_snapshot(path, t=0.0):
    """Read a snapshot written by ``write_snapshot`` back into a ``State``."""
    with open(path) as f:
        text = f.read()
    if text.startswith("# vtk"):
        t = float(text.splitlines()[1].split("t=")[1])
        tokens = text.split()
        i = tokens.index("DIMENSIONS")
        n = int(tokens[i + 1])
        N = n * n
        data = {}
        j = tokens.index("POINT_DATA") + 2
        while j < len(tokens):
            assert tokens[j] == "SCALARS"
            name = tokens[j + 1]
            j += 6                      # SCALARS name type 1 LOOKUP_TABLE default
            data[name] = np.array(tokens[j:j + N], dtype=float)
            j += N
    else:
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = int(round(math.sqrt(rows.shape[0])))
        data = dict(zip(SNAP_COLUMNS, rows.T))
    mesh = build_uniform(n)
    return State(mesh, t, *(np.array(data[c]) for c in
                            ("rho", "mu_rho", "theta", "eta", "mu_eta")))


# -- commands -------------------------------------------------------------------

def _initial_data(cfg, mesh):
    if cfg.initial == "convergence":
        return experiments.convergence_initial_data(mesh)
    return experiments.applied_initial_data(mesh, cfg.initial, cfg.params)


def _snapshot_name(t, fmt):
    ext = "vtk" if fmt == "vtk" else "csv"
    return f"snapshot_t{t:g}.{ext}"


def _cmd_run(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    mesh = build_uniform(cfg.n)
    scfg = cfg.solver_config()
    L = cfg.mobility_matrix()
    records = []
    snaps = {round(t / cfg.tau): t for t in cfg.snapshot_times}
    stepper = Stepper(mesh, cfg.params, L, scfg)
    initial = _initial_data(cfg, mesh)
    if 0 in snaps:
        write_snapshot(stepper.initial_state(*initial),
                       os.path.join(cfg.out, _snapshot_name(0.0, cfg.format)), cfg.format)

    def observer(state, rep, rec):
        records.append(rec)
        j = round(state.t / cfg.tau)
        if j in snaps:
            write_snapshot(state, os.path.join(cfg.out, _snapshot_name(snaps[j], cfg.format)),
                           cfg.format)

    run(initial, scfg, cfg.params, mesh, L, observer=observer, stepper=stepper)
    write_diagnostics(records, os.path.join(cfg.out, "diagnostics.csv"))
    print(f"wrote {len(records)} steps and {len(snaps)} snapshots to {cfg.out}")


def _cmd_converge(cfg, workers):
    os.makedirs(cfg.out, exist_ok=True)
    table = experiments.convergence_study(
        cfg.levels, cfg.params, linear_solver=cfg.linear_solver,
        t_final=cfg.t_final, mesh_scale=cfg.mesh_scale, workers=workers)
    text = table.to_csv()
    with open(os.path.join(cfg.out, "convergence.csv"), "w") as f:
        f.write(text)
    with open(os.path.join(cfg.out, "convergence.txt"), "w") as f:
        f.write(table.to_text())
    sys.stdout.write(text)


def _cmd_applied(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    acfg = experiments.AppliedConfig(n=cfg.n, tau=cfg.tau, t_final=cfg.t_final,
                                     snapshot_times=cfg.snapshot_times,
                                     linear_solver=cfg.linear_solver,
                                     newton_rtol=cfg.newton_rtol,
                                     newton_atol=cfg.newton_atol)
    res = experiments.applied_experiment(cfg.initial, cfg.params, acfg)
    for t, state in sorted(res.snapshots.items()):
        write_snapshot(state, os.path.join(cfg.out, _snapshot_name(t, cfg.format)),
                       cfg.format)
    write_diagnostics(res.records, os.path.join(cfg.out, "diagnostics.csv"))
    print(f"profile {cfg.initial}: snapshots at t = "
          + ", ".join(f"{t:g}" for t in sorted(res.snapshots)))


def structural_checks(cfg=None, steps=40):
    """Split validity, conservation and entropy production on a smoke run.

    Returns a list of ``(name, passed, detail)``.
    """
    params = cfg.params if cfg else model.ModelParams()
    results = []
    try:
        vmin, cmax = model.check_split(params)
        results.append(("split", True, f"min vex eig {vmin:.3g}, max cav eig {cmax:.3g}"))
    except ValueError as exc:
        return [("split", False, str(exc))]
    mesh = build_uniform(4)
    L = model.convergence_mobility()
    scfg = SolverConfig(tau=0.00025, t_final=steps * 0.00025)
    recs = []
    stepper = Stepper(mesh, params, L, scfg)
    init = experiments.convergence_initial_data(mesh)
    s0 = stepper.initial_state(*init)
    try:
        run(init, scfg, params, mesh, L, observer=lambda s, r, rec: recs.append(rec),
            stepper=stepper)
    except StepFailure as exc:
        return results + [("solve", False, str(exc))]
    m0, e0, _ = totals(s0, params)
    mass = max(abs(r.mass - m0) for r in recs) / abs(m0)
    energy = max(abs(r.energy - e0) for r in recs) / abs(e0)
    results.append(("mass", mass <= 1e-12, f"relative drift {mass:.2e}"))
    results.append(("energy", energy <= 1e-9, f"relative drift {energy:.2e}"))
    worst = min(r.numdiss + 1e-9 * (1 + abs(r.entropy)) for r in recs)
    results.append(("entropy", worst >= 0, f"min slack {worst:.2e}"))
    return results


def _cmd_check(cfg):
    ok = True
    for name, passed, detail in structural_checks(cfg):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return 0 if ok else 1


def _threads():
    raw = os.environ.get("THERMOPHASE_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"THERMOPHASE_THREADS must be an integer, got {raw!r}")
    if k < 1:
        raise ConfigError("THERMOPHASE_THREADS must be at least 1")
    return k


def build_parser():
    p = argparse.ArgumentParser(prog="thermophase",
                                description="Structure-preserving thermal phase-field solver")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [("run", "single simulation"),
                        ("converge", "refinement convergence study"),
                        ("applied", "two-grain sintering experiment"),
                        ("check", "structural property checks on a smoke run")]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="config file (key = value)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--format", choices=("grid-csv", "vtk"), help="snapshot format")
        if name == "converge":
            s.add_argument("--levels", type=int, help="highest level k")
        if name == "applied":
            s.add_argument("--profile", choices=("A", "B", "C"),
                           help="initial temperature profile")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        text = ""
        if args.config:
            with open(args.config) as f:
                text = f.read()
        kind = {"run": "single", "converge": "converge", "applied": "applied",
                "check": "single"}[args.command]
        cfg = parse_config(text, default_kind=kind)
        over = {"kind": kind}
        if args.out:
            over["out"] = args.out
        if args.format:
            over["format"] = args.format
        if getattr(args, "levels", None) is not None:
            if args.levels < 0:
                raise ConfigError("--levels must be nonnegative")
            over["levels"] = args.levels
        if getattr(args, "profile", None):
            over["initial"] = args.profile
        cfg = replace(cfg, **over)
        workers = _threads()
        if args.command == "run":
            _cmd_run(cfg)
        elif args.command == "converge":
            _cmd_converge(cfg, workers)
        elif args.command == "applied":
            _cmd_applied(cfg)
        else:
            return _cmd_check(cfg)
    except (ConfigError, OSError, StepFailure, ValueError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
