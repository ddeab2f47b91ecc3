"""Fully discrete time stepper: backward Euler with convex-concave splitting.

Unknowns are blocked by field: all rho nodes, then mu_rho, theta, eta, mu_eta.
The residual of the equations for rho, e and eta is multiplied by the time
step, so testing the rho block with the constant function gives exactly the
mass change of the step.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import model
from .fem import FeFunction, assembler
from .linalg import LinearSolver, block_compose
from .model import DomainError

__all__ = [
    "State",
    "SolverConfig",
    "StepReport",
    "NewtonError",
    "StepFailure",
    "Stepper",
    "residual",
    "jacobian",
    "step",
    "run",
]

log = logging.getLogger(__name__)

FIELDS = ("rho", "mu_rho", "theta", "eta", "mu_eta")

# (equation, unknown) blocks that depend on the state through psi
_NONLINEAR_BLOCKS = ((1, 0), (1, 2), (1, 3), (2, 0), (2, 2), (2, 3), (4, 0), (4, 2), (4, 3))


class NewtonError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class StepFailure(RuntimeError):
    def __init__(self, step_index, cause):
        super().__init__(f"step {step_index} failed: {cause}")
        self.step_index = step_index
        self.cause = cause


@dataclass
class State:
    mesh: object = field(repr=False)
    t: float
    rho: np.ndarray = field(repr=False)
    mu_rho: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)
    mu_eta: np.ndarray = field(repr=False)

    def vector(self):
        return np.concatenate([getattr(self, f) for f in FIELDS])

    @classmethod
    def from_vector(cls, mesh, t, U):
        N = mesh.num_nodes
        parts = [np.array(U[i * N:(i + 1) * N]) for i in range(5)]
        return cls(mesh, t, *parts)

    def function(self, name):
        return FeFunction(self.mesh, getattr(self, name))

    def copy(self):
        return State.from_vector(self.mesh, self.t, self.vector())


@dataclass(frozen=True)
class SolverConfig:
    tau: float
    t_final: float
    newton_rtol: float = 1e-10
    newton_atol: float = 1e-12
    max_newton_iters: int = 50
    backtrack: float = 0.5
    max_halvings: int = 30
    theta_floor_factor: float = 0.9
    linear_solver: str = "direct"
    linear_tol: float = 1e-12

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.t_final >= 0:
            raise ValueError("t_final must be nonnegative")
        if not (self.newton_rtol > 0 and self.newton_atol > 0):
            raise ValueError("Newton tolerances must be positive")

    @property
    def num_steps(self):
        k = round(self.t_final / self.tau)
        if abs(k * self.tau - self.t_final) > 1e-12 * max(1.0, self.t_final):
            raise ValueError(
                f"t_final={self.t_final} is not a multiple of tau={self.tau}")
        return int(k)


@dataclass
class StepReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    block_norms: tuple = ()
    damping_events: int = 0
    linear_reports: list = field(default_factory=list)

    @property
    def residual(self):
        return self.residual_history[-1] if self.residual_history else 0.0

    def quadratic_constants(self):
        """Ratios r_{k+1} / r_k^2 over the Newton history."""
        r = np.asarray(self.residual_history)
        with np.errstate(divide="ignore", invalid="ignore"):
            return r[1:] / r[:-1] ** 2


class Stepper:
    """Owns the assembled operators for one mesh, parameter set and mobility."""

    def __init__(self, mesh, params, mobility, cfg, check=True):
        self.mesh = mesh
        self.params = params
        self.cfg = cfg
        self.asm = assembler(mesh)
        self.N = mesh.num_nodes
        self.M = self.asm.mass()
        self.K = self.asm.stiffness()
        order = mesh.dissection_order()
        # node-major within the dissection order keeps the 5 fields of a node together
        self.perm = (order[:, None] + self.N * np.arange(5)[None, :]).ravel()
        self.linear_solver = LinearSolver(cfg.linear_solver, cfg.linear_tol, self.perm)
        self._mobility_source = mobility
        self._L = None
        if check:
            model.check_split(params)
        self._set_mobility(mobility if isinstance(mobility, model.MobilityMatrix)
                           else None)

    # -- operators -----------------------------------------------------------

    def _set_mobility(self, L):
        if L is None or L is self._L:
            return
        a = self.asm
        Lm = L.matrix
        self._L = L
        self.flux = {
            "11": a.stiffness(Lm[0:2, 0:2]),
            "12": a.stiffness(Lm[0:2, 2:4]),
            "13": a.advection(Lm[0:2, 4]).T.tocsr(),
            "21": a.stiffness(Lm[2:4, 0:2]),
            "22": a.stiffness(Lm[2:4, 2:4]),
            "23": a.advection(Lm[2:4, 4]).T.tocsr(),
            "31": a.advection(Lm[4, 0:2]),
            "32": a.advection(Lm[4, 2:4]),
            "33": Lm[4, 4] * self.M,
        }
        self._linear = {}

    def mobility_for(self, old):
        src = self._mobility_source
        L = src if isinstance(src, model.MobilityMatrix) else src(old)
        self._set_mobility(L)
        return L

    def linear_part(self, tau):
        """Linear block operator (tau-scaled rows 1, 3, 4)."""
        op = self._linear.get(tau)
        if op is None:
            F, M, K, p = self.flux, self.M, self.K, self.params
            op = block_compose([
                [M, tau * F["11"], -tau * F["12"], None, tau * F["13"]],
                [-p.gamma_rho * K, M, None, None, None],
                [None, tau * F["21"], -tau * F["22"], None, tau * F["23"]],
                [None, tau * F["31"], -tau * F["32"], M, tau * F["33"]],
                [None, None, None, -p.gamma_eta * K, M],
            ])
            self._linear = {tau: op}
            self._layout = self._jacobian_layout(op)
        return op

    def _jacobian_layout(self, lin):
        """Fixed CSR pattern of the Jacobian and scatter maps into its data."""
        N, a = self.N, self.asm
        n5 = 5 * N
        prow = np.repeat(np.arange(N), np.diff(a.indptr))
        pcol = a.indices
        keys = [np.repeat(np.arange(n5), np.diff(lin.indptr)) * n5 + lin.indices]
        for bi, bj in _NONLINEAR_BLOCKS:
            keys.append((prow + bi * N) * n5 + pcol + bj * N)
        allkeys = np.unique(np.concatenate(keys))
        rows, cols = np.divmod(allkeys, n5)
        indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n5))])
        lin_pos = np.searchsorted(allkeys, keys[0])
        base = np.zeros(allkeys.size)
        base[lin_pos] = lin.data
        block_idx = np.concatenate(
            [np.searchsorted(allkeys, k)[a.scatter] for k in keys[1:]])
        return dict(indptr=indptr, indices=cols, base=base, idx=block_idx,
                    nnz=allkeys.size)

    def split(self, U):
        N = self.N
        return [U[i * N:(i + 1) * N] for i in range(5)]

    # -- nonlinear system ----------------------------------------------------

    def _quad(self, old, U):
        a = self.asm
        rho, _, theta, eta, _ = self.split(U)
        q = dict(rho=a.at_quad(rho), theta=a.at_quad(theta), eta=a.at_quad(eta),
                 rho_o=a.at_quad(old.rho), theta_o=a.at_quad(old.theta),
                 eta_o=a.at_quad(old.eta))
        if np.any(q["theta"] <= 0):
            raise DomainError("inverse temperature not positive at a quadrature point")
        return q

    def residual(self, old, U, tau):
        p, a = self.params, self.asm
        self.mobility_for(old)
        q = self._quad(old, U)
        f_r, f_e = model.dpsi_split(q["rho"], q["rho_o"], q["theta"], q["eta"],
                                    q["eta_o"], p)
        e_new = model.internal_energy(q["rho"], q["theta"], q["eta"], p)
        e_old = model.internal_energy(q["rho_o"], q["theta_o"], q["eta_o"], p)
        R = self.linear_part(tau) @ U
        N = self.N
        R[0:N] -= self.M @ old.rho
        R[N:2 * N] -= a.load(f_r)
        R[2 * N:3 * N] += a.load(e_new - e_old)
        R[3 * N:4 * N] -= self.M @ old.eta
        R[4 * N:5 * N] -= a.load(f_e)
        return R

    def jacobian(self, old, U, tau):
        p, a = self.params, self.asm
        self.mobility_for(old)
        q = self._quad(old, U)
        H = model.d2psi(q["rho"], q["theta"], q["eta"], p)
        coef = np.stack([-(H["rr"] + p.alpha), -H["rt"], -H["re"],
                         H["rt"], H["tt"], H["et"],
                         -H["re"], -H["et"], -(H["ee"] + p.alpha)])
        self.linear_part(tau)
        lay = self._layout
        local = (coef * a.wq) @ a.phi2
        data = lay["base"] + np.bincount(lay["idx"], weights=local.ravel(),
                                         minlength=lay["nnz"])
        n5 = 5 * self.N
        return sp.csr_matrix((data, lay["indices"].copy(), lay["indptr"].copy()),
                             shape=(n5, n5))

    def block_norms(self, R):
        return tuple(float(np.linalg.norm(b)) for b in self.split(R))

    # -- driver ----------------------------------------------------------------

    def initial_potentials(self, rho, theta, eta):
        """mu fields from the potential equations at the given data."""
        p, a = self.params, self.asm
        fr, _, fe = model.dpsi(a.at_quad(rho), a.at_quad(theta), a.at_quad(eta), p)
        lu = spla.splu(sp.csc_matrix(self.M))
        mu_r = lu.solve(p.gamma_rho * (self.K @ rho) + a.load(fr))
        mu_e = lu.solve(p.gamma_eta * (self.K @ eta) + a.load(fe))
        return mu_r, mu_e

    def initial_state(self, rho0, theta0, eta0, t=0.0):
        rho0, theta0, eta0 = (np.asarray(getattr(v, "coefficients", v), dtype=float)
                              for v in (rho0, theta0, eta0))
        if np.any(theta0 <= 0):
            raise DomainError("initial inverse temperature must be positive")
        mu_r, mu_e = self.initial_potentials(rho0, theta0, eta0)
        return State(self.mesh, t, rho0.copy(), mu_r, theta0.copy(), eta0.copy(), mu_e)

    @staticmethod
    def predict(old, older):
        """Linear extrapolation of the next state from two previous ones."""
        if older is None:
            return None
        return 2.0 * old.vector() - older.vector()

    def step(self, old, tau=None, guess=None):
        """One backward Euler step from ``old``.

        The stopping test is relative to the residual of the old state, so a
        better starting ``guess`` (e.g. extrapolated from earlier steps) only
        saves iterations and never loosens the tolerance.
        """
        cfg = self.cfg
        tau = cfg.tau if tau is None else tau
        N = self.N
        U = old.vector()
        report = StepReport()
        R = self.residual(old, U, tau)
        rnorm = np.linalg.norm(R)
        tol = cfg.newton_atol + cfg.newton_rtol * rnorm
        theta_floor = (1.0 - cfg.theta_floor_factor) * old.theta.min()
        if guess is not None and rnorm > tol and guess[2 * N:3 * N].min() > theta_floor:
            R_g = self.residual(old, guess, tau)
            r_g = np.linalg.norm(R_g)
            if r_g < rnorm:
                U, R, rnorm = np.array(guess, dtype=float), R_g, r_g
        report.residual_history.append(rnorm)

        while rnorm > tol:
            if report.iterations >= cfg.max_newton_iters:
                report.block_norms = self.block_norms(R)
                raise NewtonError(
                    f"no convergence in {cfg.max_newton_iters} iterations "
                    f"(residual {rnorm:.3e})", report)
            J = self.jacobian(old, U, tau)
            # the final accuracy is set by the Newton test above; the linear
            # solve only needs to keep the iteration converging fast
            dU, lrep = self.linear_solver(J, -R, tol=max(cfg.linear_tol,
                                                         min(1e-6, 0.1 * tol / rnorm)))
            report.linear_reports.append(lrep)
            lam = 1.0
            for halving in range(cfg.max_halvings + 1):
                trial = U + lam * dU
                if trial[2 * N:3 * N].min() > theta_floor:
                    R_t = self.residual(old, trial, tau)
                    r_t = np.linalg.norm(R_t)
                    if r_t <= tol or r_t <= (1.0 - 1e-4 * lam) * rnorm:
                        break
                lam *= cfg.backtrack
                report.damping_events += 1
            else:
                report.block_norms = self.block_norms(R)
                raise NewtonError(
                    f"line search failed after {cfg.max_halvings} halvings "
                    f"(residual {rnorm:.3e})", report)
            U, R, rnorm = trial, R_t, r_t
            report.iterations += 1
            report.residual_history.append(rnorm)

        report.block_norms = self.block_norms(R)
        new = State.from_vector(self.mesh, old.t + tau, U)
        return new, report


def _stepper(cfg, params, mesh, mobility):
    return Stepper(mesh, params, mobility, cfg, check=False)


def residual(old, guess, cfg, params, mesh, mobility):
    return _stepper(cfg, params, mesh, mobility).residual(old, guess.vector(), cfg.tau)


def jacobian(old, guess, cfg, params, mesh, mobility):
    return _stepper(cfg, params, mesh, mobility).jacobian(old, guess.vector(), cfg.tau)


def step(old, cfg, params, mesh, mobility):
    return _stepper(cfg, params, mesh, mobility).step(old)


def run(initial, cfg, params, mesh, mobility, observer=None, stepper=None):
    """Integrate from ``initial = (rho0, theta0, eta0)`` up to ``cfg.t_final``.

    ``observer(state, report, record)`` is called after every accepted step.
    """
    from .diagnostics import record

    nsteps = cfg.num_steps
    stepper = stepper or Stepper(mesh, params, mobility, cfg)
    state = stepper.initial_state(*initial)
    older = None
    for k in range(nsteps):
        try:
            new, rep = stepper.step(state, guess=stepper.predict(state, older))
        except (NewtonError, DomainError) as exc:
            raise StepFailure(k, exc) from exc
        new.t = (k + 1) * cfg.tau
        if observer is not None:
            L = stepper.mobility_for(state)
            observer(new, rep, record(state, new, cfg.tau, params, mesh, L, rep))
        older, state = state, new
    return state
