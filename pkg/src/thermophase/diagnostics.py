"""Structural quantities: conserved integrals, entropy production, relative entropy.

All integrals of nonlinear densities use the same quadrature as the scheme,
so the conservation and entropy-balance identities hold to solver tolerance.
"""

from dataclasses import dataclass, asdict

import numpy as np

from . import model
from .fem import assembler
from .scheme import SolverConfig, Stepper

__all__ = [
    "DiagnosticsRecord",
    "totals",
    "dissipation",
    "numerical_dissipation",
    "relative_entropy",
    "perturbation_residuals",
    "PerturbationResiduals",
    "record",
]


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    energy: float
    entropy: float
    dissipation: float
    numdiss: float
    newton_iters: int
    residual: float

    def as_dict(self):
        return asdict(self)


def _values(f):
    return np.asarray(getattr(f, "coefficients", f), dtype=float)


def _mesh_of(*objs):
    for o in objs:
        m = getattr(o, "mesh", None)
        if m is not None:
            return m
    raise ValueError("cannot infer the mesh; pass FeFunctions or mesh=")


def total_mass(state):
    a = assembler(state.mesh)
    return float(np.sum(a.load(a.at_quad(state.rho))))


def total_energy(state, params):
    a = assembler(state.mesh)
    e = model.internal_energy(a.at_quad(state.rho), a.at_quad(state.theta),
                              a.at_quad(state.eta), params)
    return a.integrate(e)


def total_entropy(state, params):
    a = assembler(state.mesh)
    r, th, et = a.at_quad(state.rho), a.at_quad(state.theta), a.at_quad(state.eta)
    bulk = a.integrate(th * model.internal_energy(r, th, et, params)
                       - model.psi(r, th, et, params))
    gr = np.sum(a.area * np.sum(a.grad(state.rho) ** 2, axis=1))
    ge = np.sum(a.area * np.sum(a.grad(state.eta) ** 2, axis=1))
    return bulk - 0.5 * params.gamma_rho * gr - 0.5 * params.gamma_eta * ge


def totals(state, params):
    """(mass, internal energy, entropy) integrated over the torus."""
    return total_mass(state), total_energy(state, params), total_entropy(state, params)


def dissipation(mu_rho, theta, mu_eta, L, mesh=None):
    """Entropy production rate: the L-quadratic form of (grad mu_rho, -grad theta, mu_eta)."""
    mesh = mesh or _mesh_of(mu_rho, theta, mu_eta)
    a = assembler(mesh)
    Lm = getattr(L, "matrix", L)
    g_mu = a.grad(_values(mu_rho))
    g_th = a.grad(_values(theta))
    m_q = a.at_quad(_values(mu_eta))
    k = m_q.shape[1]
    S = np.empty(m_q.shape + (5,))
    S[..., 0:2] = g_mu[:, None, :]
    S[..., 2:4] = -g_th[:, None, :]
    S[..., 4] = m_q
    form = np.einsum("eqi,ij,eqj->eq", S, Lm, S) if np.ndim(Lm) == 2 else \
        np.einsum("eqi,eij,eqj->eq", S, Lm, S)
    assert form.shape[1] == k
    return float(np.sum(a.wq * form))


def numerical_dissipation(old, new, tau, L, params):
    """Entropy gained in one step beyond tau times the dissipation rate."""
    ds = total_entropy(new, params) - total_entropy(old, params)
    return ds - tau * dissipation(new.mu_rho, new.theta, new.mu_eta, L, new.mesh)


def relative_entropy(a, b, params, lam=None):
    """Penalized relative entropy of state ``a`` with respect to reference ``b``.

    Integrand: gradient differences, the potential's Bregman-type remainder
    (theta-derivative at ``a``, rho/eta derivatives at ``b``) and
    ``lam/2 (|rho - rho_b|^2 + |eta - eta_b|^2)``.
    """
    lam = params.lam if lam is None else lam
    asm = assembler(a.mesh)
    q = asm.at_quad
    r, th, et = q(a.rho), q(a.theta), q(a.eta)
    rh, thh, eth = q(b.rho), q(b.theta), q(b.eta)
    if np.any(a.theta <= 0) or np.any(b.theta <= 0):
        raise model.DomainError("inverse temperature must be positive")
    _, e_a, _ = model.dpsi(r, th, et, params)
    dr_b, _, de_b = model.dpsi(rh, thh, eth, params)
    bulk = (model.psi(r, th, et, params) - model.psi(rh, thh, eth, params)
            - e_a * (th - thh) - dr_b * (r - rh) - de_b * (et - eth)
            + 0.5 * lam * ((r - rh) ** 2 + (et - eth) ** 2))
    dgr = asm.grad(a.rho - b.rho)
    dge = asm.grad(a.eta - b.eta)
    grad = np.sum(asm.area * (0.5 * params.gamma_rho * np.sum(dgr**2, axis=1)
                              + 0.5 * params.gamma_eta * np.sum(dge**2, axis=1)))
    return asm.integrate(bulk) + float(grad)


@dataclass
class PerturbationResiduals:
    """Dual residual vectors r1..r5 (tested against every hat function)."""

    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    r4: np.ndarray
    r5: np.ndarray

    def norms(self):
        return tuple(float(np.linalg.norm(r)) for r in
                     (self.r1, self.r2, self.r3, self.r4, self.r5))


def perturbation_residuals(old_hat, new_hat, tau, params, mesh, L, stepper=None):
    """Defects of the discrete equations evaluated at a pair of given states."""
    st = stepper or Stepper(mesh, params, L, SolverConfig(tau=tau, t_final=tau),
                            check=False)
    R = st.residual(old_hat, new_hat.vector(), tau)
    r1, r2, r3, r4, r5 = st.split(R)
    return PerturbationResiduals(r1 / tau, r2.copy(), r3 / tau, r4 / tau, r5.copy())


def record(old, new, tau, params, mesh, L, report=None):
    mass, energy, entropy = totals(new, params)
    D = dissipation(new.mu_rho, new.theta, new.mu_eta, L, mesh)
    s_old = total_entropy(old, params)
    return DiagnosticsRecord(
        t=float(new.t), mass=mass, energy=energy, entropy=entropy,
        dissipation=D, numdiss=entropy - s_old - tau * D,
        newton_iters=report.iterations if report else 0,
        residual=float(report.residual) if report else 0.0)
