"""Thermodynamic closure in inverse-temperature variables.

The driving potential is

    psi(rho, theta, eta) = log(theta) + (C1 theta - C2) w(rho)
                           + (D1 theta - D2) B(rho, eta)

with the double well ``w = rho^2 (1 - rho)^2`` and the two-grain sintering
polynomial ``B``. Gradient energies are not part of ``psi``; they enter the
weak forms directly. The internal energy is ``e = d psi / d theta`` and the
entropy density is ``s = theta e - psi - gradient terms``.

The convex-concave split is the quadratic (Eyre-type) one:
``psi_vex = psi + alpha/2 (rho^2 + eta^2)``, ``psi_cav = -alpha/2 (rho^2 + eta^2)``.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomainError",
    "ModelParams",
    "MobilityMatrix",
    "convergence_mobility",
    "applied_mobility",
    "psi",
    "dpsi",
    "d2psi",
    "internal_energy",
    "psi_vex",
    "psi_cav",
    "hessian_vex",
    "hessian_cav",
    "dpsi_split",
    "entropy_density",
    "check_split",
]


class DomainError(ValueError):
    """Raised when a state leaves the admissible set (theta <= 0)."""


@dataclass(frozen=True)
class ModelParams:
    gamma_rho: float = 1e-3
    gamma_eta: float = 1e-3
    c1: float = 2.0
    c2: float = 1.0
    d1: float = 0.141
    d2: float = 0.062
    alpha: float = 10.0
    lam: float = None
    theta_min: float = 0.1
    theta_max: float = 3.0

    def __post_init__(self):
        if not self.gamma_rho > 0 or not self.gamma_eta > 0:
            raise ValueError("interface parameters gamma_rho, gamma_eta must be positive")
        if not self.alpha >= 0:
            raise ValueError("split stabilizer alpha must be nonnegative")
        if self.lam is None:
            object.__setattr__(self, "lam", float(self.alpha))
        if not self.lam >= 0:
            raise ValueError("relative-entropy penalty lam must be nonnegative")
        if not 0 < self.theta_min < self.theta_max:
            raise ValueError("need 0 < theta_min < theta_max")


@dataclass(frozen=True)
class MobilityMatrix:
    """Symmetric positive definite 5x5 mobility for d = 2.

    Index layout: 0:2 couples to grad mu_rho, 2:4 to grad theta, 4 to mu_eta.
    """

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        L = np.array(self.matrix, dtype=float)
        if L.shape != (5, 5):
            raise ValueError(f"mobility must be 5x5, got {L.shape}")
        if not np.allclose(L, L.T, rtol=0, atol=1e-14 * max(1.0, abs(L).max())):
            raise ValueError("mobility must be symmetric")
        ev = np.linalg.eigvalsh(L)
        if ev[0] <= 0:
            raise ValueError(f"mobility not positive definite (min eigenvalue {ev[0]:g})")
        L.setflags(write=False)
        object.__setattr__(self, "matrix", L)

    @property
    def eigenvalue_bounds(self):
        ev = np.linalg.eigvalsh(self.matrix)
        return ev[0], ev[-1]

    def block(self, i, j):
        sl = [slice(0, 2), slice(2, 4), slice(4, 5)]
        return self.matrix[sl[i - 1], sl[j - 1]]

    @classmethod
    def diagonal(cls, l11, l22, l33):
        return cls(np.diag([l11, l11, l22, l22, l33]))

    def __call__(self, *state):
        # constant in every shipped configuration
        return self


def convergence_mobility():
    return MobilityMatrix.diagonal(0.1, 0.1, 10.0)


def applied_mobility():
    return MobilityMatrix.diagonal(0.1, 0.001, 1000.0)


def _check_theta(theta):
    if np.any(np.asarray(theta) <= 0):
        raise DomainError("inverse temperature must be positive")


def _well(rho):
    return rho**2 * (1 - rho) ** 2, 2 * rho * (1 - rho) * (1 - 2 * rho), \
        2 - 12 * rho + 12 * rho**2


def _grain(rho, eta):
    """B and its first and second derivatives in (rho, eta)."""
    p = eta**2 + (1 - eta) ** 2
    c = eta**3 + (1 - eta) ** 3
    dp = 4 * eta - 2
    dc = 6 * eta - 3
    B = rho**2 + 6 * (1 - rho) * p - 4 * (2 - rho) * c + 3 * p**2
    B_r = 2 * rho - 6 * p + 4 * c
    B_e = 6 * (1 - rho) * dp - 4 * (2 - rho) * dc + 6 * p * dp
    B_rr = 2.0 + 0 * rho * eta
    B_re = -6 * dp + 4 * dc + 0 * rho
    B_ee = -24 + 6 * dp**2 + 24 * p + 0 * rho
    return B, B_r, B_e, B_rr, B_re, B_ee


def psi(rho, theta, eta, p):
    _check_theta(theta)
    w = _well(rho)[0]
    B = _grain(rho, eta)[0]
    return np.log(theta) + (p.c1 * theta - p.c2) * w + (p.d1 * theta - p.d2) * B


def dpsi(rho, theta, eta, p):
    """(d psi/d rho, d psi/d theta, d psi/d eta); the middle entry is ``e``."""
    _check_theta(theta)
    w, dw, _ = _well(rho)
    B, B_r, B_e, *_ = _grain(rho, eta)
    a = p.c1 * theta - p.c2
    b = p.d1 * theta - p.d2
    return a * dw + b * B_r, 1.0 / theta + p.c1 * w + p.d1 * B, b * B_e


def internal_energy(rho, theta, eta, p):
    return dpsi(rho, theta, eta, p)[1]


def d2psi(rho, theta, eta, p):
    """Second derivatives as a dict keyed by variable pairs ('rr', 'rt', ...)."""
    _check_theta(theta)
    w, dw, ddw = _well(rho)
    B, B_r, B_e, B_rr, B_re, B_ee = _grain(rho, eta)
    a = p.c1 * theta - p.c2
    b = p.d1 * theta - p.d2
    return {
        "rr": a * ddw + b * B_rr,
        "re": b * B_re,
        "ee": b * B_ee,
        "rt": p.c1 * dw + p.d1 * B_r,
        "et": p.d1 * B_e,
        "tt": -1.0 / theta**2,
    }


def psi_cav(rho, theta, eta, p):
    return -0.5 * p.alpha * (rho**2 + eta**2)


def psi_vex(rho, theta, eta, p):
    return psi(rho, theta, eta, p) + 0.5 * p.alpha * (rho**2 + eta**2)


def hessian_vex(rho, theta, eta, p):
    """Hessian of psi_vex in (rho, eta), shape (..., 2, 2)."""
    H = d2psi(rho, theta, eta, p)
    rr = H["rr"] + p.alpha
    ee = H["ee"] + p.alpha
    re = H["re"]
    return np.stack([np.stack([rr, re], -1), np.stack([re, ee], -1)], -2)


def hessian_cav(rho, theta, eta, p):
    shape = np.broadcast(rho, theta, eta).shape
    return np.broadcast_to(-p.alpha * np.eye(2), shape + (2, 2))


def dpsi_split(rho_new, rho_old, theta_new, eta_new, eta_old, p):
    """Level-mixed (d_rho psi, d_eta psi) of the convex-concave split.

    Convex part at the new level, concave part at the old level, both at the
    new inverse temperature.
    """
    d_r, _, d_e = dpsi(rho_new, theta_new, eta_new, p)
    return d_r + p.alpha * (rho_new - rho_old), d_e + p.alpha * (eta_new - eta_old)


def entropy_density(rho, theta, eta, grad_rho_sq, grad_eta_sq, p):
    e = internal_energy(rho, theta, eta, p)
    return theta * e - psi(rho, theta, eta, p) \
        - 0.5 * p.gamma_rho * grad_rho_sq - 0.5 * p.gamma_eta * grad_eta_sq


def check_split(p, samples=200, seed=0, box=(-0.5, 1.5)):
    """Sample the state box and check the split's Hessian signs.

    Returns ``(min eigenvalue of hess psi_vex, max eigenvalue of hess psi_cav)``
    and raises ``ValueError`` if either has the wrong sign.
    """
    rng = np.random.default_rng(seed)
    rho = rng.uniform(*box, samples)
    eta = rng.uniform(*box, samples)
    theta = rng.uniform(p.theta_min, p.theta_max, samples)
    vmin = np.linalg.eigvalsh(hessian_vex(rho, theta, eta, p))[:, 0].min()
    cmax = np.linalg.eigvalsh(hessian_cav(rho, theta, eta, p))[:, -1].max()
    if vmin < 0 or cmax > 0:
        raise ValueError(
            f"alpha={p.alpha} does not convexify psi on the state box "
            f"(min vex eigenvalue {vmin:.3g}, max cav eigenvalue {cmax:.3g})")
    return vmin, cmax
