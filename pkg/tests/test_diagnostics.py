import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermophase import diagnostics as dg
from thermophase import model
from thermophase.experiments import convergence_initial_data
from thermophase.fem import FeFunction, assemble_mass, assemble_stiffness, interpolate
from thermophase.mesh import build_uniform
from thermophase.scheme import SolverConfig, State, Stepper


def _state(mesh, rho, theta, eta, mu=None, nu=None, t=0.0):
    N = mesh.num_nodes
    z = np.zeros(N)
    return State(mesh, t, np.asarray(rho, float), z if mu is None else mu,
                 np.asarray(theta, float), np.asarray(eta, float), z if nu is None else nu)


@pytest.mark.parametrize("c", [0.0, 0.5, -2.0])
def test_dissipation_constant_mu_eta(c):
    mesh = build_uniform(4)
    N = mesh.num_nodes
    L = model.MobilityMatrix.diagonal(1.0, 1.0, 10.0)
    D = dg.dissipation(np.zeros(N), np.ones(N), np.full(N, c), L, mesh)
    assert D == pytest.approx(10 * c**2, abs=1e-14)


def test_dissipation_diagonal_mobility_oracle(mesh, rng):
    N = mesh.num_nodes
    mu, th, nu = rng.standard_normal((3, N))
    l1, l2, l3 = 0.3, 0.7, 2.5
    M, K = assemble_mass(mesh), assemble_stiffness(mesh)
    expected = l1 * mu @ K @ mu + l2 * th @ K @ th + l3 * nu @ M @ nu
    D = dg.dissipation(FeFunction(mesh, mu), FeFunction(mesh, th), FeFunction(mesh, nu),
                       model.MobilityMatrix.diagonal(l1, l2, l3))
    assert D == pytest.approx(expected, rel=1e-12)


def test_dissipation_needs_mesh():
    with pytest.raises(ValueError):
        dg.dissipation(np.zeros(4), np.ones(4), np.zeros(4), model.convergence_mobility())


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_dissipation_nonnegative(seed):
    rng = np.random.default_rng(seed)
    mesh = build_uniform(3)
    A = rng.standard_normal((5, 5))
    L = model.MobilityMatrix(A @ A.T + 1e-3 * np.eye(5))
    mu, th, nu = rng.standard_normal((3, mesh.num_nodes))
    assert dg.dissipation(mu, th, nu, L, mesh) >= 0


def test_totals_of_constant_state(params):
    mesh = build_uniform(3)
    N = mesh.num_nodes
    s = _state(mesh, np.full(N, 0.4), np.full(N, 1.3), np.full(N, 0.2))
    mass, energy, entropy = dg.totals(s, params)
    e = model.internal_energy(0.4, 1.3, 0.2, params)
    assert mass == pytest.approx(0.4, rel=1e-14)
    assert energy == pytest.approx(e, rel=1e-13)
    assert entropy == pytest.approx(1.3 * e - model.psi(0.4, 1.3, 0.2, params), rel=1e-13)


def test_entropy_gradient_penalty(params):
    mesh = build_uniform(8)
    N = mesh.num_nodes
    rho = interpolate(lambda x, y: 0.5 + 0.1 * np.sin(2 * np.pi * x), mesh).coefficients
    flat = _state(mesh, np.full(N, 0.5), np.ones(N), np.full(N, 0.5))
    wavy = _state(mesh, rho, np.ones(N), np.full(N, 0.5))
    K = assemble_stiffness(mesh)
    grad = 0.5 * params.gamma_rho * rho @ K @ rho
    bulk = dg.total_entropy(wavy, params) + grad
    # bulk part only sees the quadrature values of rho
    assert dg.total_entropy(wavy, params) < bulk
    assert grad > 0 and np.isfinite(dg.total_entropy(flat, params))


def test_relative_entropy_zero_on_diagonal(rng, params):
    mesh = build_uniform(4)
    N = mesh.num_nodes
    s = _state(mesh, rng.uniform(0.2, 0.8, N), rng.uniform(0.7, 1.5, N),
               rng.uniform(0.2, 0.8, N))
    assert abs(dg.relative_entropy(s, s, params)) <= 1e-15


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_relative_entropy_positive(seed):
    rng = np.random.default_rng(seed)
    p = model.ModelParams()
    mesh = build_uniform(4)
    N = mesh.num_nodes
    b = _state(mesh, rng.uniform(0.3, 0.7, N), rng.uniform(0.8, 1.4, N),
               rng.uniform(0.3, 0.7, N))
    a = _state(mesh, b.rho + rng.uniform(-0.05, 0.05, N), b.theta + rng.uniform(-0.1, 0.1, N),
               b.eta + rng.uniform(-0.05, 0.05, N))
    assert dg.relative_entropy(a, b, p) > 0


def test_relative_entropy_quadratic_scaling(rng, params):
    mesh = build_uniform(4)
    N = mesh.num_nodes
    b = _state(mesh, rng.uniform(0.3, 0.7, N), rng.uniform(0.8, 1.4, N),
               rng.uniform(0.3, 0.7, N))
    d = rng.standard_normal((3, N))
    vals = []
    for eps in (1e-2, 5e-3, 2.5e-3):
        a = _state(mesh, b.rho + eps * d[0], b.theta + eps * d[1], b.eta + eps * d[2])
        vals.append(dg.relative_entropy(a, b, params) / eps**2)
    assert vals[2] > 0
    assert abs(vals[2] - vals[1]) / vals[2] < 0.02


def test_relative_entropy_rejects_nonpositive_theta(params):
    mesh = build_uniform(2)
    good = _state(mesh, np.full(4, 0.5), np.ones(4), np.full(4, 0.5))
    bad = _state(mesh, np.full(4, 0.5), np.array([1, 1, -0.5, 1.0]), np.full(4, 0.5))
    with pytest.raises(model.DomainError):
        dg.relative_entropy(bad, good, params)


def _two_steps(n=4, tau=0.005, **kw):
    mesh = build_uniform(n)
    p = model.ModelParams()
    L = model.convergence_mobility()
    st_ = Stepper(mesh, p, L, SolverConfig(tau=tau, t_final=tau, **kw))
    s0 = st_.initial_state(*convergence_initial_data(mesh))
    s1, rep = st_.step(s0)
    return mesh, p, L, st_, s0, s1, rep


def test_perturbation_residuals_of_computed_step():
    mesh, p, L, st_, s0, s1, _ = _two_steps(newton_atol=1e-13, newton_rtol=1e-30)
    res = dg.perturbation_residuals(s0, s1, 0.005, p, mesh, L)
    norms = res.norms()
    assert len(norms) == 5
    assert max(norms[1], norms[4]) <= 10 * 1e-13
    assert max(norms[0], norms[2], norms[3]) <= 10 * 1e-13 / 0.005


def test_perturbation_residuals_scaling(rng):
    mesh, p, L, st_, s0, s1, _ = _two_steps()
    hat = s1.copy()
    hat.rho = hat.rho + 1e-3 * rng.standard_normal(st_.N)
    res = dg.perturbation_residuals(s0, hat, 0.005, p, mesh, L, stepper=st_)
    R = st_.residual(s0, hat.vector(), 0.005)
    r1, r2, r3, r4, r5 = st_.split(R)
    np.testing.assert_allclose(res.r1, r1 / 0.005)
    np.testing.assert_allclose(res.r2, r2)
    np.testing.assert_allclose(res.r4, r4 / 0.005)
    # rho defect of an exact solution plus a mass-neutral change is nonzero
    assert np.linalg.norm(res.r1) > 0


def test_record_fields():
    mesh, p, L, st_, s0, s1, rep = _two_steps()
    rec = dg.record(s0, s1, 0.005, p, mesh, L, rep)
    d = rec.as_dict()
    assert list(d) == ["t", "mass", "energy", "entropy", "dissipation", "numdiss",
                       "newton_iters", "residual"]
    assert rec.t == pytest.approx(s1.t)
    assert rec.newton_iters == rep.iterations
    assert rec.mass == pytest.approx(dg.total_mass(s0), abs=1e-14)
    assert rec.energy == pytest.approx(dg.total_energy(s0, p), abs=1e-10)
    assert rec.numdiss >= 0
    assert rec.numdiss == pytest.approx(
        dg.numerical_dissipation(s0, s1, 0.005, L, p), abs=1e-15)


def test_record_on_fixed_point():
    mesh = build_uniform(4)
    N = mesh.num_nodes
    p = model.ModelParams()
    L = model.convergence_mobility()
    st_ = Stepper(mesh, p, L, SolverConfig(0.01, 0.01))
    s0 = st_.initial_state(np.full(N, 0.3), np.full(N, 1.2), np.full(N, 0.5))
    s1, rep = st_.step(s0)
    rec = dg.record(s0, s1, 0.01, p, mesh, L, rep)
    assert rec.dissipation <= 1e-24
    assert abs(rec.numdiss) <= 1e-13
    assert rec.newton_iters == 0
