import math

import numpy as np
import pytest
import scipy.linalg

from expadr.backends import DenseAction, UnsupportedCapability, assemble_dense
from expadr.grid import (DIRICHLET_NEUMANN, PERIODIC, Discretization, GridSpec, ProblemDef,
                         SplitConfig)
from expadr.presets import nl1d
from expadr.schemes import SCHEME_NAMES, SchemeSpec, scheme_spec
from expadr.steppers import (IntegrationPlan, SplitSystem, integrate, krylov_tolerance,
                             make_backend, step)

LINEAR_EXACT = ["ee", "le", "l2a", "l2b", "erk2p1", "erk2p2"]


def forced_problem(bc=PERIODIC, n=16):
    """Variable coefficients and a time-dependent nonlinear reaction."""
    lo, hi = (-math.pi, math.pi) if bc == PERIODIC else (0.0, 1.0)
    prob = ProblemDef(
        diffusion=(lambda x: 1.0 + 0.5 * np.sin(x[0]) ** 2,),
        velocity=(lambda x: 0.3 + 0.2 * np.cos(x[0]),),
        u0=lambda x: np.sin(x[0]) + 0.2,
        T=0.1,
        reaction=lambda t, x, u: u * (1.0 - u) + np.cos(3 * t) * np.sin(x[0]),
        form="divergence" if bc == PERIODIC else "nondivergence",
        autonomous=False,
    )
    return Discretization(prob, GridSpec((n,), ((lo, hi),), bc))


def heat(a=0.8, b=0.3, n=32):
    prob = ProblemDef(diffusion=(lambda x: np.full(x[0].shape, a),),
                      velocity=(lambda x: np.full(x[0].shape, b),),
                      u0=lambda x: np.sin(x[0]), T=1.0)
    return Discretization(prob, GridSpec((n,), ((-math.pi, math.pi),), PERIODIC))


# -- independent dense transcription ---------------------------------------------------------


def _phi_block(M, k):
    n = M.shape[0]
    big = np.zeros(((k + 1) * n, (k + 1) * n))
    big[:n, :n] = M
    for j in range(k):
        big[j * n:(j + 1) * n, (j + 1) * n:(j + 2) * n] = np.eye(n)
    return scipy.linalg.expm(big)[:n, k * n:]


def dense_step(name, A, F, J, u, t, tau, alpha=0.327, c2=1.0):
    """The formulas written with dense matrices; F(t, u) is the full right-hand side."""
    n = A.shape[0]
    E = lambda s: scipy.linalg.expm(s * A)  # noqa: E731
    P1 = lambda s: _phi_block(s * A, 1)  # noqa: E731
    P2 = lambda s: _phi_block(s * A, 2)  # noqa: E731
    I = np.eye(n)
    g = lambda s, v: F(s, v) - A @ v  # noqa: E731
    if name == "ee":
        return u + tau * P1(tau) @ F(t, u)
    if name == "le":
        return E(tau) @ (u + tau * g(t, u))
    if name == "sle":
        return u + tau * E(tau) @ F(t, u)
    if name == "l2a":
        U = E(tau / 2) @ (u + tau / 2 * g(t, u))
        return E(tau) @ u + tau * E(tau / 2) @ g(t + tau / 2, U)
    if name == "l2b":
        U = E(tau) @ (u + tau * g(t, u))
        return E(tau) @ (u + tau / 2 * g(t, u)) + tau / 2 * g(t + tau, U)
    if name == "sl2":
        U = u + alpha * tau * E(alpha * tau) @ F(t, u)
        return (u + tau * E(tau / 2) @ F(t, u)
                + tau / (2 * alpha) * E(tau) @ (g(t + alpha * tau, U) - g(t, u)))
    if name in ("erk2p1", "erk2p2"):
        U = u + c2 * tau * P1(c2 * tau) @ F(t, u)
        d = g(t + c2 * tau, U) - g(t, u)
        corr = tau / c2 * P2(tau) @ d if name == "erk2p2" else tau / (2 * c2) * P1(tau) @ d
        return u + tau * P1(tau) @ F(t, u) + corr
    if name == "bfe":
        return np.linalg.solve(I - tau * A, u + tau * g(t, u))
    if name == "imex2":
        U = np.linalg.solve(I - tau / 2 * A, u + tau / 2 * g(t, u))
        return np.linalg.solve(I - tau / 2 * A, u + tau / 2 * A @ u + tau * g(t + tau / 2, U))
    if name == "erbe":
        return u + tau * _phi_block(tau * J, 1) @ F(t, u)
    raise KeyError(name)


@pytest.mark.parametrize("name", SCHEME_NAMES)
def test_dense_formula_oracle(name):
    if name == "erbe":
        p = nl1d(16)
        disc = Discretization(p.problem, p.grid)
    else:
        disc = forced_problem()
    sy = SplitSystem(disc, disc.split(0.6))
    A = assemble_dense(sy.A, sy.shape)
    be = DenseAction(A, sy.shape)
    rng = np.random.default_rng(1)
    u = disc.initial() + 0.1 * rng.standard_normal(16)
    t, tau = 0.3, 0.01
    J = assemble_dense(lambda v: disc.jacobian_matvec(t, u, v), sy.shape) if name == "erbe" else None
    got = step(name, sy, be, u, t, tau, krylov_tol=1e-15)
    ref = dense_step(name, A, disc.rhs, J, u, t, tau)
    assert np.max(np.abs(got - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


@pytest.mark.parametrize("name", ["le", "sle", "l2a", "l2b", "sl2", "bfe", "imex2"])
def test_dense_formula_oracle_kron(name):
    disc = forced_problem(DIRICHLET_NEUMANN)
    sy = SplitSystem(disc, disc.split(0.8))
    A = sy.kron.dense()
    be = make_backend("kron", sy)
    u = disc.initial()
    got = step(name, sy, be, u, 0.2, 0.004)
    ref = dense_step(name, A, disc.rhs, None, u, 0.2, 0.004)
    assert np.max(np.abs(got - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_original_formulation_uses_reaction_only():
    disc = forced_problem()
    sy = SplitSystem(disc)
    u = disc.initial()
    assert np.allclose(sy.g(0.5, u), disc.reaction(0.5, u))
    assert np.allclose(sy.A(u) + sy.g(0.5, u), disc.rhs(0.5, u), atol=1e-12)


# -- exactness dichotomy ---------------------------------------------------------------------


@pytest.mark.parametrize("name", LINEAR_EXACT)
def test_exact_on_linear_problems(name):
    disc = heat()
    sy = SplitSystem(disc, disc.split(1.0))
    be = make_backend("fourier", sy)
    u = np.random.default_rng(3).standard_normal(32)
    tau = 0.05
    assert np.max(np.abs(sy.g(0.0, u))) < 1e-12
    ref = be.exp(tau, u)
    assert np.max(np.abs(step(name, sy, be, u, 0.0, tau) - ref)) <= 1e-12


@pytest.mark.parametrize("name,expected", [("sle", 2.0), ("sl2", 3.0)])
def test_stabilized_not_exact(name, expected):
    disc = heat()
    sy = SplitSystem(disc, disc.split(1.0))
    be = make_backend("fourier", sy)
    x = disc.grid.coords()[0]
    u = np.sin(x) + 0.5 * np.cos(2 * x)
    d = [np.max(np.abs(step(name, sy, be, u, 0.0, tau) - be.exp(tau, u))) for tau in (1e-2, 5e-3)]
    assert d[0] > 1e-8
    assert math.log2(d[0] / d[1]) == pytest.approx(expected, abs=0.2)
    # sle is u + tau e^{tau A} A u
    if name == "sle":
        tau = 0.05
        ref = u + tau * be.exp(tau, be.apply(u))
        assert np.allclose(step("sle", sy, be, u, 0.0, tau), ref, atol=1e-13)


@pytest.mark.parametrize("name", [s for s in SCHEME_NAMES if s != "erbe"])
def test_no_dynamics_leaves_state(name):
    prob = ProblemDef(diffusion=(lambda x: np.ones_like(x[0]),), u0=lambda x: np.sin(x[0]), T=1.0)
    disc = Discretization(prob, GridSpec((16,), ((-math.pi, math.pi),), PERIODIC))
    sy = SplitSystem(disc, SplitConfig(0.0, (1.0,), (0.0,)))
    # A = 0 and F vanishes on a constant field without reaction, so g = 0 as well
    be = make_backend("fourier", sy)
    u = np.full(16, 0.7)
    assert np.allclose(step(name, sy, be, u, 0.0, 0.1), u, rtol=0, atol=1e-15)


def test_capability_mismatch_names_scheme_and_backend():
    disc = forced_problem(DIRICHLET_NEUMANN)
    sy = SplitSystem(disc, disc.split(0.8))
    be = make_backend("kron", sy)
    with pytest.raises(UnsupportedCapability, match=r"erk2p1.*kron"):
        step("erk2p1", sy, be, disc.initial(), 0.0, 0.01)
    with pytest.raises(UnsupportedCapability):
        integrate(IntegrationPlan("ee", 2, 0.1), sy, be, disc.initial())


def test_erbe_rejects_non_autonomous():
    disc = forced_problem()
    sy = SplitSystem(disc, disc.split(0.5))
    with pytest.raises(ValueError):
        step("erbe", sy, make_backend("fourier", sy), disc.initial(), 0.0, 0.01)


def test_determinism():
    disc = forced_problem()
    sy = SplitSystem(disc, disc.split(0.5))
    be = make_backend("fourier", sy)
    u = disc.initial()
    for name in ("sl2", "erk2p2", "imex2"):
        a = step(name, sy, be, u, 0.1, 0.01)
        b = step(name, sy, be, u, 0.1, 0.01)
        assert np.array_equal(a, b)


# -- driver ----------------------------------------------------------------------------------


def test_plan_validation():
    with pytest.raises(ValueError):
        IntegrationPlan("ee", 0, 1.0)
    with pytest.raises(ValueError):
        IntegrationPlan("ee", 2.5, 1.0)
    with pytest.raises(ValueError):
        IntegrationPlan("ee", 4, 0.0)
    with pytest.raises(ValueError):
        IntegrationPlan("rk4", 4, 1.0)
    assert IntegrationPlan("ee", 40, 1.0).tau * 40 == 1.0


def test_one_step_plan_is_one_step():
    disc = forced_problem()
    sy = SplitSystem(disc, disc.split(0.5))
    be = make_backend("fourier", sy)
    u = disc.initial()
    res = integrate(IntegrationPlan("l2a", 1, 0.02), sy, be, u)
    assert np.array_equal(res.u, step("l2a", sy, be, u, 0.0, 0.02))
    assert res.norms.shape == (1,) and not res.blowup


@pytest.mark.parametrize("m", [1, 3, 10])
def test_heat_equation_ee(m):
    prob = ProblemDef(diffusion=(lambda x: np.ones_like(x[0]),), u0=lambda x: np.sin(x[0]), T=0.7)
    disc = Discretization(prob, GridSpec((32,), ((-math.pi, math.pi),), PERIODIC))
    sy = SplitSystem(disc, disc.split(1.0))
    res = integrate(IntegrationPlan("ee", m, 0.7), sy, make_backend("fourier", sy), disc.initial())
    assert np.max(np.abs(res.u - math.exp(-0.7) * np.sin(disc.grid.coords()[0]))) < 1e-13


def test_blowup_reported():
    disc = heat(n=32)
    sy = SplitSystem(disc, SplitConfig(0.0, (0.8,), (0.0,)))
    be = make_backend("fourier", sy)
    u = np.random.default_rng(0).standard_normal(32)
    res = integrate(IntegrationPlan("le", 200, 20.0), sy, be, u)
    assert res.blowup and res.blowup_step is not None and res.blowup_step <= 200
    assert len(res.norms) == res.blowup_step


@pytest.mark.parametrize("name", ["ee", "l2b", "sl2", "imex2", "erk2p2"])
def test_fourier_and_dense_integrations_agree(name):
    p = nl1d(32)
    disc = Discretization(p.problem, p.grid)
    sy = SplitSystem(disc, disc.split(0.7))
    plan = IntegrationPlan(name, 20, 0.05)
    a = integrate(plan, sy, make_backend("fourier", sy), disc.initial()).u
    b = integrate(plan, sy, make_backend("dense", sy), disc.initial()).u
    assert np.max(np.abs(a - b)) <= 1e-9 * np.max(np.abs(b))


def test_krylov_tolerance():
    assert krylov_tolerance(2, 0.1) == pytest.approx(1e-5)
    assert krylov_tolerance(1, 0.01) == pytest.approx(1e-6)


def test_original_formulation_krylov_matches_dense():
    p = nl1d(32)
    disc = Discretization(p.problem, p.grid)
    sy = SplitSystem(disc)
    plan = IntegrationPlan("erk2p2", 10, 0.01)
    a = integrate(plan, sy, make_backend("krylov", sy, tol=1e-13), disc.initial()).u
    b = integrate(plan, sy, make_backend("dense", sy), disc.initial()).u
    assert np.max(np.abs(a - b)) <= 1e-10


def test_asymptotic_orders_nl1d():
    # past the pre-asymptotic range every scheme shows its nominal rate
    from expadr.bench import convergence_orders

    out = convergence_orders(["le", "l2b"], steps=[2**11, 2**12], n=128, ref_steps=2**15)
    assert math.log2(out["le"][1][0] / out["le"][1][1]) == pytest.approx(1.0, abs=0.15)
    assert math.log2(out["l2b"][1][0] / out["l2b"][1][1]) == pytest.approx(2.0, abs=0.2)


def test_scheme_spec_parameters_reach_steps():
    disc = forced_problem()
    sy = SplitSystem(disc, disc.split(0.6))
    A = assemble_dense(sy.A, sy.shape)
    be = DenseAction(A, sy.shape)
    u = disc.initial()
    for spec in (SchemeSpec("sl2", alpha=0.5), SchemeSpec("erk2p1", c2=0.5), SchemeSpec("erk2p2", c2=0.5)):
        got = step(spec, sy, be, u, 0.0, 0.01)
        ref = dense_step(spec.id, A, disc.rhs, None, u, 0.0, 0.01, alpha=spec.alpha, c2=spec.c2)
        assert np.max(np.abs(got - ref)) < 1e-12
    assert scheme_spec("sl2").alpha == pytest.approx(0.327)


@pytest.mark.parametrize("name", ["sle", "le", "l2a", "erk2p1", "sl2", "bfe"])
def test_threshold_fidelity_lin1d(name):
    from expadr.bench import REFERENCE_THRESHOLDS, VALIDATION_STEPS
    from expadr.presets import lin1d, lin1d_exact
    from expadr.tuner import error_inf_rel

    # the unstable band of z is resolution dependent, so use the stated N = 2^12
    p = lin1d()
    disc = Discretization(p.problem, p.grid)
    ref = lin1d_exact(p.grid.coords()[0], p.problem.T)

    def worst(lam):
        sy = SplitSystem(disc, disc.split(lam))
        be = make_backend("fourier", sy)
        out = 0.0
        for m in VALIDATION_STEPS:
            res = integrate(IntegrationPlan(name, m, p.problem.T), sy, be, disc.initial())
            out = max(out, math.inf if res.blowup else error_inf_rel(res.u, ref))
            if out > 0.1:
                break
        return out

    assert worst(REFERENCE_THRESHOLDS[name] + 0.01) < 0.1
    assert worst(REFERENCE_THRESHOLDS[name] - 0.02) > 0.1
