"""One-step integrators for u' = A u + g(t, u) and a constant-step driver.

Each step function follows its defining formula stage by stage; g is
evaluated exactly as often as the formula requires.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from expadr.backends import (DenseAction, FourierAction, KronAction, KrylovAction,
                             KRYLOV_MMAX, LinearAction, assemble_dense,
                             krylov_phi_action)
from expadr.grid import Discretization, SplitConfig, build_fd_kron, build_fourier_symbol, mode_product
from expadr.schemes import SchemeSpec, scheme_spec

log = logging.getLogger(__name__)

BLOWUP_NORM = 1e10


class SplitSystem:
    """F = A u + g for one discretization.

    With a SplitConfig, A is the constant-coefficient operator and
    g = F - A u (accelerated formulation).  With split=None, A is the full
    linear part of F and g is the reaction alone (original formulation).
    """

    def __init__(self, disc: Discretization, split: SplitConfig | None = None):
        self.disc = disc
        self.split = split
        self.symbol = None
        self.kron = None
        if split is not None:
            if split.lam == 0.0:
                log.warning("lambda = 0: A carries no diffusion, stepping is explicit")
            if disc.method == "spectral":
                self.symbol = build_fourier_symbol(disc, split)
            else:
                self.kron = build_fd_kron(disc.grid, split)

    @property
    def accelerated(self):
        return self.split is not None

    @property
    def shape(self):
        return self.disc.grid.shape

    def A(self, u):
        if self.split is None:
            return self.disc.linear_part(u)
        if self.symbol is not None:
            return self.disc.inv(self.symbol * self.disc.fwd(u))
        return sum(mode_product(u, Am, mu) for mu, Am in enumerate(self.kron.factors))

    def F(self, t, u):
        return self.disc.rhs(t, u)

    def g(self, t, u):
        if self.split is None:
            return self.disc.reaction(t, u)
        if self.symbol is not None:
            return self.disc.linear_part(u, self.symbol) + self.disc.reaction(t, u)
        return self.disc.rhs(t, u) - self.A(u)

    def jacobian_matvec(self, t, u, v):
        return self.disc.jacobian_matvec(t, u, v)


def make_backend(kind, system: SplitSystem, tol=1e-10) -> LinearAction:
    """Build a backend for the system's A."""
    if kind == "fourier":
        if system.symbol is None:
            raise ValueError("the Fourier backend needs the accelerated formulation on a periodic grid")
        return FourierAction(system.disc, system.symbol)
    if kind == "kron":
        if system.kron is None:
            raise ValueError("the Kronecker backend needs the accelerated formulation on a finite-difference grid")
        return KronAction(system.kron)
    if kind == "dense":
        return DenseAction(assemble_dense(system.A, system.shape), system.shape)
    if kind == "krylov":
        return KrylovAction(system.A, tol=tol)
    raise ValueError(f"unknown backend {kind!r}")


def krylov_tolerance(order, tau):
    """tau^(p+1)/100, the fixed Arnoldi target for an order-p scheme."""
    return tau ** (order + 1) / 100.0


# -- steps -----------------------------------------------------------------------------------


def step_ee(sy, be, u, t, tau, spec, **kw):
    return u + tau * be.phi1(tau, sy.F(t, u))


def step_le(sy, be, u, t, tau, spec, **kw):
    return be.exp(tau, u + tau * sy.g(t, u))


def step_sle(sy, be, u, t, tau, spec, **kw):
    return u + tau * be.exp(tau, sy.F(t, u))


def step_l2a(sy, be, u, t, tau, spec, **kw):
    h = 0.5 * tau
    U = be.exp(h, u + h * sy.g(t, u))
    return be.exp(tau, u) + tau * be.exp(h, sy.g(t + h, U))


def step_l2b(sy, be, u, t, tau, spec, **kw):
    gn = sy.g(t, u)
    U = be.exp(tau, u + tau * gn)
    return be.exp(tau, u + 0.5 * tau * gn) + 0.5 * tau * sy.g(t + tau, U)


def step_sl2(sy, be, u, t, tau, spec, **kw):
    a = spec.alpha
    Fn = sy.F(t, u)
    U = u + a * tau * be.exp(a * tau, Fn)
    return (u + tau * be.exp(0.5 * tau, Fn)
            + tau / (2.0 * a) * be.exp(tau, sy.g(t + a * tau, U) - sy.g(t, u)))


def step_erk2p2(sy, be, u, t, tau, spec, **kw):
    c2 = spec.c2
    Fn = sy.F(t, u)
    U = u + c2 * tau * be.phi1(c2 * tau, Fn)
    return (u + tau * be.phi1(tau, Fn)
            + tau / c2 * be.phi2(tau, sy.g(t + c2 * tau, U) - sy.g(t, u)))


def step_erk2p1(sy, be, u, t, tau, spec, **kw):
    c2 = spec.c2
    Fn = sy.F(t, u)
    U = u + c2 * tau * be.phi1(c2 * tau, Fn)
    return (u + tau * be.phi1(tau, Fn)
            + tau / (2.0 * c2) * be.phi1(tau, sy.g(t + c2 * tau, U) - sy.g(t, u)))


def step_bfe(sy, be, u, t, tau, spec, **kw):
    return be.solve(tau, u + tau * sy.g(t, u))


def step_imex2(sy, be, u, t, tau, spec, **kw):
    h = 0.5 * tau
    U = be.solve(h, u + h * sy.g(t, u))
    return be.solve(h, u + h * be.apply(u) + tau * sy.g(t + h, U))


def step_erbe(sy, be, u, t, tau, spec, krylov_tol=None, krylov_mmax=KRYLOV_MMAX, **kw):
    if not sy.disc.problem.autonomous:
        raise ValueError("erbe is defined for autonomous problems only")
    tol = krylov_tolerance(1, tau) if krylov_tol is None else krylov_tol

    def jv(v):
        return sy.jacobian_matvec(t, u, v)

    return u + tau * krylov_phi_action(jv, "phi1", tau, sy.F(t, u), tol, m_max=krylov_mmax)


STEPS = {
    "ee": step_ee, "le": step_le, "sle": step_sle, "l2a": step_l2a, "l2b": step_l2b,
    "sl2": step_sl2, "erk2p2": step_erk2p2, "erk2p1": step_erk2p1, "bfe": step_bfe,
    "imex2": step_imex2, "erbe": step_erbe,
}


def step(spec, system, backend, u, t, tau, **kw):
    spec = scheme_spec(spec)
    backend.require(spec.requires, str(spec))
    return STEPS[spec.id](system, backend, u, t, tau, spec, **kw)


# -- driver ------------------------------------------------------------------------------------


@dataclass(frozen=True)
class IntegrationPlan:
    scheme: SchemeSpec
    m: int
    T: float

    def __post_init__(self):
        object.__setattr__(self, "scheme", scheme_spec(self.scheme))
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"number of steps must be a positive integer, got {self.m}")
        if not self.T > 0:
            raise ValueError("final time must be positive")

    @property
    def tau(self):
        return self.T / self.m


@dataclass
class IntegrationResult:
    u: np.ndarray
    norms: np.ndarray
    blowup: bool = False
    blowup_step: int | None = None
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)


def integrate(plan: IntegrationPlan, system: SplitSystem, backend: LinearAction, u0,
              krylov_tol=None, krylov_mmax=KRYLOV_MMAX) -> IntegrationResult:
    """m constant steps from t=0; stops early on a non-finite or huge field."""
    spec = plan.scheme
    backend.require(spec.requires, str(spec))
    fn = STEPS[spec.id]
    tau = plan.tau
    u = np.array(u0, dtype=float, copy=True)
    if u.shape != system.shape:
        raise ValueError(f"initial field shape {u.shape} does not match grid {system.shape}")
    norms = np.empty(plan.m)
    t0 = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(plan.m):
            with system.disc.transform_memo():
                u = fn(system, backend, u, n * tau, tau, spec, krylov_tol=krylov_tol,
                       krylov_mmax=krylov_mmax)
            nrm = float(np.max(np.abs(u)))
            norms[n] = nrm
            if not np.isfinite(nrm) or nrm > BLOWUP_NORM:
                return IntegrationResult(u, norms[: n + 1], True, n + 1,
                                         time.perf_counter() - t0)
    return IntegrationResult(u, norms, False, None, time.perf_counter() - t0)
