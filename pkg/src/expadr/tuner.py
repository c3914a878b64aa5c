"""Coarse-grid scan for the error-minimizing splitting parameter lambda."""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np

from expadr.backends import KRYLOV_MMAX
from expadr.grid import Discretization, GridSpec, ProblemDef
from expadr.schemes import SchemeSpec, scheme_spec
from expadr.stability import lambda_threshold
from expadr.steppers import (IntegrationPlan, SplitSystem, integrate, krylov_tolerance,
                             make_backend)

log = logging.getLogger(__name__)

REF_SCHEME = "l2b"
REF_LAMBDA = 0.5
REF_FACTOR = 8
DEFAULT_POINTS = 20
ADMISSIBLE_SLACK = 1e-3


class ScanFailure(RuntimeError):
    pass


@functools.lru_cache(maxsize=None)
def threshold(spec: SchemeSpec) -> float:
    """Stability threshold of a scheme, 1e-4 bisection (erbe has none: 0)."""
    if spec.id == "erbe":
        return 0.0
    return lambda_threshold(spec, tol=1e-4)


def default_lambda_grid(spec, points=DEFAULT_POINTS, floor=0.0):
    spec = scheme_spec(spec)
    lo = max(threshold(spec), floor)
    return np.linspace(lo, 1.0, points) if points > 1 else np.array([lo])


def choose_backend(system: SplitSystem, spec: SchemeSpec):
    """Fourier on periodic grids, mu-mode where only exponentials are needed, else Krylov."""
    if system.symbol is not None:
        return "fourier"
    if system.kron is not None and spec.requires <= {"exp", "solve", "apply"}:
        return "kron"
    return "krylov"


def run(problem: ProblemDef, grid: GridSpec, spec, m, T, lam, backend=None,
        disc=None, krylov_tol=None, krylov_mmax=KRYLOV_MMAX):
    """Integrate once in the accelerated formulation; returns IntegrationResult."""
    spec = scheme_spec(spec)
    disc = Discretization(problem, grid) if disc is None else disc
    sy = SplitSystem(disc, disc.split(lam))
    kind = backend or choose_backend(sy, spec)
    tau = T / m
    tol = krylov_tolerance(spec.order, tau) if krylov_tol is None else krylov_tol
    be = make_backend(kind, sy, tol=tol)
    if kind == "krylov":
        be.m_max = krylov_mmax
    return integrate(IntegrationPlan(spec, m, T), sy, be, disc.initial(), krylov_tol=tol,
                     krylov_mmax=krylov_mmax)


def error_inf_rel(u, ref):
    """max|u - ref| / max|ref|."""
    u = np.asarray(u)
    ref = np.asarray(ref)
    if u.shape != ref.shape:
        raise ValueError("shapes differ")
    den = np.max(np.abs(ref))
    if den == 0:
        raise ValueError("reference is identically zero")
    return float(np.max(np.abs(u - ref)) / den)


@dataclass
class ScanReport:
    scheme: SchemeSpec
    lambdas: np.ndarray
    errors: np.ndarray
    blowups: np.ndarray
    lambda_best: float
    n: tuple
    m: int
    m_ref: int

    def table(self):
        lines = ["lambda,error,blowup"]
        for lam, err, bl in zip(self.lambdas, self.errors, self.blowups):
            lines.append(f"{lam:.17g},{err:.17g},{int(bl)}")
        return "\n".join(lines)

    def summary(self):
        i = int(np.argmin(self.errors))
        return (f"{self.scheme}: lambda_best={self.lambda_best:.4f} error={self.errors[i]:.3e} "
                f"(N={'x'.join(map(str, self.n))}, m={self.m}, reference m={self.m_ref})")


def scan_reference(problem, grid, m, T, disc=None):
    res = run(problem, grid, REF_SCHEME, REF_FACTOR * m, T, REF_LAMBDA, disc=disc)
    if res.blowup:
        raise ScanFailure("reference run blew up")
    return res.u


def scan_lambda(spec, problem: ProblemDef, grid: GridSpec, m, T=None, lambda_grid=None,
                reference=None, backend=None) -> ScanReport:
    """Run the scheme for each lambda on a coarse grid and pick the smallest error."""
    spec = scheme_spec(spec)
    T = problem.T if T is None else T
    lams = default_lambda_grid(spec) if lambda_grid is None else np.sort(np.asarray(lambda_grid, float))
    lam_star = threshold(spec)
    if lams.size == 0:
        raise ValueError("empty lambda grid")
    if lams[0] < lam_star - ADMISSIBLE_SLACK or lams[-1] > 1.0:
        raise ValueError(f"lambda grid must lie in [{lam_star:.4f}, 1] for {spec}")
    disc = Discretization(problem, grid)
    ref = scan_reference(problem, grid, m, T, disc) if reference is None else reference
    errs = np.empty(lams.size)
    blows = np.zeros(lams.size, dtype=bool)
    for i, lam in enumerate(lams):
        res = run(problem, grid, spec, m, T, float(lam), backend=backend, disc=disc)
        blows[i] = res.blowup
        errs[i] = np.inf if res.blowup else error_inf_rel(res.u, ref)
        log.debug("%s lambda=%.4f error=%.3e", spec, lam, errs[i])
    if np.all(blows):
        raise ScanFailure(f"every lambda blew up for {spec}; check the threshold configuration")
    best = float(lams[int(np.argmin(errs))])  # first minimum: ties go to smaller lambda
    return ScanReport(spec, lams, errs, blows, best, grid.n, m, REF_FACTOR * m)
