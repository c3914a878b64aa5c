"""Spatial discretization and the constant-coefficient split.

The semidiscrete right-hand side F(t, u) = A u + g(t, u) is split into a
constant-coefficient part

    A = lam * sum_mu amax_mu d_mu^2 + sum_mu beta_mu d_mu

and the remainder g, which is always evaluated as F - A u so that the split
identity holds exactly at the discrete level.

Periodic grids are differentiated spectrally on real FFT coefficients; the
mixed Dirichlet/Neumann grids use second-order centred differences whose
one-dimensional matrices combine into a Kronecker sum.
"""

from __future__ import annotations

import contextlib
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.fft

PERIODIC = "periodic"
DIRICHLET_NEUMANN = "dirichlet_neumann"

DIVERGENCE = "divergence"
NONDIVERGENCE = "nondivergence"


try:
    import pyfftw
except ImportError:  # pragma: no cover - scipy fallback
    pyfftw = None


def fft_workers():
    """Thread count for transforms, from EXPADR_THREADS when set."""
    val = os.environ.get("EXPADR_THREADS")
    return int(val) if val else 1


class RealTransform:
    """Forward/inverse real FFT pair for one shape.

    Uses planned FFTW transforms when pyfftw is available and scipy.fft
    otherwise.  Outputs are always fresh arrays.
    """

    def __init__(self, shape, workers=1):
        self.shape = tuple(shape)
        self.workers = workers
        self.size = int(np.prod(self.shape))
        self._lock = threading.Lock()
        if pyfftw is None:
            self._fw = None
            return
        hshape = self.shape[:-1] + (self.shape[-1] // 2 + 1,)
        flags = ("FFTW_MEASURE",) if self.size <= 2**16 else ("FFTW_ESTIMATE",)
        axes = tuple(range(len(self.shape)))
        self._rin = pyfftw.empty_aligned(self.shape, dtype="float64")
        self._cout = pyfftw.empty_aligned(hshape, dtype="complex128")
        self._cin = pyfftw.empty_aligned(hshape, dtype="complex128")
        self._rout = pyfftw.empty_aligned(self.shape, dtype="float64")
        self._fw = pyfftw.FFTW(self._rin, self._cout, axes=axes, flags=flags, threads=workers)
        self._bw = pyfftw.FFTW(self._cin, self._rout, axes=axes, direction="FFTW_BACKWARD",
                               flags=flags + ("FFTW_DESTROY_INPUT",), threads=workers)

    def forward(self, u):
        if self._fw is None:
            return scipy.fft.rfftn(u, workers=self.workers)
        with self._lock:
            self._rin[...] = u
            self._fw.execute()
            return self._cout.copy()

    def inverse(self, uh):
        if self._fw is None:
            return scipy.fft.irfftn(uh, s=self.shape, workers=self.workers)
        with self._lock:
            self._cin[...] = uh
            self._bw.execute()
            return self._rout * (1.0 / self.size)


@dataclass(frozen=True)
class GridSpec:
    n: tuple
    box: tuple
    bc: str = PERIODIC

    def __post_init__(self):
        n = tuple(int(k) for k in self.n)
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "box", box)
        if not 1 <= len(n) <= 3:
            raise ValueError(f"grids have 1 to 3 directions, got {len(n)}")
        if len(box) != len(n):
            raise ValueError("box and n must have one entry per direction")
        if min(n) < 4:
            raise ValueError(f"every direction needs at least 4 points, got {n}")
        if any(hi <= lo for lo, hi in box):
            raise ValueError(f"degenerate box {box}")
        if self.bc not in (PERIODIC, DIRICHLET_NEUMANN):
            raise ValueError(f"unknown boundary condition {self.bc!r}")

    @classmethod
    def uniform(cls, dim, n, lo, hi, bc=PERIODIC):
        return cls((n,) * dim, ((lo, hi),) * dim, bc)

    @property
    def dim(self):
        return len(self.n)

    @property
    def shape(self):
        return self.n

    @property
    def size(self):
        return int(np.prod(self.n))

    @property
    def periodic(self):
        return self.bc == PERIODIC

    @property
    def lengths(self):
        return tuple(hi - lo for lo, hi in self.box)

    @property
    def spacing(self):
        return tuple(L / n for L, n in zip(self.lengths, self.n))

    def coords(self):
        """Node coordinates per direction.

        Periodic grids drop the right endpoint.  Mixed grids drop the
        Dirichlet node at the left end and keep the Neumann node at the right.
        """
        out = []
        for (lo, _), n, h in zip(self.box, self.n, self.spacing):
            j = np.arange(n) if self.periodic else np.arange(1, n + 1)
            out.append(lo + h * j)
        return out

    def mesh(self):
        return tuple(np.meshgrid(*self.coords(), indexing="ij"))


@dataclass
class ProblemDef:
    """Continuous data of  u_t = div(a grad u) + div(b u) + r(t, x, u).

    With form="nondivergence" the operator is  a Lap u + b . grad u + r
    instead.  Coefficients are callables of the meshgrid tuple x; the
    diffusion tensor is diagonal, one callable per direction.
    """

    diffusion: Sequence[Callable]
    u0: Callable
    T: float
    velocity: Sequence[Callable] | None = None
    reaction: Callable | None = None
    reaction_du: Callable | None = None
    form: str = DIVERGENCE
    autonomous: bool = True
    name: str = ""

    def __post_init__(self):
        if self.form not in (DIVERGENCE, NONDIVERGENCE):
            raise ValueError(f"unknown operator form {self.form!r}")


@dataclass(frozen=True)
class SplitConfig:
    lam: float
    a_max: tuple
    beta: tuple

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        object.__setattr__(self, "a_max", tuple(float(v) for v in self.a_max))
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))


@dataclass
class KroneckerSum:
    """A_d (+) ... (+) A_1, stored as factors[mu] acting along array axis mu."""

    factors: list = field(default_factory=list)

    @property
    def shape(self):
        return tuple(f.shape[0] for f in self.factors)

    def dense(self):
        """Assemble sum_mu I (x) ... (x) A_mu (x) ... (x) I for C-ordered vectors."""
        sizes = self.shape
        total = int(np.prod(sizes))
        out = np.zeros((total, total), dtype=np.result_type(*self.factors))
        for mu, A in enumerate(self.factors):
            term = np.array([[1.0]])
            for nu, n in enumerate(sizes):
                term = np.kron(term, A if nu == mu else np.eye(n))
            out += term
        return out

    def sparse(self):
        import scipy.sparse as sp

        sizes = self.shape
        out = None
        for mu, A in enumerate(self.factors):
            term = sp.identity(1, format="csr")
            for nu, n in enumerate(sizes):
                term = sp.kron(term, sp.csr_matrix(A) if nu == mu else sp.identity(n), format="csr")
            out = term if out is None else out + term
        return out.tocsc()


def mode_product(V, M, mu):
    """Contract axis mu of the tensor V with the matrix M (V x_mu M)."""
    return np.moveaxis(np.tensordot(M, V, axes=(1, mu)), 0, mu)


def fd_matrices(n, h, bc):
    """Centred first and second difference matrices for one direction."""
    D1 = np.zeros((n, n))
    D2 = np.zeros((n, n))
    i = np.arange(n)
    D2[i, i] = -2.0
    D2[i[1:], i[:-1]] = 1.0
    D2[i[:-1], i[1:]] = 1.0
    D1[i[:-1], i[1:]] = 1.0
    D1[i[1:], i[:-1]] = -1.0
    if bc == PERIODIC:
        D2[0, -1] = D2[-1, 0] = 1.0
        D1[0, -1] = -1.0
        D1[-1, 0] = 1.0
    else:
        # left neighbour of row 0 is the eliminated Dirichlet node (value 0);
        # right end mirrors the ghost node u_{N+1} = u_{N-1}
        D2[-1, -2] = 2.0
        D1[-1, :] = 0.0
    return D1 / (2.0 * h), D2 / (h * h)


class Discretization:
    """Method-of-lines discretization of a ProblemDef on a GridSpec."""

    def __init__(self, problem: ProblemDef, grid: GridSpec, method=None):
        if method is None:
            method = "spectral" if grid.periodic else "fd"
        if method == "spectral" and not grid.periodic:
            raise ValueError("spectral differentiation needs a periodic grid")
        if len(problem.diffusion) != grid.dim:
            raise ValueError("one diffusion coefficient per direction is required")
        self.problem = problem
        self.grid = grid
        self.method = method
        self.X = grid.mesh()
        shape = grid.shape
        self.a = [np.broadcast_to(np.asarray(f(self.X), dtype=float), shape).copy()
                  for f in problem.diffusion]
        if any(np.any(a <= 0) for a in self.a):
            raise ValueError("diffusion coefficients must be positive on the grid")
        if problem.velocity is None:
            self.b = None
        else:
            self.b = [np.broadcast_to(np.asarray(f(self.X), dtype=float), shape).copy()
                      for f in problem.velocity]
        self.workers = fft_workers()
        self._memo = None
        self._fft = RealTransform(shape, self.workers) if method == "spectral" else None
        if method == "spectral":
            self._setup_spectral()
        else:
            self._setup_fd()

    # -- differentiation backends -------------------------------------------------

    def _setup_spectral(self):
        g = self.grid
        d = g.dim
        self.kappa2 = []
        self.ikappa = []
        for mu, (n, L) in enumerate(zip(g.n, g.lengths)):
            if mu == d - 1:
                k = scipy.fft.rfftfreq(n, 1.0 / n)
            else:
                k = scipy.fft.fftfreq(n, 1.0 / n)
            kappa = 2.0 * np.pi / L * k
            k1 = kappa.copy()
            if n % 2 == 0:
                # no real first derivative exists for the Nyquist mode
                k1[np.abs(k) == n // 2] = 0.0
            shp = [1] * d
            shp[mu] = kappa.size
            self.kappa2.append((kappa * kappa).reshape(shp))
            self.ikappa.append((1j * k1).reshape(shp))

    def _setup_fd(self):
        self.D1 = []
        self.D2 = []
        for n, h in zip(self.grid.n, self.grid.spacing):
            D1, D2 = fd_matrices(n, h, self.grid.bc)
            self.D1.append(D1)
            self.D2.append(D2)

    def fwd(self, u):
        memo = self._memo
        if memo is not None:
            hit = memo.get(id(u))
            if hit is not None and hit[0] is u:
                return hit[1]
        uh = self._fft.forward(u)
        if memo is not None:
            memo[id(u)] = (u, uh)  # holding u keeps its id from being reused
        return uh

    def inv(self, uh):
        return self._fft.inverse(uh)

    @contextlib.contextmanager
    def transform_memo(self):
        """Share forward transforms of the same array object within the block.

        Arrays passed to fwd inside the block must not be modified in place.
        """
        prev, self._memo = self._memo, {}
        try:
            yield
        finally:
            self._memo = prev

    def d1(self, u, mu):
        if self.method == "spectral":
            return self.inv(self.ikappa[mu] * self.fwd(u))
        return mode_product(u, self.D1[mu], mu)

    def d2(self, u, mu):
        if self.method == "spectral":
            return self.inv(-self.kappa2[mu] * self.fwd(u))
        return mode_product(u, self.D2[mu], mu)

    # -- operators ----------------------------------------------------------------------

    def linear_part(self, u, minus_symbol=None):
        """All linear terms of F applied to u (diffusion and advection).

        With a Fourier symbol s, returns the linear part minus s applied to u,
        folding the subtraction into a transform that is computed anyway.
        """
        d = self.grid.dim
        if minus_symbol is not None and self.method != "spectral":
            raise ValueError("a symbol can only be subtracted on a spectral discretization")
        if self.problem.form == NONDIVERGENCE:
            if self.method == "spectral":
                uh = self.fwd(u)
                out = sum(self.a[mu] * self.inv(-self.kappa2[mu] * uh) for mu in range(d))
                if self.b is not None:
                    out = out + sum(self.b[mu] * self.inv(self.ikappa[mu] * uh) for mu in range(d))
                if minus_symbol is not None:
                    out = out - self.inv(minus_symbol * uh)
                return out
            out = sum(self.a[mu] * self.d2(u, mu) for mu in range(d))
            if self.b is not None:
                out = out + sum(self.b[mu] * self.d1(u, mu) for mu in range(d))
            return out

        if self.method == "spectral":
            uh = self.fwd(u)
            acc = 0.0
            for mu in range(d):
                flux = self.a[mu] * self.inv(self.ikappa[mu] * uh)
                if self.b is not None:
                    flux = flux + self.b[mu] * u
                acc = acc + self.ikappa[mu] * self.fwd(flux)
            if minus_symbol is not None:
                acc = acc - minus_symbol * uh
            return self.inv(acc)
        out = 0.0
        for mu in range(d):
            flux = self.a[mu] * self.d1(u, mu)
            if self.b is not None:
                flux = flux + self.b[mu] * u
            out = out + self.d1(flux, mu)
        return out

    def reaction(self, t, u):
        r = self.problem.reaction
        if r is None:
            return np.zeros_like(u)
        return np.broadcast_to(r(t, self.X, u), u.shape)

    def rhs(self, t, u):
        """F(t, u): the full semidiscrete right-hand side."""
        if u.shape != self.grid.shape:
            raise ValueError(f"field shape {u.shape} does not match grid {self.grid.shape}")
        out = self.linear_part(u)
        if self.problem.reaction is not None:
            out = out + self.reaction(t, u)
        return out

    def jacobian_matvec(self, t, u, v):
        """(A + dg/du)(u) v, i.e. the full linear part plus r_u(t, x, u) v."""
        if u.shape != self.grid.shape or v.shape != self.grid.shape:
            raise ValueError("field shape does not match grid")
        out = self.linear_part(v)
        if self.problem.reaction is not None:
            if self.problem.reaction_du is None:
                raise ValueError("the reaction has no derivative; Jacobian unavailable")
            out = out + self.problem.reaction_du(t, self.X, u) * v
        return out

    def initial(self):
        return np.broadcast_to(np.asarray(self.problem.u0(self.X), dtype=float),
                               self.grid.shape).copy()

    # -- split data -----------------------------------------------------------------------

    def compute_amax(self):
        return tuple(float(a.max()) for a in self.a)

    def compute_beta(self):
        """Domain average of b_mu (+ d_mu a_mu for divergence form) per direction."""
        d = self.grid.dim
        out = []
        for mu in range(d):
            if self.grid.periodic:
                vel = np.zeros(self.grid.shape) if self.b is None else self.b[mu]
                if self.problem.form == DIVERGENCE:
                    vel = vel + self.d1(self.a[mu], mu)
                out.append(float(vel.mean()))
            else:
                out.append(self._trapezoid_mean(mu))
        return tuple(out)

    def _trapezoid_mean(self, mu):
        # closed grid including the eliminated Dirichlet node
        g = self.grid
        closed = [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(g.box, g.n)]
        Xc = tuple(np.meshgrid(*closed, indexing="ij"))
        vel = np.zeros(tuple(n + 1 for n in g.n))
        if self.problem.velocity is not None:
            vel = vel + np.broadcast_to(self.problem.velocity[mu](Xc), vel.shape)
        if self.problem.form == DIVERGENCE:
            a = np.broadcast_to(self.problem.diffusion[mu](Xc), vel.shape)
            vel = vel + np.gradient(a, closed[mu], axis=mu, edge_order=2)
        for nu, x in enumerate(closed):
            vel = np.trapezoid(vel, x, axis=0) / (x[-1] - x[0])
        return float(vel)

    def split(self, lam, beta=None):
        return SplitConfig(lam, self.compute_amax(), self.compute_beta() if beta is None else beta)

    def fourier_symbol(self, split: SplitConfig):
        return build_fourier_symbol(self, split)

    def kron(self, split: SplitConfig, b_const=None):
        return build_fd_kron(self.grid, split, b_const)

    def apply_A(self, split: SplitConfig, u, symbol=None, kron=None):
        if self.method == "spectral":
            s = build_fourier_symbol(self, split) if symbol is None else symbol
            return self.inv(s * self.fwd(u))
        K = build_fd_kron(self.grid, split) if kron is None else kron
        return sum(mode_product(u, A, mu) for mu, A in enumerate(K.factors))

    def residual_g(self, split: SplitConfig, t, u):
        if self.method == "spectral":
            return self.linear_part(u, build_fourier_symbol(self, split)) + self.reaction(t, u)
        return self.rhs(t, u) - self.apply_A(split, u)


def build_fourier_symbol(disc: Discretization, split: SplitConfig):
    """Symbol of A on rfftn coefficients: -lam sum amax k^2 + i sum beta k.

    The second derivative follows the operator's form: in divergence form it
    is the square of the first derivative, which vanishes on the Nyquist mode,
    so that constant coefficients give g = 0 exactly.
    """
    if disc.method != "spectral":
        raise ValueError("a Fourier symbol needs a periodic spectral discretization")
    div = disc.problem.form == DIVERGENCE
    s = 0.0
    for mu in range(disc.grid.dim):
        k2 = -(disc.ikappa[mu] ** 2).real if div else disc.kappa2[mu]
        s = s - split.lam * split.a_max[mu] * k2 + split.beta[mu] * disc.ikappa[mu]
    return np.broadcast_to(s, disc.fwd(np.zeros(disc.grid.shape)).shape).astype(complex)


def build_fd_kron(grid: GridSpec, split: SplitConfig, b_const=None) -> KroneckerSum:
    """Per-direction matrices lam*amax*D2 + beta*D1 forming A as a Kronecker sum."""
    beta = split.beta if b_const is None else tuple(np.broadcast_to(b_const, (grid.dim,)))
    factors = []
    for mu, (n, h) in enumerate(zip(grid.n, grid.spacing)):
        D1, D2 = fd_matrices(n, h, grid.bc)
        factors.append(split.lam * split.a_max[mu] * D2 + beta[mu] * D1)
    return KroneckerSum(factors)
