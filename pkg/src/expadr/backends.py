"""Engines applying exp(tau A), phi_1(tau A), phi_2(tau A) and (I - h A)^{-1}.

Four interchangeable implementations share the LinearAction interface:

* FourierAction: pointwise multipliers on real FFT coefficients.
* KronAction: mu-mode products with small per-direction exponentials;
  exponential only, by design (no phi functions on Kronecker sums).
* DenseAction: assembled matrix functions; a test oracle for small grids.
* KrylovAction: Arnoldi projection with a residual-based stopping rule.

Requesting a capability a backend lacks raises UnsupportedCapability.
"""

from __future__ import annotations

import threading

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from expadr.grid import Discretization, KroneckerSum, mode_product
from expadr.phi import expm_dense, phi, phim_dense, phiv_dense

KINDS = ("exp", "phi1", "phi2", "solve", "apply")
DENSE_LIMIT = 4096
KRYLOV_MMAX = 128
DENSE_MATRIX_LIMIT = 1024  # above this, phi actions use one augmented exponential per call


class UnsupportedCapability(RuntimeError):
    pass


class KrylovError(RuntimeError):
    def __init__(self, msg, estimate):
        super().__init__(msg)
        self.estimate = estimate


class LinearAction:
    """Base class; subclasses set `name` and `capabilities`."""

    name = "abstract"
    capabilities = frozenset()

    def supports(self, kind):
        return kind in self.capabilities

    def require(self, kinds, who=""):
        missing = sorted(set(kinds) - set(self.capabilities))
        if missing:
            raise UnsupportedCapability(
                f"scheme {who or '?'} needs {', '.join(missing)}, "
                f"which the {self.name} backend does not provide")

    def act(self, kind, tau, u):
        if kind not in self.capabilities:
            raise UnsupportedCapability(f"the {self.name} backend cannot apply {kind}")
        return self._act(kind, tau, u)

    def exp(self, tau, u):
        return self.act("exp", tau, u)

    def phi1(self, tau, u):
        return self.act("phi1", tau, u)

    def phi2(self, tau, u):
        return self.act("phi2", tau, u)

    def solve(self, h, u):
        """(I - h A)^{-1} u."""
        return self.act("solve", h, u)

    def apply(self, u):
        return self.act("apply", 0.0, u)

    def _act(self, kind, tau, u):  # pragma: no cover - abstract
        raise NotImplementedError


# -- Fourier ----------------------------------------------------------------------------


def fourier_multiplier(kind, symbol, tau):
    ts = tau * symbol
    if kind == "exp":
        return np.exp(ts)
    if kind == "phi1":
        return phi(1, ts)
    if kind == "phi2":
        return phi(2, ts)
    if kind == "solve":
        den = 1.0 - ts
        if np.any(den == 0):
            raise ZeroDivisionError("singular shifted operator")
        return 1.0 / den
    if kind == "apply":
        return symbol
    raise ValueError(f"unknown kind {kind!r}")


def fourier_apply(kind, symbol, tau, u, workers=1):
    """Multiply the real FFT coefficients of u by the requested function of tau*symbol."""
    import scipy.fft

    uh = scipy.fft.rfftn(u, workers=workers)
    if uh.shape != symbol.shape:
        raise ValueError("symbol does not match the field's transform shape")
    return scipy.fft.irfftn(fourier_multiplier(kind, symbol, tau) * uh, s=u.shape, workers=workers)


class FourierAction(LinearAction):
    name = "fourier"
    capabilities = frozenset(KINDS)

    def __init__(self, disc: Discretization, symbol):
        if disc.method != "spectral":
            raise ValueError("the Fourier backend needs a periodic spectral grid")
        self.disc = disc
        self.symbol = symbol
        self._cache = {}
        self._lock = threading.Lock()

    def multiplier(self, kind, tau):
        key = (kind, float(tau))
        m = self._cache.get(key)
        if m is None:
            m = fourier_multiplier(kind, self.symbol, tau)
            with self._lock:
                self._cache[key] = m
        return m

    def _act(self, kind, tau, u):
        return self.disc.inv(self.multiplier(kind, tau) * self.disc.fwd(u))


# -- Kronecker / mu-mode ------------------------------------------------------------------


def mu_mode_exp(kron: KroneckerSum, tau, u, factors=None):
    """exp(tau (A_d + ... + A_1)) u via successive mode products with expm(tau A_mu)."""
    if tuple(u.shape) != kron.shape:
        raise ValueError(f"field shape {u.shape} does not match factors {kron.shape}")
    if factors is None:
        factors = [expm_dense(tau * A) for A in kron.factors]
    v = u
    for mu, E in enumerate(factors):
        v = mode_product(v, E, mu)
    return v


class KronAction(LinearAction):
    name = "kron"
    capabilities = frozenset({"exp", "solve", "apply"})

    def __init__(self, kron: KroneckerSum):
        self.kron = kron
        self._tucker = {}
        self._lu = {}
        self._sparse = None
        self._lock = threading.Lock()

    def tucker_factors(self, tau):
        key = float(tau)
        f = self._tucker.get(key)
        if f is None:
            f = [expm_dense(tau * A) for A in self.kron.factors]
            with self._lock:
                self._tucker[key] = f
        return f

    def _act(self, kind, tau, u):
        if kind == "exp":
            return mu_mode_exp(self.kron, tau, u, self.tucker_factors(tau))
        if kind == "apply":
            return sum(mode_product(u, A, mu) for mu, A in enumerate(self.kron.factors))
        # shifted solve on the assembled sparse Kronecker sum
        key = float(tau)
        lu = self._lu.get(key)
        if lu is None:
            if self._sparse is None:
                self._sparse = self.kron.sparse()
            n = self._sparse.shape[0]
            lu = spla.splu((sp.identity(n, format="csc") - tau * self._sparse).tocsc())
            with self._lock:
                self._lu[key] = lu
        return lu.solve(u.ravel()).reshape(u.shape)


# -- dense oracle ---------------------------------------------------------------------------


def dense_apply(kind, A, tau, u):
    n = A.shape[0]
    if n > DENSE_LIMIT:
        raise ValueError(f"dense backend limited to {DENSE_LIMIT} unknowns, got {n}")
    v = u.ravel()
    if kind == "exp":
        out = expm_dense(tau * A) @ v
    elif kind in ("phi1", "phi2"):
        out = phiv_dense(int(kind[-1]), tau * A, v)
    elif kind == "solve":
        out = np.linalg.solve(np.eye(n) - tau * A, v)
    elif kind == "apply":
        out = A @ v
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return np.real_if_close(out, tol=1e6).reshape(u.shape)


def assemble_dense(matvec, shape):
    """Column-by-column assembly of a linear map acting on arrays of the given shape."""
    n = int(np.prod(shape))
    if n > DENSE_LIMIT:
        raise ValueError(f"dense backend limited to {DENSE_LIMIT} unknowns, got {n}")
    A = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        A[:, j] = np.real(matvec(e.reshape(shape))).ravel()
        e[j] = 0.0
    return A


class DenseAction(LinearAction):
    name = "dense"
    capabilities = frozenset(KINDS)

    def __init__(self, A, shape):
        A = np.asarray(A)
        if A.shape[0] > DENSE_LIMIT:
            raise ValueError(f"dense backend limited to {DENSE_LIMIT} unknowns")
        self.A = A
        self.shape = tuple(shape)
        self._cache = {}

    def matrix(self, kind, tau):
        key = (kind, float(tau))
        M = self._cache.get(key)
        if M is None:
            n = self.A.shape[0]
            if kind == "exp":
                M = expm_dense(tau * self.A)
            elif kind == "phi1":
                M = phim_dense(1, tau * self.A)
            elif kind == "phi2":
                M = phim_dense(2, tau * self.A)
            elif kind == "solve":
                M = scipy.linalg.lu_factor(np.eye(n) - tau * self.A)
            self._cache[key] = M
        return M

    def _act(self, kind, tau, u):
        if kind == "apply":
            return (self.A @ u.ravel()).reshape(u.shape)
        if kind in ("phi1", "phi2") and self.A.shape[0] > DENSE_MATRIX_LIMIT:
            return phiv_dense(int(kind[-1]), tau * self.A, u.ravel()).reshape(u.shape)
        M = self.matrix(kind, tau)
        if kind == "solve":
            return scipy.linalg.lu_solve(M, u.ravel()).reshape(u.shape)
        return (M @ u.ravel()).reshape(u.shape)


# -- Krylov ----------------------------------------------------------------------------------

_ORDER = {"exp": 0, "phi1": 1, "phi2": 2}


def _small_phis(H, tau, p):
    """Columns phi_0..phi_p(tau H) e_1 from one augmented exponential."""
    k = H.shape[0]
    M = np.zeros((k + p, k + p))
    M[:k, :k] = tau * H
    M[0, k] = 1.0
    for i in range(p - 1):
        M[k + i, k + i + 1] = 1.0
    E = expm_dense(M)
    cols = [E[:k, 0]] + [E[:k, k + j] for j in range(p)]
    return cols


def _check_now(k):
    return k <= 16 or k % 4 == 0


def krylov_phi_action(matvec, kind, tau, v, tol, m_max=KRYLOV_MMAX, stats=None):
    """phi_k(tau A) v by Arnoldi, k from kind in {exp, phi1, phi2}.

    Stops when beta * tau * h_{k+1,k} * |e_k^T phi_{k+1}(tau H_k) e_1| <= tol * beta.
    """
    if kind not in _ORDER:
        raise ValueError(f"unknown kind {kind!r}")
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    q = _ORDER[kind]
    shape = v.shape
    x = np.asarray(v, dtype=float).ravel()
    beta = float(np.linalg.norm(x))
    if beta == 0.0:
        return np.zeros(shape)
    n = x.size
    m_max = min(m_max, n)
    V = np.empty((m_max + 1, n))
    H = np.zeros((m_max + 1, m_max))
    V[0] = x / beta
    est = np.inf
    for j in range(m_max):
        w = np.asarray(matvec(V[j].reshape(shape)), dtype=float).ravel()
        Vj = V[: j + 1]
        h = Vj @ w
        w -= Vj.T @ h
        h2 = Vj @ w  # second Gram-Schmidt pass
        w -= Vj.T @ h2
        H[: j + 1, j] = h + h2
        hn = float(np.linalg.norm(w))
        H[j + 1, j] = hn
        k = j + 1
        scale = max(float(np.abs(H[: k + 1, :k]).max()), 1e-300)
        happy = hn <= 1e-13 * scale or k == n
        if happy or _check_now(k) or k == m_max:
            cols = _small_phis(H[:k, :k], tau, q + 1)
            est = tau * hn * abs(cols[q + 1][k - 1])
            if happy or est <= tol:
                if stats is not None:
                    stats["m"] = k
                return (beta * (V[:k].T @ cols[q])).reshape(shape)
        V[j + 1] = w / hn
    raise KrylovError(
        f"Arnoldi did not converge in {m_max} iterations (estimate {est:.3e}, tol {tol:.3e})", est)


class KrylovAction(LinearAction):
    name = "krylov"
    capabilities = frozenset({"exp", "phi1", "phi2", "apply"})

    def __init__(self, matvec, tol=1e-10, m_max=KRYLOV_MMAX):
        self.matvec = matvec
        self.tol = tol
        self.m_max = m_max
        self.iterations = []

    def _act(self, kind, tau, u):
        if kind == "apply":
            return self.matvec(u)
        st = {}
        out = krylov_phi_action(self.matvec, kind, tau, u, self.tol, self.m_max, st)
        self.iterations.append(st.get("m", 0))
        return out


BACKENDS = ("fourier", "kron", "dense", "krylov")
