"""Scalar and dense-matrix kernels for exp and the phi-functions.

phi_0 = exp and phi_{k+1}(z) = (phi_k(z) - 1/k!) / z.  Near the origin the
recurrence cancels catastrophically, so |z| < 1 is handled by a truncated
Taylor series instead.
"""

from __future__ import annotations

from math import factorial

import numpy as np
import scipy.linalg

MAX_ORDER = 4
TAYLOR_RADIUS = 1.0
TAYLOR_TERMS = 20

# 1/(j+k)! for j = 0..TAYLOR_TERMS-1, one row per k
_TAYLOR = np.array(
    [[1.0 / factorial(j + k) for j in range(TAYLOR_TERMS)] for k in range(MAX_ORDER + 1)]
)


def phi(k, z):
    """Vectorized phi_k(z) for real or complex input, 0 <= k <= 4."""
    if not 0 <= k <= MAX_ORDER:
        raise ValueError(f"phi order must be in 0..{MAX_ORDER}, got {k}")
    z = np.asarray(z)
    if k == 0:
        with np.errstate(over="ignore"):
            return np.exp(z)
    dtype = np.result_type(z.dtype, np.float64)
    out = np.empty(z.shape, dtype=dtype)
    small = np.abs(z) < TAYLOR_RADIUS

    zs = z[small]
    acc = np.zeros(zs.shape, dtype=dtype)
    for c in _TAYLOR[k][::-1]:
        acc = acc * zs + c
    out[small] = acc

    zl = z[~small]
    with np.errstate(over="ignore", invalid="ignore"):
        val = np.exp(zl)
        for j in range(k):
            val = (val - 1.0 / factorial(j)) / zl
    out[~small] = val
    return out


def phi_scalar(k: int, z: complex) -> complex:
    """phi_k at a single point; returns a Python complex (or float for real z)."""
    val = phi(k, np.asarray(z))[()]
    return complex(val) if np.iscomplexobj(val) else float(val)


def _check_square(M):
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return M


def expm_dense(M):
    """Matrix exponential by scaling and squaring with Pade approximation."""
    M = _check_square(M)
    if M.shape[0] == 0:
        return M.copy()
    return scipy.linalg.expm(M)


def phim_dense(k: int, M):
    """phi_k(M) for k in {1, 2} as a dense matrix.

    Uses exp of the block matrix [[M, I, 0], [0, 0, I], [0, 0, 0]], whose
    top-right blocks are phi_1(M), phi_2(M).
    """
    M = _check_square(M)
    if k not in (1, 2):
        raise ValueError(f"phim_dense supports k in {{1, 2}}, got {k}")
    n = M.shape[0]
    dtype = np.result_type(M.dtype, np.float64)
    big = np.zeros(((k + 1) * n, (k + 1) * n), dtype=dtype)
    big[:n, :n] = M
    eye = np.eye(n, dtype=dtype)
    for j in range(k):
        big[j * n:(j + 1) * n, (j + 1) * n:(j + 2) * n] = eye
    E = expm_dense(big)
    return E[:n, k * n:(k + 1) * n]


def phiv_dense(k: int, M, v):
    """phi_k(M) v for k >= 0 without forming phi_k(M).

    The last column of exp([[M, v, 0], [0, 0, I_{k-1}], [0, 0, 0]]) restricted
    to the first n rows is phi_k(M) v; the extra size is only k.
    """
    M = _check_square(M)
    v = np.asarray(v)
    n = M.shape[0]
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return expm_dense(M) @ v
    dtype = np.result_type(M.dtype, v.dtype, np.float64)
    big = np.zeros((n + k, n + k), dtype=dtype)
    big[:n, :n] = M
    big[:n, n] = v
    for j in range(k - 1):
        big[n + j, n + j + 1] = 1.0
    return expm_dense(big)[:n, n + k - 1]
