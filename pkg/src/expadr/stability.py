"""Linear stability of the integrators on the split heat equation.

Applying a scheme to u' = lam*Lap u + (1 - lam)*Lap u mode by mode gives
u_k^{n+1} = Phi(z, lam) u_k^n with z = -tau k^2.  A scheme is unconditionally
stable for a given lam when |Phi(z, lam)| <= 1 on the whole half line z <= 0.

The two IMEX rational functions are not printed with the threshold table;
they follow from inserting A = lam*Lap, g = (1 - lam)*Lap into the stage
equations:

    bfe:   (1 + (1-lam) z) / (1 - lam z)
    imex2: U/u = (1 + (1-lam) z/2) / (1 - lam z/2)
           Phi = (1 + lam z/2 + (1-lam) z U/u) / (1 - lam z/2)
"""

from __future__ import annotations

import math

import numpy as np

from expadr.phi import phi
from expadr.schemes import SchemeSpec, scheme_spec

Z_MAX = 1e5
N_LOG = 2048
N_LIN = 2048
LIN_EXTENT = 50.0
SLACK = 1e-9
REFINE_BAND = 1e-2
MAX_REFINE = 8
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class NoStableLambda(RuntimeError):
    pass


def _phi_fn(spec: SchemeSpec, z, lam):
    z = np.asarray(z)
    s = spec.id
    lz = lam * z
    w = 1.0 - lam
    if s == "ee":
        return 1.0 + z * phi(1, lz)
    if s == "le":
        return phi(0, lz) * (1.0 + w * z)
    if s == "sle":
        return 1.0 + z * phi(0, lz)
    if s == "erk2p2":
        return 1.0 + z * phi(1, lz) + z * z * w * phi(2, lz) * phi(1, spec.c2 * lz)
    if s == "erk2p1":
        return 1.0 + z * phi(1, lz) + 0.5 * z * z * w * phi(1, lz) * phi(1, spec.c2 * lz)
    if s == "l2a":
        return phi(0, lz) * (1.0 + z * w * (1.0 + 0.5 * z * w))
    if s == "l2b":
        return phi(0, lz) * (1.0 + 0.5 * z * w + 0.5 * z * w * (1.0 + z * w))
    if s == "sl2":
        return (1.0 + z * phi(0, 0.5 * lz)
                + 0.5 * z * z * w * phi(0, (1.0 + spec.alpha) * lz))
    if s == "bfe":
        return (1.0 + w * z) / (1.0 - lz)
    if s == "imex2":
        ratio = (1.0 + 0.5 * w * z) / (1.0 - 0.5 * lz)
        return (1.0 + 0.5 * lz + w * z * ratio) / (1.0 - 0.5 * lz)
    raise ValueError(f"no stability function available for {s}")


def _validate(spec, lam):
    spec = scheme_spec(spec)
    if spec.id == "erbe":
        raise ValueError("erbe has no stability function (its linear part is the Jacobian)")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return spec


def stability_function(spec, z, lam):
    """Phi(z, lam) for real z <= 0 (scalar or array)."""
    spec = _validate(spec, lam)
    za = np.asarray(z, dtype=float)
    if np.any(za > 0):
        raise ValueError("stability_function expects z <= 0; use astability_region for complex z")
    with np.errstate(over="ignore", invalid="ignore"):
        out = _phi_fn(spec, za, lam)
    return out[()] if out.ndim == 0 else out


def tail_limit(spec, lam) -> float:
    """lim |Phi(z, lam)| as z -> -inf (inf when the limit diverges)."""
    spec = _validate(spec, lam)
    s = spec.id
    if lam == 0.0:
        # every scheme degenerates to an explicit method: polynomial growth
        return math.inf
    if s in ("le", "l2a", "l2b"):
        return 0.0
    if s in ("sle", "sl2"):
        return 1.0
    if s == "ee":
        return abs(1.0 - 1.0 / lam)
    if s == "erk2p2":
        return abs(1.0 - 1.0 / lam + (1.0 - lam) / (spec.c2 * lam * lam))
    if s == "erk2p1":
        return abs(1.0 - 1.0 / lam + 0.5 * (1.0 - lam) / (spec.c2 * lam * lam))
    if s == "bfe":
        return abs((1.0 - lam) / lam)
    if s == "imex2":
        return abs(-1.0 + 2.0 * ((1.0 - lam) / lam) ** 2)
    raise AssertionError(s)


def _sample_grid():
    lin = -np.linspace(0.0, LIN_EXTENT, N_LIN)
    log = -np.logspace(-3, math.log10(Z_MAX), N_LOG)
    return np.unique(np.concatenate([lin, log]))  # ascending: -Z_MAX .. 0


_Z = _sample_grid()


def _golden_max(f, a, b, tol=1e-12, maxiter=200):
    """Maximize a unimodal f on [a, b] by golden-section search."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if abs(b - a) <= tol * (1.0 + abs(a) + abs(b)):
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return max(fc, fd)


def sup_abs_phi(spec, lam) -> float:
    """sup over z in (-inf, 0] of |Phi(z, lam)|."""
    spec = _validate(spec, lam)

    def f(z):
        with np.errstate(over="ignore", invalid="ignore"):
            return float(abs(_phi_fn(spec, np.asarray(z), lam)))

    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.abs(_phi_fn(spec, _Z, lam))
    if not np.all(np.isfinite(vals)):
        return math.inf
    best = float(vals.max())
    mid = vals[1:-1]
    peaks = np.nonzero((mid > vals[:-2]) & (mid >= vals[2:]))[0] + 1
    # refinement moves a sampled peak by O(spacing^2); peaks far below cannot win
    peaks = peaks[vals[peaks] > best - REFINE_BAND * max(best, 1.0)]
    # plateaus at |Phi| ~ 1 produce many roundoff-level ties; keep the tallest
    peaks = peaks[np.argsort(vals[peaks])[::-1][:MAX_REFINE]]
    for i in peaks:
        best = max(best, _golden_max(f, _Z[i - 1], _Z[i + 1]))
    return max(best, tail_limit(spec, lam))


def is_stable(spec, lam, slack=SLACK) -> bool:
    return sup_abs_phi(spec, lam) <= 1.0 + slack


def lambda_threshold(spec, tol=1e-4, slack=SLACK) -> float:
    """Smallest lam in [0, 1] with sup |Phi| <= 1, by bisection.

    Returns the upper end of the final bracket, which is a stable value.
    """
    spec = _validate(spec, 1.0)
    if not is_stable(spec, 1.0, slack):
        raise NoStableLambda(f"{spec} is not unconditionally stable even at lambda = 1")
    lo, hi = 0.0, 1.0
    if is_stable(spec, lo, slack):
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if is_stable(spec, mid, slack):
            hi = mid
        else:
            lo = mid
    return hi


def optimize_alpha_sl2(tol=1e-3, lam_tol=1e-7, bounds=(0.05, 1.0)):
    """alpha in (0, 1] minimizing the sl2 threshold; returns (alpha, lambda)."""

    def thr(alpha):
        return lambda_threshold(SchemeSpec("sl2", alpha=alpha), tol=lam_tol)

    a, b = bounds
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = thr(c), thr(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = thr(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = thr(d)
    alpha = 0.5 * (a + b)
    return alpha, thr(alpha)


def threshold_table(tol=1e-4):
    """(scheme, order, threshold) for the ten analysed schemes, descending."""
    from expadr.schemes import ORDERS, SCHEME_NAMES

    rows = []
    for name in SCHEME_NAMES:
        if name == "erbe":
            continue
        spec = scheme_spec(name)
        rows.append((spec, ORDERS[name], lambda_threshold(spec, tol=tol)))
    return rows


def astability_region(spec, lam, window, resolution):
    """Boolean raster of {z : |Phi(z, lam)| <= 1} over a complex window.

    window = (re_min, re_max, im_min, im_max), resolution = (nx, ny).
    Row 0 is the top (largest imaginary part); pixel centres are sampled.
    """
    spec = _validate(spec, lam)
    re_min, re_max, im_min, im_max = map(float, window)
    if not (re_max > re_min and im_max > im_min):
        raise ValueError(f"window {window} has zero area")
    nx, ny = resolution
    hx = (re_max - re_min) / nx
    hy = (im_max - im_min) / ny
    re = re_min + hx * (np.arange(nx) + 0.5)
    im = im_max - hy * (np.arange(ny) + 0.5)
    Z = re[None, :] + 1j * im[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.abs(_phi_fn(spec, Z, lam))
    return np.isfinite(vals) & (vals <= 1.0 + SLACK)


def write_pgm(path, raster):
    """Write a boolean raster as a binary portable graymap (inside = white)."""
    raster = np.asarray(raster, dtype=bool)
    ny, nx = raster.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
        fh.write(np.where(raster, 255, 0).astype(np.uint8).tobytes())
