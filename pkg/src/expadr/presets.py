"""Named test problems used by the validation and benchmark drivers."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from expadr.grid import (DIRICHLET_NEUMANN, DIVERGENCE, NONDIVERGENCE, PERIODIC,
                         GridSpec, ProblemDef)
from expadr.phi import expm_dense

PRESET_NAMES = ("lin1d", "nl1d", "adr2d", "adr3d")


@dataclass(frozen=True)
class Preset:
    name: str
    problem: ProblemDef
    grid: GridSpec


def _a1d(x):
    return 1.0 + 10.0 * np.sin(x[0]) ** 2


def lin1d(n=2**12):
    prob = ProblemDef(
        diffusion=(_a1d,),
        u0=lambda x: np.sin(x[0]),
        T=1.0 / 40.0,
        form=NONDIVERGENCE,
        name="lin1d",
    )
    return Preset("lin1d", prob, GridSpec((n,), ((-math.pi, math.pi),), PERIODIC))


def nl1d(n=2**10):
    prob = ProblemDef(
        diffusion=(_a1d,),
        u0=lambda x: np.sin(x[0]),
        T=0.1,
        reaction=lambda t, x, u: u * (1.0 - u),
        reaction_du=lambda t, x, u: 1.0 - 2.0 * u,
        form=DIVERGENCE,
        name="nl1d",
    )
    return Preset("nl1d", prob, GridSpec((n,), ((-math.pi, math.pi),), PERIODIC))


def adr2d(n=2**8):
    prob = ProblemDef(
        diffusion=(
            lambda x: 0.5 + np.sin(x[0]) ** 2 * np.sin(x[1]) ** 2 / 6.0,
            lambda x: 0.5 + np.cos(x[0]) ** 2 * np.cos(x[1]) ** 2 / 6.0,
        ),
        velocity=(
            lambda x: np.sin(x[0]) ** 2 / 5.0,
            lambda x: np.sin(x[1]) ** 2 / 5.0,
        ),
        u0=lambda x: np.exp(-(x[0] ** 2 + x[1] ** 2)),
        T=4.0,
        reaction=lambda t, x, u: 0.25 * u * (1.0 - u),
        reaction_du=lambda t, x, u: 0.25 - 0.5 * u,
        form=DIVERGENCE,
        name="adr2d",
    )
    L = 3.0 * math.pi
    return Preset("adr2d", prob, GridSpec((n, n), ((-L, L), (-L, L)), PERIODIC))


def adr3d(b=-0.01, n=32):
    def a(x):
        return 0.1 * np.exp(-((x[0] - 0.5) ** 2 + (x[1] - 0.5) ** 2 + (x[2] - 0.5) ** 2))

    def u0(x):
        c = (27.0 / 4.0) ** 3
        return c * x[0] * x[1] * x[2] * ((1 - x[0]) * (1 - x[1]) * (1 - x[2])) ** 2

    const = float(b)
    prob = ProblemDef(
        diffusion=(a, a, a),
        velocity=tuple((lambda x, c=const: np.full(np.shape(x[0]), c)) for _ in range(3)),
        u0=u0,
        T=0.25,
        reaction=lambda t, x, u: u * (1.0 + u * u),
        reaction_du=lambda t, x, u: 1.0 + 3.0 * u * u,
        form=NONDIVERGENCE,
        name=f"adr3d(b={const:g})",
    )
    return Preset(prob.name, prob, GridSpec((n,) * 3, ((0.0, 1.0),) * 3, DIRICHLET_NEUMANN))


_ADR3D = re.compile(r"^adr3d(?:\(b=([-+0-9.eE]+)\))?$")


def get_preset(name, n=None, b=None) -> Preset:
    """Look up a preset by name; 'adr3d(b=-1)' is accepted as well as b=..."""
    kw = {} if n is None else {"n": int(n)}
    m = _ADR3D.match(name)
    if m:
        bval = b if b is not None else (float(m.group(1)) if m.group(1) else -0.01)
        return adr3d(bval, **kw)
    if b is not None:
        raise ValueError(f"preset {name} takes no velocity parameter")
    table = {"lin1d": lin1d, "nl1d": nl1d, "adr2d": adr2d}
    if name not in table:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    return table[name](**kw)


def lin1d_exact(x, T=1.0 / 40.0, modes=256):
    """Solution of u_t = (6 - 5 cos 2x) u_xx, u(0) = sin x, at time T.

    The solution stays in span{sin kx : k odd}; with a = 6 - 5 cos 2x the
    Galerkin matrix is tridiagonal in the odd modes and exact up to the
    truncation, which is far below roundoff for moderate T.
    """
    k = 2 * np.arange(modes) + 1
    M = np.diag(-6.0 * k.astype(float) ** 2)
    M[0, 0] -= 2.5  # sin(-x) = -sin x folds the k=1 coupling back
    for j in range(modes - 1):
        M[j + 1, j] = 2.5 * k[j] ** 2
        M[j, j + 1] = 2.5 * k[j + 1] ** 2
    c0 = np.zeros(modes)
    c0[0] = 1.0
    c = expm_dense(T * M) @ c0
    return np.sin(np.multiply.outer(np.asarray(x), k)) @ c
