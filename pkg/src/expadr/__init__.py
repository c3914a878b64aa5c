"""Accelerated exponential and Lawson integrators for advection-diffusion-reaction problems."""

from expadr.phi import expm_dense, phi, phi_scalar, phim_dense, phiv_dense
from expadr.schemes import SCHEME_NAMES, SchemeSpec, scheme_spec

__all__ = [
    "SCHEME_NAMES",
    "SchemeSpec",
    "expm_dense",
    "phi",
    "phi_scalar",
    "phim_dense",
    "phiv_dense",
    "scheme_spec",
]

__version__ = "0.1.0"
