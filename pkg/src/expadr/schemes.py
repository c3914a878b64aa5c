"""Names and parameters of the eleven time integrators."""

from __future__ import annotations

from dataclasses import dataclass

# label column order of the threshold table, plus erbe
SCHEME_NAMES = (
    "bfe", "imex2", "ee", "erk2p2", "erk2p1", "l2a", "l2b", "le", "sle", "sl2", "erbe",
)

ORDERS = {
    "bfe": 1, "imex2": 2, "ee": 1, "erk2p2": 2, "erk2p1": 2, "l2a": 2,
    "l2b": 2, "le": 1, "sle": 1, "sl2": 2, "erbe": 2,
}

# capabilities of the linear action each scheme needs
REQUIRES = {
    "bfe": frozenset({"solve"}),
    "imex2": frozenset({"solve", "apply"}),
    "ee": frozenset({"phi1"}),
    "erk2p2": frozenset({"phi1", "phi2"}),
    "erk2p1": frozenset({"phi1"}),
    "l2a": frozenset({"exp"}),
    "l2b": frozenset({"exp"}),
    "le": frozenset({"exp"}),
    "sle": frozenset({"exp"}),
    "sl2": frozenset({"exp"}),
    "erbe": frozenset(),  # routed through its own Jacobian Krylov action
}

DEFAULT_C2 = 1.0
DEFAULT_ALPHA = 0.327

LAWSON = frozenset({"le", "sle", "l2a", "l2b", "sl2"})
IMEX = frozenset({"bfe", "imex2"})


@dataclass(frozen=True)
class SchemeSpec:
    id: str
    c2: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.id not in SCHEME_NAMES:
            raise ValueError(f"unknown scheme {self.id!r}; expected one of {SCHEME_NAMES}")
        wants_c2 = self.id in ("erk2p1", "erk2p2")
        if wants_c2 != (self.c2 is not None):
            raise ValueError(f"c2 must be given iff scheme is erk2p1/erk2p2 (got {self})")
        if (self.id == "sl2") != (self.alpha is not None):
            raise ValueError(f"alpha must be given iff scheme is sl2 (got {self})")
        if self.c2 is not None and not 0 < self.c2 <= 1:
            raise ValueError(f"c2 must lie in (0, 1], got {self.c2}")
        if self.alpha is not None and not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def order(self) -> int:
        return ORDERS[self.id]

    @property
    def requires(self) -> frozenset:
        return REQUIRES[self.id]

    def __str__(self):
        extra = ""
        if self.c2 is not None:
            extra = f"(c2={self.c2:g})"
        elif self.alpha is not None:
            extra = f"(alpha={self.alpha:g})"
        return self.id + extra


def scheme_spec(name, c2=None, alpha=None) -> SchemeSpec:
    """Build a SchemeSpec, filling in the default c2 = 1 and alpha = 0.327."""
    if isinstance(name, SchemeSpec):
        return name
    name = name.lower()
    if name in ("erk2p1", "erk2p2"):
        return SchemeSpec(name, c2=DEFAULT_C2 if c2 is None else c2)
    if name == "sl2":
        return SchemeSpec(name, alpha=DEFAULT_ALPHA if alpha is None else alpha)
    return SchemeSpec(name)
