"""Experiment driver: run matrices with their reports, plus threshold validation."""

from __future__ import annotations

import csv
import logging
import math
import os
import struct
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from expadr.backends import KRYLOV_MMAX
from expadr.grid import Discretization
from expadr.presets import get_preset, lin1d, lin1d_exact
from expadr.schemes import IMEX, scheme_spec
from expadr.steppers import (IntegrationPlan, SplitSystem, integrate, krylov_tolerance,
                             make_backend)
from expadr.tuner import (REF_LAMBDA, choose_backend, error_inf_rel, run, scan_lambda,
                          threshold)

log = logging.getLogger(__name__)

ACCELERATED = "accelerated"
ORIGINAL = "original"
REF_MULTIPLIER = 4
CSV_HEADER = ["scheme", "formulation", "N", "m", "lambda", "error", "seconds", "blowup"]
UNSTABLE_ERROR = 0.1

# reference lower bounds (rounded) used to predict the stable/unstable pattern
REFERENCE_THRESHOLDS = {
    "bfe": 0.5, "imex2": 0.5, "ee": 0.5, "erk2p2": 0.5, "erk2p1": 1.0 / 3.0,
    "l2a": 0.301, "l2b": 0.301, "le": 0.218, "sle": 1.0 / (2.0 * math.e), "sl2": 0.183,
}
VALIDATION_LAMBDAS = (1.0, 0.5, 1.0 / 3.0, 0.301, 0.218, 1.0 / (2.0 * math.e), 0.183, 0.17)
VALIDATION_SCHEMES = ("sle", "le", "ee", "erk2p2", "sl2", "erk2p1", "l2a", "l2b")
VALIDATION_STEPS = tuple(2**k for k in range(4, 15, 2))


# -- reference fields on disk ---------------------------------------------------------------

MAGIC = b"EXPADRF1"


def save_field(path, u):
    u = np.ascontiguousarray(u, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", u.ndim))
        fh.write(struct.pack(f"<{u.ndim}Q", *u.shape))
        fh.write(u.tobytes(order="C"))


def load_field(path):
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path} is not a field dump")
        (ndim,) = struct.unpack("<Q", fh.read(8))
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path} is truncated")
    return data.reshape(shape).astype(float)


# -- records ----------------------------------------------------------------------------------


@dataclass
class RunRecord:
    scheme: str
    formulation: str
    N: int
    m: int
    lam: float
    error: float | None
    seconds: float
    blowup: bool

    def __post_init__(self):
        if self.blowup != (self.error is None):
            raise ValueError("a record carries an error exactly when the run did not blow up")


def _fmt(x):
    return "" if x is None else f"{x:.17g}"


def emit_report(records, path):
    """Write the CSV table and a plain-text summary next to it; returns both paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = sorted(records, key=lambda r: (r.scheme, r.m))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.scheme, r.formulation, r.N, r.m, _fmt(r.lam), _fmt(r.error),
                        _fmt(r.seconds), int(r.blowup)])
    summary = path.with_suffix(".txt")
    summary.write_text(summarize(rows))
    return path, summary


def parse_report(path):
    out = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        for row in rd:
            s, f, n, m, lam, err, sec, bl = row
            out.append(RunRecord(s, f, int(n), int(m), float(lam),
                                 None if err == "" else float(err), float(sec), bool(int(bl))))
    return out


def summarize(records):
    lines = []
    by = {}
    for r in records:
        by.setdefault((r.scheme, r.formulation), []).append(r)
    for (s, f), rs in sorted(by.items()):
        lines.append(f"{s} [{f}] lambda={rs[0].lam:.4g} N={rs[0].N}")
        for r in sorted(rs, key=lambda r: r.m):
            err = "blow-up" if r.blowup else f"{r.error:.3e}"
            lines.append(f"  m={r.m:<7d} error={err:<10} time={r.seconds:.3f}s")
    return "\n".join(lines) + ("\n" if lines else "")


# -- experiments --------------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    preset: str
    schemes: list
    steps: list
    formulation: str = ACCELERATED
    backend: str | None = None
    n: int | None = None
    T: float | None = None
    lam: object = "threshold"  # "threshold", "tuned", or a number
    b: float | None = None
    output: str | None = None
    repeat: int = 1
    seed: int = 0  # reserved; all presets are deterministic

    def __post_init__(self):
        if self.formulation not in (ACCELERATED, ORIGINAL):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.formulation == ORIGINAL:
            bad = [s for s in self.schemes if scheme_spec(s).id in IMEX]
            if bad:
                raise ValueError(f"IMEX schemes {bad} are not available in the original formulation")
            if self.backend not in (None, "krylov"):
                raise ValueError("the original formulation runs on the krylov backend only")
            self.backend = "krylov"

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path, overrides=None):
    import yaml

    with open(path) as fh:
        d = yaml.safe_load(fh) or {}
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_dict(d)


def reference_solution(preset, m_ref, cache_dir=None, disc=None):
    """L2B, accelerated, m_ref steps; exact Galerkin solution for lin1d."""
    prob, grid = preset.problem, preset.grid
    if preset.name == "lin1d":
        return lin1d_exact(grid.coords()[0], prob.T)
    path = None
    if cache_dir is not None:
        tag = preset.name.replace("(", "_").replace(")", "").replace("=", "")
        path = Path(cache_dir) / f"ref_{tag}_N{grid.n[0]}_T{prob.T:g}_m{m_ref}.bin"
        if path.exists():
            return load_field(path)
    res = run(prob, grid, "l2b", m_ref, prob.T, REF_LAMBDA, disc=disc)
    if res.blowup:
        raise RuntimeError("reference computation blew up")
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_field(path, res.u)
    return res.u


def _lambda_for(cfg, spec, preset):
    if isinstance(cfg.lam, (int, float)):
        return float(cfg.lam)
    if cfg.lam in ("threshold", "table"):
        return max(threshold(spec), 1e-3)
    if cfg.lam == "tuned":
        coarse = get_preset(cfg.preset, n=16 if preset.grid.dim == 3 else 64, b=cfg.b)
        return scan_lambda(spec, coarse.problem, coarse.grid, 256).lambda_best
    return float(cfg.lam)


def run_experiment(cfg: ExperimentConfig, reference=None):
    """Execute the (scheme, m) matrix and return RunRecords."""
    if not cfg.schemes:
        return []
    preset = get_preset(cfg.preset, n=cfg.n, b=cfg.b)
    if cfg.T is not None:
        preset.problem.T = float(cfg.T)
    prob, grid = preset.problem, preset.grid
    disc = Discretization(prob, grid)
    if reference is None:
        cache = None if cfg.output is None else Path(cfg.output).parent
        reference = reference_solution(preset, REF_MULTIPLIER * max(cfg.steps), cache, disc)
    records = []
    for name in cfg.schemes:
        spec = scheme_spec(name)
        if cfg.formulation == ORIGINAL:
            sy = SplitSystem(disc, None)
            lam = float("nan")
        else:
            lam = _lambda_for(cfg, spec, preset)
            sy = SplitSystem(disc, disc.split(lam))
        kind = cfg.backend or choose_backend(sy, spec)
        for m in sorted(cfg.steps):
            tau = prob.T / m
            tol = krylov_tolerance(spec.order, tau)
            times = []
            for _ in range(max(1, cfg.repeat)):
                be = make_backend(kind, sy, tol=tol)
                res = integrate(IntegrationPlan(spec, m, prob.T), sy, be, disc.initial(), krylov_tol=tol)
                times.append(res.seconds)
            err = None if res.blowup else error_inf_rel(res.u, reference)
            records.append(RunRecord(str(spec), cfg.formulation, grid.n[0], m, lam, err,
                                     float(np.median(times)), res.blowup))
            log.info("%s m=%d error=%s", spec, m, err)
    if cfg.output is not None:
        emit_report(records, cfg.output)
    return records


# -- validation ---------------------------------------------------------------------------------


@dataclass
class ValidationResult:
    lambdas: tuple
    schemes: tuple
    steps: tuple
    errors: dict = field(default_factory=dict)  # (scheme, lam) -> {m: error or inf}
    stable: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)

    @property
    def mismatches(self):
        return [k for k in self.stable if self.stable[k] != self.expected[k]]

    @property
    def ok(self):
        return not self.mismatches

    def table(self):
        lines = ["scheme,lambda,expected,observed,max_error"]
        for (s, lam), st in self.stable.items():
            errs = self.errors[(s, lam)]
            lines.append(f"{s},{lam:.6g},{_word(self.expected[(s, lam)])},{_word(st)},"
                         f"{max(errs.values()):.3e}")
        return "\n".join(lines)


def _word(flag):
    return "stable" if flag else "unstable"


def validate_thresholds(preset="lin1d", lambdas=VALIDATION_LAMBDAS, schemes=VALIDATION_SCHEMES,
                        steps=VALIDATION_STEPS, n=None):
    """Classify each (scheme, lambda) as stable when every error stays below 0.1.

    Larger m are skipped once a pair is seen to be unstable.
    """
    if preset != "lin1d":
        raise ValueError("threshold validation is defined on lin1d")
    p = lin1d() if n is None else lin1d(n)
    disc = Discretization(p.problem, p.grid)
    ref = lin1d_exact(p.grid.coords()[0], p.problem.T)
    u0 = disc.initial()
    out = ValidationResult(tuple(lambdas), tuple(schemes), tuple(steps))
    for lam in lambdas:
        sy = SplitSystem(disc, disc.split(lam))
        be = make_backend("fourier", sy)
        for s in schemes:
            spec = scheme_spec(s)
            errs = {}
            for m in steps:
                res = integrate(IntegrationPlan(spec, m, p.problem.T), sy, be, u0)
                errs[m] = math.inf if res.blowup else error_inf_rel(res.u, ref)
                if not errs[m] < UNSTABLE_ERROR:
                    break
            key = (spec.id, lam)
            out.errors[key] = errs
            out.stable[key] = all(e < UNSTABLE_ERROR for e in errs.values())
            out.expected[key] = lam >= REFERENCE_THRESHOLDS[spec.id] - 1e-12
    return out


def convergence_orders(schemes, steps=tuple(2**k for k in range(6, 11)), lam=1.0, n=None,
                       ref_steps=2**16, erbe_mmax=256):
    """Least-squares slope of log(error) against log(1/m) on nl1d.

    The reference is erk2p2 at lambda = 1/2 with ref_steps steps.  erbe
    projects the full Jacobian, whose norm times tau reaches a few thousand
    at m = 64 on this grid, so its Arnoldi cap is raised to erbe_mmax.
    """
    p = get_preset("nl1d", n=n)
    disc = Discretization(p.problem, p.grid)
    ref = run(p.problem, p.grid, "erk2p2", ref_steps, p.problem.T, 0.5, disc=disc).u
    out = {}
    for s in schemes:
        spec = scheme_spec(s)
        errs = []
        for m in steps:
            mmax = erbe_mmax if spec.id == "erbe" else KRYLOV_MMAX
            res = run(p.problem, p.grid, spec, m, p.problem.T, lam, disc=disc, krylov_mmax=mmax)
            errs.append(math.inf if res.blowup else error_inf_rel(res.u, ref))
        slope = -np.polyfit(np.log(steps), np.log(errs), 1)[0]
        out[spec.id] = (float(slope), errs)
    return out
