"""Universal eigenvalue inequalities evaluated on a spectrum.

Every check returns a :class:`BoundResult` written as ``lhs <= rhs``; for
inequalities stated the other way round the sides are swapped so that
``slack = rhs - lhs`` is always the margin.  Right-hand sides of the form
``delta * P + Q / delta`` are minimized in closed form at
``delta* = sqrt(Q / P)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ._csv import write_csv
from .discretize import Operators
from .eigensolve import EigenSystem
from .functionals import FunctionalSet, theorem2_quantities
from .geometry import GeometricConstants, GridDomain, geometric_constants

__all__ = [
    "HOLD_RTOL",
    "SWEEP",
    "SpectrumInput",
    "BoundResult",
    "delta_optimum",
    "delta_sweep",
    "check_theorem1",
    "check_theorem2",
    "check_theorem3",
    "theorem3_sweep",
    "check_cc",
    "check_cc1",
    "check_ab",
    "check_ab1",
    "corollary_checks",
    "extract_next_bound_minimal",
    "classical_checks",
    "CLASSICAL_NAMES",
    "translation_audit",
    "write_bounds_csv",
    "BOUNDS_COLUMNS",
]

HOLD_RTOL = 1e-9
SWEEP = np.logspace(-3.0, 3.0, 121)
MODES = ("as_stated", "rederived")
CLASSICAL_NAMES = ("payne", "hile_yeh", "hook", "cheng_yang", "wang_xia")
BOUNDS_COLUMNS = ("name", "mode", "k", "delta", "lhs", "rhs", "slack", "holds")


@dataclass(frozen=True, eq=False)
class SpectrumInput:
    """Eigenvalues ``lambda_1 .. lambda_{k+1}`` plus optional context.

    ``k`` is one less than the number of eigenvalues: the last one plays
    the role of ``lambda_{k+1}``.
    """

    eigenvalues: np.ndarray
    n: int
    consts: GeometricConstants | None = None
    functionals: FunctionalSet | None = None

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float).ravel()
        if lam.size < 2:
            raise ValueError("need at least lambda_1 and lambda_2")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("eigenvalues must be finite and strictly positive")
        if np.any(np.diff(lam) < 0):
            raise ValueError("eigenvalues must be ascending")
        if int(self.n) < 1:
            raise ValueError(f"dimension n must be >= 1, got {self.n}")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "n", int(self.n))

    @property
    def k(self) -> int:
        return self.eigenvalues.size - 1

    def truncated(self, k: int) -> "SpectrumInput":
        """The same input restricted to ``lambda_1 .. lambda_{k+1}``."""
        if not 1 <= k <= self.k:
            raise ValueError(f"k = {k} outside 1..{self.k}")
        fs = self.functionals.head(k) if self.functionals is not None else None
        return replace(self, eigenvalues=self.eigenvalues[: k + 1], functionals=fs)

    def split(self):
        lam = self.eigenvalues
        return lam[:-1], lam[-1]

    @classmethod
    def from_system(cls, sys: EigenSystem, n: int, consts=None, functionals=None) -> "SpectrumInput":
        return cls(sys.eigenvalues, n, consts, functionals)


@dataclass(frozen=True)
class BoundResult:
    """One inequality evaluation ``lhs <= rhs``.

    ``evaluable`` is false when a formula is undefined for the input (a
    vanishing gap under a reciprocal); the result then holds vacuously
    with ``rhs = inf``.
    """

    name: str
    k: int
    lhs: float
    rhs: float
    delta: float | None = None
    mode: str = ""
    evaluable: bool = True
    note: str = ""
    slack: float = field(init=False)
    holds: bool = field(init=False)

    def __post_init__(self):
        slack = self.rhs - self.lhs if self.evaluable else math.inf
        object.__setattr__(self, "slack", float(slack))
        tol = HOLD_RTOL * abs(self.rhs) if math.isfinite(self.rhs) else 0.0
        object.__setattr__(self, "holds", bool(slack >= -tol))

    def row(self) -> list:
        return [
            self.name,
            self.mode,
            self.k,
            "" if self.delta is None else self.delta,
            self.lhs,
            self.rhs,
            self.slack,
            self.holds,
        ]


def delta_optimum(P: float, Q: float) -> tuple[float, float]:
    """Minimize ``delta * P + Q / delta`` over ``delta > 0``.

    Returns
    -------
    (delta_star, min_rhs) : tuple of float
        ``sqrt(Q / P)`` and ``2 sqrt(P Q)``.
    """
    if not (P > 0 and Q > 0):
        raise ValueError(f"delta optimum needs P, Q > 0, got P={P}, Q={Q}")
    return math.sqrt(Q / P), 2.0 * math.sqrt(P * Q)


def delta_sweep(P: float, Q: float, deltas=SWEEP) -> np.ndarray:
    """``delta * P + Q / delta`` on a grid of ``delta`` values."""
    d = np.asarray(deltas, dtype=float)
    if np.any(d <= 0):
        raise ValueError("sweep values must be positive")
    return d * P + Q / d


def _delta_form(name, k, lhs, P, Q, delta, mode=""):
    """Result for an inequality ``lhs <= delta P + Q / delta``."""
    if isinstance(delta, str):
        if delta != "auto":
            raise ValueError(f"delta must be a positive number or 'auto', got {delta!r}")
        if P > 0 and Q > 0:
            d, rhs = delta_optimum(P, Q)
            return BoundResult(name, k, float(lhs), rhs, d, mode)
        if lhs == 0 and P == 0:
            # every gap vanishes: both sides are zero for all delta
            return BoundResult(name, k, 0.0, 0.0, None, mode, note="all gaps zero")
        raise ValueError(f"{name}: auto-delta needs positive sums, got P={P}, Q={Q}")
    d = float(delta)
    if not d > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return BoundResult(name, k, float(lhs), d * P + Q / d, d, mode)


def _gaps(spec: SpectrumInput):
    lam, top = spec.split()
    return lam, top - lam


def _need(fs, *names):
    if fs is None:
        raise ValueError("this check needs eigenfunction functionals")
    for nm in names:
        if getattr(fs, nm) is None:
            raise ValueError(f"functional {nm} is missing")


def _functional_arrays(spec: SpectrumInput, *names):
    fs = spec.functionals
    _need(fs, *names)
    k = spec.k
    if fs.k < k:
        raise ValueError(f"functionals cover {fs.k} eigenpairs, need {k}")
    return [np.asarray(getattr(fs, nm))[:k] for nm in names]


def check_theorem1(spec: SpectrumInput, delta="auto") -> BoundResult:
    """``sum g^2 int u^2 tr T <= delta sum g^2 A + (1/delta) sum g B`` with ``g_i = lambda_{k+1} - lambda_i``."""
    w, A, B = _functional_arrays(spec, "lhs_weight", "A", "B")
    _, g = _gaps(spec)
    return _delta_form("theorem1", spec.k, np.sum(g * g * w), np.sum(g * g * A), np.sum(g * B), delta)


def check_theorem2(spec: SpectrumInput, delta="auto") -> BoundResult:
    """As :func:`check_theorem1` with ``C_i`` and ``D_i`` in place of ``A_i`` and ``B_i``."""
    w, C, D = _functional_arrays(spec, "lhs_weight", "C", "D")
    _, g = _gaps(spec)
    return _delta_form("theorem2", spec.k, np.sum(g * g * w), np.sum(g * g * C), np.sum(g * D), delta)


def _theorem3_sums(spec: SpectrumInput):
    lam, g = _gaps(spec)
    c = spec.consts
    H0 = c.H_0 if c is not None else 0.0
    I0 = c.I_0 if c is not None else 0.0
    n = spec.n
    sq = np.sqrt(lam)
    E = 2 * n * H0 * I0 * sq + n * n * H0 * H0 + 4 * sq
    F = sq + 0.25 * n * n * H0 * H0
    return n * np.sum(g * g), np.sum(g * g * E), np.sum(g * F)


def check_theorem3(spec: SpectrumInput, delta="auto") -> BoundResult:
    """``n sum g^2 <= delta sum g^2 (2nH_0I_0 sqrt(l) + n^2H_0^2 + 4 sqrt(l)) + (1/delta) sum g (sqrt(l) + n^2H_0^2/4)``.

    Without constants ``H_0 = 0``.
    """
    lhs, P, Q = _theorem3_sums(spec)
    return _delta_form("theorem3", spec.k, lhs, P, Q, delta)


def theorem3_sweep(spec: SpectrumInput, deltas=SWEEP) -> list[BoundResult]:
    """Theorem 3 at every ``delta`` of the sweep grid."""
    lhs, P, Q = _theorem3_sums(spec)
    return [BoundResult("theorem3", spec.k, float(lhs), float(r), float(d)) for d, r in zip(deltas, delta_sweep(P, Q, deltas))]


# ---------------------------------------------------------------------------
# corollary for minimal immersions


def check_cc(spec: SpectrumInput) -> BoundResult:
    """``(n/4) sum g^2 <= {sum g^2 sqrt(l) * sum g sqrt(l)}^(1/2)``."""
    lam, g = _gaps(spec)
    sq = np.sqrt(lam)
    lhs = spec.n / 4 * np.sum(g * g)
    rhs = math.sqrt(np.sum(g * g * sq) * np.sum(g * sq))
    return BoundResult("cc", spec.k, float(lhs), rhs)


def check_cc1(spec: SpectrumInput) -> BoundResult:
    """``sum g^2 <= (16/n^2) sum g lambda``."""
    lam, g = _gaps(spec)
    return BoundResult("cc1", spec.k, float(np.sum(g * g)), float(16 / spec.n**2 * np.sum(g * lam)))


def extract_next_bound_minimal(lams: Sequence[float], n: int, mode: str = "rederived") -> float:
    """Upper bound on ``lambda_{k+1}`` from ``lambda_1 .. lambda_k``.

    ``as_stated``::

        (1/2k)(2 + 1/n^2) S1 + {(1/k^2)(1 + 8/n^2)^2 S1^2 - (1/k)(1 + 16/n^2) S2}^(1/2)

    ``rederived`` (largest root of the quadratic behind the gap-sum bound)::

        (1/k)(1 + 8/n^2) S1 + {same discriminant}^(1/2)

    with ``S1 = sum lambda_i`` and ``S2 = sum lambda_i^2``.  A negative
    discriminant gives ``inf``.
    """
    lam = np.asarray(lams, dtype=float).ravel()
    if lam.size == 0:
        raise ValueError("need at least one eigenvalue")
    if np.any(lam <= 0) or np.any(np.diff(lam) < 0):
        raise ValueError("eigenvalues must be positive and ascending")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    k = lam.size
    s1 = float(np.sum(lam))
    s2 = float(np.sum(lam * lam))
    a = 1 + 8 / n**2
    disc = (a * s1 / k) ** 2 - (1 + 16 / n**2) * s2 / k
    if disc < 0:
        return math.inf
    lead = (2 + 1 / n**2) * s1 / (2 * k) if mode == "as_stated" else a * s1 / k
    return lead + math.sqrt(disc)


def check_ab(spec: SpectrumInput, mode: str) -> BoundResult:
    """``lambda_{k+1} <= extract_next_bound_minimal(lambda_1..lambda_k)``."""
    lam, top = spec.split()
    rhs = extract_next_bound_minimal(lam, spec.n, mode)
    note = "negative discriminant" if math.isinf(rhs) else ""
    return BoundResult("ab", spec.k, float(top), rhs, mode=mode, note=note)


def check_ab1(spec: SpectrumInput, mode: str) -> BoundResult:
    """``lambda_2 <= c lambda_1`` with ``c = 1 + 17/(2n^2)`` (as stated) or ``1 + 16/n^2`` (rederived)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    lam = spec.eigenvalues
    n = spec.n
    c = 1 + 17 / (2 * n * n) if mode == "as_stated" else 1 + 16 / (n * n)
    return BoundResult("ab1", 1, float(lam[1]), float(c * lam[0]), mode=mode)


def corollary_checks(spec: SpectrumInput) -> list[BoundResult]:
    """``cc``, ``cc1`` and ``ab`` (both modes) at this ``k``; ``ab1`` (both modes) when ``k = 1``."""
    out = [check_cc(spec), check_cc1(spec)] + [check_ab(spec, m) for m in MODES]
    if spec.k == 1:
        out += [check_ab1(spec, m) for m in MODES]
    return out


# ---------------------------------------------------------------------------
# classical clamped-plate bounds


def classical_checks(lams: Sequence[float], n: int) -> list[BoundResult]:
    """Payne, Hile-Yeh, Hook, Cheng-Yang and Wang-Xia for ``lambda_1 .. lambda_{k+1}``.

    Hile-Yeh and Hook are stated as lower bounds on a reciprocal-gap sum;
    their ``lhs`` is the constant side.  When ``lambda_{k+1} = lambda_i``
    for some ``i <= k`` those two are not evaluable.
    """
    spec = SpectrumInput(np.asarray(lams, dtype=float), n)
    lam, top = spec.split()
    k = spec.k
    s1 = float(np.sum(lam))
    sq = np.sqrt(lam)
    c = 8 * (n + 2) / n**2
    g = top - lam
    out = [BoundResult("payne", k, float(top - lam[-1]), c * s1 / k)]

    if np.any(g <= 0):
        note = "zero gap in reciprocal sum"
        out.append(BoundResult("hile_yeh", k, math.nan, math.inf, evaluable=False, note=note))
        out.append(BoundResult("hook", k, math.nan, math.inf, evaluable=False, note=note))
    else:
        recip = float(np.sum(sq / g))
        hy = n * n * k**1.5 / (8 * (n + 2)) / math.sqrt(s1)
        out.append(BoundResult("hile_yeh", k, hy, recip))
        out.append(BoundResult("hook", k, n * n * k * k / (8 * (n + 2)), float(np.sum(sq)) * recip))

    out.append(
        BoundResult("cheng_yang", k, float(top - s1 / k), math.sqrt(c) / k * float(np.sum(np.sqrt(lam * g))))
    )
    mean = s1 / k
    disc = 64 / (n * n * k * k) * float(np.sum(sq)) * float(np.sum(lam * sq)) - float(np.sum((lam - mean) ** 2)) / k
    if disc >= 0:
        out.append(BoundResult("wang_xia", k, float(top), mean + math.sqrt(disc)))
    else:
        out.append(BoundResult("wang_xia", k, float(top), math.inf, evaluable=False, note="negative discriminant"))
    return out


# ---------------------------------------------------------------------------
# coordinate-origin audit


def _is_constant_field(ops: Operators) -> bool:
    dom = ops.domain
    T = ops.field.sample(np.vstack([dom.interior_coords, dom.boundary_coords]))
    return bool(np.all(T == T[:1]))


def translation_audit(
    domain: GridDomain,
    shift,
    sys: EigenSystem,
    ops: Operators,
    overrides=None,
    delta="auto",
    include_theorem2: bool = True,
) -> tuple[list[BoundResult], list[BoundResult]]:
    """Re-evaluate the ``I_0``-dependent bounds after translating coordinates.

    The operator of a constant coefficient field commutes with
    translation, so the eigenpairs are reused and only the position
    vector changes.  Returns ``(before, after)``, each holding the
    theorem 3 result and, optionally, the theorem 2 result.

    Raises
    ------
    ValueError
        If the coefficient field varies in space.
    """
    if not _is_constant_field(ops):
        raise ValueError("translation audit needs a spatially constant coefficient field")
    n = domain.dim

    def evaluate(dom):
        consts = geometric_constants(dom, ops.field, overrides)
        shifted_ops = replace(ops, domain=dom)
        res = [check_theorem3(SpectrumInput(sys.eigenvalues, n, consts), delta)]
        if include_theorem2:
            fs = theorem2_quantities(sys, dom, ops.field, consts, ops=shifted_ops)
            trT = np.trace(ops.field.sample(dom.interior_coords), axis1=1, axis2=2)
            w = dom.cell_weight * np.sum(sys.vectors**2 * trT[:, None], axis=0)
            fs = replace(fs, lhs_weight=w)
            res.append(check_theorem2(SpectrumInput(sys.eigenvalues, n, consts, fs), delta))
        return res

    return evaluate(domain), evaluate(domain.translate(shift))


def write_bounds_csv(results: Sequence[BoundResult], path, comment: str | None = None):
    """CSV with columns ``name, mode, k, delta, lhs, rhs, slack, holds``."""
    return write_csv(path, BOUNDS_COLUMNS, [r.row() for r in results], comment)
