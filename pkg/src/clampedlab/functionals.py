"""Eigenfunction functionals evaluated by node quadrature.

Every integral is the node-weighted midpoint rule ``h**dim * sum`` over
interior nodes, the same inner product that normalizes the eigenvectors.
Derivatives are second-order central differences on the lattice.  Values
of ``L u`` on boundary nodes, needed by ``grad(L u)`` next to the boundary,
come from the ghost-extended operator used for the clamped assembly.

Flat domains only: the second fundamental form and mean curvature vanish,
so the curvature terms of the general formulas are zero.  Curvature enters
only through user-supplied constants in :mod:`clampedlab.bounds`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from typing import Callable

import numpy as np

from ._csv import write_csv
from .discretize import Operators, discretize
from .eigensolve import EigenSystem
from .geometry import GeometricConstants, GridDomain, TensorField

__all__ = [
    "UnsupportedError",
    "inner",
    "gradient",
    "NodalFields",
    "FunctionalSet",
    "TrialSet",
    "PropositionSlacks",
    "theorem1_quantities",
    "theorem2_quantities",
    "theorem3_quantities",
    "all_quantities",
    "trial_functions",
    "proposition_check",
    "write_functional_csv",
    "DIMENSIONAL_AUDIT",
]

# Terms of C_i whose units do not match their neighbours (kept verbatim).
DIMENSIONAL_AUDIT = (
    "C_i term 4*||T grad u_i|| carries no length factor",
    "C_i term 2*lambda_i*I_0*||T grad u_i|| uses lambda_i where lambda_i^(1/2) would match",
)


class UnsupportedError(ValueError):
    """Requested functional needs geometry the grid cannot represent."""


def inner(u, v, domain: GridDomain) -> float:
    """Discrete ``L^2`` inner product ``h**dim * sum(u * v)`` over interior nodes."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = domain.n_interior
    if u.shape[0] != n or v.shape[0] != n:
        raise ValueError(f"vectors of length {u.shape[0]}, {v.shape[0]} for {n} interior nodes")
    return float(domain.cell_weight * np.sum(u * v, axis=0))


def _integrate(f: np.ndarray, domain: GridDomain):
    return domain.cell_weight * np.sum(f, axis=0)


def gradient(u, domain: GridDomain, boundary_values=None) -> np.ndarray:
    """Central-difference gradient at interior nodes.

    Parameters
    ----------
    u : ndarray, shape (n_interior,)
        Interior values.
    domain : GridDomain
    boundary_values : ndarray, shape (n_boundary,), optional
        Values on boundary nodes; zero when omitted.

    Returns
    -------
    ndarray, shape (n_interior, dim)
    """
    u = np.asarray(u, dtype=float)
    if u.shape[0] != domain.n_interior:
        raise ValueError("u does not match the interior node count")
    lat = np.zeros(domain.shape)
    lat[domain.interior_mask] = u
    if boundary_values is not None:
        lat[domain.boundary_mask] = boundary_values
    idx = domain.interior_index
    out = np.empty((domain.n_interior, domain.dim))
    for ax in range(domain.dim):
        e = np.zeros(domain.dim, dtype=np.int64)
        e[ax] = 1
        out[:, ax] = (lat[tuple((idx + e).T)] - lat[tuple((idx - e).T)]) / (2 * domain.h)
    return out


class NodalFields:
    """Per-eigenfunction nodal data shared by all functionals.

    Arrays are indexed ``[node, i]`` for scalars and ``[node, i, component]``
    for vector fields.
    """

    def __init__(self, sys: EigenSystem, ops: Operators):
        self.sys = sys
        self.ops = ops
        self.domain = ops.domain
        self.field = ops.field
        if sys.order != self.domain.n_interior:
            raise ValueError("eigenvectors do not match the domain")

    @cached_property
    def U(self) -> np.ndarray:
        return self.sys.vectors

    @cached_property
    def X(self) -> np.ndarray:
        return self.domain.interior_coords

    @cached_property
    def T(self) -> np.ndarray:
        return self.field.sample(self.X)

    @cached_property
    def tau(self) -> np.ndarray:
        """``tr(grad T)`` at interior nodes with step ``h/4``."""
        return self.field.trace_grad(self.X, fd_step=self.domain.h / 4)

    @cached_property
    def _LU_ext(self):
        return self.ops.apply_L_extended(self.U)

    @cached_property
    def LU(self) -> np.ndarray:
        return self._LU_ext[0]

    @cached_property
    def gradU(self) -> np.ndarray:
        return np.stack([gradient(u, self.domain) for u in self.U.T], axis=1)

    @cached_property
    def gradLU(self) -> np.ndarray:
        inner_vals, bdy = self._LU_ext
        return np.stack(
            [gradient(inner_vals[:, i], self.domain, bdy[:, i]) for i in range(self.U.shape[1])], axis=1
        )

    def apply_T(self, V: np.ndarray) -> np.ndarray:
        """Pointwise ``T(x) v(x)`` for ``V`` of shape ``(node, i, dim)``."""
        return np.einsum("pab,pib->pia", self.T, V)

    @cached_property
    def TgradU(self) -> np.ndarray:
        return self.apply_T(self.gradU)

    @cached_property
    def TgradLU(self) -> np.ndarray:
        return self.apply_T(self.gradLU)

    def integrate(self, f):
        return _integrate(f, self.domain)

    def l2norm(self, V: np.ndarray) -> np.ndarray:
        """``||V_i||_{L^2}`` of a vector field family ``(node, i, dim)``."""
        return np.sqrt(self.integrate(np.sum(V * V, axis=-1)))


def _empty():
    return np.full(0, np.nan)


@dataclass(frozen=True, eq=False)
class FunctionalSet:
    """Per-eigenindex functionals.

    Arrays have one entry per eigenpair; fields not computed are ``None``.
    ``E_reduced`` is ``4 * int |grad u_i|^2``, the value ``E_i`` takes if
    ``int u <grad Lap u, x> = -int Lap u <grad u, x>`` held.
    """

    lam: np.ndarray
    lhs_weight: np.ndarray | None = None
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    C: np.ndarray | None = None
    D: np.ndarray | None = None
    E_exact: np.ndarray | None = None
    E_bound: np.ndarray | None = None
    E_reduced: np.ndarray | None = None
    F_exact: np.ndarray | None = None
    F_bound: np.ndarray | None = None
    terms: dict = field(default_factory=dict)
    alpha_terms_zero: bool = True
    dimensional_audit: tuple = ()

    @property
    def k(self) -> int:
        return int(self.lam.size)

    def merge(self, other: "FunctionalSet") -> "FunctionalSet":
        upd = {}
        for f in fields(self):
            if f.name in ("lam", "terms", "alpha_terms_zero"):
                continue
            val = getattr(other, f.name)
            if f.name == "dimensional_audit":
                if val:
                    upd[f.name] = val
            elif val is not None:
                upd[f.name] = val
        return replace(self, terms={**self.terms, **other.terms}, **upd)

    def head(self, k: int) -> "FunctionalSet":
        upd = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                upd[f.name] = v[:k]
        return replace(self, terms={key: val[:k] for key, val in self.terms.items()}, **upd)


def _require_flat(consts: GeometricConstants | None):
    if consts is not None and (consts.S_0 > 0 or consts.H_0 > 0 or consts.m != consts.n):
        raise UnsupportedError(
            "curvature terms cannot be evaluated on a flat grid; use the constants-only bounds"
        )


def _fields(sys, domain, field_, ops) -> NodalFields:
    if ops is None:
        ops = discretize(domain, field_)
    return NodalFields(sys, ops)


def theorem1_quantities(
    sys: EigenSystem,
    domain: GridDomain,
    field: TensorField,
    consts: GeometricConstants | None = None,
    ops: Operators | None = None,
) -> FunctionalSet:
    """``A_i``, ``B_i`` and ``int u_i^2 tr(T)`` on a flat domain.

    With ``tau = tr(grad T)`` and ``I`` the position vector::

        A_i = 2 int u Lu <tau, I> + 2 int u <T grad Lu, I> + int u^2 |tau|^2
              + 4 int u <T grad u, tau> + 4 int |T grad u|^2 + 2 int Lu <T grad u, I>
        B_i = int |T grad u|^2 + int u <T grad u, tau> + (1/4) int u^2 |tau|^2

    Raises
    ------
    UnsupportedError
        If ``consts`` describes a curved immersion.
    """
    _require_flat(consts)
    nf = _fields(sys, domain, field, ops)
    U, LU, X, tau = nf.U, nf.LU, nf.X, nf.tau
    TgU, TgLU = nf.TgradU, nf.TgradLU
    tauI = np.sum(tau * X, axis=1)[:, None]
    tau2 = np.sum(tau * tau, axis=1)[:, None]
    TgU_I = np.einsum("pid,pd->pi", TgU, X)
    TgU_tau = np.einsum("pid,pd->pi", TgU, tau)
    t = {
        "A1_uLu_tau_I": nf.integrate(2 * U * LU * tauI),
        "A2_u_TgradLu_I": nf.integrate(2 * U * np.einsum("pid,pd->pi", TgLU, X)),
        "A3_u2_tau2": nf.integrate(U * U * tau2),
        "A4_u_Tgradu_tau": nf.integrate(4 * U * TgU_tau),
        "A5_Tgradu2": nf.integrate(4 * np.sum(TgU * TgU, axis=2)),
        "A6_Lu_Tgradu_I": nf.integrate(2 * LU * TgU_I),
    }
    B = nf.integrate(np.sum(TgU * TgU, axis=2) + U * TgU_tau + 0.25 * U * U * tau2)
    trT = np.trace(nf.T, axis1=1, axis2=2)[:, None]
    return FunctionalSet(
        lam=sys.eigenvalues.copy(),
        lhs_weight=nf.integrate(U * U * trT),
        A=sum(t.values()),
        B=B,
        terms=t,
    )


def theorem2_quantities(
    sys: EigenSystem,
    domain: GridDomain,
    field: TensorField,
    consts: GeometricConstants,
    ops: Operators | None = None,
) -> FunctionalSet:
    """``C_i`` and ``D_i``, coefficients taken verbatim.

    ``||.||`` is the ``L^2`` norm (not squared).  Two terms of ``C_i`` are
    dimensionally inconsistent; they are kept and listed in
    ``dimensional_audit``.
    """
    if consts is None:
        raise ValueError("theorem 2 functionals need geometric constants")
    nf = _fields(sys, domain, field, ops)
    lam = sys.eigenvalues
    g = nf.l2norm(nf.TgradU)
    gL = nf.l2norm(nf.TgradLU)
    c = consts
    curv = (c.m - c.n) * c.S_0**2 * c.T_star**2
    C = (
        2 * (math.sqrt(c.m - c.n) * c.S_0 * c.T_star + c.T_0) * c.I_0 * np.sqrt(lam)
        + c.I_0 * gL
        + curv
        + c.T_0**2
        + 4 * c.T_0 * g
        + 4 * g
        + 2 * lam * c.I_0 * g
    )
    D = g + c.T_0 * g + 0.25 * (curv + c.T_0**2)
    return FunctionalSet(
        lam=lam.copy(),
        C=C,
        D=D,
        terms={"norm_Tgradu": g, "norm_TgradLu": gL},
        dimensional_audit=DIMENSIONAL_AUDIT,
    )


def theorem3_quantities(
    sys: EigenSystem,
    domain: GridDomain,
    consts: GeometricConstants,
    field: TensorField | None = None,
    ops: Operators | None = None,
) -> FunctionalSet:
    """``E_i`` and ``F_i`` for the biharmonic case with their majorants.

    ``E_exact`` is the full quadrature of::

        2 int u Lap u <nH, I> + 2 int u <grad Lap u, I> + n^2 int u^2 |H|^2
        + 4 int |grad u|^2 + 2 int Lap u <grad u, I>

    with the ``H`` terms zero on flat domains.  Majorants::

        E_bound = 2 n H_0 I_0 lambda^(1/2) + n^2 H_0^2 + 4 lambda^(1/2)
        F_bound = lambda^(1/2) + n^2 H_0^2 / 4

    When ``consts.H_0 > 0`` the exact values are ``nan`` (no mean
    curvature field on a flat grid) and only the majorants are filled.
    """
    if field is None:
        field = ops.field if ops is not None else TensorField.identity(dim=domain.dim)
    if field.kind != "identity" or field.scale != 1.0:
        raise ValueError("theorem 3 functionals need T = identity")
    nf = _fields(sys, domain, field, ops)
    lam = sys.eigenvalues
    n, H0, I0 = consts.n, consts.H_0, consts.I_0
    G = nf.integrate(np.sum(nf.gradU**2, axis=2))
    u_gradLap_I = nf.integrate(nf.U * np.einsum("pid,pd->pi", nf.gradLU, nf.X))
    Lap_gradu_I = nf.integrate(nf.LU * np.einsum("pid,pd->pi", nf.gradU, nf.X))
    E_exact = 2 * u_gradLap_I + 4 * G + 2 * Lap_gradu_I
    F_exact = G.copy()
    if H0 > 0:
        E_exact = np.full_like(lam, np.nan)
        F_exact = np.full_like(lam, np.nan)
    sq = np.sqrt(lam)
    return FunctionalSet(
        lam=lam.copy(),
        E_exact=E_exact,
        E_bound=2 * n * H0 * I0 * sq + n * n * H0 * H0 + 4 * sq,
        E_reduced=4 * G,
        F_exact=F_exact,
        F_bound=sq + 0.25 * n * n * H0 * H0,
        terms={
            "grad_energy": G,
            "u_gradLap_I": u_gradLap_I,
            "Lap_gradu_I": Lap_gradu_I,
            "u_Lap_u": nf.integrate(nf.U * nf.LU),
        },
    )


def all_quantities(
    sys: EigenSystem,
    domain: GridDomain,
    field: TensorField,
    consts: GeometricConstants,
    ops: Operators | None = None,
) -> FunctionalSet:
    """Theorem 1 and 2 functionals, plus theorem 3 ones when ``T`` is the identity."""
    if ops is None:
        ops = discretize(domain, field)
    fs = theorem1_quantities(sys, domain, field, consts, ops=ops)
    fs = fs.merge(theorem2_quantities(sys, domain, field, consts, ops=ops))
    if field.kind == "identity" and field.scale == 1.0:
        fs = fs.merge(theorem3_quantities(sys, domain, consts, field, ops=ops))
    return fs


# ---------------------------------------------------------------------------
# trial functions


@dataclass(frozen=True, eq=False)
class TrialSet:
    """Trial-function data for a scalar field ``h``.

    ``phi[:, i] = h u_i - sum_j a_ij u_j`` is orthogonal to ``u_1..u_k``.
    ``q[:, i] = T(grad h, grad u_i) + u_i L h / 2``.
    """

    k: int
    h_values: np.ndarray
    a: np.ndarray
    b: np.ndarray
    r: np.ndarray
    p: np.ndarray
    q: np.ndarray
    w: np.ndarray
    v: np.ndarray
    p_norm2: np.ndarray
    q_norm2: np.ndarray
    phi: np.ndarray
    lam: np.ndarray
    label: str = "x1"

    def identity15_error(self) -> float:
        """``max |r_ij - (lambda_j - lambda_i) a_ij| / max |(lambda_j - lambda_i) a_ij|``."""
        ref = (self.lam[None, :] - self.lam[:, None]) * self.a
        scale = np.abs(ref).max()
        if scale == 0:
            scale = max(np.abs(self.r).max(), 1.0)
        return float(np.abs(self.r - ref).max() / scale)

    def antisymmetry_error(self) -> float:
        """``max |b_ij + b_ji| / max |b_ij|``."""
        return float(np.abs(self.b + self.b.T).max() / max(np.abs(self.b).max(), np.finfo(float).tiny))


def _h_samples(h_choice, domain: GridDomain):
    if callable(h_choice):
        vals = np.asarray(h_choice(domain.node_coords), dtype=float)
        return vals, getattr(h_choice, "__name__", "h")
    axis = int(h_choice)
    if not 0 <= axis < domain.dim:
        raise ValueError(f"coordinate index {axis} outside 0..{domain.dim - 1}")
    return domain.node_coords[:, axis].copy(), f"x{axis + 1}"


def trial_functions(
    sys: EigenSystem,
    domain: GridDomain,
    field: TensorField,
    h_choice: int | Callable = 0,
    k: int | None = None,
    ops: Operators | None = None,
) -> TrialSet:
    """Build the trial set for ``h`` (a coordinate index or a callable on points).

    Uses the first ``k`` eigenpairs of ``sys`` (all by default).  ``grad h``
    and ``L h`` come from lattice differences of ``h`` sampled on every
    node, which are exact for coordinate fields.
    """
    if sys.k < 2:
        raise ValueError("trial functions need at least 2 eigenpairs")
    k = sys.k if k is None else int(k)
    if not 1 <= k <= sys.k:
        raise ValueError(f"k = {k} outside 1..{sys.k}")
    if ops is None:
        ops = discretize(domain, field)
    dom = domain
    hv_lat, label = _h_samples(h_choice, dom)
    lat = hv_lat.reshape(dom.shape)
    hv = lat[dom.interior_mask]
    grad_h = gradient(hv, dom, lat[dom.boundary_mask])
    Lh = ops.apply_L_to_lattice(hv_lat)

    nf = NodalFields(sys.head(k), ops)
    U, LU = nf.U, nf.LU
    Tgh = np.einsum("pab,pb->pa", nf.T, grad_h)
    Tgh_gradU = np.einsum("pa,pia->pi", Tgh, nf.gradU)
    Tgh_gradLU = np.einsum("pa,pia->pi", Tgh, nf.gradLU)
    p = (
        Lh[:, None] * LU
        + 2 * Tgh_gradLU
        + ops.apply_L(U * Lh[:, None])
        + 2 * ops.apply_L(Tgh_gradU)
    )
    q = Tgh_gradU + 0.5 * U * Lh[:, None]
    w = nf.integrate(hv[:, None] * U * p)
    v = nf.integrate(U * U * np.sum(Tgh * grad_h, axis=1)[:, None])
    a = dom.cell_weight * (U.T @ (hv[:, None] * U))
    b = dom.cell_weight * (q.T @ U)  # b[i, j] = int u_j q_i
    r = dom.cell_weight * (p.T @ U)  # r[i, j] = int p_i u_j
    phi = hv[:, None] * U - U @ a.T
    return TrialSet(
        k=k,
        h_values=hv,
        a=a,
        b=b,
        r=r,
        p=p,
        q=q,
        w=w,
        v=v,
        p_norm2=nf.integrate(p * p),
        q_norm2=nf.integrate(q * q),
        phi=phi,
        lam=sys.eigenvalues[:k].copy(),
        label=label,
    )


@dataclass(frozen=True)
class PropositionSlacks:
    """Both sides of the three trial-function inequalities at one ``delta``."""

    k: int
    delta: float
    lhs5: float
    rhs5: float
    lhs6: float
    rhs6: float
    lhs7: float
    rhs7: float

    @property
    def slack5(self) -> float:
        return self.rhs5 - self.lhs5

    @property
    def slack6(self) -> float:
        return self.rhs6 - self.lhs6

    @property
    def slack7(self) -> float:
        return self.rhs7 - self.lhs7

    @property
    def slacks(self) -> tuple[float, float, float]:
        return self.slack5, self.slack6, self.slack7


def proposition_check(trial: TrialSet, sys: EigenSystem, delta: float) -> PropositionSlacks:
    """Evaluate, with ``g_i = lambda_{k+1} - lambda_i``::

        (5)  sum g^2 w          <= sum g ||p||^2
        (6)  sum g^2 v          <= delta sum g^2 w      + (1/delta) sum g ||q||^2
        (7)  sum g^2 v          <= delta sum g ||p||^2  + (1/delta) sum g ||q||^2
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    k = trial.k
    if sys.k < k + 1:
        raise ValueError(f"need lambda_{k + 1}: solve with at least {k + 1} pairs")
    g = sys.eigenvalues[k] - sys.eigenvalues[:k]
    sw = float(np.sum(g * g * trial.w))
    sp = float(np.sum(g * trial.p_norm2))
    sq = float(np.sum(g * trial.q_norm2))
    sv = float(np.sum(g * g * trial.v))
    return PropositionSlacks(
        k=k,
        delta=float(delta),
        lhs5=sw,
        rhs5=sp,
        lhs6=sv,
        rhs6=delta * sw + sq / delta,
        lhs7=sv,
        rhs7=delta * sp + sq / delta,
    )


def write_functional_csv(fs: FunctionalSet, path, comment: str | None = None):
    """CSV with columns ``i, lambda, A, B, C, D, E_exact, E_bound, F_exact, F_bound``."""
    cols = ("A", "B", "C", "D", "E_exact", "E_bound", "F_exact", "F_bound")

    def cell(name, i):
        arr = getattr(fs, name)
        return float("nan") if arr is None else arr[i]

    rows = [[i + 1, fs.lam[i]] + [cell(c, i) for c in cols] for i in range(fs.k)]
    return write_csv(path, ("i", "lambda") + cols, rows, comment)
