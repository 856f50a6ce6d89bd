"""Sparse assembly of ``L u = div(T grad u)`` and the clamped operator ``L^2``.

The pointwise stencil at a node uses ``T_11``/``T_22`` at edge midpoints
and ``T_12`` at the centres of the four surrounding cells; the cell form of
the cross term makes the Dirichlet matrix exactly symmetric for any
variable tensor.  The clamped operator is the composition ``L o L`` in
which ``L u`` at boundary nodes is evaluated on a ghost-extended field:
a non-interior node opposite an interior neighbour carries that
neighbour's value (point reflection through the boundary node, diagonal
neighbours included), which is the centred form of ``du/dn = 0``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np
import scipy.io
import scipy.sparse as sp

from .geometry import GridDomain, TensorField

__all__ = [
    "AssemblyError",
    "SparseSymMatrix",
    "Operators",
    "discretize",
    "assemble_L",
    "assemble_clamped",
    "matvec",
    "write_matrix_market",
]

SYMMETRY_WARN = 1e-6


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SparseSymMatrix:
    """Symmetric matrix in compressed-row layout.

    A matrix built as ``(F G + G^T F^T) / 2`` may keep its factors in
    ``factors = (F, G)``.  Products are then formed through the factors,
    which avoids the cancellation of a fourth-order stencil: applying the
    assembled matrix to a smooth vector loses about ``eps * ||A||`` while
    the factored product loses only ``eps * ||F|| * ||G v||``.
    """

    order: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    symmetry_defect: float = 0.0
    factors: tuple | None = None

    @classmethod
    def from_scipy(cls, M, symmetry_defect: float = 0.0, factors=None) -> "SparseSymMatrix":
        M = sp.csr_matrix(M)
        M.sum_duplicates()
        M.sort_indices()
        return cls(M.shape[0], M.indptr, M.indices, M.data, float(symmetry_defect), factors)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.order, self.order))

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def __matmul__(self, other):
        return matvec(self, other)


def matvec(A: SparseSymMatrix, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != A.order:
        raise ValueError(f"vector length {v.shape[0]} does not match order {A.order}")
    if A.factors is not None:
        F, G = A.factors
        return 0.5 * (F @ (G @ v) + G.T @ (F.T @ v))
    return A.csr @ v


def write_matrix_market(A: SparseSymMatrix, path) -> None:
    """Symmetric Matrix Market coordinate dump (1-based, lower triangle)."""
    scipy.io.mmwrite(str(path), sp.tril(A.csr).tocoo(), symmetry="symmetric", precision=17)


def _offsets(dim: int) -> list[tuple[int, ...]]:
    return list(product((-1, 0, 1), repeat=dim))


def stencil_weights(domain: GridDomain, field: TensorField, index: np.ndarray) -> np.ndarray:
    """Weights of the pointwise ``L`` stencil at lattice nodes ``index``.

    Returns ``(P, 3**dim)`` weights ordered like ``_offsets(dim)``.
    """
    d, h = domain.dim, domain.h
    # Sample points come from doubled integer indices so that the edge or
    # cell shared by two nodes is evaluated at bit-identical coordinates.
    twice = 2 * np.asarray(index, dtype=np.int64)

    def at(shift):
        return domain.origin + (h / 2) * (twice + np.asarray(shift))

    offs = _offsets(d)
    pos = {o: k for k, o in enumerate(offs)}
    centre = pos[(0,) * d]
    W = np.zeros((twice.shape[0], len(offs)))
    for ax in range(d):
        for s in (-1, 1):
            e = np.zeros(d, dtype=np.int64)
            e[ax] = s
            T = field.check_spd(at(e), "edge midpoint")
            w = T[:, ax, ax] / h**2
            o = [0] * d
            o[ax] = s
            W[:, pos[tuple(o)]] += w
            W[:, centre] -= w
    if d == 2 and field.has_cross_terms:
        for sx, sy in product((-1, 1), repeat=2):
            T = field.check_spd(at([sx, sy]), "cell centre")
            w = T[:, 0, 1] * sx * sy / (2 * h**2)
            W[:, pos[(sx, sy)]] += w
            W[:, centre] -= w
    return W


def _lookup(lut: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Interior id at lattice indices ``idx``; ``-1`` when off-lattice or not interior."""
    shape = np.array(lut.shape)
    ok = np.all((idx >= 0) & (idx < shape), axis=1)
    out = np.full(idx.shape[0], -1, dtype=np.int64)
    out[ok] = lut[tuple(idx[ok].T)]
    return out


@dataclass(frozen=True, eq=False)
class Operators:
    """All discrete operators for one (domain, field) pair.

    ``L`` is the negated Dirichlet operator (positive definite),
    ``L_full`` maps interior values to ``L u`` on interior then boundary
    nodes (ghost-extended, not negated), and ``A`` is the symmetrized
    clamped operator.
    """

    domain: GridDomain
    field: TensorField
    L: SparseSymMatrix
    L_full: sp.csr_matrix
    A: SparseSymMatrix
    weights: np.ndarray

    def apply_L(self, u: np.ndarray) -> np.ndarray:
        """``L u`` at interior nodes for ``u`` vanishing on the boundary."""
        return -(self.L.csr @ u)

    def apply_L_extended(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``L u`` at interior and boundary nodes under the clamped ghost extension."""
        full = self.L_full @ u
        n = self.domain.n_interior
        return full[:n], full[n:]

    def apply_L_to_lattice(self, values: np.ndarray) -> np.ndarray:
        """``L f`` at interior nodes for a function sampled on the whole lattice."""
        dom = self.domain
        f = np.asarray(values, dtype=float).reshape(dom.shape)
        out = np.zeros(dom.n_interior)
        for k, o in enumerate(_offsets(dom.dim)):
            nb = dom.interior_index + np.array(o)
            out += self.weights[:, k] * f[tuple(nb.T)]
        return out


def discretize(
    domain: GridDomain, field: TensorField, strict: bool = False, clamped: bool = True
) -> Operators:
    """Assemble every operator for ``(domain, field)``.

    With ``clamped=False`` only the Dirichlet operator is built and
    ``L_full``/``A`` are ``None``.
    """
    if field.dim != domain.dim:
        raise ValueError(f"tensor dim {field.dim} does not match domain dim {domain.dim}")
    n, nb = domain.n_interior, domain.n_boundary
    lut = domain.lattice_to_interior
    blut = np.full(domain.shape, -1, dtype=np.int64)
    blut[domain.boundary_mask] = np.arange(nb)
    offs = _offsets(domain.dim)
    I_idx, B_idx = domain.interior_index, domain.boundary_index
    W_int = stencil_weights(domain, field, I_idx)
    W_bdy = stencil_weights(domain, field, B_idx)

    # Dirichlet L (interior -> interior) and outer L (interior + boundary -> interior).
    rows, cols, vals = [], [], []
    orows, ocols, ovals = [], [], []
    rid = np.arange(n)
    for k, o in enumerate(offs):
        w = W_int[:, k]
        nz = w != 0
        if not nz.any():
            continue
        tgt = I_idx + np.array(o)
        iid = lut[tuple(tgt.T)]
        bid = blut[tuple(tgt.T)]
        m = nz & (iid >= 0)
        rows.append(rid[m]), cols.append(iid[m]), vals.append(w[m])
        orows.append(rid[m]), ocols.append(iid[m]), ovals.append(w[m])
        m = nz & (iid < 0)
        if np.any(bid[m] < 0):
            raise AssemblyError("interior stencil reaches a node outside the boundary layer")
        orows.append(rid[m]), ocols.append(n + bid[m]), ovals.append(w[m])
    Lmat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    Lneg = SparseSymMatrix.from_scipy(-Lmat)
    if not clamped:
        return Operators(domain, field, Lneg, None, None, W_int)
    Lout = sp.csr_matrix(
        (np.concatenate(ovals), (np.concatenate(orows), np.concatenate(ocols))), shape=(n, n + nb)
    )

    # Ghost-extended L at boundary nodes.
    brows, bcols, bvals = [], [], []
    bid_rows = np.arange(nb)
    for k, o in enumerate(offs):
        w = W_bdy[:, k]
        nz = w != 0
        if not nz.any() or all(c == 0 for c in o):
            continue  # centre value is zero on the boundary
        off = np.array(o)
        src = _lookup(lut, B_idx + off)
        src = np.where(src >= 0, src, _lookup(lut, B_idx - off))
        m = nz & (src >= 0)
        brows.append(bid_rows[m]), bcols.append(src[m]), bvals.append(w[m])
    Lb = sp.csr_matrix(
        (np.concatenate(bvals), (np.concatenate(brows), np.concatenate(bcols))), shape=(nb, n)
    )
    L_full = sp.vstack([Lmat, Lb]).tocsr()

    A = (Lout @ L_full).tocsr()
    amax = abs(A).max()
    defect = abs(A - A.T).max() / amax if amax > 0 else 0.0
    if defect > SYMMETRY_WARN:
        msg = f"clamped operator symmetry defect {defect:.3e} exceeds {SYMMETRY_WARN:g}"
        if strict:
            raise AssemblyError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    Asym = SparseSymMatrix.from_scipy(
        (A + A.T) * 0.5, symmetry_defect=defect, factors=(Lout.tocsr(), L_full)
    )
    return Operators(domain, field, Lneg, L_full, Asym, W_int)


def assemble_L(domain: GridDomain, field: TensorField) -> SparseSymMatrix:
    """Negated Dirichlet operator ``-L_h``; symmetric positive definite."""
    return discretize(domain, field, clamped=False).L


def assemble_clamped(domain: GridDomain, field: TensorField, strict: bool = False) -> SparseSymMatrix:
    """Clamped fourth-order operator ``A_h ~ L^2`` (``u = du/dn = 0``)."""
    return discretize(domain, field, strict=strict).A
