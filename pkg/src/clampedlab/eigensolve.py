"""Lowest eigenpairs of the clamped operator.

Two solvers are provided.  :func:`lobpcg` is a blocked Rayleigh-Ritz
iteration for the few smallest eigenpairs of a sparse matrix; it is the
production path.  :func:`dense_eig` diagonalizes the densified matrix by
cyclic Jacobi rotations and serves as an independent oracle on small
problems.

Eigenvectors are normalized in the discrete ``L^2`` inner product
``weight * <u, v>``, where ``weight`` is the cell weight ``h**dim`` of the
grid.  The matrix eigenproblem itself carries no mass matrix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._csv import write_csv
from .discretize import SparseSymMatrix, matvec

__all__ = [
    "EigenSystem",
    "ConvergenceError",
    "lobpcg",
    "dense_eig",
    "residuals",
    "lcg_uniform",
    "residual_floor",
    "write_eigen_csv",
    "write_eigenvectors",
    "read_eigenvectors",
    "DENSE_MAX_ORDER",
]

DENSE_MAX_ORDER = 3000
SCALAR_JACOBI_MAX = 256
JACOBI_BLOCK = 256


class ConvergenceError(RuntimeError):
    """Raised when an iterative solve misses its residual target.

    The best residuals reached are kept on ``residuals``.
    """

    def __init__(self, message: str, residuals: np.ndarray, eigenvalues: np.ndarray):
        super().__init__(message)
        self.residuals = residuals
        self.eigenvalues = eigenvalues


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Ordered eigenpairs ``A u_i = lambda_i u_i``.

    Attributes
    ----------
    eigenvalues : ndarray, shape (k,)
        Ascending eigenvalues.
    vectors : ndarray, shape (order, k)
        Eigenvectors, one per column, with ``weight * u_i . u_j = delta_ij``.
    residuals : ndarray, shape (k,)
        ``||A u_i - lambda_i u_i||_2 / ||u_i||_2``.
    weight : float
        Quadrature weight per node used for the normalization.
    iterations : int
        Iterations (LOBPCG) or sweeps (Jacobi) spent.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    weight: float = 1.0
    iterations: int = 0
    method: str = ""
    info: dict = field(default_factory=dict, compare=False)

    @property
    def k(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def order(self) -> int:
        return int(self.vectors.shape[0])

    def gram(self) -> np.ndarray:
        """Weighted Gram matrix ``weight * U^T U`` (identity up to round-off)."""
        return self.weight * (self.vectors.T @ self.vectors)

    def head(self, k: int) -> "EigenSystem":
        return EigenSystem(
            self.eigenvalues[:k].copy(),
            self.vectors[:, :k].copy(),
            self.residuals[:k].copy(),
            self.weight,
            self.iterations,
            self.method,
            dict(self.info),
        )


# ---------------------------------------------------------------------------
# helpers


def lcg_uniform(seed: int, size: int) -> np.ndarray:
    """Uniform samples in ``[-1, 1)`` from a 64-bit linear congruential generator.

    Uses the MMIX multiplier and increment; the top 53 bits of each state
    become the mantissa.  Pure Python so the stream is platform independent.
    """
    a, c, mask = 6364136223846793005, 1442695040888963407, (1 << 64) - 1
    state = (int(seed) ^ 0x9E3779B97F4A7C15) & mask
    out = np.empty(size)
    scale = 1.0 / (1 << 53)
    for i in range(size):
        state = (a * state + c) & mask
        out[i] = (state >> 11) * scale
    return 2.0 * out - 1.0


def _fix_signs(V: np.ndarray) -> np.ndarray:
    """Make the first non-negligible component of every column positive."""
    V = V.copy()
    for j in range(V.shape[1]):
        col = V[:, j]
        big = np.abs(col) > 1e-8 * np.abs(col).max()
        if big.any() and col[np.argmax(big)] < 0:
            V[:, j] = -col
    return V


def _finalize(lam, X, apply, weight, iterations, method, info) -> EigenSystem:
    order = np.argsort(lam, kind="stable")
    lam = np.asarray(lam, dtype=float)[order]
    X = np.asarray(X, dtype=float)[:, order]
    X = X / np.linalg.norm(X, axis=0)
    X = _fix_signs(X)
    R = apply(X) - X * lam
    res = np.linalg.norm(R, axis=0)
    return EigenSystem(lam, X / np.sqrt(weight), res, float(weight), int(iterations), method, info)


def residuals(A: SparseSymMatrix, sys: EigenSystem) -> np.ndarray:
    """Per-pair ``||A u_i - lambda_i u_i||_2 / ||u_i||_2``."""
    U = np.asarray(sys.vectors, dtype=float)
    if U.ndim != 2 or U.shape[0] != A.order or U.shape[1] != sys.eigenvalues.size:
        raise ValueError(
            f"eigenvector block {U.shape} does not match order {A.order} and k {sys.eigenvalues.size}"
        )
    norms = np.linalg.norm(U, axis=0)
    if np.any(norms == 0):
        raise ValueError("zero eigenvector")
    R = matvec(A, U) - U * sys.eigenvalues
    return np.linalg.norm(R, axis=0) / norms


# ---------------------------------------------------------------------------
# LOBPCG


def _orthonormalize(Z: np.ndarray, drop: float = 1e-10):
    """Orthonormal basis of ``span(Z)`` through the Gram matrix, dropping weak directions.

    Two passes of the eigen-decomposed Gram matrix; directions whose Gram
    eigenvalue falls below ``drop`` times the largest are discarded, which
    is how degenerate search directions get restarted away.
    """
    for _ in range(2):
        if Z.shape[1] == 0:
            return Z
        norms = np.linalg.norm(Z, axis=0)
        Z = Z[:, norms > 0] / norms[norms > 0]
        G = Z.T @ Z
        w, Q = np.linalg.eigh(G)
        keep = w > drop * max(w[-1], np.finfo(float).tiny)
        Z = Z @ (Q[:, keep] / np.sqrt(w[keep]))
    return Z


def residual_floor(A: SparseSymMatrix, factor: float = 10.0) -> float:
    """Smallest meaningful absolute residual, ``factor * eps * ||A||_inf``."""
    row_sums = np.asarray(abs(A.csr).sum(axis=1)).ravel()
    return float(factor * np.finfo(float).eps * row_sums.max())


def _make_preconditioner(A: SparseSymMatrix, precond):
    if precond is None or precond == "none":
        return lambda R: R
    if callable(precond):
        return precond
    if precond == "jacobi":
        d = A.diagonal()
        if np.any(d <= 0):
            raise ValueError("Jacobi preconditioner needs a positive diagonal")
        inv = 1.0 / d
        return lambda R: R * inv[:, None]
    if precond == "factor":
        lu = spla.splu(sp.csc_matrix(A.csr))
        return lambda R: lu.solve(np.asfortranarray(R))
    raise ValueError(f"unknown preconditioner {precond!r}")


def lobpcg(
    A: SparseSymMatrix,
    k: int,
    tol: float = 1e-9,
    max_iter: int = 500,
    seed: int = 0,
    precond="jacobi",
    weight: float = 1.0,
) -> EigenSystem:
    """Smallest ``k`` eigenpairs by locally optimal block preconditioned CG.

    Parameters
    ----------
    A : SparseSymMatrix
        Symmetric positive definite matrix.
    k : int
        Number of wanted eigenpairs, at most ``order // 4``.
    tol : float
        Relative residual target; pair ``i`` has converged once
        ``||A x - lambda x|| <= tol * max(lambda, 1) * ||x||``.  The target
        never goes below the rounding floor ``10 * eps * ||A||_inf``, since
        no double-precision vector can do better on stiff operators.
    max_iter : int
        Iteration cap.
    seed : int
        Seed of the initial random block.
    precond : {"jacobi", "factor", "none"} or callable
        ``"jacobi"`` scales residuals by the inverse diagonal.  ``"factor"``
        applies a sparse LU solve with ``A`` itself, which removes the
        ``h**-4`` conditioning of fourth-order operators.  A callable
        receives and returns an ``(order, m)`` block.
    weight : float
        Quadrature weight used to normalize the returned eigenvectors.

    Returns
    -------
    EigenSystem

    Raises
    ------
    ValueError
        If ``k`` is out of range or ``tol`` is outside ``(0, 1e-2]``.
    ConvergenceError
        If the target is not met within ``max_iter`` iterations.
    """
    n = A.order
    if k < 1 or 4 * k > n:
        raise ValueError(f"k = {k} must satisfy 1 <= k <= order/4 = {n / 4:g}")
    if not (0 < tol <= 1e-2):
        raise ValueError(f"tol = {tol} outside (0, 1e-2]")
    M = _make_preconditioner(A, precond)
    apply = lambda V: matvec(A, V)  # noqa: E731
    floor = residual_floor(A)
    m = k + min(k, 5)

    X = _orthonormalize(lcg_uniform(seed, n * m).reshape(n, m))
    AX = apply(X)
    lam, C = np.linalg.eigh(X.T @ AX)
    X, AX = X @ C, AX @ C
    P = np.zeros((n, 0))
    best = np.full(k, np.inf)
    it = 0
    for it in range(1, max_iter + 1):
        R = AX - X * lam
        rn = np.linalg.norm(R, axis=0)
        thresh = np.maximum(tol * np.maximum(np.abs(lam), 1.0), floor)
        best = np.minimum(best, rn[:k] / np.maximum(np.abs(lam[:k]), 1.0))
        if np.all(rn[:k] <= thresh[:k]):
            break
        active = rn > thresh
        W = M(R[:, active])
        Z = np.hstack([W, P])
        for _ in range(2):
            Z -= X @ (X.T @ Z)
        Z = _orthonormalize(Z)
        S = np.hstack([X, Z])
        AS = apply(S)
        H = S.T @ AS
        theta, Q = np.linalg.eigh(0.5 * (H + H.T))
        Q = Q[:, :m]
        lam = theta[:m]
        X, AX = S @ Q, AS @ Q
        # Direction of the update outside the previous Ritz block.
        P = Z @ Q[X.shape[1] :][:, active] if Z.shape[1] else np.zeros((n, 0))
        P = _orthonormalize(P) if P.shape[1] else P
    else:
        raise ConvergenceError(
            f"lobpcg did not reach tol {tol:g} in {max_iter} iterations",
            best,
            lam[:k].copy(),
        )
    return _finalize(
        lam[:k], X[:, :k], apply, weight, it, "lobpcg", {"block": m, "precond": str(precond), "residual_floor": floor},
    )


# ---------------------------------------------------------------------------
# cyclic Jacobi oracle


@numba.njit(cache=True)
def _scalar_jacobi(A, V, tol, max_sweeps):  # pragma: no cover - compiled
    # A pair is rotated only while |a_pq| exceeds eps * sqrt(|a_pp a_qq|);
    # sweeping until no pair qualifies keeps small eigenvalues of graded
    # matrices accurate to working precision, well past the norm target.
    n = A.shape[0]
    eps = 2.220446049250313e-16
    fro = 0.0
    for i in range(n):
        for j in range(n):
            fro += A[i, j] * A[i, j]
    fro = np.sqrt(fro)
    for sweep in range(max_sweeps):
        rotations = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= eps * np.sqrt(abs(A[p, p] * A[q, q])):
                    continue
                rotations += 1
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for r in range(n):
                    arp = A[r, p]
                    arq = A[r, q]
                    A[r, p] = c * arp - s * arq
                    A[r, q] = s * arp + c * arq
                for r in range(n):
                    apr = A[p, r]
                    aqr = A[q, r]
                    A[p, r] = c * apr - s * aqr
                    A[q, r] = s * apr + c * aqr
                for r in range(n):
                    vrp = V[r, p]
                    vrq = V[r, q]
                    V[r, p] = c * vrp - s * vrq
                    V[r, q] = s * vrp + c * vrq
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += A[i, j] * A[i, j]
        if rotations == 0 and np.sqrt(2.0 * off) <= tol * fro:
            return sweep + 1
    return -1


def _off_norm(A: np.ndarray) -> float:
    D = A.copy()
    np.fill_diagonal(D, 0.0)
    return float(np.linalg.norm(D))


def _block_jacobi(A: np.ndarray, tol: float, max_sweeps: int, b: int = JACOBI_BLOCK):
    """Block-cyclic Jacobi: each block pair is diagonalized exactly, then rotated in."""
    n = A.shape[0]
    V = np.eye(n)
    blocks = [np.arange(s, min(s + b, n)) for s in range(0, n, b)]
    fro = np.linalg.norm(A)
    for sweep in range(max_sweeps + 1):
        if _off_norm(A) <= tol * fro:
            return A, V, sweep
        if sweep == max_sweeps:
            break
        for I in range(len(blocks)):
            for J in range(I + 1, len(blocks)):
                if np.linalg.norm(A[np.ix_(blocks[I], blocks[J])]) <= 1e-3 * tol * fro:
                    continue
                idx = np.concatenate([blocks[I], blocks[J]])
                w, Q = np.linalg.eigh(A[np.ix_(idx, idx)])
                C = A[:, idx] @ Q
                A[:, idx] = C
                A[idx, :] = C.T
                A[np.ix_(idx, idx)] = np.diag(w)
                V[:, idx] = V[:, idx] @ Q
    return A, V, -1


def dense_eig(A, weight: float = 1.0, tol: float = 1e-12, max_sweeps: int = 50) -> EigenSystem:
    """Full spectrum by cyclic Jacobi rotations on the densified matrix.

    Orders up to 256 use scalar two-sided rotations, repeated until every
    off-diagonal entry is negligible relative to its diagonal pair (which
    also brings the off-diagonal Frobenius norm below ``tol * ||A||_F``).
    Larger orders use the block-cyclic variant with 256-wide blocks, each
    block pair diagonalized by LAPACK, stopping at the norm target.  The
    reported eigenvalues are Rayleigh quotients of the rotated basis
    vectors, formed with :func:`matvec`.

    Parameters
    ----------
    A : SparseSymMatrix or ndarray
        Symmetric matrix of order at most 3000.
    weight : float
        Quadrature weight for eigenvector normalization.
    """
    if isinstance(A, SparseSymMatrix):
        D = A.toarray()
        apply = lambda V: matvec(A, V)  # noqa: E731
    else:
        D = np.array(A, dtype=float)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise ValueError("dense_eig needs a square matrix")
        apply = D.copy().__matmul__
    n = D.shape[0]
    if n > DENSE_MAX_ORDER:
        raise ValueError(f"order {n} above the dense oracle cap {DENSE_MAX_ORDER}")
    D = 0.5 * (D + D.T)
    if n <= SCALAR_JACOBI_MAX:
        V = np.eye(n)
        D = np.ascontiguousarray(D)
        sweeps = _scalar_jacobi(D, V, tol, max_sweeps)
    else:
        D, V, sweeps = _block_jacobi(D, tol, max_sweeps)
    if sweeps < 0:
        raise ConvergenceError(
            f"Jacobi did not converge in {max_sweeps} sweeps", np.array([_off_norm(D)]), np.diag(D).copy()
        )
    # Rotations act on the assembled entries and lose eps * ||A|| in every
    # eigenvalue; the Rayleigh quotient of each (already accurate) vector,
    # formed with the matrix product, restores the small ones.
    lam = np.einsum("ij,ij->j", V, apply(V)) / np.einsum("ij,ij->j", V, V)
    return _finalize(lam, V, apply, weight, sweeps, "jacobi", {"diagonal": np.diag(D).copy()})


# ---------------------------------------------------------------------------
# export


def write_eigen_csv(sys: EigenSystem, path, comment: str | None = None) -> Path:
    """CSV with columns ``index, eigenvalue, residual`` (index from 1)."""
    rows = [(i + 1, lam, r) for i, (lam, r) in enumerate(zip(sys.eigenvalues, sys.residuals))]
    return write_csv(path, ("index", "eigenvalue", "residual"), rows, comment)


def write_eigenvectors(sys: EigenSystem, path) -> Path:
    """Binary dump: little-endian int64 ``order`` and ``k``, then float64 values, row-major."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qq", sys.order, sys.k))
        fh.write(np.ascontiguousarray(sys.vectors, dtype="<f8").tobytes())
    return path


def read_eigenvectors(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    order, k = struct.unpack("<qq", raw[:16])
    return np.frombuffer(raw[16:], dtype="<f8").reshape(order, k).copy()
