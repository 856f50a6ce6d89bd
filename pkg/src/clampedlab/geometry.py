"""Discrete domains, coefficient tensor fields and geometric constants.

Domains live on a uniform lattice of spacing ``h``.  A node is either
*interior* (an unknown), *boundary* (value pinned to zero, within one
lattice step of an interior node, diagonals included) or outside.  The
interior never touches the lattice edge, so every stencil neighbour of an
interior node exists on the lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Mapping

import numpy as np
from scipy import ndimage

__all__ = [
    "DomainError",
    "GridDomain",
    "TensorField",
    "GeometricConstants",
    "build_interval",
    "build_rectangle",
    "build_disk",
    "trace_nabla_T",
    "geometric_constants",
    "affine",
]


class DomainError(ValueError):
    """Invalid domain request (too coarse, non-uniform spacing, disconnected)."""


ScalarFn = Callable[[np.ndarray], np.ndarray]


def affine(const: float, grad=None) -> ScalarFn:
    """Return ``x -> const + grad . x`` acting on an ``(P, dim)`` point array."""
    g = None if grad is None else np.asarray(grad, dtype=float)

    def fn(x):
        x = np.atleast_2d(x)
        out = np.full(x.shape[0], float(const))
        if g is not None:
            out = out + x[:, : g.size] @ g[: x.shape[1]]
        return out

    return fn


def _as_fn(value) -> ScalarFn | None:
    if value is None or callable(value):
        return value
    return affine(float(value))


@dataclass(frozen=True, eq=False)
class GridDomain:
    kind: str
    h: float
    shape: tuple[int, ...]
    origin: np.ndarray
    interior_mask: np.ndarray
    extents: tuple[tuple[float, float], ...]

    def __post_init__(self):
        mask = self.interior_mask
        edge = np.zeros_like(mask)
        for ax in range(mask.ndim):
            sl = [slice(None)] * mask.ndim
            sl[ax] = 0
            edge[tuple(sl)] = True
            sl[ax] = -1
            edge[tuple(sl)] = True
        if np.any(mask & edge):
            raise DomainError("interior node on the lattice edge (orphan stencil neighbours)")
        if mask.sum() < 4:
            raise DomainError("fewer than 4 interior nodes")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def cell_weight(self) -> float:
        return self.h**self.dim

    @cached_property
    def node_coords(self) -> np.ndarray:
        """Coordinates of every lattice node, C-order, shape ``(prod(shape), dim)``."""
        idx = np.indices(self.shape).reshape(self.dim, -1).T
        return self.origin + self.h * idx

    @cached_property
    def interior_index(self) -> np.ndarray:
        """Lattice multi-indices of interior nodes, shape ``(n, dim)``."""
        return np.argwhere(self.interior_mask)

    @cached_property
    def lattice_to_interior(self) -> np.ndarray:
        """Interior number of each lattice node, ``-1`` where not interior."""
        lut = np.full(self.shape, -1, dtype=np.int64)
        lut[self.interior_mask] = np.arange(self.n_interior)
        return lut

    @property
    def n_interior(self) -> int:
        return int(self.interior_mask.sum())

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        grown = ndimage.binary_dilation(
            self.interior_mask, structure=np.ones((3,) * self.dim, dtype=bool)
        )
        return grown & ~self.interior_mask

    @cached_property
    def boundary_index(self) -> np.ndarray:
        return np.argwhere(self.boundary_mask)

    @property
    def n_boundary(self) -> int:
        return int(self.boundary_mask.sum())

    def coords(self, index: np.ndarray) -> np.ndarray:
        return self.origin + self.h * np.asarray(index, dtype=float)

    @cached_property
    def interior_coords(self) -> np.ndarray:
        return self.coords(self.interior_index)

    @cached_property
    def boundary_coords(self) -> np.ndarray:
        return self.coords(self.boundary_index)

    def translate(self, shift) -> "GridDomain":
        shift = np.asarray(shift, dtype=float).reshape(self.dim)
        ext = tuple((lo + s, hi + s) for (lo, hi), s in zip(self.extents, shift))
        return replace(self, origin=self.origin + shift, extents=ext)

    def __repr__(self):
        return (
            f"GridDomain(kind={self.kind!r}, h={self.h:g}, shape={self.shape}, "
            f"interior={self.n_interior})"
        )


def build_interval(length: float, N: int) -> GridDomain:
    if N < 8:
        raise DomainError(f"interval needs N >= 8, got {N}")
    if length <= 0:
        raise DomainError("length must be positive")
    mask = np.zeros(N + 1, dtype=bool)
    mask[1:N] = True
    return GridDomain(
        kind="interval",
        h=length / N,
        shape=(N + 1,),
        origin=np.zeros(1),
        interior_mask=mask,
        extents=((0.0, float(length)),),
    )


def build_rectangle(Lx: float, Ly: float, Nx: int, Ny: int) -> GridDomain:
    if min(Nx, Ny) < 8:
        raise DomainError(f"rectangle needs Nx, Ny >= 8, got ({Nx}, {Ny})")
    if Lx <= 0 or Ly <= 0:
        raise DomainError("side lengths must be positive")
    hx, hy = Lx / Nx, Ly / Ny
    if not math.isclose(hx, hy, rel_tol=1e-12):
        raise DomainError(f"non-uniform spacing: Lx/Nx={hx:g} but Ly/Ny={hy:g}")
    mask = np.zeros((Nx + 1, Ny + 1), dtype=bool)
    mask[1:Nx, 1:Ny] = True
    return GridDomain(
        kind="rectangle",
        h=hx,
        shape=(Nx + 1, Ny + 1),
        origin=np.zeros(2),
        interior_mask=mask,
        extents=((0.0, float(Lx)), (0.0, float(Ly))),
    )


def build_disk(R: float, N: int) -> GridDomain:
    """Staircase disk of radius ``R`` centred at the origin on a ``2R/N`` grid."""
    if N < 16:
        raise DomainError(f"disk needs N >= 16, got {N}")
    if R <= 0:
        raise DomainError("radius must be positive")
    h = 2.0 * R / N
    idx = np.indices((N + 1, N + 1)).astype(float)
    x = -R + h * idx[0]
    y = -R + h * idx[1]
    mask = np.hypot(x, y) < R - h / 2
    _, ncomp = ndimage.label(mask)
    if ncomp != 1:
        raise DomainError(f"disk interior has {ncomp} connected components")
    return GridDomain(
        kind="disk",
        h=h,
        shape=(N + 1, N + 1),
        origin=np.array([-R, -R]),
        interior_mask=mask,
        extents=((-R, R), (-R, R)),
    )


@dataclass(frozen=True)
class TensorField:
    """Symmetric positive-definite coefficient tensor ``T(x)``.

    ``kind`` is ``"identity"``, ``"diagonal"`` (``diag(a, b)``) or
    ``"rotated"`` (``R(theta) diag(a, b) R(theta)^T``).  The scalar
    parameters are callables on ``(P, dim)`` point arrays; plain numbers are
    promoted to constants.
    """

    kind: str = "identity"
    dim: int = 2
    a: ScalarFn | None = None
    b: ScalarFn | None = None
    theta: ScalarFn | None = None
    fd_step: float = 1e-3
    scale: float = 1.0
    params: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in ("identity", "diagonal", "rotated"):
            raise ValueError(f"unknown tensor kind {self.kind!r}")
        if self.dim not in (1, 2):
            raise ValueError("only 1D and 2D tensor fields are supported")
        if self.kind == "rotated" and self.dim != 2:
            raise ValueError("rotated-anisotropic tensors need dim = 2")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @classmethod
    def identity(cls, dim: int = 2, **kw) -> "TensorField":
        return cls(kind="identity", dim=dim, **kw)

    @classmethod
    def diagonal(cls, a, b=1.0, dim: int = 2, **kw) -> "TensorField":
        return cls(kind="diagonal", dim=dim, a=_as_fn(a), b=_as_fn(b), **kw)

    @classmethod
    def rotated(cls, theta, a, b, **kw) -> "TensorField":
        return cls(kind="rotated", dim=2, a=_as_fn(a), b=_as_fn(b), theta=_as_fn(theta), **kw)

    def scaled(self, c: float) -> "TensorField":
        return replace(self, scale=self.scale * c)

    def with_fd_step(self, step: float) -> "TensorField":
        return replace(self, fd_step=step)

    @property
    def has_cross_terms(self) -> bool:
        return self.kind == "rotated"

    def sample(self, points) -> np.ndarray:
        """Tensor values at ``points`` (shape ``(P, dim)``) as ``(P, dim, dim)``."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        P, d = x.shape[0], self.dim
        if self.kind == "identity":
            out = np.broadcast_to(np.eye(d), (P, d, d)).copy()
        elif self.kind == "diagonal":
            out = np.zeros((P, d, d))
            out[:, 0, 0] = self.a(x)
            if d == 2:
                out[:, 1, 1] = self.b(x)
        else:
            th, a, b = self.theta(x), self.a(x), self.b(x)
            c, s = np.cos(th), np.sin(th)
            out = np.empty((P, 2, 2))
            out[:, 0, 0] = a * c * c + b * s * s
            out[:, 1, 1] = a * s * s + b * c * c
            out[:, 0, 1] = out[:, 1, 0] = (a - b) * c * s
        if self.scale != 1.0:
            out *= self.scale
        return out

    def check_spd(self, points, what: str = "sample") -> np.ndarray:
        """Sample and verify symmetry and positive definiteness."""
        T = self.sample(points)
        if T.shape[1] == 2 and np.any(T[:, 0, 1] != T[:, 1, 0]):
            raise ValueError(f"non-symmetric tensor {what}")
        lo = np.linalg.eigvalsh(T)[:, 0]
        if np.any(~(lo > 0)):
            bad = int(np.argmin(lo))
            raise ValueError(
                f"tensor not positive definite at {what} {np.atleast_2d(points)[bad]} "
                f"(smallest eigenvalue {lo[bad]:g})"
            )
        return T

    def trace_grad(self, points, fd_step: float | None = None) -> np.ndarray:
        """``tr(grad T)`` at many points: component ``j`` is ``sum_i d_i T_ij``."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        s = self.fd_step if fd_step is None else fd_step
        out = np.zeros((x.shape[0], self.dim))
        if self.kind == "identity":
            return out
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = s
            dT = (self.sample(x + e) - self.sample(x - e)) / (2 * s)
            out += dT[:, i, :]
        return out


def trace_nabla_T(field: TensorField, point, fd_step: float | None = None) -> np.ndarray:
    """Central-difference ``tr(grad T)`` at a single point."""
    return field.trace_grad(np.reshape(point, (1, field.dim)), fd_step)[0]


@dataclass(frozen=True)
class GeometricConstants:
    n: int
    m: int
    S_0: float
    T_star: float
    T_0: float
    I_0: float
    H_0: float

    def __post_init__(self):
        for name in ("S_0", "T_star", "T_0", "I_0", "H_0"):
            v = getattr(self, name)
            if not v >= 0:
                raise ValueError(f"{name} must be >= 0, got {v}")
        if self.n < 1 or self.m < self.n:
            raise ValueError(f"need 1 <= n <= m, got n={self.n}, m={self.m}")


def geometric_constants(
    domain: GridDomain, field: TensorField, overrides: Mapping | None = None
) -> GeometricConstants:
    """Sup-norm constants over the closure nodes (interior plus boundary).

    Flat domains get ``S_0 = H_0 = 0`` and ``m = n``; any field may be
    overridden, e.g. to exercise curved-case formulas with external data.
    """
    pts = np.vstack([domain.interior_coords, domain.boundary_coords])
    step = field.fd_step
    T = field.sample(pts)
    values = dict(
        n=domain.dim,
        m=domain.dim,
        S_0=0.0,
        T_star=float(np.max(np.linalg.norm(T, ord=2, axis=(1, 2)))),
        T_0=float(np.max(np.linalg.norm(field.trace_grad(pts, step), axis=1))),
        I_0=float(np.max(np.linalg.norm(pts, axis=1))),
        H_0=0.0,
    )
    for key, val in (overrides or {}).items():
        if key not in values:
            raise KeyError(f"unknown geometric constant {key!r}")
        if val < 0:
            raise ValueError(f"override {key} must be >= 0, got {val}")
        values[key] = val
    return GeometricConstants(**values)
