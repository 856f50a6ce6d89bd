"""Independent reference values used by the tests.

Nothing here imports the package under test.
"""

import math


def bisect(f, lo, hi, tol=1e-15, max_iter=200):
    flo = f(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def beam_root(j=1):
    """j-th positive root of cos(k) cosh(k) = 1 (clamped-clamped beam)."""
    f = lambda k: math.cos(k) * math.cosh(k) - 1.0  # noqa: E731
    # Roots sit near (j + 1/2) pi; bracket a quarter period either side.
    c = (j + 0.5) * math.pi
    return bisect(f, c - 0.6, c + 0.6)


BEAM_LAMBDA1 = beam_root(1) ** 4


def dirichlet_laplacian_1d(N, L=1.0):
    """Eigenvalues of the (2, -1)/h^2 tridiagonal matrix with N-1 unknowns."""
    h = L / N
    return [4.0 / h**2 * math.sin(j * math.pi * h / (2 * L)) ** 2 for j in range(1, N)]


def disk_lattice_count(R, N):
    """Lattice nodes of the 2R/N grid with |x| < R - h/2, by enumeration."""
    h = 2.0 * R / N
    count = 0
    for i in range(N + 1):
        for j in range(N + 1):
            x, y = -R + i * h, -R + j * h
            if math.hypot(x, y) < R - h / 2:
                count += 1
    return count


def jacobi_2x2(a, b, c):
    """Eigenvalues of [[a, b], [b, c]] from the characteristic polynomial."""
    m, d = 0.5 * (a + c), math.hypot(0.5 * (a - c), b)
    return m - d, m + d
