"""Independent reference computations used to freeze [DERIVED] test values.

Nothing here imports the package; each oracle goes straight from the
closed-form integrands to scipy quadrature.
"""

import numpy as np
from scipy import integrate


def family_lambda_area(a, epsabs=1e-10, epsrel=1e-10):
    """Chart area ``int (1 + |z|^2)^2 / |z^8 - a^8| dx dy`` of the a-family.

    Polar coordinates on a 1/16 wedge; the outer disk is mapped to
    ``|eta| < 1`` where the integrand becomes ``(1 + |eta|^2)^2 / |1 - a^8 eta^8|``.
    """
    def north(r, th):
        z = r * np.exp(1j * th)
        return (1 + r * r) ** 2 / abs(z ** 8 - a ** 8) * r

    def south(r, th):
        e = r * np.exp(1j * th)
        return (1 + r * r) ** 2 / abs(1 - a ** 8 * e ** 8) * r

    def radial(f, th, pts):
        return integrate.quad(f, 0, 1, args=(th,), points=pts, limit=400,
                              epsabs=epsabs, epsrel=epsrel)[0]

    wedge = np.pi / 8
    n = integrate.quad(lambda th: radial(north, th, [a]), 0, wedge, limit=400,
                       epsabs=epsabs, epsrel=epsrel)[0]
    s = integrate.quad(lambda th: radial(south, th, None), 0, wedge, limit=400,
                       epsabs=epsabs, epsrel=epsrel)[0]
    return 16 * (n + s)


def sphere_laplacian_eigenvalues(lmax):
    """``l (l + 1)`` with multiplicity ``2 l + 1``."""
    return np.concatenate([[l * (l + 1)] * (2 * l + 1) for l in range(lmax + 1)])


def dense_inertia(A, M, sigma):
    """Eigenvalue counts (below, near, above) ``sigma`` of the pencil ``(A, diag M)``.

    Uses the symmetric scaling ``M^-1/2 A M^-1/2`` and a dense LDL^T
    factorization; Sylvester's law makes this independent of the eigensolver.
    """
    from scipy.linalg import ldl
    A = A.toarray() if hasattr(A, "toarray") else np.asarray(A, dtype=float)
    s = 1.0 / np.sqrt(M)
    B = s[:, None] * A * s[None, :] - sigma * np.eye(len(M))
    _, D, _ = ldl(B)
    ev = np.linalg.eigvalsh(D)
    return int(np.sum(ev < 0)), int(np.sum(ev > 0))


def chart_laplacian_fd(f, z0, h=1e-4):
    """Five-point Laplacian in the flat chart coordinates at ``z0``."""
    return (f(z0 + h) + f(z0 - h) + f(z0 + 1j * h) + f(z0 - 1j * h) - 4 * f(z0)) / h ** 2


def family_alpha_moment(a, epsabs=1e-10, epsrel=1e-10):
    """Chart integral of ``alpha * lam`` against round area for the a-family.

    ``alpha = (1 - r^2) / (1 + r^2)`` in the north disk and its negative in
    the ``eta`` disk.
    """
    def north(r, th):
        z = r * np.exp(1j * th)
        return (1 - r * r) * (1 + r * r) / abs(z ** 8 - a ** 8) * r

    def south(r, th):
        e = r * np.exp(1j * th)
        return -(1 - r * r) * (1 + r * r) / abs(1 - a ** 8 * e ** 8) * r

    wedge = np.pi / 8
    n = integrate.quad(lambda th: integrate.quad(north, 0, 1, args=(th,), points=[a], limit=400,
                                                 epsabs=epsabs, epsrel=epsrel)[0],
                       0, wedge, limit=400, epsabs=epsabs, epsrel=epsrel)[0]
    s = integrate.quad(lambda th: integrate.quad(south, 0, 1, args=(th,), limit=400,
                                                 epsabs=epsabs, epsrel=epsrel)[0],
                       0, wedge, limit=400, epsabs=epsabs, epsrel=epsrel)[0]
    return 16 * (n + s)
