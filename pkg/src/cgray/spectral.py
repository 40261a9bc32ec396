"""Spectrum of the Jacobi operator ``L = -Delta - |dphi|^2`` on the curve.

With ``Delta_hat = Delta_FS / lam`` and ``|dphi|^2 = -2 kappa = 2 / lam`` the
eigenproblem ``L u = mu u`` becomes, in weak form on the round mesh,

    (K_FS - 2 M_FS) u = mu M_lam u,

a symmetric-definite pencil.  The invariant sector lives on the sphere mesh,
the full spectrum on the double cover.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cover import CoverMesh, build_double_cover
from .mesh import Field, SphereMesh

__all__ = [
    "C_TOL",
    "DENSE_LIMIT",
    "SpectralResult",
    "ClusterAmbiguityWarning",
    "jacobi_pencil",
    "jacobi_lower_bound",
    "solve_pencil",
    "zero_tol",
    "kernel_dim",
    "morse_index",
    "top_growth_rate",
    "subspace_angle",
    "pencil_inertia",
]

log = logging.getLogger(__name__)

# zero_tol(h) = C_TOL * h**2.  On the a = 0.5 family the discrete zero
# cluster sits below 1e-6 * h**2 and the next eigenvalue above 20 * h**2
# (levels 4-6); 1e-2 splits the two by decades on either side.
C_TOL = 1e-2
DENSE_LIMIT = 3000
SEED = 20180607


class ClusterAmbiguityWarning(UserWarning):
    pass


@dataclass
class SpectralResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    zero_tol: float
    sector: str = "invariant"
    mesh: object = field(default=None, repr=False)
    shift: float | None = None

    @property
    def n_negative(self) -> int:
        return int(np.sum(self.eigenvalues < -self.zero_tol))

    @property
    def n_zero(self) -> int:
        return int(np.sum(np.abs(self.eigenvalues) <= self.zero_tol))

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.eigenvalues > self.zero_tol))

    @property
    def eigenfunctions(self) -> list:
        if self.mesh is None or self.eigenvectors.shape[0] != getattr(self.mesh, "n_vertices", -1):
            return [v for v in self.eigenvectors.T]
        return [Field(v, self.mesh) for v in self.eigenvectors.T]

    def to_json(self) -> dict:
        return {
            "sector": self.sector,
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "n_negative": self.n_negative,
            "n_zero": self.n_zero,
            "n_positive": self.n_positive,
            "zero_tol": self.zero_tol,
        }


def zero_tol(mesh, c_tol: float = C_TOL) -> float:
    base = mesh.base if isinstance(mesh, CoverMesh) else mesh
    return c_tol * base.h ** 2


def jacobi_pencil(mesh):
    """``(A, M)`` with ``A = K_FS - 2 M_FS`` and ``M`` the lumped ``lam`` mass."""
    A = mesh.stiffness - sp.diags(2.0 * mesh.fs_mass)
    return A.tocsc(), np.asarray(mesh.lam_mass, dtype=float)


def jacobi_lower_bound(fs_mass, lam_mass) -> float:
    """``K_FS`` is positive semidefinite, so ``mu >= -2 max(M_FS / M_lam)``."""
    return -2.0 * float(np.max(np.asarray(fs_mass) / np.asarray(lam_mass)))


def _lower_bound(A, M):
    """Gershgorin bound for the smallest eigenvalue of ``M^-1/2 A M^-1/2``."""
    A = sp.csr_matrix(A)
    s = 1.0 / np.sqrt(M)
    S = sp.diags(s) @ abs(A) @ sp.diags(s)
    d = A.diagonal() / M
    radius = np.asarray(S.sum(axis=1)).ravel() - np.abs(d)
    return float(np.min(d - radius))


def solve_pencil(A, M, k: int, zero_tol: float = 0.0, sector: str = "invariant",
                 mesh=None, seed: int = SEED, lower_bound: float | None = None) -> SpectralResult:
    """The ``k`` smallest eigenpairs of ``A x = mu diag(M) x``.

    Dense ``eigh`` below ``DENSE_LIMIT`` unknowns, otherwise shift-invert
    Lanczos with the shift placed just below ``lower_bound`` (Gershgorin if
    not given, which is valid but often loose).
    Eigenvectors come back ``M``-orthonormal.
    """
    M = np.asarray(M, dtype=float)
    n = len(M)
    if np.any(M <= 0):
        raise ValueError("mass entries must be positive")
    if k > max(1, n // 4):
        raise ValueError(f"k={k} exceeds a quarter of the problem size {n}")

    if n < DENSE_LIMIT:
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
        w, v = sla.eigh(Ad, np.diag(M), subset_by_index=[0, k - 1])
        return SpectralResult(w, v, zero_tol, sector, mesh, None)

    lb = _lower_bound(A, M) if lower_bound is None else float(lower_bound)
    shift = lb - 0.05 * abs(lb) - 1e-3
    Msp = sp.diags(M).tocsc()
    v0 = np.random.default_rng(seed).standard_normal(n)
    # extra Ritz pairs keep clusters just past k from stalling Lanczos
    k_solve = min(n - 2, max(k + 6, 2 * k))
    for attempt in range(6):
        try:
            w, v = spla.eigsh(A, k=k_solve, M=Msp, sigma=shift, which="LM", v0=v0)
            break
        except (RuntimeError, spla.ArpackNoConvergence) as exc:
            if attempt == 5:
                raise
            log.warning("shift-invert at %g failed (%s); retrying", shift, exc)
            shift *= 2.0
    order = np.argsort(w)[:k]
    w, v = w[order], v[:, order]
    # re-orthonormalize within clusters against M
    G = v.T @ (M[:, None] * v)
    L = np.linalg.cholesky(G)
    v = np.linalg.solve(L, v.T).T
    return SpectralResult(w, v, zero_tol, sector, mesh, shift)


def pencil_inertia(A, M, sigma: float) -> int:
    """Number of pencil eigenvalues below ``sigma`` via dense ``LDL^T``.

    Sylvester's law: equals the negative inertia of ``A - sigma M``.
    """
    Ad = A.toarray() if sp.issparse(A) else np.array(A, dtype=float)
    Ad = Ad - sigma * np.diag(M)
    _, D, _ = sla.ldl(Ad)
    # D is block diagonal with 1x1 and 2x2 blocks
    return int(np.sum(np.linalg.eigvalsh(D) < 0))


def subspace_angle(X, Y, M) -> float:
    """Largest principal angle between column spans in the ``M`` inner product."""

    def orth(Z):
        Z = np.asarray(Z, dtype=float)
        G = Z.T @ (M[:, None] * Z)
        return np.linalg.solve(np.linalg.cholesky(G), Z.T).T

    s = np.linalg.svd(orth(X).T @ (M[:, None] * orth(Y)), compute_uv=False)
    return float(np.arccos(np.clip(s.min(), -1.0, 1.0)))


def kernel_dim(cfg, mesh: SphereMesh, c_tol: float = C_TOL, k: int = 8,
               seed: int = SEED) -> dict:
    """Near-zero cluster of the invariant-sector pencil."""
    A, M = jacobi_pencil(mesh)
    tol = zero_tol(mesh, c_tol)
    res = solve_pencil(A, M, k, tol, "invariant", mesh, seed,
                       lower_bound=jacobi_lower_bound(mesh.fs_mass, M))
    zero = np.abs(res.eigenvalues) <= tol
    basis = res.eigenvectors[:, zero]
    beyond = res.eigenvalues[~zero & (res.eigenvalues > 0)]
    ambiguous = bool(beyond.size and beyond.min() <= 2 * tol)
    if ambiguous:
        warnings.warn(f"eigenvalue {beyond.min():.3e} within 2x zero_tol={tol:.3e}",
                      ClusterAmbiguityWarning, stacklevel=2)
    angle = subspace_angle(basis, mesh.vertices, M) if basis.shape[1] >= 3 else np.pi / 2
    return {
        "dim": int(zero.sum()),
        "basis": [Field(b, mesh) for b in basis.T],
        "zero_tol": tol,
        "ambiguous": ambiguous,
        "angle_to_coordinates": angle,
        "result": res,
    }


def cover_spectrum(cover: CoverMesh, k: int = 24, c_tol: float = C_TOL,
                   seed: int = SEED) -> SpectralResult:
    """Smallest ``k`` eigenpairs of the Jacobi pencil on the full double cover."""
    A = (cover.stiffness - sp.diags(2.0 * cover.fs_mass)).tocsc()
    return solve_pencil(A, cover.lam_mass, k, zero_tol(cover, c_tol), "full-cover", cover, seed,
                        lower_bound=jacobi_lower_bound(cover.fs_mass, cover.lam_mass))


def split_sectors(res: SpectralResult, cover: CoverMesh):
    """Label each cover eigenvector symmetric or antisymmetric under the involution."""
    Pp, Pm = cover.projectors()
    M = cover.lam_mass
    labels = []
    for v in res.eigenvectors.T:
        sym = float(v @ (M * (Pp @ v)))
        anti = float(v @ (M * (Pm @ v)))
        labels.append("invariant" if sym >= anti else "antisymmetric")
    return labels


def morse_index(cfg, mesh: SphereMesh, full: bool = False, c_tol: float = C_TOL,
                offset: int = 0, seed: int = SEED) -> dict:
    """Negative-eigenvalue counts of the Jacobi operator.

    The invariant sector always has index one (the constant direction).  With
    ``full`` the count is repeated on the double cover; ``deg phi = 2``.
    """
    A, M = jacobi_pencil(mesh)
    tol = zero_tol(mesh, c_tol)
    inv = solve_pencil(A, M, 6, tol, "invariant", mesh, seed,
                       lower_bound=jacobi_lower_bound(mesh.fs_mass, M))
    if inv.n_negative != 1:
        raise AssertionError(f"invariant-sector index is {inv.n_negative}, expected 1")
    out = {"index_invariant": inv.n_negative, "index_total": None, "degree": 2,
           "invariant": inv}
    if not full:
        return out
    cover = build_double_cover(mesh, cfg, offset=offset)
    k = 24
    while True:
        res = cover_spectrum(cover, min(k, cover.n_vertices // 4), c_tol, seed)
        if res.eigenvalues[-1] > tol or k >= cover.n_vertices // 4:
            break
        k *= 2
    labels = split_sectors(res, cover)
    neg = res.eigenvalues < -tol
    out.update(
        index_total=res.n_negative,
        index_antisymmetric=int(sum(1 for l, n in zip(labels, neg) if n and l == "antisymmetric")),
        cover=cover,
        full=res,
        sectors=labels,
    )
    return out


def top_growth_rate(cfg, mesh: SphereMesh, seed: int = SEED) -> dict:
    """Growth rate ``-mu_min`` and its positive (Perron) eigenfunction."""
    A, M = jacobi_pencil(mesh)
    res = solve_pencil(A, M, 2, zero_tol(mesh), "invariant", mesh, seed,
                       lower_bound=jacobi_lower_bound(mesh.fs_mass, M))
    mu, psi = res.eigenvalues[0], res.eigenvectors[:, 0].copy()
    if psi @ M < 0:
        psi = -psi
    if not np.all(psi > 0):
        raise AssertionError("ground state is not strictly positive")
    return {"lambda1": float(-mu), "psi1": Field(psi, mesh), "result": res}
