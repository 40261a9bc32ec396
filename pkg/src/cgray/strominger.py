"""Reduced Hull-Strominger system on the genus-3 curve.

With the ansatz ``omega_f = e^{2f} omega_hat + e^f omega'`` the system
collapses to a kernel element ``u`` of ``-Delta + 2 kappa`` and the
pointwise quadratic ``e^f + alpha' kappa / (2 e^f) = u``.  We take
``u = t . (alpha, beta, gamma)``, which is a kernel element exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Field, SphereMesh, integrate
from .surface import BranchConfiguration, branch_sphere_points, neg_kappa_on_sphere

__all__ = [
    "SolutionReport",
    "kernel_function",
    "ef_from_u",
    "dilaton_from_u",
    "solve_reduced",
    "period_map",
    "potential",
    "cone_membership",
    "branch_values",
]


def _check_alpha_prime(alpha_prime):
    if not alpha_prime > 0:
        raise ValueError(
            f"alpha' = {alpha_prime}: the ansatz has no solutions unless alpha' > 0")


def kernel_function(t, mesh: SphereMesh) -> Field:
    t = np.asarray(t, dtype=float).reshape(3)
    return Field(mesh.vertices @ t, mesh)


def ef_from_u(u, alpha_prime, neg_kappa):
    """Positive root of ``e^f + alpha' kappa / (2 e^f) = u``, computed stably.

    For ``u < 0`` the textbook form cancels catastrophically; we use the
    conjugate form ``alpha' (-kappa) / (sqrt(u^2 + 2 alpha' (-kappa)) - u)``.
    """
    u = np.asarray(u, dtype=float)
    q = 2.0 * alpha_prime * np.asarray(neg_kappa, dtype=float)
    root = np.sqrt(u * u + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg = np.where(root - u > 0, 0.5 * q / (root - u), 0.0)
    return np.where(u >= 0, 0.5 * (u + root), neg)


def dilaton_from_u(u, alpha_prime, cfg: BranchConfiguration) -> Field:
    """``e^f = (u + sqrt(u^2 - 2 alpha' kappa)) / 2`` at the vertices of ``u``'s mesh."""
    _check_alpha_prime(alpha_prime)
    mesh = u.mesh
    nk = neg_kappa_on_sphere(cfg, mesh.vertices)
    return Field(ef_from_u(u.values, alpha_prime, nk), mesh)


def branch_values(cfg: BranchConfiguration, t) -> np.ndarray:
    """``u(b_k) = t . n(b_k)`` in closed form."""
    return branch_sphere_points(cfg) @ np.asarray(t, dtype=float).reshape(3)


def cone_membership(cfg: BranchConfiguration, t) -> dict:
    margin = float(np.min(branch_values(cfg, t)))
    return {"inside": margin > 0, "margin": margin}


def _ef_values(cfg, t, alpha_prime, mesh):
    _check_alpha_prime(alpha_prime)
    u = mesh.vertices @ np.asarray(t, dtype=float).reshape(3)
    return ef_from_u(u, alpha_prime, neg_kappa_on_sphere(cfg, mesh.vertices))


def period_map(cfg, t, alpha_prime, mesh: SphereMesh) -> np.ndarray:
    """``T_i = int_Sigma e^f u_i omega_hat`` with ``(u_1, u_2, u_3) = (alpha, beta, gamma)``."""
    ef = _ef_values(cfg, t, alpha_prime, mesh)
    return np.array([integrate(mesh, ef * mesh.vertices[:, i], mesh.lam_mass) for i in range(3)])


def potential(cfg, t, alpha_prime, mesh: SphereMesh) -> float:
    """``F = 1/2 int_Sigma (e^{2f} - alpha' kappa f) omega_hat`` on the open cone."""
    vals = branch_values(cfg, t)
    if np.min(vals) <= 0:
        k = int(np.argmin(vals))
        raise ValueError(
            f"t={list(np.ravel(t))} is outside the cone: u(b_{k}) = {vals[k]:.6g} <= 0 "
            f"at branch point {cfg.points[k]}")
    ef = _ef_values(cfg, t, alpha_prime, mesh)
    nk = neg_kappa_on_sphere(cfg, mesh.vertices)
    return 0.5 * integrate(mesh, ef * ef + alpha_prime * nk * np.log(ef), mesh.lam_mass)


def jacobi_residual(mesh: SphereMesh, u) -> float:
    """``|(K_FS - 2 M_FS) u|`` in the ``M_lam^-1`` norm: discrete ``|Delta u - 2 kappa u|``."""
    r = mesh.stiffness @ u - 2.0 * mesh.fs_mass * u
    return float(np.sqrt(r @ (r / mesh.lam_mass)))


@dataclass
class SolutionReport:
    t: np.ndarray
    alpha_prime: float
    u: Field
    ef: Field
    valid: bool
    residual: float
    period: np.ndarray
    potential: float | None
    branch_values: np.ndarray
    margin: float
    base_coeff: Field = field(repr=False, default=None)
    fiber_coeff: Field = field(repr=False, default=None)

    def to_json(self) -> dict:
        return {
            "t": [float(x) for x in self.t],
            "alpha_prime": self.alpha_prime,
            "valid": self.valid,
            "residual": self.residual,
            "period": [float(x) for x in self.period],
            "potential": self.potential,
            "ef_min": float(self.ef.values.min()),
            "ef_max": float(self.ef.values.max()),
            "branch_values": [float(x) for x in self.branch_values],
            "margin": self.margin,
            "metric": {"base": "e^{2f} * omega_hat", "fiber": "e^f * omega'"},
        }


def solve_reduced(cfg, t, alpha_prime, mesh: SphereMesh) -> SolutionReport:
    """Assemble ``u``, ``e^f`` and the derived quantities for kernel coefficients ``t``.

    An invalid ``t`` (some ``u(b_k) <= 0``) is reported, not raised.
    """
    _check_alpha_prime(alpha_prime)
    t = np.asarray(t, dtype=float).reshape(3)
    u = kernel_function(t, mesh)
    ef = dilaton_from_u(u, alpha_prime, cfg)
    bv = branch_values(cfg, t)
    valid = bool(np.min(bv) > 0)
    F = potential(cfg, t, alpha_prime, mesh) if valid else None
    return SolutionReport(
        t=t,
        alpha_prime=float(alpha_prime),
        u=u,
        ef=ef,
        valid=valid,
        residual=jacobi_residual(mesh, u.values),
        period=period_map(cfg, t, alpha_prime, mesh),
        potential=F,
        branch_values=bv,
        margin=float(np.min(bv)),
        base_coeff=Field(ef.values ** 2, mesh),
        fiber_coeff=ef,
    )
