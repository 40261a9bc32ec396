"""Closed-form geometry of genus-3 hyperelliptic curves ``w**2 = P(zeta)``.

The curve double covers the Riemann sphere, branched over the eight roots of
the monic octic ``P``.  The canonical metric pulled back to the chart is

    omega_hat = i (1 + |zeta|^2)^2 / (2 |P(zeta)|) dzeta ^ dzeta_bar

and the round metric is ``omega_FS = 2i dzeta ^ dzeta_bar / (1 + |zeta|^2)^2``
(total area 4 pi).  Their ratio ``lam = omega_hat / omega_FS`` and the Gauss
curvature ``kappa = -1 / lam`` are all that the rest of the package needs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .lp import maximize

__all__ = [
    "LAMBDA_CAP",
    "BranchConfiguration",
    "MobiusMap",
    "PointGeometry",
    "HemisphereResult",
    "stereo_to_sphere",
    "sphere_to_stereo",
    "geometry_at",
    "geometry_at_infinity",
    "neg_kappa_on_sphere",
    "lam_on_sphere",
    "branch_sphere_points",
    "hemisphere_check",
    "normalize_hemisphere",
    "mobius_transform_config",
    "kappa_vanishing_order",
    "rotation_mobius",
    "rotation_matrix",
    "fibonacci_sphere",
]

LAMBDA_CAP = 1e16
MIN_SEPARATION = 1e-9


@dataclass(frozen=True)
class BranchConfiguration:
    """Eight distinct finite branch values of the hyperelliptic double cover."""

    points: tuple
    family_a: float | None = None

    def __post_init__(self):
        pts = tuple(complex(p) for p in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) != 8:
            raise ValueError(f"need exactly 8 branch points, got {len(pts)}")
        if not all(np.isfinite(p.real) and np.isfinite(p.imag) for p in pts):
            raise ValueError("branch points must be finite")
        for p, q in itertools.combinations(pts, 2):
            if abs(p - q) <= MIN_SEPARATION:
                raise ValueError(f"branch points {p} and {q} are not distinct")
        if self.family_a is not None and not self.family_a > 0:
            raise ValueError("family parameter must be positive")

    @classmethod
    def family(cls, a: float) -> "BranchConfiguration":
        """The curve ``w**2 = zeta**8 - a**8``."""
        k = np.arange(8)
        return cls(tuple(a * np.exp(1j * np.pi * k / 4)), family_a=float(a))

    @property
    def roots(self) -> np.ndarray:
        return np.array(self.points, dtype=complex)

    def poly(self, zeta):
        """``P(zeta)`` evaluated as a product over the roots."""
        z = np.asarray(zeta, dtype=complex)
        out = np.ones_like(z)
        for b in self.points:
            out = out * (z - b)
        return out

    def poly_reversed(self, eta):
        """``eta**8 P(1/eta) = prod(1 - b_k eta)``, the south-chart polynomial."""
        e = np.asarray(eta, dtype=complex)
        out = np.ones_like(e)
        for b in self.points:
            out = out * (1.0 - b * e)
        return out

    def to_json(self) -> dict:
        if self.family_a is not None:
            return {"family_a": self.family_a}
        return {"points": [[p.real, p.imag] for p in self.points]}


@dataclass(frozen=True)
class MobiusMap:
    """``zeta -> (a zeta + b) / (c zeta + d)`` stored as a 2x2 complex matrix."""

    coefficients: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex))

    def __post_init__(self):
        m = np.array(self.coefficients, dtype=complex).reshape(2, 2)
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("Mobius matrix is singular")
        object.__setattr__(self, "coefficients", m)

    @classmethod
    def identity(cls):
        return cls(np.eye(2, dtype=complex))

    @property
    def is_rotation(self) -> bool:
        m = self.coefficients
        # normalize to unit determinant, then test unitarity
        s = m / np.sqrt(np.linalg.det(m))
        return bool(np.allclose(s @ s.conj().T, np.eye(2), atol=1e-10, rtol=0))

    @property
    def is_identity(self) -> bool:
        m = self.coefficients
        return bool(abs(m[0, 1]) < 1e-15 and abs(m[1, 0]) < 1e-15
                    and abs(m[0, 0] - m[1, 1]) < 1e-15)

    def __call__(self, zeta):
        (a, b), (c, d) = self.coefficients
        z = np.asarray(zeta, dtype=complex)
        return (a * z + b) / (c * z + d)

    def denominator(self, zeta):
        (_, _), (c, d) = self.coefficients
        return c * np.asarray(zeta, dtype=complex) + d

    def __matmul__(self, other: "MobiusMap") -> "MobiusMap":
        return MobiusMap(self.coefficients @ other.coefficients)


@dataclass(frozen=True)
class PointGeometry:
    zeta: complex
    sphere_point: np.ndarray
    lam: float
    kappa: float
    dphi_norm_sq: float


@dataclass
class HemisphereResult:
    feasible: bool
    witness: np.ndarray | None
    margin: float
    lp_value: float = 0.0


def stereo_to_sphere(zeta):
    """Map chart coordinates to unit vectors ``(alpha, beta, gamma)``.

    ``None`` or ``np.inf`` stands for the point at infinity, which maps to
    ``(-1, 0, 0)``.  Arrays of finite values are vectorized and return shape
    ``(..., 3)``.
    """
    if zeta is None or (np.isscalar(zeta) and np.isinf(abs(zeta))):
        return np.array([-1.0, 0.0, 0.0])
    z = np.asarray(zeta, dtype=complex)
    r2 = (z * z.conj()).real
    den = 1.0 + r2
    return np.stack([(1.0 - r2) / den, 2.0 * z.real / den, 2.0 * z.imag / den], axis=-1)


def sphere_to_stereo(n):
    """Inverse of :func:`stereo_to_sphere` in the north chart (``inf`` at the south pole)."""
    n = np.asarray(n, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (n[..., 1] + 1j * n[..., 2]) / (1.0 + n[..., 0])
    return np.where(1.0 + n[..., 0] > 0, z, np.inf + 0j)


def sphere_to_stereo_south(n):
    """South-chart coordinate ``eta = 1/zeta``."""
    n = np.asarray(n, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        e = (n[..., 1] - 1j * n[..., 2]) / (1.0 - n[..., 0])
    return np.where(1.0 - n[..., 0] > 0, e, np.inf + 0j)


def _neg_kappa_zeta(cfg, zeta):
    z = np.asarray(zeta, dtype=complex)
    return 4.0 * np.abs(cfg.poly(z)) / (1.0 + np.abs(z) ** 2) ** 4


def _neg_kappa_eta(cfg, eta):
    e = np.asarray(eta, dtype=complex)
    return 4.0 * np.abs(cfg.poly_reversed(e)) / (1.0 + np.abs(e) ** 2) ** 4


def geometry_at(cfg: BranchConfiguration, zeta: complex) -> PointGeometry:
    """Conformal factor and curvature at a finite chart point."""
    zeta = complex(zeta)
    if not np.isfinite(abs(zeta)):
        raise ValueError("zeta must be finite; use geometry_at_infinity")
    # far from the origin the south chart avoids overflow in (1+|z|^2)^4
    if abs(zeta) > 1.0:
        nk = float(_neg_kappa_eta(cfg, 1.0 / zeta))
    else:
        nk = float(_neg_kappa_zeta(cfg, zeta))
    if abs(cfg.poly(zeta)) == 0.0 or nk == 0.0:
        nk, lam = 0.0, LAMBDA_CAP
    else:
        lam = min(1.0 / nk, LAMBDA_CAP)
    kappa = -nk
    return PointGeometry(zeta, stereo_to_sphere(zeta), lam, kappa, -2.0 * kappa)


def geometry_at_infinity(cfg: BranchConfiguration) -> PointGeometry:
    nk = float(_neg_kappa_eta(cfg, 0.0))
    return PointGeometry(complex(np.inf), np.array([-1.0, 0.0, 0.0]), 1.0 / nk, -nk, 2.0 * nk)


def neg_kappa_on_sphere(cfg: BranchConfiguration, n):
    """``-kappa`` at unit vectors, written chart-free.

    Uses ``|zeta - b|^2 / ((1+|zeta|^2)(1+|b|^2)) = |n - n_b|^2 / 4`` so that
    ``-kappa = 4 prod_k |n - n_k| sqrt(1+|b_k|^2) / 2``; valid at infinity too.
    """
    n = np.asarray(n, dtype=float)
    out = np.full(n.shape[:-1], 4.0)
    for b in cfg.points:
        nb = stereo_to_sphere(b)
        out = out * (np.linalg.norm(n - nb, axis=-1) * np.sqrt(1.0 + abs(b) ** 2) / 2.0)
    return out


def lam_on_sphere(cfg: BranchConfiguration, n):
    nk = neg_kappa_on_sphere(cfg, n)
    with np.errstate(divide="ignore"):
        lam = np.where(nk > 0, 1.0 / np.where(nk > 0, nk, 1.0), LAMBDA_CAP)
    return np.minimum(lam, LAMBDA_CAP)


def branch_sphere_points(cfg: BranchConfiguration) -> np.ndarray:
    return stereo_to_sphere(cfg.roots)


def _max_margin_direction(P, tol=1e-12):
    """Unit ``n`` maximizing ``min_k n . p_k``, by enumerating active sets.

    Equivalent to ``min |x|^2`` subject to ``P x >= 1``; the optimum is
    supported on at most three constraints.
    """
    best = None
    m = len(P)
    for size in (1, 2, 3):
        for S in itertools.combinations(range(m), size):
            PS = P[list(S)]
            G = PS @ PS.T
            if abs(np.linalg.det(G)) < 1e-14:
                continue
            mult = np.linalg.solve(G, np.ones(size))
            if np.any(mult < -tol):
                continue
            x = PS.T @ mult
            if np.all(P @ x >= 1.0 - 1e-10):
                nrm = np.linalg.norm(x)
                if best is None or nrm < best[0] - 1e-14:
                    best = (nrm, x)
    if best is None:
        return None
    return best[1] / best[0]


def hemisphere_check(points) -> HemisphereResult:
    """Do the given unit vectors lie in a common open hemisphere?

    Feasibility comes from the LP ``max delta  s.t.  n . p_k >= delta,
    -1 <= n_i <= 1``.  When feasible, the reported witness is the unit
    direction with the largest minimal inner product (rotation invariant),
    and ``margin`` is that minimal inner product.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] == 0 or P.shape[1] != 3:
        raise ValueError("expected a nonempty list of 3-vectors")
    dev = np.abs(np.linalg.norm(P, axis=1) - 1.0)
    if np.any(dev > 1e-6):
        raise ValueError(f"points must be unit vectors (max norm deviation {dev.max():.2e})")

    # n = x - 1 with 0 <= x <= 2; delta = y - 2 with y >= 0.  Origin is feasible.
    m = len(P)
    A = np.zeros((m + 3, 4))
    A[:m, :3] = -P
    A[:m, 3] = 1.0
    A[m:, :3] = np.eye(3)
    b = np.concatenate([2.0 - P.sum(axis=1), np.full(3, 2.0)])
    res = maximize(np.array([0.0, 0.0, 0.0, 1.0]), A, b)
    n_lp = res.x[:3] - 1.0
    delta = res.x[3] - 2.0
    if delta <= 1e-12:
        nrm = np.linalg.norm(n_lp)
        margin = min(0.0, delta / nrm) if nrm > 0 else 0.0
        return HemisphereResult(False, None, float(margin), float(delta))
    witness = _max_margin_direction(P)
    if witness is None:  # numerically degenerate; fall back to the LP vertex
        witness = n_lp / np.linalg.norm(n_lp)
    return HemisphereResult(True, witness, float(np.min(P @ witness)), float(delta))


def fibonacci_sphere(n: int) -> np.ndarray:
    """Deterministic near-uniform sample of ``n`` unit vectors."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + 5 ** 0.5) * i
    r = np.sqrt(1.0 - z * z)
    return np.stack([z, r * np.cos(phi), r * np.sin(phi)], axis=1)


def rotation_mobius(p) -> MobiusMap:
    """Fubini-Study isometry sending the chart point ``p`` to infinity."""
    p = complex(p)
    s = np.sqrt(1.0 + abs(p) ** 2)
    return MobiusMap(np.array([[p.conjugate(), 1.0], [-1.0, p]]) / s)


def rotation_matrix(m: MobiusMap) -> np.ndarray:
    """The rotation of R^3 induced by a Fubini-Study isometry ``m``."""
    if not m.is_rotation:
        raise ValueError("Mobius map is not a rotation")
    cols = []
    for z in (0.0, 1.0, 1j):  # the preimages of e1, e2, e3
        w = complex(m(z)) if abs(complex(m.denominator(z))) > 1e-300 else None
        cols.append(stereo_to_sphere(w))
    return np.array(cols).T


def mobius_transform_config(cfg: BranchConfiguration, m: MobiusMap) -> BranchConfiguration:
    """Move the branch values by ``m``; none may be sent to infinity."""
    den = m.denominator(cfg.roots)
    if np.any(np.abs(den) <= 1e-8):
        k = int(np.argmin(np.abs(den)))
        raise ValueError(f"Mobius map sends branch point {k} to infinity")
    new = m(cfg.roots)
    fam = cfg.family_a if m.is_identity else None
    return BranchConfiguration(tuple(new), family_a=fam)


def normalize_hemisphere(cfg: BranchConfiguration, min_margin: float = 0.05,
                         n_samples: int = 4000) -> MobiusMap:
    """A Mobius map after which all branch values satisfy the hemisphere condition."""
    P = branch_sphere_points(cfg)
    if hemisphere_check(P).margin >= min_margin:
        return MobiusMap.identity()

    grid = fibonacci_sphere(n_samples)
    min_dist = np.min(grid @ P.T, axis=1)  # largest angle <=> smallest cosine
    q = grid[int(np.argmin(min_dist))]
    rot = MobiusMap.identity()
    if q[0] > -1.0 + 1e-15:
        rot = rotation_mobius(complex(sphere_to_stereo(q)))

    eps = 1.0
    for _ in range(80):
        m = MobiusMap(np.diag([eps, 1.0]).astype(complex)) @ rot
        pts = m(cfg.roots)
        if np.all(np.isfinite(pts)):
            if hemisphere_check(stereo_to_sphere(pts)).margin >= min_margin:
                return m
        eps *= 0.5
    raise AssertionError("unreachable: contraction failed to separate branch points")


def kappa_vanishing_order(cfg: BranchConfiguration, k: int, coordinate: str = "w",
                          n_samples: int = 40) -> float:
    """Log-log slope of ``-kappa`` approaching branch point ``k``.

    ``coordinate="w"`` measures against ``|w| = |P(zeta)|^(1/2)``, the local
    coordinate on the curve; ``"zeta"`` measures against ``|zeta - b_k|``.
    """
    b = cfg.roots[k]
    others = np.delete(cfg.roots, k)
    d = np.min(np.abs(others - b))
    # approach along the direction pointing away from the nearest other root
    away = b - others[np.argmin(np.abs(others - b))]
    direction = away / abs(away)
    r = d * np.logspace(-2, -6, n_samples)
    z = b + r * direction
    nk = np.array([-geometry_at(cfg, zz).kappa for zz in z])
    if coordinate == "w":
        x = 0.5 * np.log(np.abs(cfg.poly(z)))
    elif coordinate == "zeta":
        x = np.log(r)
    else:
        raise ValueError(f"unknown coordinate {coordinate!r}")
    slope = np.polyfit(x, np.log(nk), 1)[0]
    return float(slope)
