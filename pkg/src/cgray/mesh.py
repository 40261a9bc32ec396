"""Triangulated round sphere with P1 cotangent stiffness and lumped masses.

The mesh lives on the unit sphere (Fubini-Study metric of total area 4 pi).
Because the canonical metric is conformal to the round one, every operator
needed downstream is a round-metric assembly: the Dirichlet form is
conformally invariant and only the mass picks up the factor ``lam``.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .surface import (
    BranchConfiguration,
    branch_sphere_points,
    lam_on_sphere,
    sphere_to_stereo,
    sphere_to_stereo_south,
)

__all__ = [
    "MeshError",
    "SphereMesh",
    "Field",
    "icosphere",
    "build_sphere_mesh",
    "cotan_stiffness",
    "lumped_mass",
    "assemble_weighted_mass",
    "integrate",
    "locate",
    "interpolate",
    "write_mesh_csv",
]

QUAD_DEPTH = 3
MIN_ANGLE_DEG = 5.0


class MeshError(RuntimeError):
    pass


def icosphere(level: int):
    """Geodesic subdivision of the icosahedron, ``20 * 4**level`` triangles."""
    t = (1.0 + 5 ** 0.5) / 2.0
    V = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    V /= np.linalg.norm(V, axis=1)[:, None]
    F = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    verts = list(V)
    for _ in range(level):
        F = _subdivide_all(verts, F, {})
    return np.array(verts), F


def _midpoint(verts, cache, i, j):
    key = (i, j) if i < j else (j, i)
    k = cache.get(key)
    if k is None:
        m = verts[i] + verts[j]
        verts.append(m / np.linalg.norm(m))
        k = len(verts) - 1
        cache[key] = k
    return k


def _subdivide_all(verts, F, cache):
    out = np.empty((4 * len(F), 3), dtype=int)
    for n, (a, b, c) in enumerate(F):
        ab = _midpoint(verts, cache, a, b)
        bc = _midpoint(verts, cache, b, c)
        ca = _midpoint(verts, cache, c, a)
        out[4 * n:4 * n + 4] = [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    return out


def _refine_local(verts, F, tags, marked):
    """One red-green pass: red-refine ``marked`` and close hanging nodes."""
    marked = marked.copy()
    split = set()

    def edges(t):
        a, b, c = t
        return [tuple(sorted(e)) for e in ((a, b), (b, c), (c, a))]

    while True:
        for n in np.flatnonzero(marked):
            split.update(edges(F[n]))
        changed = False
        for n in np.flatnonzero(~marked):
            if sum(e in split for e in edges(F[n])) >= 2:
                marked[n] = True
                changed = True
        if not changed:
            break

    cache = {}
    newF, newtags = [], []
    for n, (a, b, c) in enumerate(F):
        if marked[n]:
            ab = _midpoint(verts, cache, a, b)
            bc = _midpoint(verts, cache, b, c)
            ca = _midpoint(verts, cache, c, a)
            newF += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
            newtags += [tags[n] + 1] * 4
            continue
        for (p, q, r) in ((a, b, c), (b, c, a), (c, a, b)):
            if tuple(sorted((q, r))) in split:
                m = _midpoint(verts, cache, q, r)
                newF += [(p, q, m), (p, m, r)]
                newtags += [tags[n]] * 2
                break
        else:
            newF.append((a, b, c))
            newtags.append(tags[n])
    return np.array(newF, dtype=int), np.array(newtags, dtype=int)


def _triangle_geometry(V, F):
    P0, P1, P2 = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    cr = np.cross(P1 - P0, P2 - P0)
    area = 0.5 * np.linalg.norm(cr, axis=1)
    return P0, P1, P2, area


def cotan_stiffness(V, F):
    """Symmetric cotangent stiffness ``K`` with ``u.K.u = int |grad u|^2``."""
    n = len(V)
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j, o = F[:, (k + 1) % 3], F[:, (k + 2) % 3], F[:, k]
        u = V[i] - V[o]
        w = V[j] - V[o]
        cot = np.einsum("ij,ij->i", u, w) / np.linalg.norm(np.cross(u, w), axis=1)
        rows += [i, j]
        cols += [j, i]
        vals += [-0.5 * cot, -0.5 * cot]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    K = K - sp.diags(np.asarray(K.sum(axis=1)).ravel())
    K.sum_duplicates()
    K.sort_indices()
    return K.tocsr()


def lumped_mass(V, F, tri_values=None):
    """Distribute per-triangle integrals (default: areas) equally to vertices."""
    if tri_values is None:
        tri_values = _triangle_geometry(V, F)[3]
    m = np.zeros(len(V))
    for k in range(3):
        np.add.at(m, F[:, k], tri_values / 3.0)
    return m


def _min_angles_deg(V, F):
    out = np.full(len(F), 180.0)
    for k in range(3):
        o, i, j = F[:, k], F[:, (k + 1) % 3], F[:, (k + 2) % 3]
        u = V[i] - V[o]
        w = V[j] - V[o]
        c = np.einsum("ij,ij->i", u, w) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
        out = np.minimum(out, np.degrees(np.arccos(np.clip(c, -1, 1))))
    return out


def locate(V, F, points):
    """Index of the (spherical) triangle containing each unit vector."""
    P0, P1, P2 = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    n01, n12, n20 = np.cross(P0, P1), np.cross(P1, P2), np.cross(P2, P0)
    out = []
    for p in np.atleast_2d(points):
        inside = (n01 @ p >= 0) & (n12 @ p >= 0) & (n20 @ p >= 0) & (P0 @ p > 0)
        idx = np.flatnonzero(inside)
        if idx.size == 0:
            raise MeshError("point not located in any triangle")
        out.append(int(idx[0]))
    return np.array(out, dtype=int)


def _barycentric(V, F, tri, p):
    a, b, c = V[F[tri]]
    # project p onto the triangle plane along the ray from the origin
    nrm = np.cross(b - a, c - a)
    q = p * (nrm @ a) / (nrm @ p)
    M = np.stack([b - a, c - a], axis=1)
    s, t = np.linalg.lstsq(M, q - a, rcond=None)[0]
    return np.array([1.0 - s - t, s, t])


def _rotation(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    # small jitter, not a random orientation
    return _slerp_identity(R, 0.05)


def _slerp_identity(R, frac):
    from scipy.spatial.transform import Rotation
    rv = Rotation.from_matrix(R).as_rotvec()
    return Rotation.from_rotvec(frac * rv).as_matrix()


@dataclass(eq=False)
class SphereMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    stiffness: sp.csr_matrix
    fs_mass: np.ndarray
    refinement_tags: np.ndarray
    cfg: BranchConfiguration
    level: int
    refine_radius: float
    refine_depth: int
    branch_triangles: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    _lam_mass: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def zeta(self):
        return sphere_to_stereo(self.vertices)

    @property
    def eta(self):
        return sphere_to_stereo_south(self.vertices)

    @property
    def edges(self) -> np.ndarray:
        F = self.triangles
        e = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @property
    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    @property
    def h(self) -> float:
        """Largest edge length; the mesh-size parameter in error bounds."""
        return float(self.edge_lengths.max())

    @property
    def h_min(self) -> float:
        return float(self.edge_lengths.min())

    @property
    def lam_mass(self) -> np.ndarray:
        """Lumped mass of the canonical area form, cached."""
        if self._lam_mass is None:
            self._lam_mass = assemble_weighted_mass(self, lambda n: lam_on_sphere(self.cfg, n))
        return self._lam_mass

    @property
    def lam_vertex(self) -> np.ndarray:
        """Pointwise ``lam`` at vertices (never a branch point)."""
        return lam_on_sphere(self.cfg, self.vertices)

    def near_branch(self, radius=None) -> np.ndarray:
        """Triangles within ``radius`` (angular) of a branch image."""
        radius = self.refine_radius if radius is None else radius
        return _near_mask(self.vertices, self.triangles, branch_sphere_points(self.cfg), radius)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.triangles).tobytes())
        return h.hexdigest()[:16]


@dataclass(eq=False)
class Field:
    """Per-vertex values bound to one mesh."""

    values: np.ndarray
    mesh: object

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.mesh.n_vertices
        if self.values.shape != (n,):
            raise ValueError(f"field has shape {self.values.shape}, mesh has {n} vertices")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def _near_mask(V, F, B, radius):
    C = V[F].mean(axis=1)
    C /= np.linalg.norm(C, axis=1)[:, None]
    # angular circumradius bound: farthest vertex from the centroid direction
    circ = np.max(np.arccos(np.clip(np.einsum("tkj,tj->tk", V[F], C), -1, 1)), axis=1)
    ang = np.arccos(np.clip(C @ B.T, -1, 1)).min(axis=1)
    return ang < np.maximum(radius, 0.0) + circ


def build_sphere_mesh(cfg: BranchConfiguration, level: int = 5, refine_radius: float = 0.0,
                      refine_depth: int = 0, orientation=None) -> SphereMesh:
    """Icosphere at ``level`` with local red-green refinement around branch images.

    ``orientation`` (a 3x3 rotation) turns the base icosphere; used to build
    congruent meshes for rotated configurations.
    """
    if not 3 <= level <= 8:
        raise ValueError("level must be between 3 and 8")
    if not 0 <= refine_depth <= 4:
        raise ValueError("refine_depth must be between 0 and 4")
    B = branch_sphere_points(cfg)
    V0, F0 = icosphere(level)
    if orientation is not None:
        R = np.asarray(orientation, dtype=float)
        if R.shape != (3, 3) or not np.allclose(R @ R.T, np.eye(3), atol=1e-12):
            raise ValueError("orientation must be a 3x3 rotation matrix")
        V0 = V0 @ R.T
    last = None
    for attempt in range(3):
        V = V0 if attempt == 0 else V0 @ _rotation(attempt).T
        verts = list(V)
        F = F0.copy()
        tags = np.zeros(len(F), dtype=int)
        for _ in range(refine_depth):
            if refine_radius <= 0:
                break
            marked = _near_mask(np.array(verts), F, B, refine_radius)
            F, tags = _refine_local(verts, F, tags, marked)
        V = np.array(verts)
        try:
            bt = _check_branch_separation(V, F, B)
        except MeshError as exc:
            last = exc
            continue
        ang = _min_angles_deg(V, F)
        if ang.min() <= MIN_ANGLE_DEG:
            raise MeshError(f"degenerate triangle (min angle {ang.min():.2f} deg); reduce refine_depth")
        K = cotan_stiffness(V, F)
        return SphereMesh(V, F, K, lumped_mass(V, F), tags, cfg, level,
                          float(refine_radius), int(refine_depth), bt)
    raise MeshError(f"branch point could not be separated from mesh vertices: {last}")


def _check_branch_separation(V, F, B):
    tri = locate(V, F, B)
    for p, t in zip(B, tri):
        loc = V[F[t]]
        edge = max(np.linalg.norm(loc[0] - loc[1]), np.linalg.norm(loc[1] - loc[2]),
                   np.linalg.norm(loc[2] - loc[0]))
        dmin = np.min(np.linalg.norm(V - p, axis=1))
        if dmin <= 1e-6 * edge:
            raise MeshError(f"branch image {p} lies on a mesh vertex")
        P0, P1, P2 = loc
        for a, b in ((P0, P1), (P1, P2), (P2, P0)):
            nrm = np.cross(a, b)
            if abs(nrm @ p) <= 1e-6 * edge * np.linalg.norm(nrm):
                raise MeshError(f"branch image {p} lies on a mesh edge")
    return tri


def _subtriangle_points(P0, P1, P2, depth):
    """Centroids and flat areas of the ``4**depth`` midpoint subtriangles."""
    tris = np.stack([P0, P1, P2], axis=1)[:, None]  # (T, 1, 3, 3)
    for _ in range(depth):
        a, b, c = tris[..., 0, :], tris[..., 1, :], tris[..., 2, :]
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        tris = np.concatenate([
            np.stack([a, ab, ca], axis=-2), np.stack([ab, b, bc], axis=-2),
            np.stack([ca, bc, c], axis=-2), np.stack([ab, bc, ca], axis=-2),
        ], axis=1)
    cen = tris.mean(axis=-2)
    area = 0.5 * np.linalg.norm(np.cross(tris[..., 1, :] - tris[..., 0, :],
                                         tris[..., 2, :] - tris[..., 0, :]), axis=-1)
    cen = cen / np.linalg.norm(cen, axis=-1, keepdims=True)
    return cen, area


def triangle_integrals(mesh: SphereMesh, weight, depth: int = QUAD_DEPTH) -> np.ndarray:
    """Per-triangle midpoint-rule integrals of ``weight`` against round area.

    Triangles near a branch image use ``4**depth`` midpoint subtriangles.
    """
    V, F = mesh.vertices, mesh.triangles
    P0, P1, P2, area = _triangle_geometry(V, F)
    C = (P0 + P1 + P2) / 3.0
    C /= np.linalg.norm(C, axis=1)[:, None]
    vals = np.asarray(weight(C), dtype=float) * area
    near = np.flatnonzero(mesh.near_branch())
    if near.size and depth > 0:
        cen, sub = _subtriangle_points(P0[near], P1[near], P2[near], depth)
        w = np.asarray(weight(cen.reshape(-1, 3)), dtype=float).reshape(sub.shape)
        vals[near] = (w * sub).sum(axis=1)
    return vals


def assemble_weighted_mass(mesh: SphereMesh, weight, depth: int = QUAD_DEPTH) -> np.ndarray:
    """Lumped mass ``int weight * phi_v dA_FS`` with each triangle split in thirds."""
    return lumped_mass(mesh.vertices, mesh.triangles, triangle_integrals(mesh, weight, depth))


def integrate(mesh: SphereMesh, field, weighted_mass, sheets: int = 2) -> float:
    """``sum_v field(v) * mass(v)`` over both sheets of the double cover.

    ``weighted_mass`` is a per-vertex lumped mass (e.g. ``mesh.lam_mass``).
    Integrands invariant under the hyperelliptic involution integrate over
    the curve to twice their chart integral.
    """
    if isinstance(field, Field):
        if field.mesh is not mesh:
            raise ValueError("field is bound to a different mesh")
        values = field.values
    else:
        values = np.asarray(field, dtype=float)
        if values.shape != (mesh.n_vertices,):
            raise ValueError("field length does not match the mesh")
    w = np.asarray(weighted_mass, dtype=float)
    # fixed summation order keeps results bitwise reproducible
    return float(sheets * np.dot(values, w))


def interpolate(mesh: SphereMesh, values, points) -> np.ndarray:
    """Piecewise-linear interpolation of vertex values at unit vectors."""
    values = np.asarray(values, dtype=float)
    out = []
    tris = locate(mesh.vertices, mesh.triangles, points)
    for p, t in zip(np.atleast_2d(points), tris):
        w = _barycentric(mesh.vertices, mesh.triangles, t, p)
        out.append(w @ values[mesh.triangles[t]])
    return np.array(out)


def write_mesh_csv(mesh: SphereMesh, vertex_path, triangle_path=None) -> None:
    z = mesh.zeta
    with open(vertex_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "x", "y", "z", "re_zeta", "im_zeta", "fs_mass"])
        for i, (v, zz, m) in enumerate(zip(mesh.vertices, z, mesh.fs_mass)):
            w.writerow([i, repr(float(v[0])), repr(float(v[1])), repr(float(v[2])),
                        repr(float(zz.real)), repr(float(zz.imag)), repr(float(m))])
    if triangle_path is not None:
        with open(triangle_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "v0", "v1", "v2", "depth"])
            for i, (t, d) in enumerate(zip(mesh.triangles, mesh.refinement_tags)):
                w.writerow([i, int(t[0]), int(t[1]), int(t[2]), int(d)])
