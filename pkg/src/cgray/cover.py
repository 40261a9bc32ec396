"""Two-sheeted branched cover of the sphere mesh.

The curve is realized as two copies of the sphere mesh glued across four
cut arcs, each joining a pair of branch images.  A mesh edge that crosses a
cut an odd number of times connects opposite sheets.  Everything is stored
as sparse operators on ``2 * n`` cover vertices, sheet ``s`` of base vertex
``i`` at index ``i + s * n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import MeshError, SphereMesh
from .surface import branch_sphere_points, hemisphere_check

__all__ = ["CoverMesh", "build_double_cover", "arc_crossings", "cut_pairs"]


def arc_crossings(A, B, C, D):
    """Do great-circle arcs ``A->B`` (arrays) and ``C->D`` (single arc) cross?

    Both arcs must be shorter than a half circle.  The crossing point of
    chord ``AB`` with the plane of ``CD`` must lie strictly inside the chord
    and, seen from the origin, strictly between ``C`` and ``D``.
    """
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    N = np.cross(C, D)
    sa = A @ N
    sb = B @ N
    straddle = (sa * sb) < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(straddle, sa / np.where(straddle, sa - sb, 1.0), 0.0)
    Y = A + s[:, None] * (B - A)
    inside = (np.cross(C, Y) @ N > 0) & (np.cross(Y, D) @ N > 0)
    return straddle & inside


def cut_pairs(points, axis, offset: int = 0):
    """Pair branch images consecutively by longitude about ``axis``."""
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    lon = np.arctan2(points @ e2, points @ e1)
    order = list(np.argsort(lon, kind="stable"))
    order = order[offset:] + order[:offset]
    return [(int(order[2 * k]), int(order[2 * k + 1])) for k in range(len(order) // 2)]


@dataclass(eq=False)
class CoverMesh:
    base: SphereMesh
    cut_arcs: list
    edges: np.ndarray
    edge_sheet_flip: np.ndarray
    involution: np.ndarray
    stiffness: sp.csr_matrix
    fs_mass: np.ndarray
    lam_mass: np.ndarray

    sheets = 2

    @property
    def n_vertices(self) -> int:
        return 2 * self.base.n_vertices

    def twisted_stiffness(self) -> sp.csr_matrix:
        """Stiffness restricted to functions odd under the sheet swap."""
        n = self.base.n_vertices
        S = self.stiffness
        return (S[:n, :n] - S[:n, n:]).tocsr()

    def projectors(self):
        """Sparse ``(1 +- iota) / 2`` on cover functions."""
        m = self.n_vertices
        I = sp.identity(m, format="csr")
        J = sp.csr_matrix((np.ones(m), (np.arange(m), self.involution)), shape=(m, m))
        return 0.5 * (I + J), 0.5 * (I - J)


def build_double_cover(mesh: SphereMesh, cfg=None, offset: int = 0, axis=None) -> CoverMesh:
    """Glue two copies of ``mesh`` across four geodesic cuts.

    ``offset`` shifts the consecutive pairing by one (an alternative, equally
    valid cut system); spectra must not depend on it.
    """
    cfg = mesh.cfg if cfg is None else cfg
    B = branch_sphere_points(cfg)
    if axis is None:
        hc = hemisphere_check(B)
        axis = hc.witness if hc.feasible else np.array([0.0, 0.0, 1.0])
    pairs = cut_pairs(B, axis, offset)

    for p, (i, j) in enumerate(pairs):
        if B[i] @ B[j] <= -1 + 1e-9:
            raise MeshError("antipodal branch pair: cut arc is not unique")
        for (k, l) in pairs[p + 1:]:
            if arc_crossings(B[i], B[j], B[k], B[l])[0]:
                raise MeshError(f"cut arcs {(i, j)} and {(k, l)} intersect")

    V = mesh.vertices
    E = mesh.edges
    crossings = np.zeros((len(E), len(pairs)), dtype=bool)
    for c, (i, j) in enumerate(pairs):
        crossings[:, c] = arc_crossings(V[E[:, 0]], V[E[:, 1]], B[i], B[j])
    if np.any(crossings.sum(axis=1) > 1):
        raise MeshError("a mesh edge crosses two cuts; use a finer mesh")
    flip = crossings.any(axis=1)

    n = mesh.n_vertices
    K = mesh.stiffness.tocoo()
    off = K.row != K.col
    r, c, v = K.row[off], K.col[off], K.data[off]
    keys = E[:, 0].astype(np.int64) * n + E[:, 1]  # sorted: E comes from np.unique
    f = flip[np.searchsorted(keys, np.minimum(r, c).astype(np.int64) * n + np.maximum(r, c))]
    f = f.astype(int)
    diag = mesh.stiffness.diagonal()
    rows = [np.arange(n), np.arange(n) + n]
    cols = [np.arange(n), np.arange(n) + n]
    vals = [diag, diag]
    for s in (0, 1):
        rows.append(r + s * n)
        cols.append(c + ((s + f) % 2) * n)
        vals.append(v)
    S = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(2 * n, 2 * n)).tocsr()
    S.sum_duplicates()
    S.sort_indices()
    invol = np.concatenate([np.arange(n) + n, np.arange(n)])
    return CoverMesh(mesh, pairs, E, flip, invol, S,
                     np.tile(mesh.fs_mass, 2), np.tile(mesh.lam_mass, 2))
