"""Binary PPM heatmaps of vertex fields, one disk per stereographic chart.

The north image shows ``|zeta| <= 1`` and the south image ``|eta| <= 1``
with ``eta = 1 / zeta``.  Values are linearly interpolated on the mesh and
mapped through a fixed piecewise-linear colormap, so the bytes depend only
on the inputs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .mesh import Field

__all__ = ["emit_heatmap", "write_ppm", "read_ppm", "colormap", "disk_points"]

# dark blue -> teal -> yellow, evenly spaced stops
_STOPS = np.array([
    [48, 18, 59],
    [50, 100, 180],
    [30, 170, 150],
    [150, 210, 60],
    [250, 230, 40],
], dtype=float)
BACKGROUND = (255, 255, 255)


def colormap(t):
    """Map ``t`` in [0, 1] to uint8 RGB by linear interpolation between stops."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    x = t * (len(_STOPS) - 1)
    i = np.minimum(np.floor(x).astype(int), len(_STOPS) - 2)
    f = (x - i)[..., None]
    rgb = (1.0 - f) * _STOPS[i] + f * _STOPS[i + 1]
    return np.floor(rgb + 0.5).astype(np.uint8)


def disk_points(size: int, chart: str = "north"):
    """Unit vectors for the pixel centers inside the chart's unit disk."""
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    x, y = np.meshgrid(c, -c)  # row 0 is the top (Im > 0)
    w = x + 1j * y
    inside = np.abs(w) <= 1.0
    w = w[inside]
    r2 = np.abs(w) ** 2
    if chart == "north":
        n = np.stack([(1 - r2), 2 * w.real, 2 * w.imag], axis=1)
    elif chart == "south":
        n = np.stack([(r2 - 1), 2 * w.real, -2 * w.imag], axis=1)
    else:
        raise ValueError(f"unknown chart {chart!r}")
    return n / (1 + r2)[:, None], inside


def _interpolate_fast(mesh, values, P, k: int = 8):
    """Barycentric interpolation, candidates from the nearest triangle centroids."""
    V, F = mesh.vertices, mesh.triangles
    cen = V[F].mean(axis=1)
    _, cand = cKDTree(cen).query(P, k=k)
    out = np.full(len(P), np.nan)
    for j in range(k):
        tri = F[cand[:, j]]
        a, b, c = V[tri[:, 0]], V[tri[:, 1]], V[tri[:, 2]]
        nrm = np.cross(b - a, c - a)
        # central projection of p onto the triangle plane
        q = P * (np.einsum("ij,ij->i", nrm, a) / np.einsum("ij,ij->i", nrm, P))[:, None]
        tot = np.einsum("ij,ij->i", nrm, nrm)
        l0 = np.einsum("ij,ij->i", np.cross(b - q, c - q), nrm) / tot
        l1 = np.einsum("ij,ij->i", np.cross(c - q, a - q), nrm) / tot
        l2 = 1.0 - l0 - l1
        ok = np.isnan(out) & (l0 >= -1e-12) & (l1 >= -1e-12) & (l2 >= -1e-12)
        out[ok] = (l0 * values[tri[:, 0]] + l1 * values[tri[:, 1]] + l2 * values[tri[:, 2]])[ok]
    miss = np.isnan(out)
    if miss.any():  # fall back to the nearest vertex
        _, iv = cKDTree(V).query(P[miss])
        out[miss] = values[iv]
    return out


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def emit_heatmap(field, mesh, path, size: int = 256, meta: dict | None = None) -> dict:
    """Write ``<path>_north.ppm``, ``<path>_south.ppm`` and ``<path>.json``.

    Returns the sidecar dictionary (value range and file names).
    """
    values = field.values if isinstance(field, Field) else np.asarray(field, dtype=float)
    if values.shape != (mesh.n_vertices,):
        raise ValueError("field length does not match the mesh")
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    path = Path(path)
    files = {}
    for chart in ("north", "south"):
        P, inside = disk_points(size, chart)
        v = _interpolate_fast(mesh, values, P)
        t = (v - lo) / span if span > 0 else np.zeros_like(v)
        img = np.empty((size, size, 3), dtype=np.uint8)
        img[:] = BACKGROUND
        img[inside] = colormap(t)
        name = f"{path.name}_{chart}.ppm"
        write_ppm(path.parent / name, img)
        files[chart] = name
    side = dict(meta or {})
    side.update({"min": lo, "max": hi, "size": size, "files": files,
                 "colormap": _STOPS.astype(int).tolist(),
                 "charts": {"north": "|zeta| <= 1", "south": "|1/zeta| <= 1"}})
    with open(path.parent / f"{path.name}.json", "w", encoding="utf-8") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return side
