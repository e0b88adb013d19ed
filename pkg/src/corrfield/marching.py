"""Marching cubes iso-surface extraction from a scalar grid.

Visualization path: extracts a triangulated iso-surface with vertices placed
on grid edges by linear interpolation, using the standard 256-case tables.
Vertices shared between neighboring cubes are merged, and degenerate
triangles (produced when the iso level passes exactly through grid corners)
are dropped.
"""

from __future__ import annotations

import numpy as np

from ._mc_tables import CORNER_OFFSETS, CORNER_PAIRS, EDGE_TABLE, TRI_TABLE
from .errors import DataError
from .mesh import TriangleMesh

# Canonical key of each local edge: (di, dj, dk, axis) of the lattice edge it
# lies on, so shared edges dedupe across cubes.
_EDGE_KEYS = []
for _pair in CORNER_PAIRS:
    _c0 = np.array(CORNER_OFFSETS[_pair[0]])
    _c1 = np.array(CORNER_OFFSETS[_pair[1]])
    _axis = int(np.nonzero(_c1 - _c0)[0][0])
    _base = np.minimum(_c0, _c1)
    _EDGE_KEYS.append((int(_base[0]), int(_base[1]), int(_base[2]), _axis))


def marching_cubes(values, origin, step, iso=0.0, color_fn=None) -> TriangleMesh:
    """Extract the iso-surface of a sampled scalar field.

    values[i, j, k] is the field sampled at origin + (i, j, k) * step, with
    step a scalar or per-axis 3-vector. Inside is values < iso. Returns an
    empty mesh when no cell crosses the iso level. If given, color_fn maps an
    (N, 3) array of vertex positions to RGB colors in [0, 1].
    """
    grid = np.asarray(values, dtype=np.float64)
    if grid.ndim != 3 or min(grid.shape) < 2:
        raise DataError("values must be a 3D grid with at least 2 samples per axis")
    if not np.all(np.isfinite(grid)):
        raise DataError("grid contains non-finite values")
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    step = np.broadcast_to(np.asarray(step, dtype=np.float64), (3,)).copy()
    if np.any(step <= 0):
        raise DataError("step must be positive")

    inside = grid < iso
    # Case index per cube, vectorized over the (nx-1, ny-1, nz-1) cell grid.
    case = np.zeros(tuple(s - 1 for s in grid.shape), dtype=np.int64)
    for bit, (di, dj, dk) in enumerate(CORNER_OFFSETS):
        view = inside[di:di + case.shape[0], dj:dj + case.shape[1],
                      dk:dk + case.shape[2]]
        case |= view.astype(np.int64) << bit

    active = np.argwhere(case != 0)
    verts = []
    faces = []
    edge_index = {}
    for i, j, k in active:
        c = case[i, j, k]
        if EDGE_TABLE[c] == 0:
            continue
        local = {}
        for e in range(12):
            if not (EDGE_TABLE[c] >> e) & 1:
                continue
            ei, ej, ek, axis = _EDGE_KEYS[e]
            key = (i + ei, j + ej, k + ek, axis)
            idx = edge_index.get(key)
            if idx is None:
                p0, p1 = CORNER_PAIRS[e]
                c0 = (i + CORNER_OFFSETS[p0][0], j + CORNER_OFFSETS[p0][1],
                      k + CORNER_OFFSETS[p0][2])
                c1 = (i + CORNER_OFFSETS[p1][0], j + CORNER_OFFSETS[p1][1],
                      k + CORNER_OFFSETS[p1][2])
                v0 = grid[c0]
                v1 = grid[c1]
                frac = (iso - v0) / (v1 - v0)
                pos = origin + step * (np.array(c0) + frac * (np.array(c1) - np.array(c0)))
                idx = len(verts)
                verts.append(pos)
                edge_index[key] = idx
            local[e] = idx
        tri = TRI_TABLE[c]
        for n in range(0, len(tri), 3):
            faces.append((local[tri[n]], local[tri[n + 1]], local[tri[n + 2]]))

    if not verts:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64),
                            np.zeros((0, 3)))

    verts = np.asarray(verts)
    faces = np.asarray(faces, dtype=np.int64)
    # Drop triangles degenerated by iso crossings exactly at grid corners.
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    faces = faces[areas > 1e-12]

    used = np.unique(faces)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = verts[used]
    faces = remap[faces]

    colors = None
    if color_fn is not None and len(verts):
        colors = np.clip(np.asarray(color_fn(verts), dtype=np.float64), 0.0, 1.0)
    return TriangleMesh(verts, faces, colors)
