"""Watertight triangle meshes, signed distances, symmetries, and PLY I/O.

Meshes live in the object model frame with vertices in millimeters and
per-vertex RGB colors in [0, 1]. Signed distances are negative inside the
object, positive outside, zero on the surface; the sign is only defined for
watertight meshes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DataError, NotWatertightError
from .geometry import Pose
from .validation import as_points

# Fixed, slightly jittered parity-ray directions. Queries whose intersection
# tests come out numerically ambiguous for one direction are retried with the
# next one.
_PARITY_DIRECTIONS = np.array([
    [0.57364247, 0.51297051, 0.63843759],
    [-0.37139068, 0.74278135, 0.55708601],
    [0.80178373, -0.26726124, 0.53452248],
    [0.10482848, 0.62897086, -0.77033930],
    [-0.66742381, -0.52412442, 0.52865296],
    [0.27216553, -0.40824829, -0.87287156],
    [-0.53452248, 0.80178373, -0.26726124],
    [0.48507125, 0.72760688, -0.48507125],
])
_BOUNDARY_EPS = 1e-9


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle mesh with per-vertex colors.

    vertices: (V, 3) float mm, faces: (F, 3) int vertex indices,
    vertex_colors: (V, 3) float RGB in [0, 1].
    """

    vertices: np.ndarray
    faces: np.ndarray
    vertex_colors: np.ndarray = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.vertex_colors is None:
            c = np.full_like(v, 0.7)
        else:
            c = np.asarray(self.vertex_colors, dtype=np.float64).reshape(-1, 3)
        if len(c) != len(v):
            raise DataError("vertex_colors must match vertex count")
        if np.any(c < 0) or np.any(c > 1):
            raise DataError("vertex colors must lie in [0, 1]")
        if not np.all(np.isfinite(v)):
            raise DataError("mesh vertices contain non-finite values")
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise DataError("face indices out of range")
            a, b, cc = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
            areas = 0.5 * np.linalg.norm(np.cross(b - a, cc - a), axis=1)
            if np.any(areas <= 1e-12):
                raise DataError("mesh contains zero-area faces")
        for arr in (v, f, c):
            arr.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "vertex_colors", c)

    def __len__(self):
        return len(self.faces)

    @cached_property
    def is_watertight(self) -> bool:
        """True when every undirected edge is shared by exactly two faces."""
        if len(self.faces) == 0:
            return False
        edges = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                                self.faces[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    @cached_property
    def face_areas(self):
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @cached_property
    def bbox(self):
        if len(self.vertices) == 0:
            return np.zeros(3), np.zeros(3)
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def bounding_center(self):
        lo, hi = self.bbox
        return 0.5 * (lo + hi)

    @cached_property
    def bounding_radius(self) -> float:
        if len(self.vertices) == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices - self.bounding_center, axis=1).max())

    @cached_property
    def _corners(self):
        f = self.faces
        return (self.vertices[f[:, 0]], self.vertices[f[:, 1]], self.vertices[f[:, 2]])

    @cached_property
    def _tree(self):
        return _AabbTree(self)

    @cached_property
    def _scale(self) -> float:
        lo, hi = self.bbox
        return float(max(np.max(hi - lo), 1.0))


def diameter(mesh: TriangleMesh) -> float:
    """Maximum pairwise vertex distance (mm)."""
    v = mesh.vertices
    if len(v) < 2:
        raise DataError("diameter needs at least 2 vertices")
    best = 0.0
    chunk = 2048
    for i in range(0, len(v), chunk):
        block = v[i:i + chunk]
        d2 = np.sum((block[:, None, :] - v[None, :, :]) ** 2, axis=2)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def sample_surface(mesh: TriangleMesh, count: int, rng) -> np.ndarray:
    """Draw area-weighted uniform samples on the mesh surface."""
    if len(mesh.faces) == 0:
        raise DataError("cannot sample an empty mesh")
    probs = mesh.face_areas / mesh.face_areas.sum()
    fi = rng.choice(len(mesh.faces), size=count, p=probs)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    a, b, c = (mesh.vertices[mesh.faces[fi, i]] for i in range(3))
    w0 = (1.0 - r1)[:, None]
    w1 = (r1 * (1.0 - r2))[:, None]
    w2 = (r1 * r2)[:, None]
    return w0 * a + w1 * b + w2 * c


# ---------------------------------------------------------------------------
# Closest-point queries (axis-aligned box tree over triangles)
# ---------------------------------------------------------------------------

def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles (a, b, c) to points p, all broadcastable.

    Returns an array shaped like the broadcast of the inputs.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.sum(ab * ap, axis=-1)
    d2 = np.sum(ac * ap, axis=-1)

    bp = p - b
    d3 = np.sum(ab * bp, axis=-1)
    d4 = np.sum(ac * bp, axis=-1)

    cp = p - c
    d5 = np.sum(ab * cp, axis=-1)
    d6 = np.sum(ac * cp, axis=-1)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    def safe_div(num, den):
        return num / np.where(np.abs(den) < 1e-300, 1.0, den)

    # Interior point as the default, then overwrite vertex/edge regions.
    denom = va + vb + vc
    v = safe_div(vb, denom)[..., None]
    w = safe_div(vc, denom)[..., None]
    out = a + ab * v + ac * w

    t_bc = safe_div(d4 - d3, (d4 - d3) + (d5 - d6))[..., None]
    edge_bc = b + t_bc * (c - b)
    m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    out = np.where(m[..., None], edge_bc, out)

    t_ac = safe_div(d2, d2 - d6)[..., None]
    m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    out = np.where(m[..., None], a + t_ac * ac, out)

    t_ab = safe_div(d1, d1 - d3)[..., None]
    m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    out = np.where(m[..., None], a + t_ab * ab, out)

    m = (d6 >= 0) & (d5 <= d6)
    out = np.where(m[..., None], c, out)
    m = (d3 >= 0) & (d4 <= d3)
    out = np.where(m[..., None], b, out)
    m = (d1 <= 0) & (d2 <= 0)
    out = np.where(m[..., None], a, out)
    return out


def _aabb_dist2(points, lo, hi):
    d = np.maximum(np.maximum(lo - points, points - hi), 0.0)
    return np.sum(d * d, axis=-1)


class _AabbTree:
    """Static median-split box tree over triangles, queried in point chunks."""

    LEAF_SIZE = 8

    def __init__(self, mesh: TriangleMesh):
        if len(mesh.faces) == 0:
            raise DataError("cannot build a tree over an empty mesh")
        a, b, c = mesh._corners
        self._a, self._b, self._c = a, b, c
        tri_lo = np.minimum(np.minimum(a, b), c)
        tri_hi = np.maximum(np.maximum(a, b), c)
        centroids = (a + b + c) / 3.0

        order = np.arange(len(a))
        bb_lo, bb_hi, left, right, start, count = [], [], [], [], [], []

        def build(idx):
            node = len(bb_lo)
            bb_lo.append(tri_lo[idx].min(axis=0))
            bb_hi.append(tri_hi[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(-1)
            count.append(0)
            if len(idx) <= self.LEAF_SIZE:
                start[node] = build.cursor
                count[node] = len(idx)
                order[build.cursor:build.cursor + len(idx)] = idx
                build.cursor += len(idx)
                return node
            cen = centroids[idx]
            axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
            half = len(idx) // 2
            part = idx[np.argsort(cen[:, axis], kind="stable")]
            left[node] = build(part[:half])
            right[node] = build(part[half:])
            return node

        build.cursor = 0
        build(np.arange(len(a)))
        self._order = order
        self._bb_lo = np.asarray(bb_lo)
        self._bb_hi = np.asarray(bb_hi)
        self._left = np.asarray(left)
        self._right = np.asarray(right)
        self._start = np.asarray(start)
        self._count = np.asarray(count)

    def _leaf_update(self, node, pts, rows, best_d2, best_pt, best_tri):
        tris = self._order[self._start[node]:self._start[node] + self._count[node]]
        p = pts[rows][:, None, :]
        cp = closest_point_on_triangles(p, self._a[tris][None], self._b[tris][None],
                                        self._c[tris][None])
        d2 = np.sum((cp - p) ** 2, axis=-1)
        j = np.argmin(d2, axis=1)
        rows_n = np.arange(len(rows))
        dmin = d2[rows_n, j]
        upd = dmin < best_d2[rows]
        sel = rows[upd]
        best_d2[sel] = dmin[upd]
        best_pt[sel] = cp[rows_n[upd], j[upd]]
        best_tri[sel] = tris[j[upd]]

    def _closest_chunk(self, pts):
        n = len(pts)
        best_d2 = np.full(n, np.inf)
        best_pt = np.zeros((n, 3))
        best_tri = np.zeros(n, dtype=np.int64)

        # Seed the bound from the leaf nearest the chunk centroid so pruning
        # bites from the start.
        center = pts.mean(axis=0)
        node = 0
        while self._left[node] >= 0:
            l, r = self._left[node], self._right[node]
            dl = _aabb_dist2(center, self._bb_lo[l], self._bb_hi[l])
            dr = _aabb_dist2(center, self._bb_lo[r], self._bb_hi[r])
            node = l if dl <= dr else r
        self._leaf_update(node, pts, np.arange(n), best_d2, best_pt, best_tri)

        stack = [0]
        while stack:
            node = stack.pop()
            d2box = _aabb_dist2(pts, self._bb_lo[node], self._bb_hi[node])
            alive = d2box < best_d2
            if not np.any(alive):
                continue
            if self._left[node] < 0:
                self._leaf_update(node, pts, np.nonzero(alive)[0], best_d2,
                                  best_pt, best_tri)
            else:
                l, r = self._left[node], self._right[node]
                dl = _aabb_dist2(center, self._bb_lo[l], self._bb_hi[l])
                dr = _aabb_dist2(center, self._bb_lo[r], self._bb_hi[r])
                near, far = (l, r) if dl <= dr else (r, l)
                stack.append(far)
                stack.append(near)
        return np.sqrt(best_d2), best_pt, best_tri

    def closest(self, points, chunk=2048):
        pts = np.asarray(points, dtype=np.float64)
        dist = np.empty(len(pts))
        cp = np.empty((len(pts), 3))
        tri = np.empty(len(pts), dtype=np.int64)
        for i in range(0, len(pts), chunk):
            d, p, t = self._closest_chunk(pts[i:i + chunk])
            dist[i:i + chunk] = d
            cp[i:i + chunk] = p
            tri[i:i + chunk] = t
        return dist, cp, tri


# ---------------------------------------------------------------------------
# Ray-parity containment and signed distances
# ---------------------------------------------------------------------------

def _parity_pass(points, mesh, direction):
    """One parity pass along a shared ray direction.

    Returns (inside, risky). Risky marks points whose crossing tests graze a
    triangle boundary, a near-parallel triangle plane, or the surface itself
    within epsilon, and should be retried along another direction.
    """
    a, b, c = mesh._corners
    e1 = b - a
    e2 = c - a
    h = np.cross(direction, e2)
    det = np.sum(e1 * h, axis=1)
    normals = np.cross(e1, e2)
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    det_eps = _BOUNDARY_EPS * mesh._scale ** 2
    t_eps = _BOUNDARY_EPS * mesh._scale

    n = len(points)
    crossings = np.zeros(n, dtype=np.int64)
    risky = np.zeros(n, dtype=bool)
    f_chunk = 512
    p_chunk = 2048
    parallel = np.abs(det) < det_eps
    inv_det = 1.0 / np.where(parallel, 1.0, det)
    for i in range(0, n, p_chunk):
        pts = points[i:i + p_chunk]
        for j in range(0, len(a), f_chunk):
            aj = a[j:j + f_chunk]
            parj = parallel[j:j + f_chunk]
            invj = inv_det[j:j + f_chunk]
            s = pts[:, None, :] - aj[None, :, :]
            u = np.sum(s * h[j:j + f_chunk][None], axis=-1) * invj[None, :]
            q = np.cross(s, e1[j:j + f_chunk][None])
            v = np.sum(q * direction, axis=-1) * invj[None, :]
            t = np.sum(e2[j:j + f_chunk][None] * q, axis=-1) * invj[None, :]
            w = 1.0 - u - v
            hit = (~parj[None, :] & (u >= 0) & (v >= 0) & (w >= 0) & (t > t_eps))
            near_edge = ((np.abs(u) < _BOUNDARY_EPS) | (np.abs(v) < _BOUNDARY_EPS)
                         | (np.abs(w) < _BOUNDARY_EPS))
            plausible = ((u > -_BOUNDARY_EPS) & (v > -_BOUNDARY_EPS)
                         & (w > -_BOUNDARY_EPS) & (t > -t_eps))
            plane_dist = np.sum(s * normals[j:j + f_chunk][None], axis=-1)
            grazing = parj[None, :] & (np.abs(plane_dist) < t_eps)
            on_surface = np.abs(t) < t_eps
            risk = (plausible & (near_edge | on_surface) & ~parj[None, :]) | grazing
            crossings[i:i + p_chunk] += hit.sum(axis=1)
            risky[i:i + p_chunk] |= risk.any(axis=1)
    return (crossings % 2) == 1, risky


def ray_parity_inside(points, mesh: TriangleMesh):
    """Containment test by counting ray crossings along jittered directions."""
    pts, single = as_points(points)
    inside = np.zeros(len(pts), dtype=bool)
    todo = np.arange(len(pts))
    for direction in _PARITY_DIRECTIONS:
        ins, risky = _parity_pass(pts[todo], mesh, direction)
        ok = ~risky
        inside[todo[ok]] = ins[ok]
        todo = todo[risky]
        if len(todo) == 0:
            break
    if len(todo):
        # Every retry direction was ambiguous; accept the last parity result.
        inside[todo] = ins[risky]
    return (inside[0] if single else inside)


def closest_surface_points(points, mesh: TriangleMesh):
    """Nearest surface points and unsigned distances for the given queries."""
    pts, single = as_points(points)
    dist, cp, _ = mesh._tree.closest(pts)
    if single:
        return dist[0], cp[0]
    return dist, cp


def signed_distance(points, mesh: TriangleMesh):
    """Signed distance to the mesh surface, negative inside.

    Requires a watertight mesh; raises NotWatertightError otherwise.
    """
    if not mesh.is_watertight:
        raise NotWatertightError("sign undefined: mesh is not watertight")
    pts, single = as_points(points)
    dist, _, _ = mesh._tree.closest(pts)
    inside = ray_parity_inside(pts, mesh)
    out = np.where(inside, -dist, dist)
    return (float(out[0]) if single else out)


def signed_distance_along_ray(points_cam, pose: Pose, cam, mesh: TriangleMesh):
    """Signed distance measured along each query's projection ray.

    For a camera-frame query x, the ray runs from the camera center through x.
    The magnitude is the distance from x to the nearest ray-surface
    intersection; the sign comes from containment, and rays that miss the
    mesh yield +inf.
    """
    if not mesh.is_watertight:
        raise NotWatertightError("sign undefined: mesh is not watertight")
    pts, single = as_points(points_cam)
    if np.any(pts[:, 2] <= 0):
        raise DataError("query points must have z > 0")
    inv = pose.invert()
    origin = inv.t  # camera center in the model frame
    t_query = np.linalg.norm(pts, axis=1)
    dirs = (pts / t_query[:, None]) @ pose.R  # rows: R^T d

    a, b, c = mesh._corners
    e1 = b - a
    e2 = c - a
    det_eps = _BOUNDARY_EPS * mesh._scale ** 2

    n = len(pts)
    best = np.full(n, np.inf)
    beyond = np.zeros(n, dtype=np.int64)
    risky = np.zeros(n, dtype=bool)
    p_chunk = 1024
    f_chunk = 256
    s_all = origin[None, :] - a  # shared origin: (F, 3)
    for i in range(0, n, p_chunk):
        d = dirs[i:i + p_chunk]
        tq = t_query[i:i + p_chunk]
        for j in range(0, len(a), f_chunk):
            e2j = e2[j:j + f_chunk]
            h = np.cross(d[:, None, :], e2j[None, :, :])
            det = np.sum(e1[j:j + f_chunk][None] * h, axis=-1)
            parallel = np.abs(det) < det_eps
            inv_det = 1.0 / np.where(parallel, 1.0, det)
            sj = s_all[j:j + f_chunk][None]
            u = np.sum(sj * h, axis=-1) * inv_det
            q = np.cross(s_all[j:j + f_chunk], e1[j:j + f_chunk])[None]
            v = np.sum(q * d[:, None, :], axis=-1) * inv_det
            t = np.sum(e2j[None] * q, axis=-1) * inv_det
            w = 1.0 - u - v
            hit = ~parallel & (u >= 0) & (v >= 0) & (w >= 0) & (t > 0)
            plausible = (u > -_BOUNDARY_EPS) & (v > -_BOUNDARY_EPS) & (w > -_BOUNDARY_EPS)
            near_edge = ((np.abs(u) < _BOUNDARY_EPS) | (np.abs(v) < _BOUNDARY_EPS)
                         | (np.abs(w) < _BOUNDARY_EPS))
            risky[i:i + p_chunk] |= ((plausible & near_edge & ~parallel) | parallel).any(axis=1)
            gap = np.where(hit, np.abs(t - tq[:, None]), np.inf)
            best[i:i + p_chunk] = np.minimum(best[i:i + p_chunk], gap.min(axis=1))
            beyond[i:i + p_chunk] += (hit & (t > tq[:, None])).sum(axis=1)
    inside = (beyond % 2) == 1
    if np.any(risky):
        # Ambiguous crossings along the projection ray: decide containment by
        # the generic jittered-parity test instead.
        ybar = inv.apply(pts[risky])
        inside[risky] = ray_parity_inside(ybar, mesh)
    out = np.where(np.isinf(best), np.inf, np.where(inside, -best, best))
    return (float(out[0]) if single else out)


# ---------------------------------------------------------------------------
# Symmetries
# ---------------------------------------------------------------------------

def rotation_about_axis(axis, angle_rad) -> np.ndarray:
    """Rodrigues rotation matrix about an arbitrary axis."""
    ax = np.asarray(axis, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(ax)
    if norm == 0:
        raise DataError("rotation axis must be nonzero")
    ax = ax / norm
    k = np.array([[0, -ax[2], ax[1]], [ax[2], 0, -ax[0]], [-ax[1], ax[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * k + (1 - np.cos(angle_rad)) * (k @ k)


@dataclass(frozen=True)
class SymmetrySet:
    """Rigid self-maps of the object model frame; always contains identity."""

    transforms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        poses = tuple(self.transforms)
        if not any(np.allclose(p.R, np.eye(3), atol=1e-12)
                   and np.allclose(p.t, 0, atol=1e-12) for p in poses):
            poses = (Pose.identity(),) + poses
        object.__setattr__(self, "transforms", poses)

    def __len__(self):
        return len(self.transforms)

    def __iter__(self):
        return iter(self.transforms)

    @staticmethod
    def identity_only() -> "SymmetrySet":
        return SymmetrySet((Pose.identity(),))

    def max_surface_deviation(self, mesh: TriangleMesh, samples=500, seed=0) -> float:
        """Worst |signed distance| of transformed surface samples, over all
        transforms. Small values certify that each transform maps the mesh
        onto itself."""
        rng = np.random.Generator(np.random.PCG64(seed))
        pts = sample_surface(mesh, samples, rng)
        worst = 0.0
        for pose in self.transforms:
            sd = signed_distance(pose.apply(pts), mesh)
            worst = max(worst, float(np.abs(sd).max()))
        return worst

    def is_valid_for(self, mesh: TriangleMesh, tolerance_mm=0.5, samples=500,
                     seed=0) -> bool:
        return self.max_surface_deviation(mesh, samples, seed) <= tolerance_mm

    def to_json(self):
        return [p.to_json() for p in self.transforms]

    @staticmethod
    def from_json(obj) -> "SymmetrySet":
        """Parse either a list of pose objects or {"axis": [...], "steps": n}."""
        if isinstance(obj, dict):
            try:
                return discretize_symmetry(obj["axis"], obj["steps"])
            except KeyError as exc:
                raise DataError(f"symmetry spec missing key: {exc}") from exc
        if isinstance(obj, list):
            return SymmetrySet(tuple(Pose.from_json(p) for p in obj))
        raise DataError("symmetry JSON must be a list of poses or an axis/steps spec")


def discretize_symmetry(axis, steps: int) -> SymmetrySet:
    """Identity plus rotations of 2 pi k / steps about the axis, k=1..steps-1."""
    if steps < 1:
        raise DataError("steps must be >= 1")
    poses = [Pose.identity()]
    for k in range(1, steps):
        poses.append(Pose(rotation_about_axis(axis, 2.0 * np.pi * k / steps),
                          np.zeros(3)))
    return SymmetrySet(tuple(poses))


# ---------------------------------------------------------------------------
# ASCII PLY
# ---------------------------------------------------------------------------

def save_ply(mesh: TriangleMesh, path):
    """Write an ASCII PLY with x y z and uchar red green blue per vertex."""
    colors = np.clip(np.rint(mesh.vertex_colors * 255.0), 0, 255).astype(np.uint8)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element face {len(mesh.faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    for v, c in zip(mesh.vertices, colors):
        lines.append(f"{v[0]!r} {v[1]!r} {v[2]!r} {c[0]} {c[1]} {c[2]}")
    for f in mesh.faces:
        lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_ply(path) -> TriangleMesh:
    """Read an ASCII PLY written by save_ply (colors optional)."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    if not tokens or tokens[0].strip() != "ply":
        raise DataError(f"{path}: not a PLY file")
    n_vertex = n_face = 0
    vertex_props = []
    current = None
    i = 1
    while i < len(tokens):
        line = tokens[i].strip()
        i += 1
        if line == "end_header":
            break
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise DataError(f"{path}: only ASCII PLY is supported")
        elif parts[0] == "element":
            current = parts[1]
            if current == "vertex":
                n_vertex = int(parts[2])
            elif current == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and current == "vertex" and parts[1] != "list":
            vertex_props.append(parts[2])
    else:
        raise DataError(f"{path}: missing end_header")

    for needed in ("x", "y", "z"):
        if needed not in vertex_props:
            raise DataError(f"{path}: vertex property {needed} missing")
    has_color = all(p in vertex_props for p in ("red", "green", "blue"))

    verts = np.zeros((n_vertex, 3))
    colors = np.full((n_vertex, 3), 0.7)
    for k in range(n_vertex):
        parts = tokens[i + k].split()
        if len(parts) < len(vertex_props):
            raise DataError(f"{path}: truncated vertex element")
        row = dict(zip(vertex_props, parts))
        verts[k] = [float(row["x"]), float(row["y"]), float(row["z"])]
        if has_color:
            colors[k] = [int(row["red"]) / 255.0, int(row["green"]) / 255.0,
                         int(row["blue"]) / 255.0]
    i += n_vertex
    faces = np.zeros((n_face, 3), dtype=np.int64)
    for k in range(n_face):
        parts = tokens[i + k].split()
        if int(parts[0]) != 3:
            raise DataError(f"{path}: only triangle faces are supported")
        faces[k] = [int(parts[1]), int(parts[2]), int(parts[3])]
    return TriangleMesh(verts, faces, colors)


# ---------------------------------------------------------------------------
# Primitive object models
# ---------------------------------------------------------------------------

def _gradient_colors(vertices):
    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    return (vertices - lo) / span


def _finish(vertices, faces, color_mode):
    vertices = np.asarray(vertices, dtype=np.float64)
    if color_mode == "gradient":
        colors = _gradient_colors(vertices)
    elif color_mode == "flat":
        colors = None
    else:
        raise DataError(f"unknown color_mode {color_mode!r}")
    return TriangleMesh(vertices, np.asarray(faces, dtype=np.int64), colors)


def make_box(extents=(100.0, 100.0, 100.0), color_mode="gradient") -> TriangleMesh:
    """Axis-aligned box centered at the origin."""
    ex, ey, ez = (e / 2.0 for e in extents)
    verts = np.array([[sx * ex, sy * ey, sz * ez]
                      for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)])
    # index = x_bit + 2*y_bit + 4*z_bit
    faces = [
        [0, 2, 1], [1, 2, 3],  # z-
        [4, 5, 6], [5, 7, 6],  # z+
        [0, 1, 4], [1, 5, 4],  # y-
        [2, 6, 3], [3, 6, 7],  # y+
        [0, 4, 2], [2, 4, 6],  # x-
        [1, 3, 5], [3, 7, 5],  # x+
    ]
    return _finish(verts, faces, color_mode)


def make_icosphere(radius=60.0, subdivisions=2, color_mode="gradient") -> TriangleMesh:
    """Geodesic sphere obtained by subdividing an icosahedron."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) for v in verts]

    def push(v):
        verts.append(v)
        return len(verts) - 1

    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                cache[key] = push((verts[i] + verts[j]) / 2.0)
            return cache[key]

        faces = [t for f in faces for t in (
            (f[0], midpoint(f[0], f[1]), midpoint(f[0], f[2])),
            (f[1], midpoint(f[1], f[2]), midpoint(f[0], f[1])),
            (f[2], midpoint(f[0], f[2]), midpoint(f[1], f[2])),
            (midpoint(f[0], f[1]), midpoint(f[1], f[2]), midpoint(f[0], f[2])),
        )]
    arr = np.asarray(verts)
    arr = arr / np.linalg.norm(arr, axis=1, keepdims=True) * radius
    return _finish(arr, faces, color_mode)


def make_cylinder(radius=40.0, height=100.0, segments=36, color_mode="gradient") -> TriangleMesh:
    """Closed cylinder with its axis along z, centered at the origin."""
    if segments < 3:
        raise DataError("cylinder needs at least 3 segments")
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.concatenate([ring, np.full((segments, 1), -height / 2)], axis=1)
    top = np.concatenate([ring, np.full((segments, 1), height / 2)], axis=1)
    verts = np.concatenate([bottom, top,
                            [[0, 0, -height / 2]], [[0, 0, height / 2]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces.append([i, j, segments + i])
        faces.append([j, segments + j, segments + i])
        faces.append([cb, j, i])
        faces.append([ct, segments + i, segments + j])
    return _finish(verts, faces, color_mode)


def make_house(extents=(120.0, 90.0, 80.0), color_mode="gradient") -> TriangleMesh:
    """Asymmetric pentagonal prism (a 'house' with an offset ridge).

    The cross-section has no rotational self-map, so the only rigid symmetry
    of the shape is the identity. The bounding box equals `extents` and is
    centered at the origin.
    """
    lx, ly, lz = extents
    hx, hy, hz = lx / 2.0, ly / 2.0, lz / 2.0
    # Pentagon in (y, z): floor, two wall tops at different heights, ridge
    # pushed toward one side.
    poly = np.array([
        [-hy, -hz],
        [hy, -hz],
        [hy, 0.25 * hz],
        [0.2 * hy, hz],
        [-hy, 0.5 * hz],
    ])
    back = np.concatenate([np.full((5, 1), -hx), poly], axis=1)
    front = np.concatenate([np.full((5, 1), hx), poly], axis=1)
    verts = np.concatenate([back, front])
    faces = []
    for k in range(1, 4):  # end caps (fan)
        faces.append([0, k + 1, k])
        faces.append([5, 5 + k, 5 + k + 1])
    for i in range(5):  # side walls
        j = (i + 1) % 5
        faces.append([i, j, 5 + i])
        faces.append([j, 5 + j, 5 + i])
    return _finish(verts, faces, color_mode)
