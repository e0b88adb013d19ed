"""3D query-point generation for training and test time.

Training queries are drawn pose-aware and surface-biased from three pools
(near-surface, bounding sphere, camera frustum), then balanced to equal
counts of inside and outside points. Test queries are the centers of an
axis-aligned voxelization of the camera frustum over a depth range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, SamplingError
from .geometry import PinholeCamera, Pose, backproject, project
from .mesh import TriangleMesh, sample_surface, signed_distance, signed_distance_along_ray


@dataclass(frozen=True)
class SamplingConfig:
    """Knobs of the training-point sampler.

    pool_scale scales all pool sizes and the per-side selection count
    together; 1.0 keeps the stock counts (12500 near-surface, 1000 bounding
    sphere, 1000 frustum, 2500 selected per side).
    """

    near_count: int = 12500
    sphere_count: int = 1000
    frustum_count: int = 1000
    select_per_side: int = 2500
    pool_scale: float = 1.0
    surface_sigma_mm: float = 5.0
    z_near: float = 800.0
    z_far: float = 1200.0
    sdf_mode: str = "closest"  # "closest" or "ray"
    max_topup_rounds: int = 20

    def scaled(self, name) -> int:
        return max(1, int(round(getattr(self, name) * self.pool_scale)))


@dataclass(frozen=True)
class QueryBatch:
    """Query points in the camera frame, plus ground truth when training.

    gt_y holds the model-frame points obtained by applying the inverse
    ground-truth pose to each query; gt_sdf holds their signed distances.
    warn_topup counts extra near-surface draws that were needed to balance
    the inside/outside split.
    """

    points: np.ndarray
    gt_y: np.ndarray = None
    gt_sdf: np.ndarray = None
    warn_topup: int = 0

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "points", pts)
        if self.gt_y is not None:
            object.__setattr__(self, "gt_y",
                               np.asarray(self.gt_y, dtype=np.float64).reshape(-1, 3))
        if self.gt_sdf is not None:
            object.__setattr__(self, "gt_sdf",
                               np.asarray(self.gt_sdf, dtype=np.float64).reshape(-1))

    def __len__(self):
        return len(self.points)

    def dump(self, path):
        """Write the points as flat little-endian f32 (x, y, z) triplets."""
        self.points.astype("<f4").tofile(path)


def _in_view(points, cam: PinholeCamera, z_near, z_far):
    """Points inside the depth range whose projection lands in the image."""
    z = points[:, 2]
    ok = (z >= z_near) & (z <= z_far)
    out = np.zeros(len(points), dtype=bool)
    if np.any(ok):
        uv = project(points[ok], cam)
        inside = ((uv[:, 0] >= 0) & (uv[:, 0] <= cam.width - 1)
                  & (uv[:, 1] >= 0) & (uv[:, 1] <= cam.height - 1))
        out[np.nonzero(ok)[0][inside]] = True
    return out


def _near_surface_draw(mesh, pose, cfg, rng, count):
    pts = sample_surface(mesh, count, rng)
    pts = pose.apply(pts)
    return pts + rng.normal(0.0, cfg.surface_sigma_mm, size=pts.shape)


def _gt_sdf(points, mesh, pose, cam, mode):
    ybar = pose.invert().apply(points)
    if mode == "closest":
        return ybar, signed_distance(ybar, mesh)
    if mode == "ray":
        return ybar, signed_distance_along_ray(points, pose, cam, mesh)
    raise DataError(f"unknown sdf_mode {mode!r}")


def sample_training_points(mesh: TriangleMesh, pose: Pose, cam: PinholeCamera,
                           rng_seed: int, cfg: SamplingConfig = SamplingConfig()) -> QueryBatch:
    """Draw a balanced training batch of camera-frame query points.

    Candidate pools (near-surface, bounding sphere, frustum) are drawn with
    the configured counts, clipped to the visible frustum, then the batch
    keeps select_per_side points with negative ground-truth signed distance
    and as many with non-negative. No visibility test is applied, so occluded
    parts of the object are sampled like visible ones. If one side of the
    split runs short, fresh near-surface draws top it up; failing that, a
    SamplingError is raised.
    """
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    n_near = cfg.scaled("near_count")
    n_sphere = cfg.scaled("sphere_count")
    n_frustum = cfg.scaled("frustum_count")
    n_side = cfg.scaled("select_per_side")

    near = _near_surface_draw(mesh, pose, cfg, rng, n_near)

    center = pose.apply(mesh.bounding_center)
    radius = mesh.bounding_radius
    dirs = rng.normal(size=(n_sphere, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = radius * np.cbrt(rng.random(n_sphere))
    sphere = center + dirs * radii[:, None]

    z3 = rng.random(n_frustum) * (cfg.z_far ** 3 - cfg.z_near ** 3) + cfg.z_near ** 3
    zs = np.cbrt(z3)
    us = rng.random(n_frustum) * (cam.width - 1)
    vs = rng.random(n_frustum) * (cam.height - 1)
    frustum = backproject(np.stack([us, vs], axis=1), zs, cam)

    pool = np.concatenate([near, sphere, frustum])
    pool = pool[_in_view(pool, cam, cfg.z_near, cfg.z_far)]
    ybar, sdf = _gt_sdf(pool, mesh, pose, cam, cfg.sdf_mode)

    inside = sdf < 0
    warn = 0
    rounds = 0
    while (inside.sum() < n_side or (~inside).sum() < n_side):
        if rounds >= cfg.max_topup_rounds:
            raise SamplingError("object too small/far for sampling config")
        rounds += 1
        warn += 1
        extra = _near_surface_draw(mesh, pose, cfg, rng, max(n_near // 4, 256))
        extra = extra[_in_view(extra, cam, cfg.z_near, cfg.z_far)]
        if len(extra) == 0:
            continue
        ey, es = _gt_sdf(extra, mesh, pose, cam, cfg.sdf_mode)
        pool = np.concatenate([pool, extra])
        ybar = np.concatenate([ybar, ey])
        sdf = np.concatenate([sdf, es])
        inside = sdf < 0

    idx_in = np.nonzero(inside)[0]
    idx_out = np.nonzero(~inside)[0]
    sel_in = rng.choice(idx_in, size=n_side, replace=False)
    sel_out = rng.choice(idx_out, size=n_side, replace=False)
    sel = np.concatenate([sel_in, sel_out])
    return QueryBatch(pool[sel], ybar[sel], sdf[sel], warn_topup=warn)


def sample_test_grid(cam: PinholeCamera, z_near: float, z_far: float,
                     step: float) -> QueryBatch:
    """Centers of an axis-aligned voxelization of the frustum depth range.

    The z levels are anchored at z_near + step/2 and the x/y lattice at
    multiples of the step, so shifting the depth window by one step shifts
    the z levels by exactly one step. Points are kept when they project
    inside the image; ordering is z-major, then y, then x.
    """
    if not (0 < z_near < z_far):
        raise DataError("need 0 < z_near < z_far")
    if step <= 0:
        raise DataError("step must be positive")
    zs = np.arange(z_near + step / 2.0, z_far, step)
    blocks = []
    for z in zs:
        x_lo = (0 - cam.cx) / cam.fx * z
        x_hi = (cam.width - 1 - cam.cx) / cam.fx * z
        y_lo = (0 - cam.cy) / cam.fy * z
        y_hi = (cam.height - 1 - cam.cy) / cam.fy * z
        xi = np.arange(np.floor(x_lo / step), np.ceil(x_hi / step) + 1)
        yi = np.arange(np.floor(y_lo / step), np.ceil(y_hi / step) + 1)
        xc = (xi + 0.5) * step
        yc = (yi + 0.5) * step
        gx, gy = np.meshgrid(xc, yc)
        pts = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)], axis=1)
        keep = _in_view(pts, cam, z_near, z_far)
        blocks.append(pts[keep])
    if not blocks:
        return QueryBatch(np.zeros((0, 3)))
    return QueryBatch(np.concatenate(blocks))
