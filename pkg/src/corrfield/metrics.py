"""Pose-error metrics, Recall aggregation, and inlier-fraction analysis.

Errors follow the standard surface/projection/visible-surface trio: the
symmetry-aware maximum surface distance in 3D, its projection-space
counterpart in pixels, and the visible surface discrepancy computed from
rendered distance maps against the scene depth. Recall aggregates over
threshold grids expressed as fractions of the object diameter (and image
width for the projection metric).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, DataError, ObjectInvisibleError
from .geometry import PinholeCamera, Pose, project
from .mesh import SymmetrySet, TriangleMesh, closest_surface_points, signed_distance
from .synth import rasterize


@dataclass(frozen=True)
class EvalConfig:
    """Threshold grids and visibility tolerances.

    vsd_tau_fractions are misalignment tolerances as fractions of the object
    diameter; vsd_thresholds apply to the discrepancy value itself.
    mssd_fractions are fractions of the diameter, mspd_multiples are pixel
    thresholds per width/640 unit.
    """

    vsd_tau_fractions: tuple = tuple(np.arange(1, 11) * 0.05)
    vsd_thresholds: tuple = tuple(np.arange(1, 11) * 0.05)
    mssd_fractions: tuple = tuple(np.arange(1, 11) * 0.05)
    mspd_multiples: tuple = tuple(np.arange(1, 11) * 5.0)
    visibility_delta_mm: float = 15.0
    visibility_bins: int = 5


def _orbit(gt: Pose, sym: SymmetrySet):
    return [gt.compose(s) for s in sym]


def mssd(est: Pose, gt: Pose, mesh: TriangleMesh, sym: SymmetrySet) -> float:
    """Symmetry-aware maximum surface distance in mm.

    min over symmetries S of max over vertices v of ||est(v) - gt(S v)||.
    """
    pts_est = est.apply(mesh.vertices)
    best = np.inf
    for pose in _orbit(gt, sym):
        d = np.linalg.norm(pts_est - pose.apply(mesh.vertices), axis=1).max()
        best = min(best, float(d))
    return best


def mspd(est: Pose, gt: Pose, mesh: TriangleMesh, sym: SymmetrySet,
         cam: PinholeCamera) -> float:
    """Symmetry-aware maximum projection distance in px."""
    pts = est.apply(mesh.vertices)
    if np.any(pts[:, 2] <= 0):
        raise BehindCameraError("estimated pose puts vertices behind the camera")
    proj_est = project(pts, cam)
    best = np.inf
    for pose in _orbit(gt, sym):
        pts_gt = pose.apply(mesh.vertices)
        if np.any(pts_gt[:, 2] <= 0):
            raise BehindCameraError("ground-truth orbit pose behind the camera")
        d = np.linalg.norm(proj_est - project(pts_gt, cam), axis=1).max()
        best = min(best, float(d))
    return best


def _distance_image(depth, cam: PinholeCamera):
    """Convert a z-depth map to distances along the viewing rays."""
    us, vs = np.meshgrid(np.arange(cam.width, dtype=np.float64),
                         np.arange(cam.height, dtype=np.float64))
    ray = np.sqrt(((us - cam.cx) / cam.fx) ** 2 + ((vs - cam.cy) / cam.fy) ** 2 + 1.0)
    return depth * ray


def _visib_mask(dist_scene, dist_model, delta):
    # Model pixels count as visible where they are within delta of the scene
    # surface or where the scene has no measurement.
    return (dist_model > 0) & ((dist_model - dist_scene <= delta) | (dist_scene == 0))


def vsd(est: Pose, gt: Pose, mesh: TriangleMesh, cam: PinholeCamera,
        scene_depth, taus_mm, misalignment_delta_mm=15.0):
    """Visible surface discrepancy for each misalignment tolerance in taus_mm.

    Renders the object under both poses, estimates visibility masks against
    the scene depth, and scores the fraction of the mask union that is
    invisible in one rendering or differs by more than tau.
    """
    scene_depth = np.asarray(scene_depth, dtype=np.float64)
    if scene_depth.shape != (cam.height, cam.width):
        raise DataError("scene depth size does not match the camera")
    d_scene = _distance_image(scene_depth, cam)
    d_est = _distance_image(rasterize(mesh, est, cam, background="black").depth, cam)
    d_gt = _distance_image(rasterize(mesh, gt, cam, background="black").depth, cam)

    visib_gt = _visib_mask(d_scene, d_gt, misalignment_delta_mm)
    visib_est = _visib_mask(d_scene, d_est, misalignment_delta_mm)
    visib_est |= visib_gt & (d_est > 0)
    union = visib_gt | visib_est
    inter = visib_gt & visib_est
    n_union = int(union.sum())
    if n_union == 0:
        raise ObjectInvisibleError("object invisible in both poses")
    n_only = n_union - int(inter.sum())
    diff = np.abs(d_est[inter] - d_gt[inter])
    return [float((np.sum(diff > tau) + n_only) / n_union) for tau in taus_mm]


@dataclass
class PoseErrorReport:
    """Per-instance pose errors; e_vsd is aligned with the tau grid."""

    e_vsd: list
    e_mssd: float
    e_mspd: float
    visib_fraction: float = 1.0

    @staticmethod
    def failure(cfg: EvalConfig, visib_fraction=1.0) -> "PoseErrorReport":
        """Sentinel for a missing estimate: fails every threshold."""
        return PoseErrorReport([np.inf] * len(cfg.vsd_tau_fractions), np.inf,
                               np.inf, visib_fraction)


def evaluate_pose(est: Pose, gt: Pose, mesh: TriangleMesh, sym: SymmetrySet,
                  cam: PinholeCamera, scene_depth, diameter_mm: float,
                  cfg: EvalConfig = EvalConfig(),
                  visib_fraction=1.0) -> PoseErrorReport:
    """All three pose errors for one instance."""
    taus = [f * diameter_mm for f in cfg.vsd_tau_fractions]
    return PoseErrorReport(
        e_vsd=vsd(est, gt, mesh, cam, scene_depth, taus, cfg.visibility_delta_mm),
        e_mssd=mssd(est, gt, mesh, sym),
        e_mspd=mspd(est, gt, mesh, sym, cam),
        visib_fraction=visib_fraction)


def average_recall(reports, diameter_mm: float, image_width: int,
                   cfg: EvalConfig = EvalConfig()) -> dict:
    """Recall over the threshold grids and the headline average.

    Per metric, Recall at a threshold is the fraction of instances whose
    error falls below it; the per-metric score averages over its grid (and
    over the tau grid for the visible-surface metric), and the overall score
    is the mean of the three.
    """
    reports = list(reports)
    if not reports:
        raise DataError("average_recall needs at least one report")
    n = len(reports)

    vsd_grid = np.array([r.e_vsd for r in reports])  # (n, n_tau)
    if vsd_grid.shape[1] != len(cfg.vsd_tau_fractions):
        raise DataError("report e_vsd length does not match the tau grid")
    recalls = [float(np.mean(vsd_grid[:, j] < theta))
               for j in range(vsd_grid.shape[1]) for theta in cfg.vsd_thresholds]
    ar_vsd = float(np.mean(recalls))

    e_mssd = np.array([r.e_mssd for r in reports])
    ar_mssd = float(np.mean([np.mean(e_mssd < f * diameter_mm)
                             for f in cfg.mssd_fractions]))

    r_unit = image_width / 640.0
    e_mspd = np.array([r.e_mspd for r in reports])
    ar_mspd = float(np.mean([np.mean(e_mspd < m * r_unit)
                             for m in cfg.mspd_multiples]))

    return {"AR_VSD": ar_vsd, "AR_MSSD": ar_mssd, "AR_MSPD": ar_mspd,
            "AR": (ar_vsd + ar_mssd + ar_mspd) / 3.0, "instances": n}


# ---------------------------------------------------------------------------
# Correspondence quality vs. visibility
# ---------------------------------------------------------------------------

@dataclass
class InlierFractionBins:
    """Mean inlier fractions per visibility bin; None marks an empty bin.

    `all_points` covers every correspondence; `visible` and `invisible`
    cover the near-surface subset split by whether the matched surface point
    projects onto a visible pixel of the target mask.
    """

    edges: np.ndarray
    all_points: list
    visible: list
    invisible: list
    counts: list


def correspondence_inlier_stats(corr, gt_pose: Pose, mesh: TriangleMesh,
                                cam: PinholeCamera, visible_mask,
                                inlier_threshold_mm=20.0, clamp_mm=5.0) -> dict:
    """Inlier fractions of one correspondence set against its ground truth.

    Near-surface correspondences are those whose back-transformed query lies
    within the clamp distance of the surface; their matched surface points
    are projected into the target visibility mask to split visible from
    invisible surface regions.
    """
    x, y = corr.x, corr.y
    err = np.linalg.norm(y @ gt_pose.R.T + gt_pose.t - x, axis=1)
    inlier = err < inlier_threshold_mm
    out = {"all": float(inlier.mean()) if len(x) else None,
           "visible": None, "invisible": None}

    ybar = gt_pose.invert().apply(x)
    psi = signed_distance(ybar, mesh)
    near = np.abs(psi) < clamp_mm
    if near.any():
        _, surf = closest_surface_points(ybar[near], mesh)
        uv = project(gt_pose.apply(surf), cam)
        cols = np.clip(np.rint(uv[:, 0]).astype(np.int64), 0, cam.width - 1)
        rows = np.clip(np.rint(uv[:, 1]).astype(np.int64), 0, cam.height - 1)
        vis = np.asarray(visible_mask, dtype=bool)[rows, cols]
        near_inlier = inlier[near]
        if vis.any():
            out["visible"] = float(near_inlier[vis].mean())
        if (~vis).any():
            out["invisible"] = float(near_inlier[~vis].mean())
    return out


def inlier_fraction_by_visibility(stats, visib_fractions, bins=5) -> InlierFractionBins:
    """Bucket per-instance inlier stats into equal-width visibility bins."""
    if bins < 1:
        raise DataError("bins must be >= 1")
    edges = np.linspace(0.0, 1.0, bins + 1)
    groups = [[] for _ in range(bins)]
    for st, vf in zip(stats, visib_fractions):
        b = min(int(vf * bins), bins - 1)
        groups[b].append(st)

    def mean_of(key, group):
        vals = [g[key] for g in group if g[key] is not None]
        return float(np.mean(vals)) if vals else None

    return InlierFractionBins(
        edges=edges,
        all_points=[mean_of("all", g) for g in groups],
        visible=[mean_of("visible", g) for g in groups],
        invisible=[mean_of("invisible", g) for g in groups],
        counts=[len(g) for g in groups])
