"""Rigid poses, pinhole cameras, and robust 3D-3D pose fitting.

Conventions: poses map model-frame points y to camera-frame points
x = R y + t, with translations in millimeters. Pixel coordinates follow the
pinhole projection u = x fx / z + cx, v = y fy / z + cy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCameraError,
    DataError,
    DegenerateConfigurationError,
    InsufficientCorrespondencesError,
    NoPoseFoundError,
)
from .imageops import bilinear_sample
from .validation import as_pixels, as_points, check_image, check_positive, check_rotation

# Model-frame triplets whose triangle area falls below this are rejected as
# RANSAC minimal samples (they cannot constrain a rotation).
DEGENERATE_TRIANGLE_AREA = 1e-6

# Relative gap on the second singular value below which the covariance is
# treated as rank-deficient.
_RANK_TOL = 1e-12


@dataclass(frozen=True)
class Pose:
    """Rigid transform (R, t) from model frame to camera frame, millimeters."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = check_rotation(self.R)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise DataError("t contains non-finite values")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", r)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, points):
        """Transform model-frame points to the camera frame."""
        pts, single = as_points(points)
        out = pts @ self.R.T + self.t
        return out[0] if single else out

    def compose(self, other: "Pose") -> "Pose":
        """Return the pose applying `other` first, then `self`."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def invert(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def rotation_angle_deg(self, other: "Pose") -> float:
        """Geodesic angle between the two rotations, in degrees."""
        c = (np.trace(self.R.T @ other.R) - 1.0) / 2.0
        return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))

    def to_json(self) -> dict:
        return {"R": [float(v) for v in self.R.reshape(-1)],
                "t": [float(v) for v in self.t]}

    @staticmethod
    def from_json(obj) -> "Pose":
        if isinstance(obj, str):
            obj = json.loads(obj)
        try:
            r = np.asarray(obj["R"], dtype=np.float64).reshape(3, 3)
            t = np.asarray(obj["t"], dtype=np.float64).reshape(3)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid pose JSON: {exc}") from exc
        return Pose(r, t)


@dataclass(frozen=True)
class PinholeCamera:
    """Pinhole intrinsics plus image size, all in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        check_positive(self.fx, "fx")
        check_positive(self.fy, "fy")
        if self.width <= 0 or self.height <= 0:
            raise DataError("camera width and height must be positive")
        object.__setattr__(self, "fx", float(self.fx))
        object.__setattr__(self, "fy", float(self.fy))
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @staticmethod
    def from_json(obj) -> "PinholeCamera":
        if isinstance(obj, str):
            obj = json.loads(obj)
        try:
            return PinholeCamera(obj["fx"], obj["fy"], obj["cx"], obj["cy"],
                                 obj["width"], obj["height"])
        except (KeyError, TypeError) as exc:
            raise DataError(f"invalid camera JSON: {exc}") from exc


def project(points, cam: PinholeCamera):
    """Project camera-frame points to pixel coordinates.

    Raises BehindCameraError if any point has z <= 0.
    """
    pts, single = as_points(points)
    z = pts[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError("cannot project a point with z <= 0 (behind camera)")
    uv = np.empty((len(pts), 2))
    uv[:, 0] = pts[:, 0] * cam.fx / z + cam.cx
    uv[:, 1] = pts[:, 1] * cam.fy / z + cam.cy
    return uv[0] if single else uv


def backproject(uv, z, cam: PinholeCamera):
    """Lift pixel coordinates at depth z (mm) back to camera-frame points."""
    px, single = as_pixels(uv)
    zs = np.broadcast_to(np.asarray(z, dtype=np.float64), (len(px),))
    pts = np.empty((len(px), 3))
    pts[:, 0] = (px[:, 0] - cam.cx) / cam.fx * zs
    pts[:, 1] = (px[:, 1] - cam.cy) / cam.fy * zs
    pts[:, 2] = zs
    return pts[0] if single else pts


def remap_to_reference(image, src: PinholeCamera, ref: PinholeCamera):
    """Resample an image taken by `src` as if taken by `ref`.

    Each output pixel is the bilinear sample of the input at the source-camera
    projection of the ray that the pixel defines in the reference camera.
    Samples falling outside the input are black.
    """
    img = check_image(image)
    us, vs = np.meshgrid(np.arange(ref.width, dtype=np.float64),
                         np.arange(ref.height, dtype=np.float64))
    rays = backproject(np.stack([us.ravel(), vs.ravel()], axis=1), 1.0, ref)
    src_uv = project(rays, src)
    out = bilinear_sample(img, src_uv, fill=0.0)
    return out.reshape(ref.height, ref.width, 3)


def kabsch(x_points, y_points) -> Pose:
    """Least-squares rigid alignment of corresponding point sets.

    Finds (R, t) minimizing sum ||R y_i + t - x_i||^2 via SVD of the centered
    covariance. When the unconstrained optimum is a reflection, the last
    column of V is sign-flipped so the result stays a proper rotation.
    """
    x, _ = as_points(x_points, "x_points")
    y, _ = as_points(y_points, "y_points")
    if len(x) != len(y):
        raise DataError("x_points and y_points must have equal length")
    if len(x) < 3:
        raise DegenerateConfigurationError(
            "degenerate configuration: need at least 3 correspondences")
    cx = x.mean(axis=0)
    cy = y.mean(axis=0)
    cov = (y - cy).T @ (x - cx)
    u, s, vt = np.linalg.svd(cov)
    if s[1] <= _RANK_TOL * max(s[0], 1.0):
        raise DegenerateConfigurationError(
            "degenerate configuration: covariance rank below 2")
    v = vt.T
    r = v @ u.T
    if np.linalg.det(r) < 0:
        v = v.copy()
        v[:, -1] = -v[:, -1]
        r = v @ u.T
    return Pose(r, cx - r @ cy)


def alignment_rmse(pose: Pose, x, y) -> float:
    """Root-mean-square residual of x against pose-transformed y."""
    d = pose.apply(y) - np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


@dataclass(frozen=True)
class CorrespondenceSet:
    """3D-3D correspondences: camera-frame queries x paired with predicted
    model-frame points y and predicted signed distances s (all mm).

    Only near-surface pairs are stored: |s| < clamp_mm for every entry.
    """

    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    clamp_mm: float = 5.0

    def __post_init__(self):
        x, _ = as_points(self.x, "x")
        y, _ = as_points(self.y, "y")
        s = np.asarray(self.s, dtype=np.float64).reshape(-1)
        if not (len(x) == len(y) == len(s)):
            raise DataError("x, y, s must have equal length")
        if len(s) and np.max(np.abs(s)) >= self.clamp_mm:
            raise DataError("correspondence |s| must stay below clamp_mm; "
                            "use CorrespondenceSet.near_surface to filter")
        for arr in (x, y, s):
            arr.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "s", s)

    def __len__(self):
        return len(self.s)

    @staticmethod
    def near_surface(x, y, s, clamp_mm=5.0) -> "CorrespondenceSet":
        """Build a set keeping only pairs with |s| < clamp_mm."""
        x, _ = as_points(x, "x")
        y, _ = as_points(y, "y")
        s = np.asarray(s, dtype=np.float64).reshape(-1)
        keep = np.abs(s) < clamp_mm
        return CorrespondenceSet(x[keep], y[keep], s[keep], clamp_mm)


def _draw_triplet(rng, y, max_attempts=1000):
    """Draw indices of a non-degenerate model-frame triplet.

    Triplets spanning less than DEGENERATE_TRIANGLE_AREA are resampled and do
    not consume a RANSAC iteration.
    """
    m = len(y)
    for _ in range(max_attempts):
        idx = rng.choice(m, size=3, replace=False)
        a, b, c = y[idx]
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a))
        if area >= DEGENERATE_TRIANGLE_AREA:
            return idx
    raise NoPoseFoundError(
        "no pose found: could not draw a non-degenerate correspondence triplet")


def ransac_fit(corr: CorrespondenceSet, iters: int = 200,
               inlier_threshold_mm: float = 20.0, seed: int = 0):
    """Robust pose fit from 3D-3D correspondences.

    Runs exactly `iters` hypotheses, each the Kabsch fit of a random triplet
    drawn from a PCG64 stream seeded with `seed`. Hypothesis quality is the
    count of pairs with ||R y + t - x|| below the threshold; ties are broken
    by lower alignment RMSE over the inliers, then by earlier iteration. The
    best hypothesis is refined by one Kabsch pass over its inliers, and the
    inlier count of the refined pose is returned alongside it.
    """
    if len(corr) < 3:
        raise InsufficientCorrespondencesError(
            "insufficient correspondences: need at least 3")
    if iters < 1:
        raise DataError("iters must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    x, y = corr.x, corr.y

    best_count = 0
    best_rmse = np.inf
    best_inliers = None
    for _ in range(iters):
        idx = _draw_triplet(rng, y)
        try:
            pose = kabsch(x[idx], y[idx])
        except DegenerateConfigurationError:
            continue  # consumed: the model triplet was fine, the fit was not
        d = np.linalg.norm(y @ pose.R.T + pose.t - x, axis=1)
        inliers = d < inlier_threshold_mm
        count = int(inliers.sum())
        if count < 3:
            continue
        rmse = float(np.sqrt(np.mean(d[inliers] ** 2)))
        if count > best_count or (count == best_count and rmse < best_rmse):
            best_count = count
            best_rmse = rmse
            best_inliers = inliers
    if best_inliers is None:
        raise NoPoseFoundError("no pose found: no hypothesis reached 3 inliers")

    refined = kabsch(x[best_inliers], y[best_inliers])
    d = np.linalg.norm(y @ refined.R.T + refined.t - x, axis=1)
    return refined, int((d < inlier_threshold_mm).sum())
