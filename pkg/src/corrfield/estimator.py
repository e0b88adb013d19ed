"""Scikit-learn style front-end: fit a field on a rendered dataset, predict
6DoF poses from images.

The estimator wires together sampling, field training, correspondence
extraction, and robust fitting; the functional pieces stay available in
their own modules for finer control.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator

from .errors import DataError
from .field import (DESK_HIDDEN_LAYERS, FieldConfig, LossConfig, TrainingConfig,
                    extract_correspondences, train_field)
from .geometry import PinholeCamera, Pose, ransac_fit, remap_to_reference
from .mesh import (SymmetrySet, TriangleMesh, load_ply, make_box, make_cylinder,
                   make_house, make_icosphere)
from .sampling import SamplingConfig, sample_test_grid
from .validation import check_image

_BUILTIN_MESHES = {
    "house": make_house,
    "box": make_box,
    "cube": make_box,
    "icosphere": make_icosphere,
    "cylinder": make_cylinder,
}


def resolve_mesh(spec) -> TriangleMesh:
    """Accept a TriangleMesh, a PLY path, or a 'builtin:<name>' spec."""
    if isinstance(spec, TriangleMesh):
        return spec
    if isinstance(spec, str):
        if spec.startswith("builtin:"):
            name = spec.split(":", 1)[1]
            if name not in _BUILTIN_MESHES:
                raise DataError(f"unknown builtin mesh {name!r}; "
                                f"choices: {sorted(_BUILTIN_MESHES)}")
            return _BUILTIN_MESHES[name]()
        if not os.path.exists(spec):
            raise DataError(f"mesh file not found: {spec}")
        return load_ply(spec)
    raise DataError("mesh must be a TriangleMesh, a PLY path, or builtin:<name>")


def estimate_pose(field, image, cam: PinholeCamera, ref_cam: PinholeCamera,
                  grid_step_mm=10.0, z_near=800.0, z_far=1200.0, clamp_mm=5.0,
                  keep_ratio=0.999, iterations=200, inlier_threshold_mm=20.0,
                  seed=0, dump_grid=None, dump_corr=None):
    """One-image pose estimation pipeline.

    The image is remapped to the reference camera when its camera differs,
    queries are sampled on a frustum grid, the field links them to model
    points, and the pose is fitted robustly. Returns (pose, inlier_count,
    correspondence_count).
    """
    image = check_image(image)
    if cam != ref_cam:
        image = remap_to_reference(image, cam, ref_cam)
    grid = sample_test_grid(ref_cam, z_near, z_far, grid_step_mm)
    if dump_grid:
        grid.dump(dump_grid)
    corr = extract_correspondences(field, image, ref_cam, grid, clamp_mm, keep_ratio)
    if dump_corr:
        _dump_correspondences(corr, dump_corr)
    pose, inliers = ransac_fit(corr, iterations, inlier_threshold_mm, seed)
    return pose, inliers, len(corr)


def _dump_correspondences(corr, path):
    """Binary dump: magic 'NCFC', u32 count, then count * 7 little-endian f32
    (query x, y, z, predicted model x, y, z, predicted signed distance)."""
    import struct

    with open(path, "wb") as fh:
        fh.write(b"NCFC")
        fh.write(struct.pack("<I", len(corr)))
        rows = np.concatenate([corr.x, corr.y, corr.s[:, None]], axis=1)
        fh.write(rows.astype("<f4").tobytes())


def load_correspondence_dump(path):
    """Read a dump written by estimate_pose(dump_corr=...)."""
    import struct

    from .geometry import CorrespondenceSet

    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != b"NCFC":
        raise DataError(f"{path}: not a correspondence dump")
    (count,) = struct.unpack_from("<I", blob, 4)
    rows = np.frombuffer(blob, dtype="<f4", count=count * 7, offset=8)
    rows = rows.reshape(count, 7).astype(np.float64)
    clamp = float(np.abs(rows[:, 6]).max()) + 1e-6 if count else 5.0
    return CorrespondenceSet(rows[:, :3], rows[:, 3:6], rows[:, 6], clamp)


class FieldPoseEstimator(BaseEstimator):
    """Pose estimator with the usual fit/predict surface.

    fit(X) expects a dataset manifest (or any sequence of records exposing
    `camera`, `pose`, and `load_image()`); predict(X) accepts the same kind
    of records, or (image, camera) pairs, and returns a list of Pose.
    """

    def __init__(self, mesh="builtin:house", symmetries=None, camera=None,
                 patch_size=8, patch_stride=2.0, hidden_layers=DESK_HIDDEN_LAYERS,
                 coord_margin=1.1, dtype="float32", epochs=60,
                 learning_rate=1e-4, batch_images=4, balance_weight=1.0,
                 clamp_mm=5.0, huber_mm=10.0, pool_scale=1.0,
                 surface_sigma_mm=5.0, z_near=800.0, z_far=1200.0,
                 sdf_mode="closest", grid_step_mm=10.0, ransac_iterations=200,
                 inlier_threshold_mm=20.0, keep_ratio=0.999,
                 resample_each_epoch=False, random_state=0, workers=1):
        self.mesh = mesh
        self.symmetries = symmetries
        self.camera = camera
        self.patch_size = patch_size
        self.patch_stride = patch_stride
        self.hidden_layers = hidden_layers
        self.coord_margin = coord_margin
        self.dtype = dtype
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_images = batch_images
        self.balance_weight = balance_weight
        self.clamp_mm = clamp_mm
        self.huber_mm = huber_mm
        self.pool_scale = pool_scale
        self.surface_sigma_mm = surface_sigma_mm
        self.z_near = z_near
        self.z_far = z_far
        self.sdf_mode = sdf_mode
        self.grid_step_mm = grid_step_mm
        self.ransac_iterations = ransac_iterations
        self.inlier_threshold_mm = inlier_threshold_mm
        self.keep_ratio = keep_ratio
        self.resample_each_epoch = resample_each_epoch
        self.random_state = random_state
        self.workers = workers

    # -- configuration assembly ------------------------------------------

    def _configs(self):
        field_cfg = FieldConfig(self.patch_size, self.patch_stride,
                                tuple(self.hidden_layers), self.coord_margin,
                                self.dtype)
        training_cfg = TrainingConfig(self.epochs, self.learning_rate,
                                      self.batch_images, seed=self.random_state,
                                      resample_each_epoch=self.resample_each_epoch)
        sampling_cfg = SamplingConfig(pool_scale=self.pool_scale,
                                      surface_sigma_mm=self.surface_sigma_mm,
                                      z_near=self.z_near, z_far=self.z_far,
                                      sdf_mode=self.sdf_mode)
        loss_cfg = LossConfig(self.balance_weight, self.clamp_mm, self.huber_mm)
        return field_cfg, training_cfg, sampling_cfg, loss_cfg

    def _symmetry_set(self):
        if self.symmetries is None:
            return SymmetrySet.identity_only()
        if isinstance(self.symmetries, SymmetrySet):
            return self.symmetries
        return SymmetrySet.from_json(self.symmetries)

    # -- estimator surface -------------------------------------------------

    def fit(self, X, y=None):
        """Train the field network on annotated records."""
        records = list(X)
        mesh = resolve_mesh(self.mesh)
        field_cfg, training_cfg, sampling_cfg, loss_cfg = self._configs()
        self.mesh_ = mesh
        self.symmetries_ = self._symmetry_set()
        self.model_, self.training_log_ = train_field(
            records, mesh, self.symmetries_, field_cfg, training_cfg,
            sampling_cfg, loss_cfg)
        self.reference_camera_ = (self.camera if self.camera is not None
                                  else records[0].camera)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise DataError("estimator is not fitted; call fit or load a model")

    def _predict_one(self, item, seed):
        if hasattr(item, "load_image"):
            image, cam = item.load_image(), item.camera
        elif isinstance(item, tuple):
            image, cam = item
        else:
            image, cam = item, self.reference_camera_
        pose, _, _ = estimate_pose(
            self.model_, image, cam, self.reference_camera_,
            self.grid_step_mm, self.z_near, self.z_far, self.clamp_mm,
            self.keep_ratio, self.ransac_iterations, self.inlier_threshold_mm,
            seed)
        return pose

    def predict(self, X):
        """Estimate one pose per input; parallel workers keep input order."""
        self._check_fitted()
        items = list(X)
        seeds = [self.random_state + i for i in range(len(items))]
        if self.workers and self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(self._predict_one, items, seeds))
        return [self._predict_one(item, s) for item, s in zip(items, seeds)]

    def score(self, X, y=None):
        """Mean fraction of RANSAC inliers over the inputs (diagnostic)."""
        self._check_fitted()
        fractions = []
        for i, item in enumerate(list(X)):
            if hasattr(item, "load_image"):
                image, cam = item.load_image(), item.camera
            elif isinstance(item, tuple):
                image, cam = item
            else:
                image, cam = item, self.reference_camera_
            _, inl, total = estimate_pose(
                self.model_, image, cam, self.reference_camera_,
                self.grid_step_mm, self.z_near, self.z_far, self.clamp_mm,
                self.keep_ratio, self.ransac_iterations,
                self.inlier_threshold_mm, self.random_state + i)
            fractions.append(inl / total if total else 0.0)
        return float(np.mean(fractions)) if fractions else 0.0
