"""Input validation helpers used at the public API boundaries."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def as_points(x, name="points"):
    """Coerce to a float64 (N, 3) array; a single (3,) point becomes (1, 3).

    Returns the array and a flag telling whether the input was a single point,
    so callers can un-batch their result.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DataError(f"{name} must have shape (N, 3) or (3,), got {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr, single


def as_pixels(x, name="pixels"):
    """Coerce to a float64 (N, 2) array; a single (2,) pixel becomes (1, 2)."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DataError(f"{name} must have shape (N, 2) or (2,), got {np.shape(x)}")
    return arr, single


def check_image(image, name="image"):
    """Validate an H x W x 3 float image with values in [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DataError(f"{name} must be a nonempty H x W x 3 array")
    return arr


def check_rotation(r, tol=1e-9, name="R"):
    """Validate a proper rotation matrix: orthonormal within tol, det +1."""
    arr = np.asarray(r, dtype=np.float64)
    if arr.shape != (3, 3):
        raise DataError(f"{name} must be 3x3, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    err = np.abs(arr.T @ arr - np.eye(3)).max()
    if err > tol:
        raise DataError(f"{name} is not orthonormal (max |R^T R - I| = {err:.3e})")
    det = np.linalg.det(arr)
    if abs(det - 1.0) > tol:
        raise DataError(f"{name} has det {det:.12f}, expected +1")
    return arr


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise DataError(f"{name} must be positive, got {value}")
    return float(value)
