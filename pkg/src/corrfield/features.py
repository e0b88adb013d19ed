"""Pixel-aligned image features.

The provider samples a raw P x P patch of the image, bilinearly interpolated
and centered at the projection of a query point, with channels rescaled from
[0, 1] to [-1, 1]. Neighbors outside the image contribute zero feature
values. The interface stays narrow so a learned encoder can replace the raw
patch later.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .validation import check_image


@dataclass(frozen=True)
class PatchFeatureProvider:
    """Raw-patch feature extractor with K = 3 * patch_size**2 outputs.

    stride spaces the patch taps, so a patch_size P with stride s covers a
    P*s pixel window while keeping the feature length fixed.
    """

    patch_size: int = 8
    scale: float = 2.0
    offset: float = -1.0
    stride: float = 2.0

    def __post_init__(self):
        if self.patch_size < 1:
            raise DataError("patch_size must be >= 1")
        if self.stride <= 0:
            raise DataError("stride must be positive")

    @property
    def feature_length(self) -> int:
        return 3 * self.patch_size * self.patch_size

    def features(self, image, uv) -> np.ndarray:
        """Extract features at (N, 2) pixel positions; returns (N, K) float32.

        The patch grid is flattened row-major as (dy, dx, channel).
        """
        img = check_image(image).astype(np.float32)
        h, w = img.shape[:2]
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        p = self.patch_size
        offs = (np.arange(p, dtype=np.float64) - (p - 1) / 2.0) * self.stride

        su = (uv[:, 0, None] + offs[None, :])  # (N, P)
        sv = (uv[:, 1, None] + offs[None, :])
        u0 = np.floor(su).astype(np.int64)
        v0 = np.floor(sv).astype(np.int64)
        fu = (su - u0).astype(np.float32)
        fv = (sv - v0).astype(np.float32)

        n = len(uv)
        out = np.zeros((n, p, p, 3), dtype=np.float32)
        feat_img = img * np.float32(self.scale) + np.float32(self.offset)
        for dv, du in ((0, 0), (0, 1), (1, 0), (1, 1)):
            ui = u0 + du  # (N, P)
            vi = v0 + dv
            wu = fu if du else (1.0 - fu)
            wv = fv if dv else (1.0 - fv)
            valid = ((ui >= 0) & (ui < w))[:, None, :] & ((vi >= 0) & (vi < h))[:, :, None]
            uc = np.clip(ui, 0, w - 1)
            vc = np.clip(vi, 0, h - 1)
            vals = feat_img[vc[:, :, None], uc[:, None, :]]  # (N, P, P, 3)
            vals = np.where(valid[..., None], vals, np.float32(0.0))
            out += vals * (wv[:, :, None] * wu[:, None, :])[..., None]
        return out.reshape(n, self.feature_length)
