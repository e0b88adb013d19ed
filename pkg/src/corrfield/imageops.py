"""Small image helpers: bilinear sampling and photometric jitter.

Images are H x W x 3 float arrays in [0, 1]. Pixel (i, j) is centered at
continuous coordinates (u, v) = (j, i), so the image covers
u in [-0.5, W - 0.5] and v in [-0.5, H - 0.5].
"""

from __future__ import annotations

import numpy as np


def bilinear_sample(image, uv, fill=0.0):
    """Sample an image at continuous pixel coordinates.

    uv is an (N, 2) array of (u, v) positions. Neighbors outside the image
    contribute `fill` instead of a pixel value, so samples fade to `fill`
    within one pixel of the border.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    u = np.asarray(uv, dtype=np.float64)[:, 0]
    v = np.asarray(uv, dtype=np.float64)[:, 1]

    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = u - u0
    fv = v - v0

    out = None
    for dv, du, weight in (
        (0, 0, (1 - fu) * (1 - fv)),
        (0, 1, fu * (1 - fv)),
        (1, 0, (1 - fu) * fv),
        (1, 1, fu * fv),
    ):
        ui = u0 + du
        vi = v0 + dv
        valid = (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
        uc = np.clip(ui, 0, w - 1)
        vc = np.clip(vi, 0, h - 1)
        val = img[vc, uc]
        if img.ndim == 3:
            val = np.where(valid[:, None], val, fill)
            out = val * weight[:, None] if out is None else out + val * weight[:, None]
        else:
            val = np.where(valid, val, fill)
            out = val * weight if out is None else out + val * weight
    return out


def adjust_brightness_contrast(image, brightness=0.0, contrast=1.0):
    """Apply `(pixel - 0.5) * contrast + 0.5 + brightness`, clipped to [0, 1]."""
    out = (np.asarray(image, dtype=np.float64) - 0.5) * contrast + 0.5 + brightness
    return np.clip(out, 0.0, 1.0)
