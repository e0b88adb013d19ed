"""Independent reference implementations used only to check the library.

These deliberately use different formulations than the package code: the
closest-point oracle works via plane projection plus per-edge clamping, the
containment oracle counts axis-aligned ray crossings, and gradients come
from central finite differences.
"""

import numpy as np


def brute_force_unsigned_distance(points, mesh):
    """Min distance over all triangles, via plane projection + edge clamps."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.full(len(points), np.inf)
    v, f = mesh.vertices, mesh.faces
    for tri in f:
        a, b, c = v[tri[0]], v[tri[1]], v[tri[2]]
        n = np.cross(b - a, c - a)
        n = n / np.linalg.norm(n)
        for i, p in enumerate(points):
            q = p - np.dot(p - a, n) * n
            v0, v1, v2 = b - a, c - a, q - a
            d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
            den = d00 * d11 - d01 * d01
            w1 = (d11 * (v2 @ v0) - d01 * (v2 @ v1)) / den
            w2 = (d00 * (v2 @ v1) - d01 * (v2 @ v0)) / den
            if w1 >= 0 and w2 >= 0 and w1 + w2 <= 1:
                cand = q
            else:
                best = None
                for s, e in ((a, b), (b, c), (c, a)):
                    seg = e - s
                    t = np.clip(np.dot(p - s, seg) / np.dot(seg, seg), 0.0, 1.0)
                    pt = s + t * seg
                    dd = np.linalg.norm(p - pt)
                    if best is None or dd < best[0]:
                        best = (dd, pt)
                cand = best[1]
            d = np.linalg.norm(p - cand)
            if d < out[i]:
                out[i] = d
    return out


def parity_inside(points, mesh, direction=(0.70710678, 0.40824829, 0.57735027)):
    """Ray-crossing containment oracle along a fixed oblique direction."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = np.asarray(direction) / np.linalg.norm(direction)
    v, f = mesh.vertices, mesh.faces
    inside = np.zeros(len(points), dtype=bool)
    for i, p in enumerate(points):
        crossings = 0
        for tri in f:
            a, b, c = v[tri[0]], v[tri[1]], v[tri[2]]
            e1, e2 = b - a, c - a
            h = np.cross(d, e2)
            det = e1 @ h
            if abs(det) < 1e-12:
                continue
            s = p - a
            u = (s @ h) / det
            q = np.cross(s, e1)
            w = (d @ q) / det
            t = (e2 @ q) / det
            if u >= 0 and w >= 0 and u + w <= 1 and t > 1e-9:
                crossings += 1
        inside[i] = crossings % 2 == 1
    return inside


def finite_difference_grads(loss_fn, net, h=1e-6):
    """Central finite differences of loss_fn() over every network parameter."""
    grads = []
    for li in range(len(net.weights)):
        layer = []
        for arr in (net.weights[li], net.biases[li]):
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                lp = loss_fn()
                arr[idx] = orig - h
                lm = loss_fn()
                arr[idx] = orig
                g[idx] = (lp - lm) / (2.0 * h)
            layer.append(g)
        grads.append(tuple(layer))
    return grads


def max_relative_grad_error(analytic, numeric, floor=1e-7):
    worst = 0.0
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        for a, n in ((aw, nw), (ab, nb)):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
