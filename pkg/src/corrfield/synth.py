"""Software rasterizer and synthetic dataset generation.

Rendering is a plain z-buffered perspective rasterizer with perspective-
correct barycentric interpolation and flat Lambertian shading from a
headlight at the camera center. Images are stored as binary PPM (P6), depth
maps as raw little-endian float32 with a JSON sidecar, and datasets as a
JSON manifest.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, DataError
from .geometry import PinholeCamera, Pose
from .imageops import adjust_brightness_contrast
from .mesh import TriangleMesh, make_box

_Z_CLIP = 1.0  # mm; triangles with any vertex closer than this are skipped
_AMBIENT = 0.65


@dataclass(frozen=True)
class RenderOutput:
    """One rendered view.

    rgb: H x W x 3 in [0, 1]; depth: scene z-buffer in mm (0 where nothing
    was hit); mask: pixels where the target object is visible; objcoord:
    model-frame coordinates of the target surface (valid under mask);
    visib_fraction: visible / full silhouette pixel count of the target.
    """

    rgb: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    objcoord: np.ndarray
    visib_fraction: float


def _draw_mesh(mesh, pose, cam, zbuf, rgb, mask, objc, record, ambient=_AMBIENT):
    verts = pose.apply(mesh.vertices)
    colors = mesh.vertex_colors
    h, w = zbuf.shape
    if np.all(verts[:, 2] <= _Z_CLIP):
        raise BehindCameraError("object is fully behind the camera")
    zs = verts[:, 2]
    us = np.where(zs > _Z_CLIP, verts[:, 0] * cam.fx / np.maximum(zs, _Z_CLIP) + cam.cx, 0.0)
    vs = np.where(zs > _Z_CLIP, verts[:, 1] * cam.fy / np.maximum(zs, _Z_CLIP) + cam.cy, 0.0)

    for f in mesh.faces:
        vz = zs[f]
        if np.any(vz <= _Z_CLIP):
            continue
        tu, tv = us[f], vs[f]
        lo_u = max(int(np.ceil(tu.min())), 0)
        hi_u = min(int(np.floor(tu.max())), w - 1)
        lo_v = max(int(np.ceil(tv.min())), 0)
        hi_v = min(int(np.floor(tv.max())), h - 1)
        if lo_u > hi_u or lo_v > hi_v:
            continue
        denom = ((tu[1] - tu[0]) * (tv[2] - tv[0])
                 - (tu[2] - tu[0]) * (tv[1] - tv[0]))
        if denom == 0.0:
            continue
        gu, gv = np.meshgrid(np.arange(lo_u, hi_u + 1, dtype=np.float64),
                             np.arange(lo_v, hi_v + 1, dtype=np.float64))
        w0 = ((tu[1] - gu) * (tv[2] - gv) - (tu[2] - gu) * (tv[1] - gv)) / denom
        w1 = ((tu[2] - gu) * (tv[0] - gv) - (tu[0] - gu) * (tv[2] - gv)) / denom
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        lam = np.stack([w0[inside], w1[inside], w2[inside]], axis=1)
        inv_z = lam @ (1.0 / vz)
        z_pix = 1.0 / inv_z
        rows = gv[inside].astype(np.int64)
        cols = gu[inside].astype(np.int64)
        closer = z_pix < zbuf[rows, cols]
        if not closer.any():
            continue
        rows, cols = rows[closer], cols[closer]
        lam = lam[closer]
        z_pix = z_pix[closer]

        # flat headlight shading toward the face centroid
        v0, v1, v2 = (pose.apply(mesh.vertices[f[i]]) for i in range(3))
        n = np.cross(v1 - v0, v2 - v0)
        n = n / np.linalg.norm(n)
        centroid = (v0 + v1 + v2) / 3.0
        view = -centroid / np.linalg.norm(centroid)
        shade = ambient + (1.0 - ambient) * abs(float(n @ view))

        over_z = lam / vz[None, :]
        col = (over_z @ colors[f]) * z_pix[:, None] * shade
        zbuf[rows, cols] = z_pix
        rgb[rows, cols] = np.clip(col, 0.0, 1.0)
        if record:
            objc[rows, cols] = (over_z @ mesh.vertices[f]) * z_pix[:, None]
            mask[rows, cols] = True
        else:
            objc[rows, cols] = 0.0
            mask[rows, cols] = False


def _background(mode, cam, rng):
    h, w = cam.height, cam.width
    if mode == "black":
        return np.zeros((h, w, 3))
    if mode == "solid":
        return np.tile(rng.uniform(0.0, 1.0, 3), (h, w, 1))
    if mode == "gradient":
        top = rng.uniform(0.0, 1.0, 3)
        bottom = rng.uniform(0.0, 1.0, 3)
        t = np.linspace(0.0, 1.0, h)[:, None, None]
        return np.ascontiguousarray(np.broadcast_to(top * (1 - t) + bottom * t,
                                                    (h, w, 3)))
    if mode == "noise":
        return rng.uniform(0.0, 1.0, (h, w, 3))
    raise DataError(f"unknown background mode {mode!r}")


def rasterize(mesh: TriangleMesh, pose: Pose, cam: PinholeCamera, occluders=(),
              background="solid", rng_seed=0, ambient=_AMBIENT) -> RenderOutput:
    """Render the target object plus occluders into one view.

    Occluders write into the z-buffer and the color image but never into the
    target mask or the object-coordinate map. The visible fraction is the
    target's visible pixel count over its silhouette count in an
    occluder-free re-render.
    """
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    h, w = cam.height, cam.width
    rgb = _background(background, cam, rng)
    zbuf = np.full((h, w), np.inf)
    mask = np.zeros((h, w), dtype=bool)
    objc = np.zeros((h, w, 3))
    _draw_mesh(mesh, pose, cam, zbuf, rgb, mask, objc, record=True, ambient=ambient)
    for occ_mesh, occ_pose in occluders:
        _draw_mesh(occ_mesh, occ_pose, cam, zbuf, rgb, mask, objc, record=False,
                   ambient=ambient)

    if occluders:
        zb2 = np.full((h, w), np.inf)
        m2 = np.zeros((h, w), dtype=bool)
        _draw_mesh(mesh, pose, cam, zb2, np.zeros((h, w, 3)), m2,
                   np.zeros((h, w, 3)), record=True)
        full_count = int(m2.sum())
    else:
        full_count = int(mask.sum())
    visib = float(mask.sum() / full_count) if full_count else 0.0
    depth = np.where(np.isfinite(zbuf), zbuf, 0.0)
    return RenderOutput(rgb, depth, mask, objc, visib)


# ---------------------------------------------------------------------------
# Image / depth file formats
# ---------------------------------------------------------------------------

def write_ppm(image, path):
    """Write an H x W x 3 float image in [0, 1] as binary PPM (P6, 8-bit)."""
    img = np.asarray(image)
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())


def read_ppm(path):
    """Read a binary PPM written by write_ppm into a float image in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise DataError(f"{path}: not a binary PPM file")
    try:
        w, h = (int(v) for v in parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise DataError(f"{path}: malformed PPM header") from exc
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PPM supported")
    data = np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def write_depth(depth, path):
    """Write a depth map as raw little-endian f32 plus a JSON sidecar."""
    arr = np.asarray(depth, dtype="<f4")
    arr.tofile(path)
    with open(str(path) + ".json", "w") as fh:
        json.dump({"width": int(arr.shape[1]), "height": int(arr.shape[0]),
                   "unit": "mm"}, fh)


def read_depth(path):
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    arr = np.fromfile(path, dtype="<f4")
    try:
        return arr.reshape(meta["height"], meta["width"]).astype(np.float64)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: depth file does not match sidecar") from exc


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoseDistributionConfig:
    """Uniform pose sampling: full random rotations, translations in a box."""

    x_range: tuple = (-120.0, 120.0)
    y_range: tuple = (-80.0, 80.0)
    z_range: tuple = (800.0, 1200.0)


@dataclass(frozen=True)
class OcclusionConfig:
    """Occluder placement; mode 'none' or 'box'.

    In box mode, a randomly colored box is dropped between the camera and the
    object, re-placed up to `tries` times until the visible fraction lands in
    target_visibility (the best attempt wins otherwise).
    """

    mode: str = "none"
    target_visibility: tuple = (0.4, 0.6)
    tries: int = 20


@dataclass(frozen=True)
class AugmentConfig:
    brightness: float = 0.05
    contrast: float = 0.10


def random_rotation(rng) -> np.ndarray:
    """Uniform random rotation from a uniform quaternion."""
    u1, u2, u3 = rng.random(3)
    q = np.array([
        np.sqrt(1 - u1) * np.sin(2 * np.pi * u2),
        np.sqrt(1 - u1) * np.cos(2 * np.pi * u2),
        np.sqrt(u1) * np.sin(2 * np.pi * u3),
        np.sqrt(u1) * np.cos(2 * np.pi * u3),
    ])
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _sample_pose(rng, cfg: PoseDistributionConfig) -> Pose:
    t = np.array([rng.uniform(*cfg.x_range), rng.uniform(*cfg.y_range),
                  rng.uniform(*cfg.z_range)])
    return Pose(random_rotation(rng), t)


def _place_occluder(rng, pose):
    extents = rng.uniform(40.0, 120.0, 3)
    box = make_box(extents, color_mode="flat")
    color = rng.uniform(0.05, 0.95, 3)
    box = TriangleMesh(box.vertices, box.faces,
                       np.tile(color, (len(box.vertices), 1)))
    offset = np.array([rng.uniform(-80, 80), rng.uniform(-80, 80),
                       -rng.uniform(150.0, 320.0)])
    occ_pose = Pose(random_rotation(rng), pose.t + offset)
    return box, occ_pose


def _render_record(mesh, cam, pose, occl_cfg, background, rng):
    if occl_cfg.mode == "none":
        return rasterize(mesh, pose, cam, (), background,
                         rng_seed=rng.integers(2 ** 32)), ()
    if occl_cfg.mode != "box":
        raise DataError(f"unknown occlusion mode {occl_cfg.mode!r}")
    lo, hi = occl_cfg.target_visibility
    best = None
    bg_seed = rng.integers(2 ** 32)
    for _ in range(occl_cfg.tries):
        occluders = [_place_occluder(rng, pose)]
        out = rasterize(mesh, pose, cam, occluders, background, rng_seed=bg_seed)
        gap = max(lo - out.visib_fraction, out.visib_fraction - hi, 0.0)
        if best is None or gap < best[0]:
            best = (gap, out, occluders)
        if gap == 0.0:
            break
    return best[1], best[2]


@dataclass
class DatasetRecord:
    """One annotated render; paths are relative to the manifest directory."""

    image_path: str
    depth_path: str
    camera: PinholeCamera
    pose: Pose
    visib_fraction: float
    seed: int
    root: str = "."

    def load_image(self):
        return read_ppm(os.path.join(self.root, self.image_path))

    def load_depth(self):
        return read_depth(os.path.join(self.root, self.depth_path))

    def to_json(self):
        return {"image": self.image_path, "depth": self.depth_path,
                "camera": self.camera.to_json(), "pose": self.pose.to_json(),
                "visib_fraction": self.visib_fraction, "seed": self.seed}


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    root: str = "."

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def save(self, path):
        payload = {"records": [r.to_json() for r in self.records]}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path, check_files=True) -> "DatasetManifest":
        root = os.path.dirname(os.path.abspath(path))
        try:
            with open(path) as fh:
                payload = json.load(fh)
            records = [DatasetRecord(
                r["image"], r["depth"], PinholeCamera.from_json(r["camera"]),
                Pose.from_json(r["pose"]), float(r["visib_fraction"]),
                int(r["seed"]), root) for r in payload["records"]]
        except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot load manifest {path}: {exc}") from exc
        manifest = DatasetManifest(records, root)
        if check_files:
            manifest.validate_files()
        return manifest

    def validate_files(self):
        for r in self.records:
            img = os.path.join(self.root, r.image_path)
            dep = os.path.join(self.root, r.depth_path)
            for p in (img, dep, dep + ".json"):
                if not os.path.exists(p):
                    raise DataError(f"manifest references missing file: {p}")
            with open(img, "rb") as fh:
                head = fh.read(32).split(b"\n")
            if len(head) >= 2:
                try:
                    w, h = (int(v) for v in head[1].split())
                except ValueError:
                    raise DataError(f"{img}: malformed PPM header")
                if (w, h) != (r.camera.width, r.camera.height):
                    raise DataError(f"{img}: size {w}x{h} does not match camera")


def generate_dataset(mesh: TriangleMesh, cam: PinholeCamera, count: int,
                     pose_cfg: PoseDistributionConfig = PoseDistributionConfig(),
                     occl_cfg: OcclusionConfig = OcclusionConfig(),
                     rng_seed: int = 0, out_dir: str = "dataset",
                     background: str = "gradient",
                     augment: AugmentConfig = AugmentConfig()) -> DatasetManifest:
    """Render an annotated synthetic dataset and write it to out_dir.

    Every record derives its own PCG64 seed from (rng_seed, index), so
    records are independent and the whole dataset is byte-reproducible.
    Returns the manifest, which is also written as out_dir/manifest.json.
    """
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for i in range(count):
        rec_seed = int(np.random.SeedSequence([rng_seed, i]).generate_state(1, np.uint64)[0])
        rng = np.random.Generator(np.random.PCG64(rec_seed))
        pose = _sample_pose(rng, pose_cfg)
        out, _ = _render_record(mesh, cam, pose, occl_cfg, background, rng)
        rgb = adjust_brightness_contrast(
            out.rgb,
            brightness=rng.uniform(-augment.brightness, augment.brightness),
            contrast=rng.uniform(1.0 - augment.contrast, 1.0 + augment.contrast))
        image_path = f"img_{i:05d}.ppm"
        depth_path = f"depth_{i:05d}.f32"
        write_ppm(rgb, os.path.join(out_dir, image_path))
        write_depth(out.depth, os.path.join(out_dir, depth_path))
        records.append(DatasetRecord(image_path, depth_path, cam, pose,
                                     out.visib_fraction, rec_seed, out_dir))
    manifest = DatasetManifest(records, out_dir)
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest
