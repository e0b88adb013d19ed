"""The correspondence field network, its losses, optimizer, and training.

The network maps a pixel-aligned feature vector plus a normalized query depth
to a model-frame 3D point and a signed distance. Hidden layers use a leaky
ramp activation and receive the raw input concatenated onto their input
(skip connections); the output layer applies tanh, so predictions are
inherently bounded: |y components| < coord_scale and |s| < clamp_mm.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError, TrainingDivergedError
from .features import PatchFeatureProvider
from .geometry import CorrespondenceSet, PinholeCamera, Pose, project
from .mesh import TriangleMesh, signed_distance, signed_distance_along_ray
from .sampling import QueryBatch, SamplingConfig, sample_training_points

LEAKY_SLOPE = 0.01
DESK_HIDDEN_LAYERS = (256, 128, 64, 32)
PAPER_HIDDEN_LAYERS = (1024, 512, 256, 128)

WEIGHTS_MAGIC = b"NCF1"

# Stream ids for deriving per-purpose PCG64 seeds from the root seed.
_STREAM_INIT = 0
_STREAM_SAMPLES = 1
_STREAM_EPOCH = 2


class EmptyClampRegionWarning(RuntimeWarning):
    """No training point fell within the clamp distance of the surface."""


@dataclass(frozen=True)
class LossConfig:
    """Loss weights: total = coord term + balance_weight * sdf term."""

    balance_weight: float = 1.0
    clamp_mm: float = 5.0
    huber_mm: float = 10.0


@dataclass(frozen=True)
class FieldConfig:
    patch_size: int = 8
    patch_stride: float = 2.0
    hidden_layers: tuple = DESK_HIDDEN_LAYERS
    coord_margin: float = 1.1
    dtype: str = "float32"


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 60
    learning_rate: float = 1e-4
    batch_images: int = 4
    decay: float = 0.99
    epsilon: float = 1e-8
    seed: int = 0
    resample_each_epoch: bool = False
    cache_features: bool = True


def derive_seed(root_seed: int, stream: int, *indices) -> np.random.SeedSequence:
    """Deterministic per-purpose seed derivation from one root seed."""
    return np.random.SeedSequence([int(root_seed), int(stream), *map(int, indices)])


class FieldNetwork:
    """Fully-connected field network with input skip connections."""

    def __init__(self, weights, biases, coord_scale, clamp_mm, z_mid, z_half):
        if len(weights) != len(biases) or len(weights) < 2:
            raise DataError("need matching weights/biases for >= 2 layers")
        self.weights = [np.ascontiguousarray(w) for w in weights]
        self.biases = [np.ascontiguousarray(b) for b in biases]
        self.coord_scale = float(coord_scale)
        self.clamp_mm = float(clamp_mm)
        self.z_mid = float(z_mid)
        self.z_half = float(z_half)
        self.dtype = self.weights[0].dtype
        d = self.input_dim
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise DataError(f"layer {i}: bias shape {b.shape} != rows {w.shape[0]}")
            if i == 0:
                expect = d
            elif i < len(self.weights) - 1:
                expect = self.weights[i - 1].shape[0] + d
            else:
                expect = self.weights[i - 1].shape[0]
            if w.shape[1] != expect:
                raise DataError(
                    f"layer {i}: input dim {w.shape[1]} inconsistent with "
                    f"skip-concatenation chain (expected {expect})")
        if self.weights[-1].shape[0] != 4:
            raise DataError("output layer must have 4 rows (3 coords + sdf)")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def feature_length(self) -> int:
        return self.input_dim - 1

    @classmethod
    def initialize(cls, feature_length, hidden_layers=DESK_HIDDEN_LAYERS,
                   coord_scale=100.0, clamp_mm=5.0, z_mid=1000.0, z_half=200.0,
                   seed=0, dtype=np.float32) -> "FieldNetwork":
        """Fresh network with uniform +-sqrt(6 / (fan_in + fan_out)) weights."""
        rng = np.random.Generator(np.random.PCG64(seed))
        d = feature_length + 1
        dims = []
        prev = d
        for i, h in enumerate(hidden_layers):
            dims.append((h, prev if i == 0 else prev + d))
            prev = h
        dims.append((4, prev))
        weights, biases = [], []
        for rows, cols in dims:
            limit = np.sqrt(6.0 / (rows + cols))
            weights.append(rng.uniform(-limit, limit, size=(rows, cols)).astype(dtype))
            biases.append(np.zeros(rows, dtype=dtype))
        return cls(weights, biases, coord_scale, clamp_mm, z_mid, z_half)

    def copy(self) -> "FieldNetwork":
        return FieldNetwork([w.copy() for w in self.weights],
                            [b.copy() for b in self.biases],
                            self.coord_scale, self.clamp_mm, self.z_mid, self.z_half)

    def normalize_depth(self, z):
        return (np.asarray(z, dtype=np.float64) - self.z_mid) / self.z_half

    def _stack_input(self, features, z_norm):
        f = np.asarray(features)
        z = np.asarray(z_norm).reshape(-1, 1)
        if f.shape[1] != self.feature_length:
            raise DataError(f"feature length {f.shape[1]} != expected {self.feature_length}")
        return np.concatenate([f, z], axis=1).astype(self.dtype, copy=False)

    def _forward(self, x, keep_cache=False):
        slope = self.dtype.type(LEAKY_SLOPE)
        one = self.dtype.type(1.0 - LEAKY_SLOPE)
        cache = []
        h = None
        n_hidden = len(self.weights) - 1
        for i in range(n_hidden):
            inp = x if i == 0 else np.concatenate([h, x], axis=1)
            pre = inp @ self.weights[i].T + self.biases[i]
            # h = pre where positive, slope * pre otherwise, as one multiplier
            # that the backward pass reuses as the activation derivative
            mult = (pre > 0) * one + slope
            h = pre * mult
            if keep_cache:
                cache.append((inp, mult))
        out = np.tanh(h @ self.weights[-1].T + self.biases[-1])
        if keep_cache:
            cache.append((h, out))
        return out, cache

    def forward(self, features, z_norm):
        """Evaluate the field: returns (y, s) with y (N, 3) mm and s (N,) mm."""
        out, _ = self._forward(self._stack_input(features, z_norm))
        y = out[:, :3].astype(np.float64) * self.coord_scale
        s = out[:, 3].astype(np.float64) * self.clamp_mm
        return y, s

    def forward_cached(self, features, z_norm):
        x = self._stack_input(features, z_norm)
        out, cache = self._forward(x, keep_cache=True)
        y = out[:, :3].astype(np.float64) * self.coord_scale
        s = out[:, 3].astype(np.float64) * self.clamp_mm
        return y, s, cache

    def backward(self, cache, d_y, d_s):
        """Backpropagate gradients of a scalar loss through the network.

        d_y and d_s are gradients with respect to the denormalized outputs.
        Returns per-layer (dW, db) pairs matching self.weights/biases.
        """
        n_hidden = len(self.weights) - 1
        h_last, out = cache[-1]
        d_out = np.concatenate(
            [np.asarray(d_y) * self.coord_scale,
             (np.asarray(d_s) * self.clamp_mm)[:, None]], axis=1).astype(self.dtype)
        d_pre = d_out * (1.0 - out * out)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        grads_w[-1] = d_pre.T @ h_last
        grads_b[-1] = d_pre.sum(axis=0)
        d_h = d_pre @ self.weights[-1]
        for i in range(n_hidden - 1, -1, -1):
            inp, mult = cache[i]
            d_pre = d_h * mult
            grads_w[i] = d_pre.T @ inp
            grads_b[i] = d_pre.sum(axis=0)
            if i > 0:
                h_dim = self.weights[i - 1].shape[0]
                d_h = (d_pre @ self.weights[i])[:, :h_dim]
        return list(zip(grads_w, grads_b))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    total: float
    loss_y: float
    loss_s: float
    grads: list
    sym_index: int


def _huber(d, c):
    return np.where(d <= c, 0.5 * d * d, c * (d - 0.5 * c))


def loss_and_grad(net: FieldNetwork, features, z_norm, batch: QueryBatch,
                  gt_pose: Pose, symmetries, cfg: LossConfig) -> LossBreakdown:
    """Joint loss over one image's query batch, with analytic gradients.

    The coordinate term is the Huber loss between pose-mapped predictions and
    the query points, averaged over the full batch but restricted to points
    whose ground-truth signed distance lies within the clamp; it takes the
    minimum over the symmetry orbit of the ground-truth pose, and gradients
    flow through the minimizing pose only. The sdf term is the mean absolute
    difference of clamp-limited signed distances.
    """
    if batch.gt_sdf is None:
        raise DataError("training batch must carry ground-truth signed distances")
    y_pred, s_pred, cache = net.forward_cached(features, z_norm)
    n = len(batch)
    delta = cfg.clamp_mm

    loss_y, d_y, sym_index = _coord_grad_terms(
        y_pred, batch.points, batch.gt_sdf, gt_pose, symmetries, cfg)

    psi_c = np.clip(batch.gt_sdf, -delta, delta)
    diff = psi_c - s_pred
    loss_s = float(np.abs(diff).mean())
    d_s = cfg.balance_weight * (-np.sign(diff)) / n
    d_s = d_s * (np.abs(s_pred) < delta)  # clamp subgradient (0 at/past the edge)

    grads = net.backward(cache, d_y, d_s)
    total = loss_y + cfg.balance_weight * loss_s
    return LossBreakdown(total, loss_y, loss_s, grads, sym_index)


def _coord_grad_terms(y_pred, x, gt_sdf, gt_pose, symmetries, cfg):
    """Shared inner math of the coordinate loss: value, upstream grad."""
    n = len(x)
    mask = np.abs(gt_sdf) < cfg.clamp_mm
    d_y = np.zeros_like(y_pred)
    if not mask.any():
        warnings.warn("no training points within the clamp distance; "
                      "coordinate loss contributes 0", EmptyClampRegionWarning)
        return 0.0, d_y, 0
    ym = y_pred[mask]
    xm = x[mask]
    best = None
    for j, pose in enumerate([gt_pose.compose(s) for s in symmetries]):
        r = ym @ pose.R.T + pose.t - xm
        d = np.linalg.norm(r, axis=1)
        value = float(_huber(d, cfg.huber_mm).sum() / n)
        if best is None or value < best[0]:
            best = (value, j, pose, r, d)
    loss_y, sym_index, pose, r, d = best
    factor = np.where(d <= cfg.huber_mm, 1.0, cfg.huber_mm / np.maximum(d, 1e-300))
    d_y[mask] = (r * factor[:, None]) @ pose.R / n
    return loss_y, d_y, sym_index


def batch_loss_and_grad(net: FieldNetwork, items, symmetries, cfg: LossConfig):
    """Losses and gradients for several images in one fused pass.

    items is a sequence of (features, z_norm, batch, gt_pose). Equivalent to
    averaging per-image loss_and_grad results, but runs a single forward and
    backward over the concatenated points, which is considerably faster.
    Returns (per_image_losses, grads) where grads are already averaged.
    """
    feats = np.concatenate([it[0] for it in items])
    z_norm = np.concatenate([np.asarray(it[1]).reshape(-1) for it in items])
    y_pred, s_pred, cache = net.forward_cached(feats, z_norm)

    d_y = np.zeros_like(y_pred)
    d_s = np.zeros_like(s_pred)
    losses = []
    start = 0
    inv_b = 1.0 / len(items)
    for _, _, batch, gt_pose in items:
        stop = start + len(batch)
        seg = slice(start, stop)
        n = len(batch)
        loss_y, d_y_seg, _ = _coord_grad_terms(
            y_pred[seg], batch.points, batch.gt_sdf, gt_pose, symmetries, cfg)
        d_y[seg] = d_y_seg * inv_b

        psi_c = np.clip(batch.gt_sdf, -cfg.clamp_mm, cfg.clamp_mm)
        diff = psi_c - s_pred[seg]
        loss_s = float(np.abs(diff).mean())
        d_s[seg] = (cfg.balance_weight * (-np.sign(diff)) / n
                    * (np.abs(s_pred[seg]) < cfg.clamp_mm) * inv_b)
        losses.append((loss_y, loss_s))
        start = stop
    grads = net.backward(cache, d_y, d_s)
    return losses, grads


# ---------------------------------------------------------------------------
# RMSProp
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Per-parameter running mean-square accumulators plus hyperparameters."""

    mean_square: list
    learning_rate: float = 1e-4
    decay: float = 0.99
    epsilon: float = 1e-8

    @classmethod
    def for_network(cls, net: FieldNetwork, learning_rate=1e-4, decay=0.99,
                    epsilon=1e-8) -> "OptimizerState":
        acc = [(np.zeros_like(w), np.zeros_like(b))
               for w, b in zip(net.weights, net.biases)]
        return cls(acc, learning_rate, decay, epsilon)


def rmsprop_step(net: FieldNetwork, grads, state: OptimizerState):
    """One RMSProp update: v <- rho v + (1 - rho) g^2; p <- p - lr g / sqrt(v + eps).

    Updates the network and state in place and returns them. A non-finite
    gradient aborts the step before any parameter is touched.
    """
    for gw, gb in grads:
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericalError("aborting optimizer step: non-finite gradient")
    rho = state.decay
    lr = state.learning_rate
    eps = state.epsilon
    for (w, b), (gw, gb), (vw, vb) in zip(zip(net.weights, net.biases), grads,
                                          state.mean_square):
        vw *= rho
        vw += (1.0 - rho) * gw * gw
        vb *= rho
        vb += (1.0 - rho) * gb * gb
        w -= lr * gw / np.sqrt(vw + eps)
        b -= lr * gb / np.sqrt(vb + eps)
    return net, state


# ---------------------------------------------------------------------------
# Field evaluation front-ends
# ---------------------------------------------------------------------------

class FieldModel:
    """A trained network bundled with its feature provider."""

    def __init__(self, network: FieldNetwork, provider: PatchFeatureProvider):
        if network.feature_length != provider.feature_length:
            raise DataError("network input does not match provider feature length")
        self.network = network
        self.provider = provider

    def evaluate(self, image, cam: PinholeCamera, points):
        uv = project(points, cam)
        feats = self.provider.features(image, uv)
        z_norm = self.network.normalize_depth(np.asarray(points)[:, 2])
        return self.network.forward(feats, z_norm)


class OracleField:
    """Ground-truth field: exact object coordinates and signed distances.

    Debugging and validation aid; it ignores the image entirely and saturates
    the signed distance at the clamp like the network's tanh output would.
    """

    def __init__(self, mesh: TriangleMesh, pose: Pose, clamp_mm=5.0, mode="closest"):
        self.mesh = mesh
        self.pose = pose
        self.clamp_mm = float(clamp_mm)
        self.mode = mode

    def evaluate(self, image, cam: PinholeCamera, points):
        ybar = self.pose.invert().apply(points)
        if self.mode == "closest":
            psi = signed_distance(ybar, self.mesh)
        elif self.mode == "ray":
            psi = signed_distance_along_ray(points, self.pose, cam, self.mesh)
        else:
            raise DataError(f"unknown sdf mode {self.mode!r}")
        return ybar, np.clip(psi, -self.clamp_mm, self.clamp_mm)


def extract_correspondences(field, image, cam: PinholeCamera, grid: QueryBatch,
                            clamp_mm=5.0, keep_ratio=0.999,
                            chunk=65536) -> CorrespondenceSet:
    """Evaluate the field on a test grid and keep near-surface predictions.

    Pairs with |s| < keep_ratio * clamp_mm survive (the ratio stays below 1
    because tanh saturation makes |s| approach clamp_mm for far points).
    Grid order is preserved.
    """
    from .errors import NoCorrespondencesError

    pts = grid.points
    xs, ys, ss = [], [], []
    for i in range(0, len(pts), chunk):
        block = pts[i:i + chunk]
        y, s = field.evaluate(image, cam, block)
        keep = np.abs(s) < keep_ratio * clamp_mm
        xs.append(block[keep])
        ys.append(y[keep])
        ss.append(s[keep])
    x = np.concatenate(xs) if xs else np.zeros((0, 3))
    y = np.concatenate(ys) if ys else np.zeros((0, 3))
    s = np.concatenate(ss) if ss else np.zeros(0)
    if len(s) == 0:
        raise NoCorrespondencesError(
            "no near-surface predictions; consider widening the depth range")
    return CorrespondenceSet(x, y, s, clamp_mm)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

class _FeatureCache:
    """Quantized per-image feature cache (uint8 in [-1, 1] steps of 1/127.5).

    Raw-patch features come from 8-bit images, so the quantization is below
    the source resolution; caching them makes epochs after the first cheap.
    """

    def __init__(self, enabled=True):
        self.enabled = enabled
        self._store = {}

    def get(self, key, compute):
        if not self.enabled:
            return compute()
        hit = self._store.get(key)
        if hit is None:
            feats = compute()
            self._store[key] = np.clip(np.rint((feats + 1.0) * 127.5),
                                       0, 255).astype(np.uint8)
            return feats
        return hit.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def train_field(records, mesh: TriangleMesh, symmetries, field_cfg: FieldConfig,
                training_cfg: TrainingConfig, sampling_cfg: SamplingConfig,
                loss_cfg: LossConfig):
    """Train a field network on a dataset of annotated renders.

    records is a sequence with attributes camera, pose, and load_image().
    Returns (FieldModel, log), where log holds one dict per epoch with keys
    epoch, loss_y, loss_s, lr. Deterministic for a fixed seed.
    """
    records = list(records)
    if not records:
        raise DataError("training dataset is empty")
    provider = PatchFeatureProvider(field_cfg.patch_size,
                                    stride=field_cfg.patch_stride)
    z_mid = 0.5 * (sampling_cfg.z_near + sampling_cfg.z_far)
    z_half = 0.5 * (sampling_cfg.z_far - sampling_cfg.z_near)
    coord_scale = field_cfg.coord_margin * float(np.abs(mesh.vertices).max())
    dtype = np.dtype(field_cfg.dtype)
    net = FieldNetwork.initialize(
        provider.feature_length, field_cfg.hidden_layers, coord_scale,
        loss_cfg.clamp_mm, z_mid, z_half,
        seed=derive_seed(training_cfg.seed, _STREAM_INIT), dtype=dtype)
    state = OptimizerState.for_network(net, training_cfg.learning_rate,
                                       training_cfg.decay, training_cfg.epsilon)

    images = {}
    samples = {}
    # Fresh samples each epoch imply fresh features; caching only pays off
    # when the per-image batches are reused.
    feat_cache = _FeatureCache(training_cfg.cache_features
                               and not training_cfg.resample_each_epoch)

    def image_of(i):
        if i not in images:
            images[i] = np.asarray(records[i].load_image(), dtype=np.float32)
        return images[i]

    def batch_of(i, epoch):
        key = (i, epoch if training_cfg.resample_each_epoch else 0)
        if key not in samples:
            if training_cfg.resample_each_epoch:
                samples.clear()  # no reuse across epochs, keep memory flat
            seed = derive_seed(training_cfg.seed, _STREAM_SAMPLES, *key)
            samples[key] = sample_training_points(mesh, records[i].pose,
                                                  records[i].camera, seed,
                                                  sampling_cfg)
        return key, samples[key]

    log = []
    checkpoint = net.copy()
    try:
        for epoch in range(training_cfg.epochs):
            order_rng = np.random.Generator(np.random.PCG64(
                derive_seed(training_cfg.seed, _STREAM_EPOCH, epoch)))
            order = order_rng.permutation(len(records))
            sum_y = 0.0
            sum_s = 0.0
            for start in range(0, len(order), training_cfg.batch_images):
                group = order[start:start + training_cfg.batch_images]
                items = []
                for i in group:
                    i = int(i)
                    key, batch = batch_of(i, epoch)
                    uv = project(batch.points, records[i].camera)
                    feats = feat_cache.get(key, lambda:
                                           provider.features(image_of(i), uv))
                    z_norm = net.normalize_depth(batch.points[:, 2])
                    items.append((feats, z_norm, batch, records[i].pose))
                losses, grads = batch_loss_and_grad(net, items, symmetries,
                                                    loss_cfg)
                for loss_y, loss_s in losses:
                    if not (np.isfinite(loss_y) and np.isfinite(loss_s)):
                        raise TrainingDivergedError(
                            f"loss diverged at epoch {epoch}",
                            network=checkpoint, log=log)
                    sum_y += loss_y
                    sum_s += loss_s
                rmsprop_step(net, grads, state)
            log.append({"epoch": epoch,
                        "loss_y": sum_y / len(records),
                        "loss_s": sum_s / len(records),
                        "lr": training_cfg.learning_rate})
            checkpoint = net.copy()
    except NumericalError as exc:
        if isinstance(exc, TrainingDivergedError):
            raise
        raise TrainingDivergedError(str(exc), network=checkpoint, log=log) from exc
    return FieldModel(net, provider), log


# ---------------------------------------------------------------------------
# Weight file format
# ---------------------------------------------------------------------------

def save_model(model: FieldModel, path):
    """Write the binary little-endian weight file.

    Layout: magic "NCF1"; u32 layer count; per layer u32 rows, u32 cols,
    f32 row-major weights, f32 biases; then the provider block: u32 patch
    size, u32 constant count, f32 constants (feature scale, feature offset,
    coord scale, clamp, depth mid, depth half-range, patch stride).
    """
    net = model.network
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", len(net.weights)))
        for w, b in zip(net.weights, net.biases):
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
        consts = [model.provider.scale, model.provider.offset, net.coord_scale,
                  net.clamp_mm, net.z_mid, net.z_half, model.provider.stride]
        fh.write(struct.pack("<II", model.provider.patch_size, len(consts)))
        fh.write(np.asarray(consts, dtype="<f4").tobytes())


def load_model(path) -> FieldModel:
    """Read a weight file written by save_model."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != WEIGHTS_MAGIC:
        raise DataError(f"{path}: bad magic, not a field weight file")
    off = 4

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    (n_layers,) = take("<I")
    weights, biases = [], []
    for _ in range(n_layers):
        rows, cols = take("<II")
        w = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=off)
        off += 4 * rows * cols
        b = np.frombuffer(blob, dtype="<f4", count=rows, offset=off)
        off += 4 * rows
        weights.append(w.reshape(rows, cols).copy())
        biases.append(b.copy())
    patch_size, n_consts = take("<II")
    consts = np.frombuffer(blob, dtype="<f4", count=n_consts, offset=off)
    if n_consts not in (6, 7):
        raise DataError(f"{path}: expected 6 or 7 provider constants, got {n_consts}")
    scale, offset_c, coord_scale, clamp_mm, z_mid, z_half = (float(c) for c in consts[:6])
    stride = float(consts[6]) if n_consts == 7 else 1.0
    net = FieldNetwork(weights, biases, coord_scale, clamp_mm, z_mid, z_half)
    provider = PatchFeatureProvider(int(patch_size), scale, offset_c, stride)
    return FieldModel(net, provider)
