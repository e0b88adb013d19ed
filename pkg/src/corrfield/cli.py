"""Command-line entry point.

Subcommands cover the whole workflow: gen-data renders an annotated
synthetic dataset, train fits the field network, estimate recovers poses,
eval scores them, and reconstruct extracts a colored iso-surface mesh for
inspection. Every flag mirrors a config key; values from --config files are
applied first and explicit flags win. Exit codes: 0 ok, 1 usage, 2 data
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import config as cfgmod
from .config import RunConfig, load_config, replace_section
from .errors import DataError, NumericalError
from .estimator import estimate_pose, load_correspondence_dump, resolve_mesh
from .field import LossConfig, OracleField, load_model, save_model, train_field
from .geometry import PinholeCamera, Pose
from .marching import marching_cubes
from .mesh import SymmetrySet, diameter, save_ply
from .metrics import (EvalConfig, PoseErrorReport, average_recall,
                      correspondence_inlier_stats, evaluate_pose,
                      inlier_fraction_by_visibility)
from .synth import (DatasetManifest, OcclusionConfig, generate_dataset, read_ppm)


class _UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageExit(message)


# flag name -> (config section ("" = top level), key, type spec)
# type spec: a callable, or ("pair", float) for 2-tuples, ("list", int) for
# variadic tuples, or bool for store-true/false pairs.
_D = RunConfig()
_FLAGS = {
    "gen-data": [
        ("--mesh", "", "mesh", str, "object model: PLY path or builtin:<name>"),
        ("--seed", "", "seed", int, "root random seed"),
        ("--background", "", "background", str, "background mode: solid/gradient/noise/black"),
        ("--fx", "camera", "fx", float, "focal length x (px)"),
        ("--fy", "camera", "fy", float, "focal length y (px)"),
        ("--cx", "camera", "cx", float, "principal point x (px)"),
        ("--cy", "camera", "cy", float, "principal point y (px)"),
        ("--width", "camera", "width", int, "image width (px)"),
        ("--height", "camera", "height", int, "image height (px)"),
        ("--x-range", "pose_distribution", "x_range", ("pair", float), "translation x range (mm)"),
        ("--y-range", "pose_distribution", "y_range", ("pair", float), "translation y range (mm)"),
        ("--z-range", "pose_distribution", "z_range", ("pair", float), "translation z range (mm)"),
        ("--occlusion", "occlusion", "mode", str, "occlusion mode: none or box"),
        ("--visibility", "occlusion", "target_visibility", ("pair", float),
         "target visible-fraction range for box occlusion"),
        ("--occluder-tries", "occlusion", "tries", int, "occluder placement attempts"),
        ("--brightness", "augment", "brightness", float, "brightness jitter amplitude"),
        ("--contrast", "augment", "contrast", float, "contrast jitter amplitude"),
    ],
    "train": [
        ("--mesh", "", "mesh", str, "object model: PLY path or builtin:<name>"),
        ("--seed", "training", "seed", int, "training seed (root of all randomness)"),
        ("--epochs", "training", "epochs", int, "training epochs"),
        ("--lr", "training", "learning_rate", float, "learning rate"),
        ("--batch-images", "training", "batch_images", int, "images per optimizer step"),
        ("--decay", "training", "decay", float, "squared-gradient decay rho"),
        ("--epsilon", "training", "epsilon", float, "optimizer epsilon"),
        ("--resample-each-epoch", "training", "resample_each_epoch", bool,
         "draw fresh query points every epoch"),
        ("--balance-weight", "loss", "balance_weight", float, "weight of the sdf loss term"),
        ("--clamp", "loss", "clamp_mm", float, "sdf clamp distance (mm)"),
        ("--huber", "loss", "huber_mm", float, "Huber transition (mm)"),
        ("--patch-size", "field", "patch_size", int, "feature patch size (px)"),
        ("--patch-stride", "field", "patch_stride", float, "patch tap spacing (px)"),
        ("--hidden", "field", "hidden_layers", ("list", int), "hidden layer widths"),
        ("--coord-margin", "field", "coord_margin", float, "output scale margin over model half-extent"),
        ("--dtype", "field", "dtype", str, "network dtype: float32 or float64"),
        ("--pool-scale", "sampling", "pool_scale", float, "scale on sampling pool sizes"),
        ("--surface-sigma", "sampling", "surface_sigma_mm", float, "near-surface noise sigma (mm)"),
        ("--z-near", "sampling", "z_near", float, "frustum near plane (mm)"),
        ("--z-far", "sampling", "z_far", float, "frustum far plane (mm)"),
        ("--sdf-mode", "sampling", "sdf_mode", str, "sdf target: closest or ray"),
    ],
    "estimate": [
        ("--mesh", "", "mesh", str, "object model (oracle mode only)"),
        ("--seed", "", "seed", int, "fitting seed"),
        ("--grid-step", "ransac", "grid_step_mm", float, "test grid step (mm)"),
        ("--iters", "ransac", "iterations", int, "fitting iterations"),
        ("--tau3d", "ransac", "inlier_threshold_mm", float, "inlier threshold (mm)"),
        ("--keep-ratio", "ransac", "keep_ratio", float, "fraction of the clamp kept as |s| bound"),
        ("--clamp", "loss", "clamp_mm", float, "sdf clamp distance (mm)"),
        ("--z-near", "sampling", "z_near", float, "frustum near plane (mm)"),
        ("--z-far", "sampling", "z_far", float, "frustum far plane (mm)"),
        ("--sdf-mode", "sampling", "sdf_mode", str, "oracle sdf variant: closest or ray"),
    ],
    "eval": [
        ("--mesh", "", "mesh", str, "object model: PLY path or builtin:<name>"),
        ("--delta-v", "eval", "visibility_delta_mm", float, "visibility tolerance (mm)"),
        ("--visibility-bins", "eval", "visibility_bins", int, "bins for the inlier curves"),
        ("--tau3d", "ransac", "inlier_threshold_mm", float, "inlier threshold (mm)"),
        ("--clamp", "loss", "clamp_mm", float, "near-surface clamp (mm)"),
    ],
    "reconstruct": [
        ("--grid-step", "ransac", "grid_step_mm", float, "reconstruction grid step (mm)"),
        ("--z-near", "sampling", "z_near", float, "frustum near plane (mm)"),
        ("--z-far", "sampling", "z_far", float, "frustum far plane (mm)"),
        ("--clamp", "loss", "clamp_mm", float, "sdf clamp distance (mm)"),
    ],
}


def _default_of(section, key):
    holder = _D if section == "" else getattr(_D, section)
    return getattr(holder, key)


def _add_config_flags(parser, command):
    for flag, section, key, spec, help_text in _FLAGS[command]:
        default = _default_of(section, key)
        hint = f"{help_text} (default: {default})"
        dest = f"cfg__{section}__{key}"
        metavar = key.upper()
        if spec is bool:
            parser.add_argument(flag, dest=dest, action="store_true",
                                default=argparse.SUPPRESS, help=hint)
        elif isinstance(spec, tuple) and spec[0] == "pair":
            parser.add_argument(flag, dest=dest, nargs=2, type=spec[1],
                                default=argparse.SUPPRESS, help=hint,
                                metavar=("LO", "HI"))
        elif isinstance(spec, tuple) and spec[0] == "list":
            parser.add_argument(flag, dest=dest, nargs="+", type=spec[1],
                                default=argparse.SUPPRESS, help=hint,
                                metavar=metavar)
        else:
            parser.add_argument(flag, dest=dest, type=spec,
                                default=argparse.SUPPRESS, help=hint,
                                metavar=metavar)


def _apply_flags(config: RunConfig, args) -> RunConfig:
    for name, value in vars(args).items():
        if not name.startswith("cfg__"):
            continue
        _, section, key = name.split("__", 2)
        if isinstance(value, list):
            value = tuple(value)
        if section == "":
            config = replace_section(config, "", **{key: value})
        else:
            config = replace_section(config, section, **{key: value})
    return config


def _load_base_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return RunConfig()


def _symmetry_from_args(args, config) -> SymmetrySet:
    if getattr(args, "symmetry_json", None):
        with open(args.symmetry_json) as fh:
            return SymmetrySet.from_json(json.load(fh))
    if getattr(args, "symmetry_steps", None):
        axis = getattr(args, "symmetry_axis", None) or (0.0, 0.0, 1.0)
        return SymmetrySet.from_json({"axis": list(axis), "steps": args.symmetry_steps})
    sym = config.symmetry
    if sym.path:
        with open(sym.path) as fh:
            return SymmetrySet.from_json(json.load(fh))
    if sym.steps:
        return SymmetrySet.from_json({"axis": list(sym.axis), "steps": sym.steps})
    return SymmetrySet.identity_only()


def _write_json(payload, path):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_gen_data(args):
    config = _apply_flags(_load_base_config(args), args)
    mesh = resolve_mesh(config.mesh)
    out_dir = args.out or config.output.data_dir
    manifest = generate_dataset(
        mesh, config.camera, args.count, config.pose_distribution,
        config.occlusion, config.seed, out_dir, config.background,
        config.augment)
    print(os.path.join(out_dir, "manifest.json"))
    return 0


def _cmd_train(args):
    config = _apply_flags(_load_base_config(args), args)
    manifest = DatasetManifest.load(args.manifest)
    mesh = resolve_mesh(config.mesh)
    sym = _symmetry_from_args(args, config)
    model, log = train_field(manifest.records, mesh, sym, config.field,
                             config.training, config.sampling, config.loss)
    out = args.out or config.output.weights
    save_model(model, out)
    log_path = args.log or out + ".log.jsonl"
    with open(log_path, "w") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    print(out)
    return 0


def _build_field(args, config):
    if args.oracle_pose:
        mesh = resolve_mesh(config.mesh)
        with open(args.oracle_pose) as fh:
            pose = Pose.from_json(json.load(fh))
        return OracleField(mesh, pose, config.loss.clamp_mm,
                           config.sampling.sdf_mode)
    if not args.weights:
        raise DataError("estimate needs --weights or --oracle-pose")
    return load_model(args.weights)


def _estimate_single(field, image, cam, config, seed, out_path, dump_corr,
                     dump_grid):
    pose, inliers, count = estimate_pose(
        field, image, cam, config.camera, config.ransac.grid_step_mm,
        config.sampling.z_near, config.sampling.z_far, config.loss.clamp_mm,
        config.ransac.keep_ratio, config.ransac.iterations,
        config.ransac.inlier_threshold_mm, seed,
        dump_grid=dump_grid, dump_corr=dump_corr)
    _write_json(pose.to_json(), out_path)
    return inliers, count


def _cmd_estimate(args):
    config = _apply_flags(_load_base_config(args), args)
    field = _build_field(args, config)

    if args.image:
        cam = (PinholeCamera.from_json(json.load(open(args.camera)))
               if args.camera else config.camera)
        out = args.out or "pose.json"
        inliers, count = _estimate_single(
            field, read_ppm(args.image), cam, config, config.seed, out,
            args.dump_corr, args.dump_grid)
        print(f"{out} inliers={inliers}/{count}")
        return 0

    if not args.manifest:
        raise DataError("estimate needs --image or --manifest")
    manifest = DatasetManifest.load(args.manifest)
    out_dir = args.out or config.output.estimates_dir
    os.makedirs(out_dir, exist_ok=True)

    def run(idx_record):
        idx, record = idx_record
        stem = os.path.splitext(os.path.basename(record.image_path))[0]
        dump = (os.path.join(out_dir, stem + ".corr.bin")
                if args.dump_corr else None)
        out_path = os.path.join(out_dir, stem + ".pose.json")
        _estimate_single(field, record.load_image(), record.camera, config,
                         config.seed + idx, out_path, dump, None)
        return out_path

    items = list(enumerate(manifest.records))
    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            for path in pool.map(run, items):
                pass
    else:
        for item in items:
            run(item)
    print(out_dir)
    return 0


def _cmd_eval(args):
    config = _apply_flags(_load_base_config(args), args)
    manifest = DatasetManifest.load(args.manifest)
    mesh = resolve_mesh(config.mesh)
    sym = _symmetry_from_args(args, config)
    diam = diameter(mesh)
    eval_cfg = config.eval

    reports = []
    instances = []
    missing = 0
    corr_items = []
    for record in manifest.records:
        stem = os.path.splitext(os.path.basename(record.image_path))[0]
        pose_path = os.path.join(args.estimates, stem + ".pose.json")
        if not os.path.exists(pose_path):
            rep = PoseErrorReport.failure(eval_cfg, record.visib_fraction)
            missing += 1
            entry_missing = True
        else:
            with open(pose_path) as fh:
                est = Pose.from_json(json.load(fh))
            rep = evaluate_pose(est, record.pose, mesh, sym, record.camera,
                                record.load_depth(), diam, eval_cfg,
                                record.visib_fraction)
            entry_missing = False
        reports.append(rep)
        instances.append({
            "image": record.image_path,
            "missing": entry_missing,
            "visib_fraction": record.visib_fraction,
            "e_mssd": None if entry_missing else rep.e_mssd,
            "e_mspd": None if entry_missing else rep.e_mspd,
            "e_vsd": None if entry_missing else rep.e_vsd,
        })
        corr_path = os.path.join(args.estimates, stem + ".corr.bin")
        if os.path.exists(corr_path):
            corr_items.append((record, corr_path))

    aggregate = average_recall(reports, diam, manifest.records[0].camera.width,
                               eval_cfg)
    aggregate["missing"] = missing
    payload = {"aggregate": aggregate, "instances": instances,
               "diameter_mm": diam}
    out = args.out or config.output.report
    _write_json(payload, out)

    if args.curves_csv and corr_items:
        stats = []
        visibs = []
        for record, corr_path in corr_items:
            corr = load_correspondence_dump(corr_path)
            scene = record.load_depth()
            visible_mask = _visible_target_mask(mesh, record, scene, eval_cfg)
            stats.append(correspondence_inlier_stats(
                corr, record.pose, mesh, record.camera, visible_mask,
                config.ransac.inlier_threshold_mm, config.loss.clamp_mm))
            visibs.append(record.visib_fraction)
        bins = inlier_fraction_by_visibility(stats, visibs,
                                             eval_cfg.visibility_bins)
        with open(args.curves_csv, "w") as fh:
            fh.write("bin_lo,bin_hi,count,all,visible,invisible\n")
            for b in range(len(bins.counts)):
                row = [f"{bins.edges[b]:.2f}", f"{bins.edges[b + 1]:.2f}",
                       str(bins.counts[b])]
                for series in (bins.all_points, bins.visible, bins.invisible):
                    row.append("" if series[b] is None else f"{series[b]:.6f}")
                fh.write(",".join(row) + "\n")

    print(json.dumps(aggregate, sort_keys=True))
    return 0


def _visible_target_mask(mesh, record, scene_depth, eval_cfg):
    """Target pixels visible in the scene: rendered target depth close to the
    recorded scene depth."""
    from .synth import rasterize

    render = rasterize(mesh, record.pose, record.camera, background="black")
    mask = render.mask & (np.abs(render.depth - scene_depth)
                          <= eval_cfg.visibility_delta_mm)
    return mask


def _cmd_reconstruct(args):
    config = _apply_flags(_load_base_config(args), args)
    model = load_model(args.weights)
    cam = (PinholeCamera.from_json(json.load(open(args.camera)))
           if args.camera else config.camera)
    image = read_ppm(args.image)

    step = config.ransac.grid_step_mm
    z_near, z_far = config.sampling.z_near, config.sampling.z_far
    clamp = config.loss.clamp_mm
    x_hi = max(abs((0 - cam.cx) / cam.fx), abs((cam.width - 1 - cam.cx) / cam.fx)) * z_far
    y_hi = max(abs((0 - cam.cy) / cam.fy), abs((cam.height - 1 - cam.cy) / cam.fy)) * z_far
    xs = np.arange(-x_hi, x_hi + step, step)
    ys = np.arange(-y_hi, y_hi + step, step)
    zs = np.arange(z_near, z_far + step, step)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    u = pts[:, 0] * cam.fx / pts[:, 2] + cam.cx
    v = pts[:, 1] * cam.fy / pts[:, 2] + cam.cy
    in_view = (u >= 0) & (u <= cam.width - 1) & (v >= 0) & (v <= cam.height - 1)
    values = np.full(len(pts), clamp)
    chunk = 65536
    idx = np.nonzero(in_view)[0]
    for i in range(0, len(idx), chunk):
        sel = idx[i:i + chunk]
        _, s = model.evaluate(image, cam, pts[sel])
        values[sel] = s
    grid = values.reshape(gx.shape)

    def color_fn(verts):
        y, _ = model.evaluate(image, cam, verts)
        return (y / model.network.coord_scale + 1.0) / 2.0

    mesh = marching_cubes(grid, origin=(xs[0], ys[0], zs[0]), step=step,
                          iso=0.0, color_fn=color_fn)
    save_ply(mesh, args.out)
    print(f"{args.out} vertices={len(mesh.vertices)} faces={len(mesh.faces)}")
    return 0


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="corrfield",
                     description="Implicit correspondence-field 6DoF pose estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render an annotated synthetic dataset",
                       formatter_class=argparse.HelpFormatter)
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--out", help=f"output directory (default: {_D.output.data_dir})")
    p.add_argument("--count", type=int, default=50, help="number of images")
    _add_config_flags(p, "gen-data")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train the field network on a dataset",
                       formatter_class=argparse.HelpFormatter)
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--out", help=f"weights output path (default: {_D.output.weights})")
    p.add_argument("--log", help="JSON-lines training log (default: <out>.log.jsonl)")
    p.add_argument("--symmetry-json", help="symmetry set JSON file")
    p.add_argument("--symmetry-axis", nargs=3, type=float, metavar=("X", "Y", "Z"),
                   help="discretized symmetry axis (default: 0 0 1)")
    p.add_argument("--symmetry-steps", type=int,
                   help="number of discretized symmetry steps")
    _add_config_flags(p, "train")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("estimate", help="estimate poses from images",
                       formatter_class=argparse.HelpFormatter)
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--weights", help="trained weight file")
    p.add_argument("--oracle-pose", help="ground-truth pose JSON: use the exact "
                   "field derived from the model instead of weights (debugging)")
    p.add_argument("--image", help="single input image (PPM)")
    p.add_argument("--camera", help="camera JSON for --image (default: config camera)")
    p.add_argument("--manifest", help="estimate every record of this manifest")
    p.add_argument("--out", help="pose JSON path (single) or output directory (manifest)")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel workers in manifest mode (order-stable)")
    p.add_argument("--dump-corr", nargs="?", const="corr.bin",
                   help="dump kept correspondences (binary; in manifest mode "
                        "one <stem>.corr.bin per image)")
    p.add_argument("--dump-grid", help="dump the query grid as flat f32 triplets")
    _add_config_flags(p, "estimate")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("eval", help="score estimates against a manifest",
                       formatter_class=argparse.HelpFormatter)
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--estimates", required=True, help="directory of <stem>.pose.json files")
    p.add_argument("--out", help=f"report JSON path (default: {_D.output.report})")
    p.add_argument("--symmetry-json", help="symmetry set JSON file")
    p.add_argument("--symmetry-axis", nargs=3, type=float, metavar=("X", "Y", "Z"))
    p.add_argument("--symmetry-steps", type=int)
    p.add_argument("--curves-csv", help="write per-visibility-bin inlier curves "
                                        "(needs .corr.bin dumps next to estimates)")
    _add_config_flags(p, "eval")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("reconstruct", help="marching-cubes mesh of the predicted field",
                       formatter_class=argparse.HelpFormatter)
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--weights", required=True, help="trained weight file")
    p.add_argument("--image", required=True, help="input image (PPM)")
    p.add_argument("--camera", help="camera JSON (default: config camera)")
    p.add_argument("--out", required=True, help="output PLY path")
    _add_config_flags(p, "reconstruct")
    p.set_defaults(func=_cmd_reconstruct)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageExit as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
