"""Run configuration: one tree of defaults, loadable from TOML or JSON.

Stock defaults reproduce the published operating point: clamp 5 mm, inlier
threshold 20 mm, 200 fitting iterations, 10 mm test sampling step, unit loss
balance, learning rate 1e-4, batch of 4 images. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field as dc_field

from .errors import DataError
from .features import PatchFeatureProvider  # noqa: F401  (re-exported surface)
from .field import FieldConfig, LossConfig, TrainingConfig
from .geometry import PinholeCamera
from .metrics import EvalConfig
from .sampling import SamplingConfig
from .synth import AugmentConfig, OcclusionConfig, PoseDistributionConfig

DEFAULT_CAMERA = PinholeCamera(fx=450.0, fy=450.0, cx=160.0, cy=120.0,
                               width=320, height=240)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    inlier_threshold_mm: float = 20.0
    keep_ratio: float = 0.999
    grid_step_mm: float = 10.0


@dataclass(frozen=True)
class SymmetryConfig:
    """Either a path to a symmetry JSON file, an inline axis/steps spec, or none."""

    path: str = ""
    axis: tuple = ()
    steps: int = 0


@dataclass(frozen=True)
class OutputConfig:
    data_dir: str = "dataset"
    weights: str = "field.ncf"
    estimates_dir: str = "estimates"
    report: str = "report.json"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    mesh: str = "builtin:house"
    camera: PinholeCamera = DEFAULT_CAMERA
    symmetry: SymmetryConfig = SymmetryConfig()
    sampling: SamplingConfig = SamplingConfig()
    field: FieldConfig = FieldConfig()
    training: TrainingConfig = TrainingConfig()
    loss: LossConfig = LossConfig()
    ransac: RansacConfig = RansacConfig()
    eval: EvalConfig = EvalConfig()
    pose_distribution: PoseDistributionConfig = PoseDistributionConfig()
    occlusion: OcclusionConfig = OcclusionConfig()
    augment: AugmentConfig = AugmentConfig()
    background: str = "gradient"
    output: OutputConfig = OutputConfig()


_SECTION_TYPES = {
    "camera": PinholeCamera,
    "symmetry": SymmetryConfig,
    "sampling": SamplingConfig,
    "field": FieldConfig,
    "training": TrainingConfig,
    "loss": LossConfig,
    "ransac": RansacConfig,
    "eval": EvalConfig,
    "pose_distribution": PoseDistributionConfig,
    "occlusion": OcclusionConfig,
    "augment": AugmentConfig,
    "output": OutputConfig,
}


def _build_section(cls, payload, where):
    if not isinstance(payload, dict):
        raise DataError(f"config section {where!r} must be a table/object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - names
    if unknown:
        raise DataError(f"unknown config key(s) in {where!r}: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in payload:
            value = payload[f.name]
            if isinstance(value, list):
                value = tuple(value)
            kwargs[f.name] = value
    return cls(**kwargs)


def config_from_dict(payload: dict) -> RunConfig:
    """Build a RunConfig from a parsed TOML/JSON tree, rejecting unknown keys."""
    if not isinstance(payload, dict):
        raise DataError("config root must be a table/object")
    top_names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(payload) - top_names
    if unknown:
        raise DataError(f"unknown top-level config key(s): {sorted(unknown)}")
    kwargs = {}
    for name, value in payload.items():
        if name in _SECTION_TYPES:
            kwargs[name] = _build_section(_SECTION_TYPES[name], value, name)
        else:
            kwargs[name] = value
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    """Load a .toml or .json run configuration."""
    text_path = str(path)
    try:
        if text_path.endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as fh:
                payload = tomllib.load(fh)
        elif text_path.endswith(".json"):
            with open(path) as fh:
                payload = json.load(fh)
        else:
            raise DataError(f"{path}: config must be a .toml or .json file")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(payload)


def replace_section(config: RunConfig, section: str, **updates) -> RunConfig:
    """Functional update of one config section (or top-level keys)."""
    if section == "":
        return dataclasses.replace(config, **updates)
    current = getattr(config, section)
    return dataclasses.replace(config, **{section: dataclasses.replace(current, **updates)})
