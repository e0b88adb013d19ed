"""Implicit correspondence-field 6DoF object pose estimation.

Train a fully-connected field that maps pixel-aligned features and query
depths to object coordinates and signed distances, link frustum query points
to model points, fit poses robustly, and score them with surface,
projection, and visible-surface error metrics on self-generated synthetic
data.
"""

from .errors import (BehindCameraError, CorrfieldError, DataError,
                     DegenerateConfigurationError, InsufficientCorrespondencesError,
                     NoCorrespondencesError, NoPoseFoundError, NotWatertightError,
                     NumericalError, ObjectInvisibleError, SamplingError,
                     TrainingDivergedError)
from .geometry import (CorrespondenceSet, PinholeCamera, Pose, backproject,
                       kabsch, project, ransac_fit, remap_to_reference)
from .mesh import (SymmetrySet, TriangleMesh, diameter, discretize_symmetry,
                   load_ply, make_box, make_cylinder, make_house, make_icosphere,
                   sample_surface, save_ply, signed_distance,
                   signed_distance_along_ray)
from .marching import marching_cubes
from .sampling import QueryBatch, SamplingConfig, sample_test_grid, sample_training_points
from .features import PatchFeatureProvider
from .field import (FieldConfig, FieldModel, FieldNetwork, LossConfig, OptimizerState,
                    OracleField, TrainingConfig, extract_correspondences, load_model,
                    loss_and_grad, rmsprop_step, save_model, train_field)
from .synth import (DatasetManifest, DatasetRecord, OcclusionConfig,
                    PoseDistributionConfig, RenderOutput, generate_dataset,
                    rasterize, read_ppm, write_ppm)
from .metrics import (EvalConfig, PoseErrorReport, average_recall,
                      correspondence_inlier_stats, evaluate_pose,
                      inlier_fraction_by_visibility, mspd, mssd, vsd)
from .config import RunConfig, load_config
from .estimator import FieldPoseEstimator, estimate_pose, resolve_mesh

__version__ = "0.1.0"
