"""Scale-agnostic category-level pose estimation from Laplacian NOCS mixtures."""

from .errors import ConfigError, DegenerateError, DomainError, LmmPoseError, SolverFailure, ValidationError
from .geom import Intrinsics, Pose9D, ScaleAgnosticPose
from .lmm import LaplacianMap, LaplacianMixture, aleatoric_loss, fuse
from .metrics import EvalOptions, InstanceResult, MetricTable, OrientedBox, box_iou_exact, evaluate
from .pose_repr import DetectionBox, SizeCodebook, denormalize_pose, normalize_pose
from .solvers import CorrespondenceSet, PoseEstimate, SolverConfig, ransac_pnp, solve_lmm_pnp, umeyama

__version__ = "0.1.0"
