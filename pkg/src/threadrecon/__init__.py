"""3D B-spline centerline reconstruction of thin curvilinear structures
from rectified stereo image pairs and segmentation masks."""

from .bspline import FitResult, SplineCurve, fit_least_squares
from .errors import (
    ConfigurationError,
    FitError,
    GenerationError,
    ReconstructionError,
    ThreadReconError,
)
from .keypoints import ClusterParams, Cluster, KeypointChain, build_chain
from .metrics import MetricsReport, evaluate_reconstruction
from .mvs import DepthCorridor, FitParams, MVSSolution, solve_mvs, to_camera_frame
from .pipeline import (
    PipelineConfig,
    ReconstructionResult,
    RunOutcome,
    reconstruct_scene,
    run_evaluate,
    run_generate,
    run_reconstruct,
)
from .stereo import DepthField, MatchParams, SegmentedImage, StereoRig, depth_map, lift
from .synthetic import GenerationConfig, SyntheticScene, generate_scene

__version__ = "0.1.0"

__all__ = [
    "Cluster",
    "ClusterParams",
    "ConfigurationError",
    "DepthCorridor",
    "DepthField",
    "FitError",
    "FitParams",
    "FitResult",
    "GenerationConfig",
    "GenerationError",
    "KeypointChain",
    "MVSSolution",
    "MatchParams",
    "MetricsReport",
    "PipelineConfig",
    "ReconstructionError",
    "ReconstructionResult",
    "RunOutcome",
    "SegmentedImage",
    "SplineCurve",
    "StereoRig",
    "SyntheticScene",
    "ThreadReconError",
    "build_chain",
    "depth_map",
    "evaluate_reconstruction",
    "fit_least_squares",
    "generate_scene",
    "lift",
    "reconstruct_scene",
    "run_evaluate",
    "run_generate",
    "run_reconstruct",
    "solve_mvs",
    "to_camera_frame",
    "__version__",
]
