"""Curve skeletons for 3D point clouds by generalized-cylinder decomposition."""

from .cloud import PointCloud, load_cloud, write_cloud, estimate_normals
from .pipeline import PipelineConfig, run_pipeline
from .register import RegConfig, register
from .synth import GCSpec, generate_gc

__version__ = "0.1.0"

__all__ = [
    "PointCloud",
    "load_cloud",
    "write_cloud",
    "estimate_normals",
    "PipelineConfig",
    "run_pipeline",
    "RegConfig",
    "register",
    "GCSpec",
    "generate_gc",
    "__version__",
]
