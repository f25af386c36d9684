"""Temporal-graph rescoring and uncertainty-aware self-training on synthetic detection videos."""
from .core import Box3D, Detection, Frame, GtBox, SchemaError, Video, load_video, match_to_gt, save_video
from .graphbuild import GraphBuildConfig, VideoGraph, build_graph
from .kernels import BACKEND
from .pipeline import SslConfig, load_benchmark, run_ssl
from .simworld import WorldConfig, make_benchmark

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Box3D",
    "Detection",
    "Frame",
    "GraphBuildConfig",
    "GtBox",
    "SchemaError",
    "SslConfig",
    "Video",
    "VideoGraph",
    "WorldConfig",
    "build_graph",
    "load_benchmark",
    "load_video",
    "make_benchmark",
    "match_to_gt",
    "run_ssl",
    "save_video",
]
