"""Sensing-area prediction for a drop-in gamma probe.

Three-branch regressor (Nested ResNet image branch, depth CNN, probe-axis MLP)
trained on synthetic stereo scenes whose ground truth comes from an analytic
ray/heightfield intersection.
"""

__version__ = "0.1.0"

from .geometry import CameraRig, Point2D, Point3D, back_project, disparity_to_depth, error_2d, error_3d, project
from .geometry import ray_surface_intersection
from .axis import AxisSample, extract_axis, sample_axis_points
from .model import ModelConfig, SensingAreaNet, build_model

__all__ = [
    "AxisSample", "CameraRig", "ModelConfig", "Point2D", "Point3D", "SensingAreaNet",
    "back_project", "build_model", "disparity_to_depth", "error_2d", "error_3d", "extract_axis",
    "project", "ray_surface_intersection", "sample_axis_points",
]
