"""Modelos articulados de juguete: specs, generación y cinemática."""

from articulated.spec import ArticulatedModelSpec, HandRegion, load_model_spec, save_model_spec, validate_spec
from articulated.toy_models import generate_toy_spec
from articulated.kinematics import (
    Camera,
    PoseState,
    forward_kinematics,
    global_joint_orientation,
    keypoints_3d,
    project_points,
    shape_mesh,
    skin_mesh,
)

__all__ = [
    "ArticulatedModelSpec",
    "HandRegion",
    "load_model_spec",
    "save_model_spec",
    "validate_spec",
    "generate_toy_spec",
    "Camera",
    "PoseState",
    "forward_kinematics",
    "global_joint_orientation",
    "keypoints_3d",
    "project_points",
    "shape_mesh",
    "skin_mesh",
]
