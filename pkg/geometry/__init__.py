"""Núcleo geométrico: rotaciones, registro, grids, mallas y chequeo de gradientes."""

from geometry.tensors import DTYPE, as_float64
from geometry.rotations import axis_angle_to_matrix, matrix_to_axis_angle, geodesic_distance
from geometry.rigid import RigidTransform, apply_rigid
from geometry.registration import kabsch_rigid, procrustes_similarity
from geometry.grids import Affine2D, TokenGrid, resample_grid, positional_encoding_2d
from geometry.mesh import Mesh, laplacian_smooth, save_obj, load_obj
from geometry.gradcheck import check_gradient, GradientReport

__all__ = [
    "DTYPE",
    "as_float64",
    "axis_angle_to_matrix",
    "matrix_to_axis_angle",
    "geodesic_distance",
    "RigidTransform",
    "apply_rigid",
    "kabsch_rigid",
    "procrustes_similarity",
    "Affine2D",
    "TokenGrid",
    "resample_grid",
    "positional_encoding_2d",
    "Mesh",
    "laplacian_smooth",
    "save_obj",
    "load_obj",
    "check_gradient",
    "GradientReport",
]
