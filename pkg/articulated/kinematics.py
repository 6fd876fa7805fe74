"""
Cinemática de los modelos articulados: forma, FK, skinning y proyección.

Todas las funciones aceptan dimensiones de batch a la izquierda en el
PoseState y son diferenciables respecto a rotaciones, traslación y beta.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch

from articulated.spec import ArticulatedModelSpec
from geometry.mesh import Mesh
from geometry.rigid import RigidTransform
from geometry.rotations import axis_angle_to_matrix
from geometry.tensors import DTYPE, as_float64
from utils.errors import BehindCamera, DimMismatch, InvariantViolation

# profundidad del sujeto frente a la cámara por defecto (metros)
DEFAULT_ROOT_DEPTH = 2.75
MIN_DEPTH = 1e-6


@dataclass
class PoseState:
    """
    Parámetros de una instancia del modelo.

    Attributes:
        root_orientation: (..., 3, 3)
        root_translation: (..., 3) metros
        local_rotations: (..., J-1, 3, 3)
        shape: (..., B)
    """

    root_orientation: torch.Tensor
    root_translation: torch.Tensor
    local_rotations: torch.Tensor
    shape: torch.Tensor

    @classmethod
    def zeros(cls, joint_count: int, num_betas: int, batch_shape: Tuple[int, ...] = ()) -> "PoseState":
        eye = torch.eye(3, dtype=DTYPE)
        return cls(
            root_orientation=eye.expand(*batch_shape, 3, 3).clone(),
            root_translation=torch.zeros(*batch_shape, 3, dtype=DTYPE),
            local_rotations=eye.expand(*batch_shape, joint_count - 1, 3, 3).clone(),
            shape=torch.zeros(*batch_shape, num_betas, dtype=DTYPE),
        )

    @classmethod
    def from_axis_angle(cls, root, translation, local, shape) -> "PoseState":
        """Construye el estado desde eje-ángulo: root (..., 3), local (..., J-1, 3)."""
        return cls(
            root_orientation=axis_angle_to_matrix(root),
            root_translation=as_float64(translation),
            local_rotations=axis_angle_to_matrix(local),
            shape=as_float64(shape),
        )

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return tuple(self.root_translation.shape[:-1])

    def select(self, index) -> "PoseState":
        """Elemento(s) del batch."""
        return PoseState(
            self.root_orientation[index],
            self.root_translation[index],
            self.local_rotations[index],
            self.shape[index],
        )

    def detach(self) -> "PoseState":
        return PoseState(
            self.root_orientation.detach(),
            self.root_translation.detach(),
            self.local_rotations.detach(),
            self.shape.detach(),
        )

    def all_rotations(self) -> torch.Tensor:
        """Raíz + locales (..., J, 3, 3)."""
        return torch.cat([self.root_orientation[..., None, :, :], self.local_rotations], dim=-3)

    @staticmethod
    def stack(states) -> "PoseState":
        states = list(states)
        return PoseState(
            torch.stack([s.root_orientation for s in states]),
            torch.stack([s.root_translation for s in states]),
            torch.stack([s.local_rotations for s in states]),
            torch.stack([s.shape for s in states]),
        )


@dataclass(frozen=True)
class Camera:
    """Cámara pinhole sin distorsión (píxeles)."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvariantViolation("focal", f"fx={self.fx}, fy={self.fy}")

    @classmethod
    def default(cls, image_width: int = 192, image_height: int = 256, focal: float = 220.0) -> "Camera":
        return cls(focal, focal, image_width / 2.0, image_height / 2.0)

    def to_list(self) -> list:
        return [self.fx, self.fy, self.cx, self.cy]


def _check_pose(spec: ArticulatedModelSpec, pose: PoseState) -> None:
    if pose.local_rotations.shape[-3] != spec.joint_count - 1:
        raise DimMismatch(
            f"Se esperaban {spec.joint_count - 1} rotaciones locales, llegaron {pose.local_rotations.shape[-3]}"
        )


def shape_mesh(spec: ArticulatedModelSpec, beta: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Vértices con forma y articulaciones en reposo.

    Args:
        spec: Modelo
        beta: Coeficientes de forma (..., B)

    Returns:
        (vértices (..., V, 3), articulaciones en reposo (..., J, 3))

    Raises:
        DimMismatch: si beta no tiene longitud B
    """
    beta = as_float64(beta)
    if beta.shape[-1] != spec.num_betas:
        raise DimMismatch(f"beta de longitud {beta.shape[-1]}, el modelo usa {spec.num_betas}")
    vertices = spec.template_vertices + torch.einsum("vcb,...b->...vc", spec.shape_basis, beta)
    joints = torch.einsum("jv,...vc->...jc", spec.rest_joint_regressor, vertices)
    return vertices, joints


def shape_subset(spec: ArticulatedModelSpec, beta: torch.Tensor, vertex_indices: Sequence[int]) -> torch.Tensor:
    """Vértices con forma de un subconjunto (..., K, 3), sin tocar el resto de la malla."""
    beta = as_float64(beta)
    if beta.shape[-1] != spec.num_betas:
        raise DimMismatch(f"beta de longitud {beta.shape[-1]}, el modelo usa {spec.num_betas}")
    idx = list(vertex_indices)
    return spec.template_vertices[idx] + torch.einsum("vcb,...b->...vc", spec.shape_basis[idx], beta)


def forward_kinematics(spec: ArticulatedModelSpec, pose: PoseState, rest_joints: torch.Tensor) -> RigidTransform:
    """
    Transformaciones globales por articulación.

    La raíz es (R_root, J_0 + t); cada hija compone la global del padre con
    su rotación local alrededor del desplazamiento en reposo.

    Returns:
        RigidTransform apilado por articulación: rotation (..., J, 3, 3),
        translation (..., J, 3); la traslación es la posición posada
    """
    _check_pose(spec, pose)
    rest_joints = as_float64(rest_joints)
    rotations = [pose.root_orientation]
    translations = [rest_joints[..., 0, :] + pose.root_translation]
    for j in range(1, spec.joint_count):
        p = spec.parents[j]
        offset = rest_joints[..., j, :] - rest_joints[..., p, :]
        rotations.append(rotations[p] @ pose.local_rotations[..., j - 1, :, :])
        translations.append((rotations[p] @ offset[..., None])[..., 0] + translations[p])
    return RigidTransform(torch.stack(rotations, dim=-3), torch.stack(translations, dim=-2))


def global_joint_orientation(spec: ArticulatedModelSpec, pose: PoseState, joint_name: str) -> torch.Tensor:
    """
    Orientación global de una articulación nombrada.

    Raises:
        UnknownJoint: si el nombre no está en named_joints
    """
    _check_pose(spec, pose)
    joint = spec.joint_index(joint_name)
    rotation = pose.root_orientation
    for j in spec.chain(joint)[1:]:
        rotation = rotation @ pose.local_rotations[..., j - 1, :, :]
    return rotation


def skin_vertices(spec: ArticulatedModelSpec, shaped_vertices: torch.Tensor,
                  transforms: RigidTransform, rest_joints: Optional[torch.Tensor] = None,
                  vertex_indices: Optional[Sequence[int]] = None) -> torch.Tensor:
    """
    Linear blend skinning con la forma G_j · G_rest,j^-1.

    En reposo las globales son traslaciones puras a las articulaciones, así
    que cada articulación aporta (R_j, t_j - R_j J_j).

    Args:
        spec: Modelo
        shaped_vertices: (..., V, 3), o (..., K, 3) si se pasa vertex_indices
        transforms: Globales de forward_kinematics
        rest_joints: Articulaciones en reposo; si falta se regresan de los vértices
        vertex_indices: Subconjunto de vértices a deformar

    Raises:
        DimMismatch: vértices o transformaciones que no cuadran con el spec
    """
    shaped_vertices = as_float64(shaped_vertices)
    expected = spec.vertex_count if vertex_indices is None else len(vertex_indices)
    if shaped_vertices.shape[-2] != expected:
        raise DimMismatch(f"{shaped_vertices.shape[-2]} vértices, se esperaban {expected}")
    if rest_joints is None and vertex_indices is not None:
        raise DimMismatch("Con un subconjunto de vértices hay que pasar rest_joints")
    if transforms.rotation.shape[-3] != spec.joint_count:
        raise DimMismatch(f"{transforms.rotation.shape[-3]} transformaciones para {spec.joint_count} articulaciones")
    if rest_joints is None:
        rest_joints = torch.einsum("jv,...vc->...jc", spec.rest_joint_regressor, shaped_vertices)
    rot = transforms.rotation
    trans = transforms.translation - (rot @ rest_joints[..., None])[..., 0]
    weights = spec.skinning_weights if vertex_indices is None else spec.skinning_weights[list(vertex_indices)]
    blend_rot = torch.einsum("vj,...jab->...vab", weights, rot)
    blend_trans = torch.einsum("vj,...ja->...va", weights, trans)
    return (blend_rot @ shaped_vertices[..., None])[..., 0] + blend_trans


def skin_mesh(spec: ArticulatedModelSpec, shaped_vertices: torch.Tensor, transforms: RigidTransform) -> Mesh:
    """Malla posada de una sola instancia (sin batch)."""
    return Mesh(skin_vertices(spec, shaped_vertices, transforms), spec.faces)


@dataclass
class PosedModel:
    """Resultado completo de posar un modelo."""

    vertices: torch.Tensor
    joints: torch.Tensor
    transforms: RigidTransform
    rest_joints: torch.Tensor


def pose_model(spec: ArticulatedModelSpec, pose: PoseState) -> PosedModel:
    """shape_mesh -> forward_kinematics -> skinning."""
    shaped, rest_joints = shape_mesh(spec, pose.shape)
    transforms = forward_kinematics(spec, pose, rest_joints)
    vertices = skin_vertices(spec, shaped, transforms, rest_joints)
    return PosedModel(vertices, transforms.translation, transforms, rest_joints)


def keypoints_3d(spec: ArticulatedModelSpec, pose: PoseState) -> torch.Tensor:
    """Posiciones posadas de las articulaciones (..., J, 3)."""
    _, rest_joints = shape_mesh(spec, pose.shape)
    return forward_kinematics(spec, pose, rest_joints).translation


def project_points(camera: Camera, points: torch.Tensor) -> torch.Tensor:
    """
    Proyección pinhole (fx x/z + cx, fy y/z + cy).

    Raises:
        BehindCamera: con el índice del primer punto de profundidad <= 1e-6
    """
    pts = as_float64(points)
    z = pts[..., 2]
    bad = z.detach() <= MIN_DEPTH
    if bool(bad.any()):
        flat = bad.reshape(-1, bad.shape[-1]) if bad.dim() else bad.reshape(1, 1)
        row = int(flat.any(dim=-1).nonzero()[0])
        index = int(flat[row].nonzero()[0])
        depth = float(z.detach().reshape(-1, z.shape[-1])[row, index]) if z.dim() else float(z)
        raise BehindCamera(index, depth)
    x = camera.fx * pts[..., 0] / z + camera.cx
    y = camera.fy * pts[..., 1] / z + camera.cy
    return torch.stack([x, y], dim=-1)


def hand_keypoints(hand_spec: ArticulatedModelSpec, vertices: torch.Tensor, joints: torch.Tensor) -> torch.Tensor:
    """Las 16 articulaciones de la mano más las 5 puntas (..., 21, 3)."""
    if hand_spec.tip_vertices is None:
        return joints
    tips = vertices[..., hand_spec.tip_vertices, :]
    return torch.cat([joints, tips], dim=-2)
