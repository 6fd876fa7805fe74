"""
Escenas sintéticas: pose del cuerpo, manos, cámara, tipo de muestra y
detecciones simuladas.

Todo se muestrea con un numpy.random.Generator, así que una semilla fija
reproduce las escenas exactamente. Las cajas de recorte salen de los
keypoints de mano proyectados (con relleno y tamaño mínimo) y se recortan a
la imagen.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import torch

from articulated.kinematics import Camera, PosedModel, PoseState, global_joint_orientation, pose_model, project_points
from articulated.spec import SIDES, ArticulatedModelSpec
from geometry.grids import Affine2D
from geometry.mesh import Mesh
from geometry.tensors import DTYPE
from transfer.hand_transfer import HandPlacement, assemble_full_mesh
from utils.config import DatasetConfig, TransferConfig
from utils.errors import InvariantViolation

SampleKind = Literal["full_body", "interacting_hands", "single_hand"]
KINDS: Tuple[str, ...] = ("full_body", "interacting_hands", "single_hand")

POSE_LATENTS = 8
POSE_BASIS_SEED = 211
FINGER_SPREAD = 0.3
HAND_SHAPE_SPREAD = 0.5
BODY_SHAPE_SPREAD = 0.5
ROOT_SPREAD = 0.1
TRANSLATION_SPREAD = (0.04, 0.04, 0.1)
# margen en píxeles que deben respetar los keypoints proyectados
IMAGE_MARGIN = 2.0
MAX_SAMPLING_TRIES = 100


def wrist_local_indices(body_spec: ArticulatedModelSpec) -> Dict[str, int]:
    """Índice de la rotación local de cada muñeca dentro de local_rotations."""
    return {side: body_spec.joint_index(f"{side}_wrist") - 1 for side in SIDES}


@lru_cache(maxsize=4)
def pose_basis(joint_count: int, scale: float) -> torch.Tensor:
    """Base fija (8, J-1, 3) de las rotaciones locales que no son muñecas."""
    rng = np.random.default_rng(POSE_BASIS_SEED)
    basis = rng.standard_normal((POSE_LATENTS, joint_count - 1, 3)) * scale / math.sqrt(POSE_LATENTS)
    return torch.as_tensor(basis, dtype=DTYPE)


@dataclass
class Scene:
    """
    Una escena de verdad de terreno.

    Attributes:
        index: Posición en el dataset
        kind: Tipo de muestra
        body_pose: Pose del cuerpo
        pose_latents: (8,) coordenadas de la pose en la base fija
        hand_theta: Por lado, (15, 3) eje-ángulo de dedos
        hand_beta: Por lado, (10,) forma de mano
        detected: Por lado, si el detector simulado encontró la mano
        crop_boxes: Por lado, (x0, y0, lado) en píxeles
        camera: Cámara pinhole
        noise_seed: Semilla del ruido de los tokens
    """

    index: int
    kind: str
    body_pose: PoseState
    pose_latents: torch.Tensor
    hand_theta: Dict[str, torch.Tensor]
    hand_beta: Dict[str, torch.Tensor]
    detected: Dict[str, bool]
    crop_boxes: Dict[str, Tuple[float, float, float]]
    camera: Camera
    noise_seed: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvariantViolation("kind", f"tipo desconocido '{self.kind}'")
        if self.kind == "single_hand" and sum(self.detected.values()) != 1:
            raise InvariantViolation("detected", "una muestra single_hand necesita exactamente una mano detectada")

    def crop_affine(self, side: str, grid: int) -> Affine2D:
        x0, y0, size = self.crop_boxes[side]
        return Affine2D.from_box(x0, y0, size, size, grid, grid)

    @property
    def detected_sides(self) -> List[str]:
        return [side for side in SIDES if self.detected[side]]

    @property
    def annotated_sides(self) -> List[str]:
        """Lados con anotación de mano: ambos salvo en single_hand."""
        return self.detected_sides if self.kind == "single_hand" else list(SIDES)

    def global_wrist(self, body_spec: ArticulatedModelSpec, side: str) -> torch.Tensor:
        return global_joint_orientation(body_spec, self.body_pose, f"{side}_wrist")


def kind_counts(total: int, mix: Dict[str, float]) -> Dict[str, int]:
    """Reparto por resto mayor: cada tipo queda a menos de una muestra de su cuota."""
    weight = sum(mix.values())
    quotas = {kind: total * mix[kind] / weight for kind in KINDS}
    counts = {kind: int(math.floor(q)) for kind, q in quotas.items()}
    remaining = total - sum(counts.values())
    order = sorted(KINDS, key=lambda k: (-(quotas[k] - counts[k]), KINDS.index(k)))
    for kind in order[:remaining]:
        counts[kind] += 1
    return counts


def assign_kinds(total: int, mix: Dict[str, float], rng: np.random.Generator) -> List[str]:
    counts = kind_counts(total, mix)
    kinds = [kind for kind in KINDS for _ in range(counts[kind])]
    return [kinds[i] for i in rng.permutation(total)]


@dataclass
class GroundTruth:
    """Geometría completa de una escena."""

    mesh: Mesh
    posed: PosedModel
    placements: Dict[str, HandPlacement]


def ground_truth(scene: Scene, body_spec: ArticulatedModelSpec, hand_spec: ArticulatedModelSpec,
                 smooth: Optional[TransferConfig] = None) -> GroundTruth:
    """Cuerpo con las manos de verdad de terreno transferidas en ambos lados."""
    posed = pose_model(body_spec, scene.body_pose)
    hands = {side: (scene.hand_theta[side], scene.hand_beta[side]) for side in SIDES}
    mesh, placements = assemble_full_mesh(body_spec, hand_spec, scene.body_pose, hands, smooth, posed=posed)
    return GroundTruth(mesh, posed, placements)


def crop_box(points: torch.Tensor, config: DatasetConfig) -> Tuple[float, float, float]:
    """
    Caja cuadrada alrededor de keypoints proyectados.

    El lado es el mayor extremo por (1 + padding), al menos crop_min_size y
    como mucho el lado menor de la imagen; la caja se desplaza hasta quedar
    dentro de la imagen.
    """
    lo = points.min(dim=0).values
    hi = points.max(dim=0).values
    center = 0.5 * (lo + hi)
    size = float((hi - lo).max()) * (1.0 + config.crop_padding)
    size = min(max(size, config.crop_min_size), float(min(config.image_width, config.image_height)))
    x0 = min(max(float(center[0]) - size / 2.0, 0.0), config.image_width - size)
    y0 = min(max(float(center[1]) - size / 2.0, 0.0), config.image_height - size)
    return x0, y0, size


class SceneSampler:
    """Muestreador determinista de escenas para un par de specs."""

    def __init__(self, body_spec: ArticulatedModelSpec, hand_spec: ArticulatedModelSpec,
                 config: DatasetConfig, smooth: Optional[TransferConfig] = None):
        self.body_spec = body_spec
        self.hand_spec = hand_spec
        self.config = config
        self.smooth = smooth
        self.camera = Camera.default(config.image_width, config.image_height, config.focal)
        self.basis = pose_basis(body_spec.joint_count, config.body_pose_scale)
        self.wrists = wrist_local_indices(body_spec)

    def _body_pose(self, rng: np.random.Generator) -> Tuple[PoseState, torch.Tensor]:
        cfg = self.config
        latents = torch.as_tensor(rng.standard_normal(POSE_LATENTS), dtype=DTYPE)
        local = torch.einsum("k,kjc->jc", latents, self.basis)
        for idx in self.wrists.values():
            local[idx] = torch.as_tensor(rng.standard_normal(3) * cfg.wrist_spread, dtype=DTYPE)
        root = torch.as_tensor(rng.standard_normal(3) * ROOT_SPREAD, dtype=DTYPE)
        offset = rng.standard_normal(3) * np.asarray(TRANSLATION_SPREAD)
        translation = torch.as_tensor(offset + np.array([0.0, 0.0, cfg.camera_depth]), dtype=DTYPE)
        beta = torch.as_tensor(rng.standard_normal(self.body_spec.num_betas) * BODY_SHAPE_SPREAD, dtype=DTYPE)
        return PoseState.from_axis_angle(root, translation, local, beta), latents

    def _detections(self, kind: str, rng: np.random.Generator) -> Dict[str, bool]:
        if kind == "single_hand":
            chosen = SIDES[int(rng.integers(2))]
            return {side: side == chosen for side in SIDES}
        return {side: bool(rng.random() >= self.config.miss_rate) for side in SIDES}

    def _inside_image(self, points: torch.Tensor) -> bool:
        x, y = points[..., 0], points[..., 1]
        return bool(
            (x >= IMAGE_MARGIN).all() and (x <= self.config.image_width - IMAGE_MARGIN).all()
            and (y >= IMAGE_MARGIN).all() and (y <= self.config.image_height - IMAGE_MARGIN).all()
        )

    def sample(self, index: int, kind: str, rng: np.random.Generator) -> Tuple[Scene, GroundTruth]:
        """
        Muestrea una escena cuyos keypoints proyectados caen dentro de la imagen.

        Returns:
            (escena, geometría de verdad de terreno)

        Raises:
            InvariantViolation: si no se encuentra una escena válida tras 100 intentos
        """
        for _ in range(MAX_SAMPLING_TRIES):
            pose, latents = self._body_pose(rng)
            theta = {s: torch.as_tensor(rng.standard_normal((15, 3)) * FINGER_SPREAD, dtype=DTYPE) for s in SIDES}
            beta = {s: torch.as_tensor(rng.standard_normal(10) * HAND_SHAPE_SPREAD, dtype=DTYPE) for s in SIDES}
            detected = self._detections(kind, rng)
            noise_seed = int(rng.integers(0, 2 ** 62))
            scene = Scene(index, kind, pose, latents, theta, beta, detected, {}, self.camera, noise_seed)
            gt = ground_truth(scene, self.body_spec, self.hand_spec, self.smooth)
            body_2d = project_points(self.camera, gt.posed.joints)
            hands_2d = {s: project_points(self.camera, gt.placements[s].keypoints) for s in SIDES}
            if not (self._inside_image(body_2d) and all(self._inside_image(p) for p in hands_2d.values())):
                continue
            scene.crop_boxes = {s: crop_box(hands_2d[s], self.config) for s in SIDES}
            return scene, gt
        raise InvariantViolation("scene", f"sin escena válida dentro de la imagen tras {MAX_SAMPLING_TRIES} intentos")
