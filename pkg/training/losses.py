"""
Suite de pérdidas para entrenar CHAM.

Las rotaciones se comparan en eje-ángulo canónico con ℓ1. Los keypoints 3D
se comparan en un marco relativo que depende del tipo de muestra: pelvis
para cuerpo completo, muñeca derecha para manos interactuando y la propia
muñeca para una sola mano. En total_loss los términos 3D se expresan en
milímetros (la unidad de las métricas) y el 2D en píxeles.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import torch
from torch import nn

from articulated.kinematics import Camera, PoseState, global_joint_orientation, project_points
from articulated.spec import SIDES, ArticulatedModelSpec
from geometry.rotations import matrix_to_axis_angle
from geometry.tensors import DTYPE, as_float64
from utils.config import LossWeights
from utils.errors import DimMismatch, MissingReference, NonFiniteLoss, UnknownSide

# eje "arriba" del cuerpo en su marco: -y (convención de cámara)
BODY_UP_AXIS = (0.0, -1.0, 0.0)
WORLD_UP = (0.0, -1.0, 0.0)

# índice de la articulación de referencia dentro del conjunto de keypoints de cada tipo
REFERENCE_INDEX = {"full_body": 0, "interacting_hands": 16, "single_hand": 0}

KEYPOINT_MM = 1000.0


def _as_axis_angle(rotations: torch.Tensor) -> torch.Tensor:
    r = as_float64(rotations)
    if r.dim() >= 2 and r.shape[-2:] == (3, 3):
        return matrix_to_axis_angle(r, check=False)
    return r


def pose_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """
    ℓ1 medio entre rotaciones en eje-ángulo canónico.

    Args:
        pred: Rotaciones (..., K, 3, 3) o eje-ángulo (..., K, 3)
        gt: Igual que pred

    Raises:
        DimMismatch: si los conteos no coinciden
    """
    if pred.shape != gt.shape:
        raise DimMismatch(f"Rotaciones {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return (_as_axis_angle(pred) - _as_axis_angle(gt)).abs().mean()


def wrist_orientation_loss(body_spec: ArticulatedModelSpec, pred_pose: PoseState,
                           gt_global_wrist: torch.Tensor, side: str) -> torch.Tensor:
    """
    ℓ1 en eje-ángulo entre la orientación global de muñeca predicha y la real.

    La global se obtiene componiendo la cadena de la pose predicha, así que
    dos descomposiciones distintas de la misma orientación dan pérdida cero.

    Raises:
        UnknownSide: lado inválido
    """
    if side not in SIDES:
        raise UnknownSide(side)
    pred_global = global_joint_orientation(body_spec, pred_pose, f"{side}_wrist")
    return (matrix_to_axis_angle(pred_global, check=False)
            - matrix_to_axis_angle(as_float64(gt_global_wrist), check=False)).abs().mean()


def shape_loss(pred_beta: torch.Tensor, gt_beta: Optional[torch.Tensor] = None) -> torch.Tensor:
    """ℓ1 medio contra la forma real, o media de cuadrados (regularizador) sin ella."""
    pred_beta = as_float64(pred_beta)
    if gt_beta is None:
        return (pred_beta * pred_beta).mean()
    return (pred_beta - as_float64(gt_beta)).abs().mean()


def keypoint_loss_3d(pred: torch.Tensor, gt: torch.Tensor, kind: str) -> torch.Tensor:
    """
    ℓ1 medio de keypoints 3D relativos a la referencia del tipo de muestra.

    Args:
        pred: (..., N, 3)
        gt: (..., N, 3)
        kind: full_body (pelvis), interacting_hands (muñeca derecha en 16) o single_hand (muñeca en 0)

    Raises:
        DimMismatch: conteos distintos
        MissingReference: el conjunto no llega a la articulación de referencia
    """
    pred, gt = as_float64(pred), as_float64(gt)
    if pred.shape != gt.shape:
        raise DimMismatch(f"Keypoints {tuple(pred.shape)} vs {tuple(gt.shape)}")
    ref = REFERENCE_INDEX[kind]
    if pred.shape[-2] <= ref:
        raise MissingReference(f"{kind} necesita la referencia {ref}, hay {pred.shape[-2]} keypoints")
    rel_pred = pred - pred[..., ref:ref + 1, :]
    rel_gt = gt - gt[..., ref:ref + 1, :]
    return (rel_pred - rel_gt).abs().mean()


def keypoint_loss_2d(pred3d: torch.Tensor, camera: Camera, gt2d: torch.Tensor) -> torch.Tensor:
    """
    ℓ1 medio en píxeles entre la proyección de pred3d y los keypoints 2D reales.

    Raises:
        BehindCamera: algún punto predicho con z <= 0
    """
    return (project_points(camera, pred3d) - as_float64(gt2d)).abs().mean()


def root_upright_loss(root: torch.Tensor, world_up=WORLD_UP) -> torch.Tensor:
    """1 - <R · eje arriba del cuerpo, arriba del mundo>: 0 erguido, 2 cabeza abajo."""
    up = torch.as_tensor(BODY_UP_AXIS, dtype=DTYPE)
    world = as_float64(torch.as_tensor(world_up))
    return (1.0 - ((as_float64(root) @ up) * world).sum(-1)).mean()


# ==================== Pérdida total ====================

@dataclass
class LossTargets:
    """
    Verdad de terreno de una muestra para la pérdida total.

    Attributes:
        body_spec: Modelo de cuerpo
        kind: Tipo de muestra
        body_pose: Pose real (se usa sólo en full_body)
        body_joints: (J, 3) articulaciones reales del cuerpo
        hand_joints: Por lado anotado, (16, 3) articulaciones reales de la mano
        global_wrist: Por lado anotado, orientación global real de la muñeca
        camera: Cámara de la escena
    """

    body_spec: ArticulatedModelSpec
    kind: str
    body_pose: PoseState
    body_joints: torch.Tensor
    hand_joints: Dict[str, torch.Tensor]
    global_wrist: Dict[str, torch.Tensor]
    camera: Camera

    @property
    def annotated_sides(self) -> List[str]:
        return [side for side in SIDES if side in self.hand_joints]


@dataclass
class LossPrediction:
    """
    Predicción de una muestra.

    Attributes:
        body_pose: Pose predicha por el backbone modulado
        body_joints: (J, 3) articulaciones posadas de esa pose
        hand_joints: Por lado detectado, (16, 3) articulaciones de la mano transferida
    """

    body_pose: PoseState
    body_joints: torch.Tensor
    hand_joints: Dict[str, torch.Tensor] = field(default_factory=dict)


def keypoint_sets(targets: LossTargets, prediction: LossPrediction) -> Optional[Tuple[torch.Tensor, torch.Tensor, str]]:
    """
    Conjunto de keypoints supervisado y el tipo que fija su referencia.

    Sólo entran las manos anotadas y predichas. En interacting_hands con una
    sola mano disponible se cae al marco de mano única.

    Returns:
        (pred (N, 3), gt (N, 3), tipo de referencia) o None si no queda nada
    """
    sides = [s for s in SIDES if s in targets.hand_joints and s in prediction.hand_joints]
    if targets.kind == "full_body":
        pred = [prediction.body_joints] + [prediction.hand_joints[s] for s in sides]
        gt = [targets.body_joints] + [targets.hand_joints[s] for s in sides]
        return torch.cat(pred), torch.cat(gt), "full_body"
    if not sides:
        return None
    pred = torch.cat([prediction.hand_joints[s] for s in sides])
    gt = torch.cat([targets.hand_joints[s] for s in sides])
    if targets.kind == "interacting_hands" and len(sides) == 2:
        return pred, gt, "interacting_hands"
    return pred, gt, "single_hand"


def loss_terms(targets: LossTargets, prediction: LossPrediction) -> Dict[str, torch.Tensor]:
    """Términos activos (sin pesar) para el tipo de la muestra."""
    terms: Dict[str, torch.Tensor] = {}
    pred_pose = prediction.body_pose
    if targets.kind == "full_body":
        terms["pose"] = pose_loss(pred_pose.all_rotations(), targets.body_pose.all_rotations())
        terms["shape"] = shape_loss(pred_pose.shape, targets.body_pose.shape)
    else:
        terms["shape"] = shape_loss(pred_pose.shape)
        terms["upright"] = root_upright_loss(pred_pose.root_orientation)

    sets = keypoint_sets(targets, prediction)
    if sets is not None:
        pred, gt, frame = sets
        terms["keypoints_3d"] = KEYPOINT_MM * keypoint_loss_3d(pred, gt, frame)
        gt2d = project_points(targets.camera, gt)
        terms["keypoints_2d"] = keypoint_loss_2d(pred, targets.camera, gt2d)

    sides = targets.annotated_sides
    if sides:
        wrist = [wrist_orientation_loss(targets.body_spec, pred_pose, targets.global_wrist[s], s) for s in sides]
        terms["wrist"] = torch.stack(wrist).mean()
    return terms


def weighted_sum(terms: Dict[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    total = torch.zeros((), dtype=DTYPE)
    for name, value in terms.items():
        total = total + getattr(weights, name) * value
    return total


def total_loss(targets: LossTargets, prediction: LossPrediction, weights: LossWeights,
               params: Optional[nn.Module] = None) -> Tuple[torch.Tensor, Dict[str, float], Optional[Dict[str, torch.Tensor]]]:
    """
    Suma pesada de los términos activos.

    Args:
        targets: Verdad de terreno
        prediction: Predicción (construida con autograd desde CHAM)
        weights: Pesos por término
        params: Si se pasa, se devuelven los gradientes respecto a sus parámetros

    Returns:
        (pérdida escalar, valores de cada término, gradientes por nombre o None)

    Raises:
        NonFiniteLoss: si la pérdida no es finita
    """
    terms = loss_terms(targets, prediction)
    total = weighted_sum(terms, weights)
    if not bool(torch.isfinite(total.detach())):
        raise NonFiniteLoss(f"Pérdida no finita ({float(total.detach())}) en una muestra {targets.kind}")
    values = {name: float(value.detach()) for name, value in terms.items()}
    if params is None:
        return total, values, None
    named = [(name, p) for name, p in params.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(total, [p for _, p in named], allow_unused=True, retain_graph=True)
    gradients = {
        name: torch.zeros_like(p) if g is None else g
        for (name, p), g in zip(named, grads)
    }
    return total, values, gradients
