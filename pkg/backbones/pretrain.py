"""
Preentrenamiento del backbone de cuerpo.

El backbone aprende pose, forma, traslación y keypoints del cuerpo con
etiquetas limpias, salvo las rotaciones locales de las muñecas: a cada
muestra se le aplica una vez una rotación aleatoria de wrist_label_noise
radianes por eje. El resultado es un backbone bueno para el cuerpo y
flojo en la orientación de las muñecas, el hueco que CHAM tiene que cerrar.
"""

from typing import Dict, List, Optional, Tuple

import torch
from tqdm import tqdm

from articulated.kinematics import PoseState, global_joint_orientation, keypoints_3d
from articulated.spec import SIDES
from backbones.body import BodyBackboneParams, body_backbone_forward, init_body_backbone
from backbones.common import freeze, seeded_generator
from geometry.grids import TokenGrid
from geometry.rotations import axis_angle_to_matrix, geodesic_distance
from geometry.tensors import DTYPE
from pipeline.dataset import SyntheticDataset
from pipeline.scenes import wrist_local_indices
from training.losses import keypoint_loss_3d, pose_loss, shape_loss
from utils.config import PosefuseConfig
from utils.errors import BackboneUnderfit, NonFiniteLoss
from utils.rich_logger import get_logger

logger = get_logger("posefuse.pretrain")


def corrupt_wrist_labels(dataset: SyntheticDataset, poses: PoseState, sigma: float,
                         gen: torch.Generator) -> PoseState:
    """Copia de las poses con las rotaciones locales de muñeca perturbadas por exp(N(0, sigma²))."""
    local = poses.local_rotations.clone()
    count = local.shape[0]
    for idx in wrist_local_indices(dataset.body_spec).values():
        noise = axis_angle_to_matrix(sigma * torch.randn(count, 3, generator=gen, dtype=DTYPE))
        local[:, idx] = local[:, idx] @ noise
    return PoseState(poses.root_orientation, poses.root_translation, local, poses.shape)


def pretrain_loss(dataset: SyntheticDataset, pred: PoseState, labels: PoseState,
                  label_joints: torch.Tensor) -> Tuple[torch.Tensor, Dict[str, float]]:
    """Pose ℓ1 + forma ℓ1 + keypoints relativos a la pelvis + traslación ℓ1."""
    terms = {
        "pose": pose_loss(pred.all_rotations(), labels.all_rotations()),
        "shape": shape_loss(pred.shape, labels.shape),
        "keypoints_3d": keypoint_loss_3d(keypoints_3d(dataset.body_spec, pred), label_joints, "full_body"),
        "translation": (pred.root_translation - labels.root_translation).abs().mean(),
    }
    total = sum(terms.values())
    return total, {name: float(value.detach()) for name, value in terms.items()}


def pretrain_body_backbone(dataset: SyntheticDataset, config: PosefuseConfig,
                           params: Optional[BodyBackboneParams] = None,
                           show_progress: bool = True) -> Tuple[BodyBackboneParams, List[dict]]:
    """
    Entrena el backbone de cuerpo sobre el split de entrenamiento y lo congela.

    SGD con momento; los lotes recorren permutaciones del split generadas
    con la semilla de preentrenamiento.

    Args:
        dataset: Dataset sintético
        config: Configuración (secciones model y pretrain)
        params: Backbone inicial; por defecto init_body_backbone(model.backbone_seed)
        show_progress: Mostrar barra de progreso

    Returns:
        (backbone congelado, historial con la pérdida de cada paso)

    Raises:
        NonFiniteLoss: si la pérdida deja de ser finita
        EmptySplit: si no hay split de entrenamiento
        BackboneUnderfit: si el error de articulaciones en heldout supera pretrain.max_heldout_joint_error_mm
    """
    cfg = config.pretrain
    model = config.model
    body_spec = dataset.body_spec
    if params is None:
        params = init_body_backbone(model.backbone_seed, model.depth, model.channels, tuple(model.body_grid),
                                    body_spec.joint_count, body_spec.num_betas)
    indices = dataset.split("train")
    samples = [dataset.sample(i) for i in indices]
    tokens = torch.stack([s.body_tokens.data for s in samples])
    gen = seeded_generator(cfg.seed)
    labels = corrupt_wrist_labels(dataset, PoseState.stack([s.scene.body_pose for s in samples]),
                                  cfg.wrist_label_noise, gen)
    # las muñecas son hojas: corromperlas no mueve ningún keypoint
    label_joints = keypoints_3d(body_spec, labels)

    optimizer = torch.optim.SGD(params.parameters(), lr=cfg.lr, momentum=cfg.momentum)
    count = len(indices)
    batch = min(cfg.batch_size, count)
    order = torch.randperm(count, generator=gen)
    cursor = 0
    history: List[dict] = []

    logger.step(f"Preentrenando backbone de cuerpo ({cfg.steps} pasos, {count} escenas)")
    for step in tqdm(range(cfg.steps), desc="Preentrenamiento", disable=not show_progress):
        if cursor + batch > count:
            order = torch.randperm(count, generator=gen)
            cursor = 0
        chosen = order[cursor:cursor + batch]
        cursor += batch

        pred, _ = body_backbone_forward(params, TokenGrid(tokens[chosen], dataset.body_affine))
        loss, terms = pretrain_loss(dataset, pred, labels.select(chosen), label_joints[chosen])
        if not bool(torch.isfinite(loss.detach())):
            raise NonFiniteLoss(f"Pérdida no finita en el paso {step} del preentrenamiento")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        record = {"phase": "pretrain", "step": step, "loss": float(loss.detach()), "terms": terms}
        history.append(record)
        logger.train_step(record)

    digest = freeze(params)
    if history:
        logger.step_complete("Preentrenamiento", f"pérdida final {history[-1]['loss']:.4f}, hash {digest[:12]}")
    check_heldout_body_error(params, dataset, cfg.max_heldout_joint_error_mm)
    return params, history


def check_heldout_body_error(params: BodyBackboneParams, dataset: SyntheticDataset,
                             threshold_mm: Optional[float]) -> Optional[float]:
    """
    Postcondición del preentrenamiento sobre el split heldout.

    Args:
        params: Backbone de cuerpo ya congelado
        dataset: Dataset sintético
        threshold_mm: Umbral del error de articulaciones; None no comprueba nada

    Returns:
        Error medido en mm, o None si no se comprobó

    Raises:
        BackboneUnderfit: si el error supera el umbral
        EmptySplit: si hay umbral pero el split heldout está vacío
    """
    if threshold_mm is None:
        return None
    error = body_joint_error_mm(params, dataset, "heldout")
    gap = wrist_orientation_gap(params, dataset, "heldout")
    logger.info(f"Heldout: error de articulaciones {error:.2f} mm (umbral {threshold_mm:.2f}), "
                f"error de muñeca {gap:.4f} rad")
    if error > threshold_mm:
        raise BackboneUnderfit(
            f"Error de articulaciones en heldout {error:.2f} mm > umbral {threshold_mm:.2f} mm"
        )
    return error


def wrist_orientation_gap(params: BodyBackboneParams, dataset: SyntheticDataset, split: str = "heldout") -> float:
    """Error geodésico medio (radianes) de la orientación global de ambas muñecas en un split."""
    samples = [dataset.sample(i) for i in dataset.split(split)]
    tokens = torch.stack([s.body_tokens.data for s in samples])
    with torch.no_grad():
        pred, _ = body_backbone_forward(params, TokenGrid(tokens, dataset.body_affine))
    gt = PoseState.stack([s.scene.body_pose for s in samples])
    errors = [
        geodesic_distance(global_joint_orientation(dataset.body_spec, pred, f"{side}_wrist"),
                          global_joint_orientation(dataset.body_spec, gt, f"{side}_wrist"))
        for side in SIDES
    ]
    return float(torch.cat(errors).mean())


def body_joint_error_mm(params: BodyBackboneParams, dataset: SyntheticDataset, split: str = "heldout") -> float:
    """Error medio de articulaciones del cuerpo alineadas en la pelvis, en milímetros."""
    samples = [dataset.sample(i) for i in dataset.split(split)]
    tokens = torch.stack([s.body_tokens.data for s in samples])
    with torch.no_grad():
        pred, _ = body_backbone_forward(params, TokenGrid(tokens, dataset.body_affine))
    pred_joints = keypoints_3d(dataset.body_spec, pred)
    gt_joints = keypoints_3d(dataset.body_spec, PoseState.stack([s.scene.body_pose for s in samples]))
    pred_rel = pred_joints - pred_joints[:, :1]
    gt_rel = gt_joints - gt_joints[:, :1]
    return float(1000.0 * (pred_rel - gt_rel).norm(dim=-1).mean())
