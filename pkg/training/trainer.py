"""
Bucle de entrenamiento de CHAM.

Sólo CHAM recibe gradiente: los backbones llegan congelados con su hash y
se vuelven a verificar al terminar. El descenso es SGD simple con un único
decaimiento de la tasa de aprendizaje a una fracción fija de las épocas.
"""

import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import torch
from tqdm import tqdm

from articulated.kinematics import keypoints_3d
from backbones.body import body_backbone_forward
from backbones.common import is_frozen, save_module, seeded_generator, verify_frozen
from backbones.hand import HandObservation, hand_backbone_forward
from cham.forward import cham_forward
from cham.modulator import ChamParams, ModulationStack
from geometry.grids import TokenGrid
from pipeline.dataset import SyntheticDataset
from pipeline.evaluation import evaluate
from pipeline.inference import Backbones
from training.losses import LossPrediction, LossTargets, total_loss
from transfer.hand_transfer import canonical_hand, place_hand_joints
from utils.config import PosefuseConfig
from utils.errors import FrozenParamsModified, NonFiniteLoss
from utils.rich_logger import JsonlLogSink, add_log_callback, get_logger, remove_log_callback

logger = get_logger("posefuse.trainer")


@dataclass
class TrainingLog:
    """Registros por paso y por época de un entrenamiento."""

    steps: List[dict] = field(default_factory=list)
    epochs: List[dict] = field(default_factory=list)
    backbone_hashes: Dict[str, str] = field(default_factory=dict)
    checkpoints: List[str] = field(default_factory=list)


@dataclass
class _PreparedSample:
    """Lo que no depende de CHAM, calculado una vez antes de entrenar."""

    index: int
    body_tokens: torch.Tensor
    observations: Dict[str, HandObservation]
    canonical_joints: Dict[str, torch.Tensor]
    targets: LossTargets


def prepare_sample(dataset: SyntheticDataset, backbones: Backbones, index: int) -> _PreparedSample:
    """Observaciones de mano, articulaciones canónicas y objetivos de pérdida de una muestra."""
    sample = dataset.sample(index)
    scene = sample.scene
    gt = dataset.ground_truth(index)
    with torch.no_grad():
        observations = {
            side: hand_backbone_forward(backbones.hand, tokens, side, scene.detected[side])
            for side, tokens in sample.hand_tokens.items()
        }
        canonical = {
            side: canonical_hand(dataset.hand_spec, obs.theta, obs.beta).joints
            for side, obs in observations.items() if obs.detected
        }
    annotated = scene.annotated_sides
    targets = LossTargets(
        body_spec=dataset.body_spec,
        kind=scene.kind,
        body_pose=scene.body_pose,
        body_joints=gt.posed.joints,
        hand_joints={side: gt.placements[side].joints for side in annotated},
        global_wrist={side: scene.global_wrist(dataset.body_spec, side) for side in annotated},
        camera=scene.camera,
    )
    return _PreparedSample(index, sample.body_tokens.data, observations, canonical, targets)


def batch_loss(prepared: List[_PreparedSample], dataset: SyntheticDataset, backbones: Backbones,
               cham: ChamParams, config: PosefuseConfig) -> Tuple[torch.Tensor, Dict[str, float]]:
    """
    Pérdida media de un lote con el grafo de autograd hasta CHAM.

    Returns:
        (pérdida media, media de cada término sobre las muestras donde está activo)
    """
    body_grid = dataset.body_grid
    stacks = [
        cham_forward(p.observations["left"], p.observations["right"], cham, body_grid,
                     dataset.body_affine, dataset.image_dims, config.train.use_cross_attention)
        for p in prepared
    ]
    tokens = TokenGrid(torch.stack([p.body_tokens for p in prepared]), dataset.body_affine)
    poses, _ = body_backbone_forward(backbones.body, tokens, ModulationStack.stack(stacks))
    joints = keypoints_3d(dataset.body_spec, poses)

    losses = []
    sums: Dict[str, List[float]] = {}
    for b, p in enumerate(prepared):
        pose = poses.select(b)
        hands = {
            side: place_hand_joints(dataset.body_spec, pose, side, canonical)
            for side, canonical in p.canonical_joints.items()
        }
        loss, values, _ = total_loss(p.targets, LossPrediction(pose, joints[b], hands), config.loss_weights)
        losses.append(loss)
        for name, value in values.items():
            sums.setdefault(name, []).append(value)
    terms = {name: sum(values) / len(values) for name, values in sums.items()}
    return torch.stack(losses).mean(), terms


def _check_frozen(backbones: Backbones) -> Dict[str, str]:
    for name, module in (("body", backbones.body), ("hand", backbones.hand)):
        if not is_frozen(module):
            raise FrozenParamsModified(f"El backbone de {name} no está congelado")
    return {"body": verify_frozen(backbones.body), "hand": verify_frozen(backbones.hand)}


def train_cham(dataset: SyntheticDataset, backbones: Backbones, cham: ChamParams, config: PosefuseConfig,
               log_path: Optional[str] = None, checkpoint_dir: Optional[str] = None,
               show_progress: bool = True) -> Tuple[ChamParams, TrainingLog]:
    """
    Entrena CHAM sobre el split de entrenamiento.

    Args:
        dataset: Dataset sintético
        backbones: Backbones congelados y con hash
        cham: Parámetros iniciales (se modifican en el sitio)
        config: Configuración (train, loss_weights)
        log_path: Si se pasa, JSONL con un registro por paso y por época
        checkpoint_dir: Directorio para los checkpoints cada train.checkpoint_every pasos
        show_progress: Mostrar barra de progreso

    Returns:
        (CHAM entrenado, TrainingLog)

    Raises:
        FrozenParamsModified: backbone sin congelar o con hash distinto al terminar
        NonFiniteLoss: pérdida no finita
        EmptySplit: split de entrenamiento vacío
    """
    cfg = config.train
    hashes = _check_frozen(backbones)
    history = TrainingLog(backbone_hashes=hashes)
    if cfg.epochs == 0:
        logger.info("0 épocas: CHAM queda como se inicializó")
        return cham, history

    indices = dataset.split("train")
    logger.step(f"Preparando {len(indices)} muestras de entrenamiento")
    prepared = [prepare_sample(dataset, backbones, i) for i in indices]
    logger.step_complete(f"Preparando {len(indices)} muestras de entrenamiento")

    cham.train()
    optimizer = torch.optim.SGD(cham.parameters(), lr=cfg.lr)
    milestone = math.ceil(cfg.decay_at * cfg.epochs)
    scheduler = torch.optim.lr_scheduler.MultiStepLR(optimizer, milestones=[milestone], gamma=cfg.lr_decay)
    gen = seeded_generator(cfg.seed)
    count = len(prepared)
    batch = min(cfg.batch_size, count)

    sink = JsonlLogSink(log_path) if log_path else None
    if sink is not None:
        add_log_callback(sink)
    step = 0
    try:
        for epoch in range(cfg.epochs):
            order = torch.randperm(count, generator=gen).tolist()
            lr = optimizer.param_groups[0]["lr"]
            epoch_losses = []
            batches = range(0, count, batch)
            for start in tqdm(batches, desc=f"Época {epoch + 1}/{cfg.epochs}", disable=not show_progress):
                chosen = [prepared[i] for i in order[start:start + batch]]
                loss, terms = batch_loss(chosen, dataset, backbones, cham, config)
                if not bool(torch.isfinite(loss.detach())):
                    raise NonFiniteLoss(f"Pérdida no finita en el paso {step}")
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()

                record = {"phase": "train", "epoch": epoch, "step": step, "lr": lr,
                          "loss": float(loss.detach()), "terms": terms}
                history.steps.append(record)
                epoch_losses.append(record["loss"])
                logger.train_step(record)
                step += 1
                if checkpoint_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    path = save_module(cham, os.path.join(checkpoint_dir, f"cham_step{step:06d}.json"), "cham")
                    history.checkpoints.append(path)
            scheduler.step()

            mean_loss = sum(epoch_losses) / len(epoch_losses)
            metrics = {}
            if cfg.eval_every_epoch and dataset.manifest.splits.get("heldout"):
                cham.eval()
                metrics = evaluate(dataset, "heldout", backbones, cham, config, "cham").summary()
                cham.train()
            epoch_record = {"phase": "epoch", "epoch": epoch, "lr": lr, "mean_loss": mean_loss, "heldout": metrics}
            history.epochs.append(epoch_record)
            logger.train_step(epoch_record)
            logger.epoch_summary(epoch + 1, cfg.epochs, mean_loss, metrics)
    finally:
        if sink is not None:
            remove_log_callback(sink)
            sink.close()

    cham.eval()
    after = {"body": verify_frozen(backbones.body, hashes["body"]), "hand": verify_frozen(backbones.hand, hashes["hand"])}
    logger.step_complete("Entrenamiento de CHAM", f"{step} pasos, hashes de backbones intactos ({after['body'][:12]})")
    return cham, history
