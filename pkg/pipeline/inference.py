"""
Inferencia de extremo a extremo.

backbone de mano por lado detectado -> CHAM -> backbone de cuerpo modulado
-> skinning del cuerpo -> transferencia de cada mano detectada. Las manos no
detectadas conservan la región de mano del modelo de cuerpo.

Estrategias para combinar los dos estimadores:

    frozen      backbone de cuerpo sin modulación
    wrist_copy  igual que frozen, pero la rotación local de cada muñeca
                detectada se sobrescribe con la orientación del flujo de mano
    cham        pipeline completo con la modulación de CHAM
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch

from articulated.kinematics import PoseState, global_joint_orientation, pose_model
from articulated.spec import SIDES, ArticulatedModelSpec
from backbones.body import BodyBackboneParams, body_backbone_forward
from backbones.common import parameter_hash
from backbones.hand import HandBackboneParams, HandObservation, hand_backbone_forward
from cham.forward import cham_forward
from cham.modulator import ChamParams, ModulationStack
from geometry.grids import Affine2D
from geometry.mesh import Mesh
from geometry.rotations import geodesic_distance
from pipeline.dataset import Sample, SyntheticDataset
from pipeline.scenes import GroundTruth
from pipeline.timing import NullTimer, StageTimer
from training.metrics import SampleMetrics, score_sample
from transfer.hand_transfer import HandPlacement, assemble_full_mesh
from utils.config import TransferConfig
from utils.errors import InvariantViolation

STRATEGIES = ("frozen", "wrist_copy", "cham")


@dataclass
class Backbones:
    """Par de backbones congelados."""

    body: BodyBackboneParams
    hand: HandBackboneParams

    def hashes(self) -> Dict[str, str]:
        return {"body": parameter_hash(self.body), "hand": parameter_hash(self.hand)}


@dataclass(frozen=True)
class InferenceContext:
    """Todo lo que la inferencia necesita saber del dataset."""

    body_spec: ArticulatedModelSpec
    hand_spec: ArticulatedModelSpec
    body_grid: Tuple[int, int]
    body_affine: Affine2D
    image_dims: Tuple[int, int]
    transfer: TransferConfig
    use_cross_attention: bool = True

    @classmethod
    def from_dataset(cls, dataset: SyntheticDataset, use_cross_attention: bool = True) -> "InferenceContext":
        return cls(
            body_spec=dataset.body_spec,
            hand_spec=dataset.hand_spec,
            body_grid=dataset.body_grid,
            body_affine=dataset.body_affine,
            image_dims=dataset.image_dims,
            transfer=dataset.transfer_config,
            use_cross_attention=use_cross_attention,
        )


@dataclass
class InferenceResult:
    """Salida de una inferencia."""

    mesh: Mesh
    pose: PoseState
    observations: Dict[str, HandObservation]
    placements: Dict[str, HandPlacement]
    modulation: Optional[ModulationStack] = None
    metrics: Optional[SampleMetrics] = None
    strategy: str = "cham"


def observe_hands(hand_params: HandBackboneParams, sample: Sample) -> Dict[str, HandObservation]:
    """Observación del backbone de mano para ambos lados (vacía si no hay detección)."""
    return {
        side: hand_backbone_forward(hand_params, sample.hand_tokens[side], side, sample.scene.detected[side])
        for side in SIDES
    }


def copy_wrist_orientation(body_spec: ArticulatedModelSpec, pose: PoseState,
                           observations: Dict[str, HandObservation]) -> PoseState:
    """
    Sobrescribe la muñeca de cada lado detectado con la orientación del flujo de mano.

    La rotación local es R_padre^T · R_mano, de modo que la global de la
    muñeca pasa a ser exactamente la que vio el estimador de mano.
    """
    local = pose.local_rotations.clone()
    for side, obs in observations.items():
        if not obs.detected:
            continue
        joint = body_spec.joint_index(f"{side}_wrist")
        parent = body_spec.parents[joint]
        parent_global = pose.root_orientation
        for j in body_spec.chain(parent)[1:]:
            parent_global = parent_global @ local[j - 1]
        local[joint - 1] = parent_global.transpose(-1, -2) @ obs.wrist_orientation
    return PoseState(pose.root_orientation, pose.root_translation, local, pose.shape)


def predict_modulation(observations: Dict[str, HandObservation], cham: ChamParams,
                       context: InferenceContext) -> ModulationStack:
    return cham_forward(observations["left"], observations["right"], cham, context.body_grid,
                        context.body_affine, context.image_dims, context.use_cross_attention)


def infer(sample: Sample, backbones: Backbones, cham: Optional[ChamParams], context: InferenceContext,
          strategy: str = "cham", ground_truth: Optional[GroundTruth] = None, oracle: bool = False,
          timer: Optional[StageTimer] = None) -> InferenceResult:
    """
    Inferencia completa de una muestra.

    Args:
        sample: Muestra con tokens de cuerpo y recortes
        backbones: Backbones congelados
        cham: Parámetros de CHAM (sólo para strategy="cham")
        context: Specs, grids y suavizado
        strategy: "frozen", "wrist_copy" o "cham"
        ground_truth: Si se pasa, se calculan las métricas de la muestra
        oracle: Inyecta la pose real del cuerpo y theta/beta reales en ambas manos
        timer: Acumulador de tiempos por etapa

    Returns:
        InferenceResult

    Raises:
        InvariantViolation: estrategia desconocida o cham ausente con strategy="cham"
    """
    if strategy not in STRATEGIES:
        raise InvariantViolation("strategy", f"estrategia desconocida '{strategy}'")
    if strategy == "cham" and cham is None:
        raise InvariantViolation("cham", "la estrategia 'cham' necesita parámetros de CHAM")
    timer = timer or NullTimer()
    scene = sample.scene

    with torch.no_grad():
        with timer.stage("hand_backbone"):
            observations = observe_hands(backbones.hand, sample)

        modulation = None
        if strategy == "cham":
            with timer.stage("cham"):
                modulation = predict_modulation(observations, cham, context)

        with timer.stage("body_backbone"):
            pose, _ = body_backbone_forward(backbones.body, sample.body_tokens, modulation)
        if strategy == "wrist_copy":
            pose = copy_wrist_orientation(context.body_spec, pose, observations)

        if oracle:
            pose = scene.body_pose
            hands = {side: (scene.hand_theta[side], scene.hand_beta[side]) for side in SIDES}
        else:
            hands = {
                side: (obs.theta, obs.beta) if obs.detected else None
                for side, obs in observations.items()
            }

        with timer.stage("skinning"):
            posed = pose_model(context.body_spec, pose)
        with timer.stage("transfer"):
            mesh, placements = assemble_full_mesh(context.body_spec, context.hand_spec, pose, hands,
                                                  context.transfer, posed=posed)

    result = InferenceResult(mesh, pose, observations, placements, modulation, strategy=strategy)
    if ground_truth is not None:
        result.metrics = score_sample(context.body_spec, scene.index, scene.kind, scene.detected_sides,
                                      mesh, ground_truth.mesh, pose, scene.body_pose)
    return result


def wrist_stream_error(body_spec: ArticulatedModelSpec, sample: Sample,
                       observations: Dict[str, HandObservation]) -> Dict[str, float]:
    """Geodésica entre la orientación del flujo de mano y la global real, por lado detectado."""
    out = {}
    for side, obs in observations.items():
        if obs.detected:
            gt = global_joint_orientation(body_spec, sample.scene.body_pose, f"{side}_wrist")
            out[side] = float(geodesic_distance(obs.wrist_orientation, gt))
    return out
