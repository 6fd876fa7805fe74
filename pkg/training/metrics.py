"""
Métricas de evaluación en milímetros.

- MPVPE: error medio por vértice tras trasladar ambas mallas para que sus
  puntos de alineación coincidan (pelvis para el cuerpo, muñeca para manos).
- MRRPE: diferencia entre los vectores muñeca izquierda - muñeca derecha.
- PA-MPVPE: error tras alinear por similitud (Procrustes).
"""

import math
from typing import Any, Dict, List, Optional, Sequence

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from articulated.kinematics import PoseState, global_joint_orientation, keypoints_3d
from articulated.spec import SIDES, ArticulatedModelSpec
from geometry.mesh import Mesh
from geometry.registration import apply_similarity, procrustes_similarity
from geometry.rotations import geodesic_distance
from geometry.tensors import as_float64
from transfer.hand_transfer import hand_region_vertices, hand_wrist_position
from utils.errors import DimMismatch

MM = 1000.0


def _vertices(mesh) -> torch.Tensor:
    return as_float64(mesh.vertices if isinstance(mesh, Mesh) else mesh).detach()


def mpvpe(pred, gt, align_joint_pred: torch.Tensor, align_joint_gt: torch.Tensor) -> float:
    """
    MPVPE con alineación por traslación en un punto.

    Args:
        pred: Mesh o vértices (V, 3) predichos
        gt: Mesh o vértices (V, 3) reales, en correspondencia
        align_joint_pred: Punto de alineación de la predicción (3,)
        align_joint_gt: Punto de alineación real (3,)

    Returns:
        Error medio en mm

    Raises:
        DimMismatch: conteos de vértices distintos
    """
    p, g = _vertices(pred), _vertices(gt)
    if p.shape != g.shape:
        raise DimMismatch(f"Mallas de {p.shape[0]} y {g.shape[0]} vértices")
    diff = (p - as_float64(align_joint_pred).detach()) - (g - as_float64(align_joint_gt).detach())
    return float(MM * diff.norm(dim=-1).mean())


def mrrpe(pred_lwrist: torch.Tensor, pred_rwrist: torch.Tensor,
          gt_lwrist: torch.Tensor, gt_rwrist: torch.Tensor) -> float:
    """Norma de (pL - pR)_pred - (pL - pR)_gt en mm."""
    pred_rel = as_float64(pred_lwrist).detach() - as_float64(pred_rwrist).detach()
    gt_rel = as_float64(gt_lwrist).detach() - as_float64(gt_rwrist).detach()
    return float(MM * (pred_rel - gt_rel).norm())


def pa_mpvpe(pred, gt) -> float:
    """
    MPVPE tras alinear pred a gt con la similitud óptima.

    Raises:
        DimMismatch: conteos de vértices distintos
        DegenerateConfiguration: vértices predichos de rango < 2
    """
    p, g = _vertices(pred), _vertices(gt)
    if p.shape != g.shape:
        raise DimMismatch(f"Mallas de {p.shape[0]} y {g.shape[0]} vértices")
    scale, transform = procrustes_similarity(p, g)
    aligned = apply_similarity(scale, transform, p)
    return float(MM * (aligned - g).norm(dim=-1).mean())


# ==================== Reportes ====================

class SampleMetrics(BaseModel):
    """Métricas de una muestra; None cuando la métrica no aplica."""

    model_config = ConfigDict(extra="forbid")

    index: int
    kind: str
    detected: List[str]
    mpvpe_full: float = Field(ge=0.0)
    mpvpe_hands: Optional[float] = Field(default=None, ge=0.0)
    mrrpe: Optional[float] = Field(default=None, ge=0.0)
    pa_mpvpe: float = Field(ge=0.0)
    wrist_geodesic: float = Field(ge=0.0)


class MetricsReport(BaseModel):
    """Métricas agregadas (media sobre las muestras donde aplican) y su contexto."""

    model_config = ConfigDict(extra="forbid")

    strategy: str
    split: str
    sample_count: int
    mpvpe_full: float = Field(ge=0.0)
    mpvpe_hands: float = Field(ge=0.0)
    mrrpe: float = Field(ge=0.0)
    pa_mpvpe: float = Field(ge=0.0)
    wrist_geodesic: float = Field(ge=0.0)
    per_sample: List[SampleMetrics]
    seeds: Dict[str, int] = Field(default_factory=dict)
    backbone_hashes: Dict[str, str] = Field(default_factory=dict)
    config: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_finite(self) -> "MetricsReport":
        for name in ("mpvpe_full", "mpvpe_hands", "mrrpe", "pa_mpvpe", "wrist_geodesic"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} no es finito")
        return self

    def summary(self) -> Dict[str, float]:
        return {
            "mpvpe_full": self.mpvpe_full,
            "mpvpe_hands": self.mpvpe_hands,
            "mrrpe": self.mrrpe,
            "pa_mpvpe": self.pa_mpvpe,
            "wrist_geodesic": self.wrist_geodesic,
        }


def _mean(values: Sequence[Optional[float]]) -> float:
    present = [v for v in values if v is not None]
    return sum(present) / len(present) if present else 0.0


def aggregate(per_sample: List[SampleMetrics], strategy: str, split: str, **context) -> MetricsReport:
    """Reporte con la media de cada métrica sobre las muestras donde existe (0 si ninguna)."""
    return MetricsReport(
        strategy=strategy,
        split=split,
        sample_count=len(per_sample),
        mpvpe_full=_mean([m.mpvpe_full for m in per_sample]),
        mpvpe_hands=_mean([m.mpvpe_hands for m in per_sample]),
        mrrpe=_mean([m.mrrpe for m in per_sample]),
        pa_mpvpe=_mean([m.pa_mpvpe for m in per_sample]),
        wrist_geodesic=_mean([m.wrist_geodesic for m in per_sample]),
        per_sample=per_sample,
        **context,
    )


def score_sample(body_spec: ArticulatedModelSpec, index: int, kind: str, detected_sides: Sequence[str],
                 pred_mesh: Mesh, gt_mesh: Mesh, pred_pose: PoseState, gt_pose: PoseState) -> SampleMetrics:
    """
    Métricas de una muestra con las reglas de alineación de cada una.

    El cuerpo se alinea en la pelvis; cada mano detectada se compara sobre
    los vértices de su región, alineada en su marcador de muñeca. MRRPE
    sólo existe con ambas manos detectadas.
    """
    pred_pelvis = keypoints_3d(body_spec, pred_pose)[0]
    gt_pelvis = keypoints_3d(body_spec, gt_pose)[0]
    hands = [
        mpvpe(hand_region_vertices(pred_mesh, body_spec, side), hand_region_vertices(gt_mesh, body_spec, side),
              hand_wrist_position(pred_mesh, body_spec, side), hand_wrist_position(gt_mesh, body_spec, side))
        for side in detected_sides
    ]
    relative = None
    if set(detected_sides) == set(SIDES):
        relative = mrrpe(
            hand_wrist_position(pred_mesh, body_spec, "left"), hand_wrist_position(pred_mesh, body_spec, "right"),
            hand_wrist_position(gt_mesh, body_spec, "left"), hand_wrist_position(gt_mesh, body_spec, "right"),
        )
    wrist = torch.stack([
        geodesic_distance(global_joint_orientation(body_spec, pred_pose, f"{side}_wrist"),
                          global_joint_orientation(body_spec, gt_pose, f"{side}_wrist"))
        for side in SIDES
    ]).mean()
    return SampleMetrics(
        index=index,
        kind=kind,
        detected=list(detected_sides),
        mpvpe_full=mpvpe(pred_mesh, gt_mesh, pred_pelvis, gt_pelvis),
        mpvpe_hands=sum(hands) / len(hands) if hands else None,
        mrrpe=relative,
        pa_mpvpe=pa_mpvpe(pred_mesh, gt_mesh),
        wrist_geodesic=float(wrist.detach()),
    )
