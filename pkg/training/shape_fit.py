"""
Ajuste de forma de mano a una malla objetivo.

Se optimiza beta (y opcionalmente la pose de dedos) con L-BFGS. En cada
evaluación la mano se alinea rígidamente al objetivo con Kabsch sobre la
muñeca y los cuatro MCP, y la pérdida suma:

    w_kp  · ℓ1 de los 5 marcadores alineados
    w_p2p · distancia media punto a punto
    w_reg · ||beta||²

La base puede ser la de la mano o la del cuerpo restringida a su región de
mano, para comparar la expresividad de ambas.
"""

from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import torch

from articulated.kinematics import shape_subset
from articulated.spec import ArticulatedModelSpec
from geometry.mesh import Mesh
from geometry.registration import kabsch_rigid
from geometry.tensors import DTYPE, as_float64
from transfer.hand_transfer import HAND_MARKER_INDICES, canonical_hand
from utils.errors import DimMismatch, NonFiniteLoss
from utils.rich_logger import get_logger

logger = get_logger("posefuse.shape_fit")

MM = 1000.0
FIT_SIDE = "left"

Basis = Literal["hand", "body"]
Correspondence = Literal["auto", "fixed", "nearest"]


@dataclass
class ShapeFitReport:
    """Traza y resultado de un ajuste."""

    basis: str
    correspondence: str
    iterations: int
    loss_trace: List[float] = field(default_factory=list)
    point_error_trace: List[float] = field(default_factory=list)
    final_point_error_mm: float = 0.0
    final_keypoint_error_mm: float = 0.0
    theta: Optional[torch.Tensor] = None


class _ShapeSource:
    """Vértices y marcadores de la base elegida en función de (beta, theta)."""

    def __init__(self, basis: str, hand_spec: ArticulatedModelSpec, body_spec: Optional[ArticulatedModelSpec]):
        self.basis = basis
        self.hand_spec = hand_spec
        if basis == "body":
            if body_spec is None:
                raise DimMismatch("La base 'body' necesita el spec del cuerpo")
            self.body_spec = body_spec
            self.region = body_spec.hand_region(FIT_SIDE)
            self.num_betas = body_spec.num_betas
            # vértice de la región para cada vértice de la mano
            order = sorted(range(len(self.region.correspondence)), key=lambda k: self.region.correspondence[k])
            self.hand_order = torch.as_tensor(order, dtype=torch.long)
        elif basis == "hand":
            self.num_betas = hand_spec.num_betas
        else:
            raise DimMismatch(f"Base desconocida '{basis}'")

    @property
    def vertex_count(self) -> int:
        return self.hand_spec.vertex_count if self.basis == "hand" else len(self.region.vertex_indices)

    def __call__(self, beta: torch.Tensor, theta: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if self.basis == "hand":
            posed = canonical_hand(self.hand_spec, theta, beta)
            return posed.vertices, posed.joints[HAND_MARKER_INDICES]
        region_vertices = shape_subset(self.body_spec, beta, self.region.vertex_indices)
        markers = self.region.marker_regressor @ region_vertices
        return region_vertices[self.hand_order], markers


def _point_distances(src: torch.Tensor, target: torch.Tensor, mode: str) -> torch.Tensor:
    if mode == "fixed":
        return (src - target).norm(dim=-1)
    with torch.no_grad():
        nearest = torch.cdist(target, src).argmin(dim=-1)
    return (src[nearest] - target).norm(dim=-1)


def fit_shape_to_target(hand_spec: ArticulatedModelSpec, target: Mesh, target_keypoints: torch.Tensor,
                        iters: int = 500, weights: Tuple[float, float, float] = (1.0, 1.0, 0.001),
                        basis: Basis = "hand", body_spec: Optional[ArticulatedModelSpec] = None,
                        correspondence: Correspondence = "auto", refine_pose: bool = False,
                        theta_init: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, ShapeFitReport]:
    """
    Ajusta beta para que la mano reproduzca una malla objetivo.

    Se arranca en beta = 0 con la alineación rígida de muñeca + 4 MCP; cada
    iteración es un paso de L-BFGS con búsqueda de Wolfe fuerte.

    Args:
        hand_spec: Modelo de mano (topología del objetivo)
        target: Malla objetivo
        target_keypoints: (5, 3) muñeca y 4 MCP del objetivo, o (16, 3) articulaciones de mano
        iters: Iteraciones de L-BFGS
        weights: (keypoints, punto a punto, regularización)
        basis: "hand" usa la base de la mano; "body" la del cuerpo en su región de mano
        body_spec: Necesario con basis="body"
        correspondence: "fixed" por índice, "nearest" por vecino más cercano,
            "auto" fija si los conteos coinciden
        refine_pose: Optimizar también la pose de dedos (base "hand")
        theta_init: Pose de dedos inicial (15, 3); ceros por defecto

    Returns:
        (beta ajustado, reporte con las trazas)

    Raises:
        DimMismatch: correspondencia fija con conteos distintos
        NonFiniteLoss: si la pérdida deja de ser finita
    """
    source = _ShapeSource(basis, hand_spec, body_spec)
    target_vertices = as_float64(target.vertices).detach()
    markers_target = as_float64(target_keypoints).detach()
    if markers_target.shape[0] != len(HAND_MARKER_INDICES):
        markers_target = markers_target[HAND_MARKER_INDICES]

    if correspondence == "auto":
        correspondence = "fixed" if target_vertices.shape[0] == source.vertex_count else "nearest"
    if correspondence == "fixed" and target_vertices.shape[0] != source.vertex_count:
        raise DimMismatch(
            f"Correspondencia fija con {target_vertices.shape[0]} vértices objetivo y {source.vertex_count} de la base"
        )

    beta = torch.zeros(source.num_betas, dtype=DTYPE, requires_grad=True)
    theta = torch.zeros(hand_spec.joint_count - 1, 3, dtype=DTYPE) if theta_init is None else as_float64(theta_init).clone()
    variables = [beta]
    if refine_pose and basis == "hand":
        theta.requires_grad_(True)
        variables.append(theta)
    w_kp, w_p2p, w_reg = weights

    def evaluate() -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        vertices, markers = source(beta, theta)
        transform = kabsch_rigid(markers, markers_target)
        kp = (transform.apply(markers) - markers_target).abs().mean()
        p2p = _point_distances(transform.apply(vertices), target_vertices, correspondence).mean()
        loss = w_kp * kp + w_p2p * p2p + w_reg * (beta * beta).sum()
        return loss, p2p, kp

    def closure() -> torch.Tensor:
        optimizer.zero_grad()
        loss, _, _ = evaluate()
        if not bool(torch.isfinite(loss.detach())):
            raise NonFiniteLoss("Pérdida no finita en el ajuste de forma")
        loss.backward()
        return loss

    optimizer = torch.optim.LBFGS(variables, lr=1.0, max_iter=1, line_search_fn="strong_wolfe")
    report = ShapeFitReport(basis=basis, correspondence=correspondence, iterations=iters)
    with torch.no_grad():
        loss, p2p, kp = evaluate()
    report.loss_trace.append(float(loss))
    report.point_error_trace.append(MM * float(p2p))
    for _ in range(iters):
        optimizer.step(closure)
        with torch.no_grad():
            loss, p2p, kp = evaluate()
        report.loss_trace.append(float(loss))
        report.point_error_trace.append(MM * float(p2p))

    report.final_point_error_mm = report.point_error_trace[-1]
    report.final_keypoint_error_mm = MM * float(kp)
    report.theta = theta.detach().clone()
    logger.debug(f"Ajuste de forma ({basis}, {correspondence}): {report.final_point_error_mm:.4f} mm tras {iters} iteraciones")
    return beta.detach().clone(), report
