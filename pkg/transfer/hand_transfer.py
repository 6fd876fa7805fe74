"""
Transferencia de dedos y forma de la mano al cuerpo.

La mano se genera en el espacio canónico de muñeca (raíz identidad), se
alinea rígidamente al cuerpo con la muñeca y los cuatro MCP, sustituye la
región de mano de la malla del cuerpo y la costura se suaviza. La
orientación de muñeca del flujo de mano nunca entra aquí.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import torch

from articulated.kinematics import (
    PosedModel,
    PoseState,
    forward_kinematics,
    hand_keypoints,
    pose_model,
    shape_mesh,
    shape_subset,
    skin_vertices,
)
from articulated.spec import SIDES, ArticulatedModelSpec
from geometry.mesh import Mesh, laplacian_smooth, ring_neighborhood, unique_edges, vertex_neighbors
from geometry.registration import covariance_singular_values, kabsch_rigid
from geometry.rigid import RigidTransform
from geometry.rotations import axis_angle_to_matrix
from geometry.tensors import DTYPE, as_float64
from utils.config import TransferConfig
from utils.errors import DimMismatch, NearDegenerateAlignment, UnknownSide

# separación mínima entre valores singulares de la covarianza para confiar en el gradiente
SINGULAR_GAP = 1e-8
# muñeca, index_mcp, middle_mcp, ring_mcp, pinky_mcp en el orden de la mano de juguete
HAND_MARKER_INDICES = [0, 1, 4, 7, 10]


def _finger_rotations(theta: torch.Tensor, count: int) -> torch.Tensor:
    theta = as_float64(theta)
    if theta.shape[-2:] == (count, 3):
        return axis_angle_to_matrix(theta)
    if theta.shape[-3:] == (count, 3, 3):
        return theta
    raise DimMismatch(f"theta {tuple(theta.shape)}: se esperaban {count} rotaciones")


def canonical_hand(hand_spec: ArticulatedModelSpec, theta: torch.Tensor, beta: torch.Tensor) -> PosedModel:
    """Mano posada con raíz identidad y traslación nula (admite batch)."""
    local = _finger_rotations(theta, hand_spec.joint_count - 1)
    beta = as_float64(beta)
    batch = local.shape[:-3]
    pose = PoseState(
        root_orientation=torch.eye(3, dtype=DTYPE).expand(*batch, 3, 3),
        root_translation=torch.zeros(*batch, 3, dtype=DTYPE),
        local_rotations=local,
        shape=beta,
    )
    return pose_model(hand_spec, pose)


def canonical_hand_mesh(hand_spec: ArticulatedModelSpec, theta: torch.Tensor,
                        beta: torch.Tensor) -> Tuple[Mesh, torch.Tensor]:
    """
    Malla y keypoints de la mano en el espacio canónico de muñeca.

    Args:
        hand_spec: Modelo de mano
        theta: 15 rotaciones de dedos, eje-ángulo (15, 3) o matrices (15, 3, 3)
        beta: Forma (10,)

    Returns:
        (Mesh, articulaciones (16, 3))

    Raises:
        DimMismatch: theta o beta con dimensiones incorrectas
    """
    posed = canonical_hand(hand_spec, theta, beta)
    return Mesh(posed.vertices, hand_spec.faces), posed.joints


def _check_side(side: str) -> None:
    if side not in SIDES:
        raise UnknownSide(side)


def body_target_points(body_spec: ArticulatedModelSpec, body_pose: PoseState, side: str,
                       posed: Optional[PosedModel] = None) -> torch.Tensor:
    """
    Posiciones posadas de muñeca + 4 MCP del cuerpo para un lado.

    Los marcadores se regresan de los vértices de la región de mano, que
    siguen rígidamente a la muñeca del cuerpo.

    Args:
        body_spec: Modelo de cuerpo
        body_pose: Pose (admite batch)
        side: "left" o "right"
        posed: Cuerpo ya posado con esta pose, para no repetir el skinning

    Returns:
        (..., 5, 3) metros

    Raises:
        UnknownSide: lado inválido
    """
    _check_side(side)
    region = body_spec.hand_region(side)
    if posed is not None:
        vertices = posed.vertices[..., region.vertex_indices, :]
    else:
        _, rest_joints = shape_mesh(body_spec, body_pose.shape)
        transforms = forward_kinematics(body_spec, body_pose, rest_joints)
        shaped = shape_subset(body_spec, body_pose.shape, region.vertex_indices)
        vertices = skin_vertices(body_spec, shaped, transforms, rest_joints, region.vertex_indices)
    return region.marker_regressor @ vertices


def align_hand_to_body(canonical_kps: torch.Tensor, targets: torch.Tensor) -> RigidTransform:
    """
    Alineación rígida (sin escala) de los 5 marcadores canónicos a los del cuerpo.

    Args:
        canonical_kps: Articulaciones canónicas (..., 16, 3); se usan 0, 1, 4, 7, 10
        targets: Marcadores del cuerpo (..., 5, 3)

    Raises:
        DegenerateConfiguration: marcadores canónicos de rango < 2
    """
    canonical_kps = as_float64(canonical_kps)
    if canonical_kps.shape[-2] < 11:
        raise DimMismatch(f"Se esperaban al menos 11 keypoints canónicos, llegaron {canonical_kps.shape[-2]}")
    markers = canonical_kps[..., HAND_MARKER_INDICES, :]
    return kabsch_rigid(markers, as_float64(targets))


@dataclass(frozen=True)
class SeamTopology:
    """Topología cacheada de la costura de un lado."""

    region: List[int]
    band: List[int]
    touched: List[int]
    neighbors: List[List[int]]
    seam_edges: torch.Tensor


def seam_topology(body_spec: ArticulatedModelSpec, side: str, band: int) -> SeamTopology:
    """Región, banda de suavizado y aristas que cruzan la costura (memoizado en el spec)."""
    _check_side(side)

    def compute():
        region = body_spec.hand_region(side)
        template = Mesh(body_spec.template_vertices, body_spec.faces)
        neighbors = body_spec.cached("vertex_neighbors", lambda: vertex_neighbors(template))
        band_set = ring_neighborhood(neighbors, region.boundary_ring, band)
        inside = set(region.vertex_indices)
        edges = body_spec.cached("unique_edges", lambda: unique_edges(template))
        crossing = [(int(a), int(b)) for a, b in edges if (int(a) in inside) != (int(b) in inside)]
        return SeamTopology(
            region=list(region.vertex_indices),
            band=band_set,
            touched=sorted(inside | set(band_set)),
            neighbors=neighbors,
            seam_edges=torch.tensor(crossing, dtype=torch.long).reshape(-1, 2),
        )

    return body_spec.cached(("seam", side, int(band)), compute)


def transfer_hand(body_mesh: Mesh, hand_mesh: Mesh, transform: RigidTransform,
                  body_spec: ArticulatedModelSpec, side: str,
                  smooth: Optional[TransferConfig] = None) -> Mesh:
    """
    Sustituye la región de mano del cuerpo por la mano alineada y suaviza la costura.

    El suavizado actúa sobre el desplazamiento (mano alineada menos cuerpo)
    en el anillo de borde y su vecindad de `band` anillos; los vértices fuera
    de región y banda quedan idénticos bit a bit.

    Args:
        body_mesh: Malla posada del cuerpo
        hand_mesh: Malla canónica de la mano
        transform: Alineación de align_hand_to_body
        body_spec: Spec con la correspondencia de la región
        side: Lado
        smooth: Parámetros de suavizado (por defecto λ=0.5, 5 iteraciones, banda 1)

    Returns:
        Nueva malla del cuerpo

    Raises:
        CorrespondenceMissing: el spec no trae la región de ese lado
        UnknownSide: lado inválido
    """
    smooth = smooth or TransferConfig()
    region = body_spec.hand_region(side)
    topo = seam_topology(body_spec, side, smooth.smooth_band)
    body = body_mesh.vertices
    aligned = transform.apply(hand_mesh.vertices)[region.correspondence]
    region_idx = torch.tensor(topo.region, dtype=torch.long)
    offsets = torch.zeros_like(body).index_copy(0, region_idx, aligned - body[region_idx])
    if smooth.smooth_iters > 0 and topo.band:
        offsets = laplacian_smooth(
            Mesh(offsets, body_mesh.faces), topo.band, smooth.smooth_lambda, smooth.smooth_iters,
            neighbors=topo.neighbors,
        ).vertices
    touched = torch.tensor(topo.touched, dtype=torch.long)
    out = body.index_copy(0, touched, body[touched] + offsets[touched])
    return Mesh(out, body_mesh.faces, body_mesh.boundary_ring)


def seam_discontinuity(mesh: Mesh, reference: Mesh, body_spec: ArticulatedModelSpec, side: str) -> float:
    """
    Máximo de max(r, 1/r) sobre las aristas que cruzan la costura, r = longitud / longitud de referencia.

    Vale 1 cuando las aristas de la costura conservan su longitud.
    """
    topo = seam_topology(body_spec, side, 0)
    if topo.seam_edges.numel() == 0:
        return 1.0
    a, b = topo.seam_edges[:, 0], topo.seam_edges[:, 1]
    length = (mesh.vertices[a] - mesh.vertices[b]).norm(dim=-1).detach()
    rest = (reference.vertices[a] - reference.vertices[b]).norm(dim=-1).detach()
    ratio = length / rest
    return float(torch.maximum(ratio, 1.0 / ratio).max())


def transfer_jacobian(canonical_kps: torch.Tensor, targets: torch.Tensor,
                      tracked: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Jacobiano de los vértices alineados respecto a los 5 marcadores destino.

    Args:
        canonical_kps: Articulaciones canónicas (16, 3)
        targets: Marcadores del cuerpo (5, 3)
        tracked: Vértices canónicos a seguir (P, 3); por defecto los propios keypoints

    Returns:
        (3P, 15): fila 3p+i, columna 3m+j = d v'_p[i] / d target_m[j]

    Raises:
        NearDegenerateAlignment: valores singulares de la covarianza separados por menos de 1e-8
    """
    canonical_kps = as_float64(canonical_kps).detach()
    targets = as_float64(targets).detach()
    tracked = canonical_kps if tracked is None else as_float64(tracked).detach()
    sv = covariance_singular_values(canonical_kps[HAND_MARKER_INDICES], targets)
    gaps = sv[:-1] - sv[1:]
    if bool((gaps < SINGULAR_GAP).any()):
        raise NearDegenerateAlignment(
            f"Valores singulares {[float(s) for s in sv]}: separación mínima {float(gaps.min()):.3g}"
        )

    def aligned(flat_targets: torch.Tensor) -> torch.Tensor:
        transform = align_hand_to_body(canonical_kps, flat_targets.reshape(5, 3))
        return transform.apply(tracked).reshape(-1)

    return torch.autograd.functional.jacobian(aligned, targets.reshape(-1))


# ==================== Ensamblado de la malla completa ====================

@dataclass
class HandPlacement:
    """Mano de un lado colocada sobre el cuerpo."""

    side: str
    transform: RigidTransform
    canonical_joints: torch.Tensor
    joints: torch.Tensor
    keypoints: torch.Tensor


def assemble_full_mesh(body_spec: ArticulatedModelSpec, hand_spec: ArticulatedModelSpec,
                       body_pose: PoseState, hands: Dict[str, Optional[Tuple[torch.Tensor, torch.Tensor]]],
                       smooth: Optional[TransferConfig] = None,
                       posed: Optional[PosedModel] = None) -> Tuple[Mesh, Dict[str, HandPlacement]]:
    """
    Cuerpo posado con las manos transferidas.

    Args:
        body_spec: Modelo de cuerpo
        hand_spec: Modelo de mano
        body_pose: Pose del cuerpo (sin batch)
        hands: Por lado, (theta, beta) o None para conservar la mano del cuerpo
        smooth: Parámetros de suavizado
        posed: Cuerpo ya posado

    Returns:
        (malla completa, colocación por lado transferido)
    """
    posed = posed or pose_model(body_spec, body_pose)
    mesh = Mesh(posed.vertices, body_spec.faces)
    placements: Dict[str, HandPlacement] = {}
    for side in SIDES:
        params = hands.get(side)
        if params is None:
            continue
        theta, beta = params
        hand = canonical_hand(hand_spec, theta, beta)
        targets = body_target_points(body_spec, body_pose, side, posed=posed)
        transform = align_hand_to_body(hand.joints, targets)
        keypoints = hand_keypoints(hand_spec, hand.vertices, hand.joints)
        mesh = transfer_hand(mesh, Mesh(hand.vertices, hand_spec.faces), transform, body_spec, side, smooth)
        placements[side] = HandPlacement(
            side=side,
            transform=transform,
            canonical_joints=hand.joints,
            joints=transform.apply(hand.joints),
            keypoints=transform.apply(keypoints),
        )
    return mesh, placements


def hand_region_vertices(mesh: Mesh, body_spec: ArticulatedModelSpec, side: str) -> torch.Tensor:
    return mesh.vertices[body_spec.hand_region(side).vertex_indices]


def hand_wrist_position(mesh: Mesh, body_spec: ArticulatedModelSpec, side: str) -> torch.Tensor:
    """Marcador de muñeca regresado de la región de mano de una malla completa."""
    region = body_spec.hand_region(side)
    return region.marker_regressor[0] @ mesh.vertices[region.vertex_indices]


def place_hand_joints(body_spec: ArticulatedModelSpec, body_pose: PoseState, side: str,
                      canonical_joints: torch.Tensor) -> torch.Tensor:
    """
    Articulaciones de una mano canónica colocadas sobre la muñeca del cuerpo.

    Es la parte de assemble_full_mesh que depende de la pose del cuerpo, sin
    tocar la malla; conserva el grafo de autograd hacia body_pose.
    """
    targets = body_target_points(body_spec, body_pose, side)
    return align_hand_to_body(canonical_joints, targets).apply(canonical_joints)
