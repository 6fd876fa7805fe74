"""
Spec de modelos articulados (cuerpo y mano de juguete).

Un spec es inmutable una vez validado. El formato de archivo es JSON
"posefuse-spec-v1": el esquema se valida con pydantic y después se
comprueban los invariantes geométricos (pesos que suman 1, árbol de
articulaciones, biyecciones de correspondencia), nombrando el campo que
falla.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional

import torch
from pydantic import BaseModel, ConfigDict, ValidationError

from geometry.tensors import DTYPE, as_float64, as_index
from utils.errors import CorrespondenceMissing, InvariantViolation, IoError, ParseError, UnknownJoint, UnknownSide

SPEC_VERSION = "posefuse-spec-v1"
SIDES = ("left", "right")

BODY_REQUIRED_JOINTS = ("pelvis", "left_wrist", "right_wrist")
HAND_REQUIRED_JOINTS = ("wrist", "index_mcp", "middle_mcp", "ring_mcp", "pinky_mcp")
# orden de los marcadores de alineación: muñeca + 4 MCP
MARKER_JOINTS = HAND_REQUIRED_JOINTS

_SUM_TOL = 1e-9


@dataclass
class HandRegion:
    """
    Región de mano dentro de la malla del cuerpo.

    Attributes:
        vertex_indices: Índices de vértice del cuerpo que forman la región
        boundary_ring: Anillo de borde (índices del cuerpo) donde se une al antebrazo
        correspondence: correspondence[k] es el vértice de la mano para vertex_indices[k]
        marker_regressor: (5, K) pesos sobre la región para muñeca y 4 MCP
    """

    vertex_indices: List[int]
    boundary_ring: List[int]
    correspondence: List[int]
    marker_regressor: torch.Tensor

    def __post_init__(self):
        self.vertex_indices = [int(i) for i in self.vertex_indices]
        self.boundary_ring = [int(i) for i in self.boundary_ring]
        self.correspondence = [int(i) for i in self.correspondence]
        self.marker_regressor = as_float64(self.marker_regressor)


@dataclass
class ArticulatedModelSpec:
    """Estructura completa de un modelo paramétrico articulado."""

    kind: Literal["body", "hand"]
    parents: List[int]
    template_vertices: torch.Tensor
    faces: torch.Tensor
    rest_joint_regressor: torch.Tensor
    skinning_weights: torch.Tensor
    shape_basis: torch.Tensor
    named_joints: Dict[str, int]
    hand_regions: Optional[Dict[str, HandRegion]] = None
    tip_vertices: Optional[List[int]] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.parents = [int(p) for p in self.parents]
        self.template_vertices = as_float64(self.template_vertices)
        self.faces = as_index(self.faces)
        self.rest_joint_regressor = as_float64(self.rest_joint_regressor)
        self.skinning_weights = as_float64(self.skinning_weights)
        self.shape_basis = as_float64(self.shape_basis)
        self.named_joints = {str(k): int(v) for k, v in self.named_joints.items()}
        if self.tip_vertices is not None:
            self.tip_vertices = [int(i) for i in self.tip_vertices]

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def vertex_count(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_betas(self) -> int:
        return self.shape_basis.shape[2]

    def joint_index(self, name: str) -> int:
        if name not in self.named_joints:
            raise UnknownJoint(name)
        return self.named_joints[name]

    def hand_region(self, side: str) -> HandRegion:
        if side not in SIDES:
            raise UnknownSide(side)
        if not self.hand_regions or side not in self.hand_regions:
            raise CorrespondenceMissing(f"El spec '{self.kind}' no tiene región de mano '{side}'")
        return self.hand_regions[side]

    def chain(self, joint: int) -> List[int]:
        """Articulaciones de la raíz a `joint`, ambas incluidas."""
        out = []
        while joint >= 0:
            out.append(joint)
            joint = self.parents[joint]
        return out[::-1]

    def cached(self, key, factory):
        """Memoiza estructuras derivadas de la topología (el spec es inmutable)."""
        if key not in self._cache:
            self._cache[key] = factory()
        return self._cache[key]


# ==================== Validación ====================

def _check_rows_sum_to_one(matrix: torch.Tensor, name: str) -> None:
    if (matrix < 0).any():
        raise InvariantViolation(name, "pesos negativos")
    err = (matrix.sum(dim=-1) - 1.0).abs()
    if err.numel() and float(err.max()) > _SUM_TOL:
        row = int(err.argmax())
        raise InvariantViolation(name, f"la fila {row} suma {float(matrix[row].sum()):.12g}")


def validate_spec(spec: ArticulatedModelSpec) -> ArticulatedModelSpec:
    """
    Comprueba los invariantes del spec.

    Raises:
        InvariantViolation: con el nombre del campo que falla
    """
    j = spec.joint_count
    v = spec.vertex_count
    if spec.kind not in ("body", "hand"):
        raise InvariantViolation("kind", f"valor '{spec.kind}'")
    if j == 0 or spec.parents[0] != -1:
        raise InvariantViolation("parents", "la raíz 0 debe tener padre -1")
    for idx, p in enumerate(spec.parents[1:], start=1):
        # orden topológico: el padre siempre precede al hijo
        if not 0 <= p < idx:
            raise InvariantViolation("parents", f"padre inválido {p} para la articulación {idx}")
    if spec.template_vertices.dim() != 2 or spec.template_vertices.shape[1] != 3:
        raise InvariantViolation("template_vertices", "forma distinta de (V, 3)")
    if not torch.isfinite(spec.template_vertices).all():
        raise InvariantViolation("template_vertices", "valores no finitos")
    if spec.faces.dim() != 2 or spec.faces.shape[1] != 3:
        raise InvariantViolation("faces", "forma distinta de (F, 3)")
    if spec.faces.numel() and (int(spec.faces.min()) < 0 or int(spec.faces.max()) >= v):
        raise InvariantViolation("faces", "índice fuera de rango")
    if tuple(spec.rest_joint_regressor.shape) != (j, v):
        raise InvariantViolation("rest_joint_regressor", f"forma {tuple(spec.rest_joint_regressor.shape)} != ({j}, {v})")
    _check_rows_sum_to_one(spec.rest_joint_regressor, "rest_joint_regressor")
    if tuple(spec.skinning_weights.shape) != (v, j):
        raise InvariantViolation("skinning_weights", f"forma {tuple(spec.skinning_weights.shape)} != ({v}, {j})")
    _check_rows_sum_to_one(spec.skinning_weights, "skinning_weights")
    if spec.shape_basis.dim() != 3 or tuple(spec.shape_basis.shape[:2]) != (v, 3):
        raise InvariantViolation("shape_basis", "forma distinta de (V, 3, B)")
    if not torch.isfinite(spec.shape_basis).all():
        raise InvariantViolation("shape_basis", "valores no finitos")

    required = BODY_REQUIRED_JOINTS if spec.kind == "body" else HAND_REQUIRED_JOINTS
    for name in required:
        if name not in spec.named_joints:
            raise InvariantViolation("named_joints", f"falta '{name}'")
    if any(not 0 <= idx < j for idx in spec.named_joints.values()):
        raise InvariantViolation("named_joints", "índice fuera de rango")

    if spec.tip_vertices is not None and any(not 0 <= i < v for i in spec.tip_vertices):
        raise InvariantViolation("tip_vertices", "índice fuera de rango")

    if spec.kind == "body":
        if not spec.hand_regions or set(spec.hand_regions) != set(SIDES):
            raise InvariantViolation("hand_regions", "se necesitan las regiones 'left' y 'right'")
        for side, region in spec.hand_regions.items():
            _validate_region(region, side, v)
    elif spec.hand_regions:
        raise InvariantViolation("hand_regions", "sólo el cuerpo lleva regiones de mano")
    return spec


def _validate_region(region: HandRegion, side: str, v: int) -> None:
    name = f"hand_regions.{side}"
    k = len(region.vertex_indices)
    if k == 0 or len(set(region.vertex_indices)) != k or any(not 0 <= i < v for i in region.vertex_indices):
        raise InvariantViolation(f"{name}.vertex_indices", "índices repetidos o fuera de rango")
    if sorted(region.correspondence) != list(range(k)):
        raise InvariantViolation(f"{name}.correspondence", "no es una biyección sobre la mano")
    members = set(region.vertex_indices)
    if not region.boundary_ring or len(set(region.boundary_ring)) != len(region.boundary_ring):
        raise InvariantViolation(f"{name}.boundary_ring", "anillo vacío o con repetidos")
    if any(i not in members for i in region.boundary_ring):
        raise InvariantViolation(f"{name}.boundary_ring", "el anillo sale de la región")
    if tuple(region.marker_regressor.shape) != (len(MARKER_JOINTS), k):
        raise InvariantViolation(f"{name}.marker_regressor", f"forma {tuple(region.marker_regressor.shape)}")
    _check_rows_sum_to_one(region.marker_regressor, f"{name}.marker_regressor")


# ==================== Formato de archivo ====================

class _HandRegionFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    vertex_indices: List[int]
    boundary_ring: List[int]
    correspondence: List[int]
    marker_regressor: List[List[float]]


class _SpecFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: Literal["posefuse-spec-v1"]
    kind: Literal["body", "hand"]
    parents: List[int]
    template_vertices: List[List[float]]
    faces: List[List[int]]
    rest_joint_regressor: List[List[float]]
    skinning_weights: List[List[float]]
    shape_basis: List[List[List[float]]]
    named_joints: Dict[str, int]
    hand_regions: Optional[Dict[str, _HandRegionFile]] = None
    tip_vertices: Optional[List[int]] = None


def spec_to_dict(spec: ArticulatedModelSpec) -> dict:
    data = {
        "version": SPEC_VERSION,
        "kind": spec.kind,
        "parents": list(spec.parents),
        "template_vertices": spec.template_vertices.tolist(),
        "faces": spec.faces.tolist(),
        "rest_joint_regressor": spec.rest_joint_regressor.tolist(),
        "skinning_weights": spec.skinning_weights.tolist(),
        "shape_basis": spec.shape_basis.tolist(),
        "named_joints": dict(sorted(spec.named_joints.items())),
        "hand_regions": None,
        "tip_vertices": spec.tip_vertices,
    }
    if spec.hand_regions:
        data["hand_regions"] = {
            side: {
                "vertex_indices": region.vertex_indices,
                "boundary_ring": region.boundary_ring,
                "correspondence": region.correspondence,
                "marker_regressor": region.marker_regressor.tolist(),
            }
            for side, region in sorted(spec.hand_regions.items())
        }
    return data


def _tensor(rows, name: str, dtype=DTYPE) -> torch.Tensor:
    try:
        return torch.tensor(rows, dtype=dtype)
    except (ValueError, TypeError) as e:
        raise ParseError(f"El campo '{name}' no es un arreglo rectangular: {e}") from e


def spec_from_dict(raw: dict) -> ArticulatedModelSpec:
    """
    Construye y valida un spec desde su forma JSON.

    Raises:
        ParseError: versión o esquema incorrectos
        InvariantViolation: invariantes geométricos rotos
    """
    try:
        parsed = _SpecFile.model_validate(raw)
    except ValidationError as e:
        raise ParseError(f"Spec con esquema inválido: {e}") from e
    regions = None
    if parsed.hand_regions is not None:
        regions = {
            side: HandRegion(
                vertex_indices=r.vertex_indices,
                boundary_ring=r.boundary_ring,
                correspondence=r.correspondence,
                marker_regressor=_tensor(r.marker_regressor, f"hand_regions.{side}.marker_regressor"),
            )
            for side, r in parsed.hand_regions.items()
        }
    spec = ArticulatedModelSpec(
        kind=parsed.kind,
        parents=parsed.parents,
        template_vertices=_tensor(parsed.template_vertices, "template_vertices"),
        faces=_tensor(parsed.faces, "faces", dtype=torch.long),
        rest_joint_regressor=_tensor(parsed.rest_joint_regressor, "rest_joint_regressor"),
        skinning_weights=_tensor(parsed.skinning_weights, "skinning_weights"),
        shape_basis=_tensor(parsed.shape_basis, "shape_basis"),
        named_joints=parsed.named_joints,
        hand_regions=regions,
        tip_vertices=parsed.tip_vertices,
    )
    return validate_spec(spec)


def save_model_spec(spec: ArticulatedModelSpec, path: str) -> str:
    """Escribe el spec en JSON canónico."""
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(spec_to_dict(spec), f, sort_keys=True, separators=(",", ":"))
    except OSError as e:
        raise IoError(f"No se pudo escribir {path}: {e}") from e
    return path


def load_model_spec(path: str) -> ArticulatedModelSpec:
    """
    Lee y valida un spec.

    Raises:
        ParseError: archivo inexistente, JSON inválido o esquema incorrecto
        InvariantViolation: invariantes rotos, con el campo nombrado
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError as e:
        raise ParseError(f"No existe el spec {path}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"JSON inválido en {path}: {e}") from e
    return spec_from_dict(raw)


def spec_hash(spec: ArticulatedModelSpec) -> str:
    """sha256 del JSON canónico del spec."""
    def compute():
        payload = json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    return spec.cached("sha256", compute)
