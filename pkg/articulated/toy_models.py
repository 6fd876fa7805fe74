"""
Generación determinista de los modelos de juguete.

El cuerpo (22 articulaciones en el orden habitual de los modelos de cuerpo
completo) y la mano (muñeca + 15 articulaciones) se construyen con tubos de
anillos elípticos alrededor de los huesos. La región de mano del cuerpo es
una copia rígida de la plantilla de la mano, de modo que la correspondencia
es la identidad.

Convención del marco del cuerpo: +x hacia la izquierda del sujeto, -y hacia
arriba, -z hacia delante (la cámara mira a lo largo de +z). La mano canónica
tiene los dedos a lo largo de +x, la palma hacia +y y el pulgar del lado -z.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from articulated.spec import ArticulatedModelSpec, HandRegion, MARKER_JOINTS, validate_spec
from geometry.tensors import DTYPE
from utils.errors import InvariantViolation
from utils.rich_logger import get_logger

logger = get_logger()

NUM_BETAS = 10
# un coeficiente de forma unitario desplaza del orden del 10 % del tamaño
SHAPE_UNIT = 0.1

# ==================== Mano ====================

HAND_JOINT_NAMES = (
    "wrist",
    "index_mcp", "index_pip", "index_dip",
    "middle_mcp", "middle_pip", "middle_dip",
    "ring_mcp", "ring_pip", "ring_dip",
    "pinky_mcp", "pinky_pip", "pinky_dip",
    "thumb_cmc", "thumb_mcp", "thumb_ip",
)
HAND_PARENTS = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14]
HAND_TIP_NAMES = ("index_tip", "middle_tip", "ring_tip", "pinky_tip", "thumb_tip")

# (nombre, base, dirección, longitudes de falange, radio)
_DIGITS = (
    ("index", (0.088, -0.008, -0.030), (1.0, 0.0, -0.08), (0.040, 0.025, 0.020), 0.0090),
    ("middle", (0.092, -0.012, -0.010), (1.0, 0.0, 0.0), (0.045, 0.028, 0.022), 0.0095),
    ("ring", (0.088, -0.008, 0.010), (1.0, 0.0, 0.08), (0.042, 0.026, 0.021), 0.0090),
    ("pinky", (0.080, 0.000, 0.030), (1.0, 0.0, 0.16), (0.034, 0.020, 0.017), 0.0080),
    ("thumb", (0.025, 0.005, -0.035), (0.6, 0.1, -0.8), (0.035, 0.030, 0.025), 0.0110),
)
_PALM_X = (0.0, 0.015, 0.030, 0.045, 0.060, 0.072, 0.084)
_PALM_AXES = ((0.020, 0.030), (0.016, 0.038)) + ((0.013, 0.045),) * 5
# semiejes (y, z) del anillo de muñeca; el antebrazo del cuerpo termina con la misma elipse
WRIST_RING_AXES = _PALM_AXES[0]
PALM_RING = 16
FINGER_RING = 8

# ==================== Cuerpo ====================

BODY_JOINTS = (
    ("pelvis", -1, (0.0, 0.0, 0.0)),
    ("left_hip", 0, (0.09, 0.08, 0.0)),
    ("right_hip", 0, (-0.09, 0.08, 0.0)),
    ("spine1", 0, (0.0, -0.11, 0.0)),
    ("left_knee", 1, (0.10, 0.46, 0.0)),
    ("right_knee", 2, (-0.10, 0.46, 0.0)),
    ("spine2", 3, (0.0, -0.24, 0.0)),
    ("left_ankle", 4, (0.10, 0.88, 0.0)),
    ("right_ankle", 5, (-0.10, 0.88, 0.0)),
    ("spine3", 6, (0.0, -0.30, 0.0)),
    ("left_foot", 7, (0.10, 0.93, -0.10)),
    ("right_foot", 8, (-0.10, 0.93, -0.10)),
    ("neck", 9, (0.0, -0.50, 0.0)),
    ("left_collar", 9, (0.07, -0.44, 0.0)),
    ("right_collar", 9, (-0.07, -0.44, 0.0)),
    ("head", 12, (0.0, -0.62, 0.0)),
    ("left_shoulder", 13, (0.17, -0.45, 0.0)),
    ("right_shoulder", 14, (-0.17, -0.45, 0.0)),
    ("left_elbow", 16, (0.44, -0.45, 0.0)),
    ("right_elbow", 17, (-0.44, -0.45, 0.0)),
    ("left_wrist", 18, (0.69, -0.45, 0.0)),
    ("right_wrist", 19, (-0.69, -0.45, 0.0)),
)
BODY_JOINT_NAMES = tuple(name for name, _, _ in BODY_JOINTS)
BODY_PARENTS = [parent for _, parent, _ in BODY_JOINTS]
BODY_RING = 16
_TUBE_RINGS = 4
# separación entre el final del antebrazo y el anillo de muñeca
_WRIST_GAP = 0.02

# (articulación de inicio, punto final o articulación final, semiejes, grupo)
_SPINE_BONES = (
    ("pelvis", "spine1", (0.09, 0.14), "torso"),
    ("spine1", "spine2", (0.10, 0.14), "torso"),
    ("spine2", "spine3", (0.11, 0.15), "torso"),
    ("spine3", "neck", (0.10, 0.16), "torso"),
    ("neck", "head", (0.05, 0.05), "head"),
    ("head", (0.0, -0.82, 0.0), (0.09, 0.08), "head"),
)
_LEG_BONES = (
    ("hip", "knee", (0.07, 0.07)),
    ("knee", "ankle", (0.05, 0.05)),
    ("ankle", "foot", (0.04, 0.035)),
    ("foot", (0.10, 0.95, -0.22), (0.03, 0.045)),
)
_ARM_BONES = (
    ("collar", "shoulder", (0.05, 0.05)),
    ("shoulder", "elbow", (0.045, 0.045)),
)
_FOREARM_START_AXES = (0.035, 0.040)

_NECK = np.array([0.0, -0.50, 0.0])
_SHOULDER_X = 0.17
_HIP_Y = 0.08


def _frame(direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Base ortonormal (e1, e2) perpendicular a la dirección."""
    d = direction / np.linalg.norm(direction)
    ref = np.array([0.0, 1.0, 0.0]) if abs(d[1]) < 0.9 else np.array([0.0, 0.0, 1.0])
    e1 = ref - ref.dot(d) * d
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(d, e1)


@dataclass
class _MeshBuilder:
    """Acumula vértices, caras y metadatos por vértice."""

    vertices: List[np.ndarray] = field(default_factory=list)
    faces: List[Tuple[int, int, int]] = field(default_factory=list)
    skin: List[int] = field(default_factory=list)
    centers: List[np.ndarray] = field(default_factory=list)
    groups: List[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.vertices)

    def add_ring(self, center, direction, axes, n, joint, group, transform=None) -> int:
        center = np.asarray(center, dtype=np.float64)
        e1, e2 = _frame(np.asarray(direction, dtype=np.float64))
        phi = 2.0 * np.pi * np.arange(n) / n
        pts = center + axes[0] * np.cos(phi)[:, None] * e1 + axes[1] * np.sin(phi)[:, None] * e2
        if transform is not None:
            pts = pts @ transform.T
            center = transform @ center
        start = self.count
        for p in pts:
            self.vertices.append(p)
            self.skin.append(joint)
            self.centers.append(center)
            self.groups.append(group)
        return start

    def add_point(self, point, joint, group, center=None) -> int:
        point = np.asarray(point, dtype=np.float64)
        self.vertices.append(point)
        self.skin.append(joint)
        self.centers.append(point if center is None else np.asarray(center, dtype=np.float64))
        self.groups.append(group)
        return self.count - 1

    def connect(self, a: int, b: int, n: int) -> None:
        for k in range(n):
            i0, i1 = a + k, a + (k + 1) % n
            j0, j1 = b + k, b + (k + 1) % n
            self.faces.append((i0, i1, j1))
            self.faces.append((i0, j1, j0))

    def cap(self, ring: int, n: int, apex: int) -> None:
        for k in range(n):
            self.faces.append((ring + k, ring + (k + 1) % n, apex))


# ==================== Plantilla de mano ====================

@dataclass
class _HandGeometry:
    vertices: np.ndarray
    faces: np.ndarray
    skin: np.ndarray
    centers: np.ndarray
    joint_rings: Dict[int, Tuple[int, int]]
    tip_vertices: List[int]
    digit_of_vertex: np.ndarray
    digit_bases: np.ndarray
    digit_dirs: np.ndarray


def _build_hand(rng: np.random.Generator) -> _HandGeometry:
    b = _MeshBuilder()
    joint_rings: Dict[int, Tuple[int, int]] = {}
    digit_of_vertex: List[int] = []
    x_axis = np.array([1.0, 0.0, 0.0])

    palm_starts = []
    for k, (x, axes) in enumerate(zip(_PALM_X, _PALM_AXES)):
        jitter = 1.0 if k == 0 else 1.0 + 0.03 * rng.standard_normal()
        palm_starts.append(b.add_ring((x, 0.0, 0.0), x_axis, (axes[0] * jitter, axes[1] * jitter), PALM_RING, 0, "palm"))
    for a, c in zip(palm_starts[:-1], palm_starts[1:]):
        b.connect(a, c, PALM_RING)
    apex = b.add_point((0.092, 0.0, 0.0), 0, "palm", center=(_PALM_X[-1], 0.0, 0.0))
    b.cap(palm_starts[-1], PALM_RING, apex)
    joint_rings[0] = (palm_starts[0], PALM_RING)
    digit_of_vertex.extend([-1] * b.count)

    tips = []
    bases, dirs = [], []
    for digit, (name, base, direction, lengths, radius) in enumerate(_DIGITS):
        base = np.asarray(base)
        d = np.asarray(direction) / np.linalg.norm(direction)
        first_joint = 1 + 3 * digit
        joints = [base, base + lengths[0] * d, base + (lengths[0] + lengths[1]) * d]
        tip = joints[2] + lengths[2] * d
        knots = [joints[0], 0.5 * (joints[0] + joints[1]), joints[1], 0.5 * (joints[1] + joints[2]),
                 joints[2], 0.5 * (joints[2] + tip), tip]
        skin = [first_joint, first_joint, first_joint + 1, first_joint + 1,
                first_joint + 2, first_joint + 2, first_joint + 2]
        start_count = b.count
        starts = []
        for s, (center, joint) in enumerate(zip(knots, skin)):
            r = radius * (1.0 - 0.3 * s / 6.0) * (1.0 + 0.04 * rng.standard_normal())
            starts.append(b.add_ring(center, d, (r, r), FINGER_RING, joint, name))
        for a, c in zip(starts[:-1], starts[1:]):
            b.connect(a, c, FINGER_RING)
        tip_apex = b.add_point(tip + 0.5 * radius * d, first_joint + 2, name, center=tip)
        b.cap(starts[-1], FINGER_RING, tip_apex)
        tips.append(tip_apex)
        for j in range(3):
            joint_rings[first_joint + j] = (starts[2 * j], FINGER_RING)
        digit_of_vertex.extend([digit] * (b.count - start_count))
        bases.append(base)
        dirs.append(d)

    return _HandGeometry(
        vertices=np.stack(b.vertices),
        faces=np.asarray(b.faces, dtype=np.int64),
        skin=np.asarray(b.skin, dtype=np.int64),
        centers=np.stack(b.centers),
        joint_rings=joint_rings,
        tip_vertices=tips,
        digit_of_vertex=np.asarray(digit_of_vertex, dtype=np.int64),
        digit_bases=np.stack(bases),
        digit_dirs=np.stack(dirs),
    )


def _ring_regressor(joint_rings: Dict[int, Tuple[int, int]], num_joints: int, num_vertices: int) -> np.ndarray:
    reg = np.zeros((num_joints, num_vertices))
    for j, (start, n) in joint_rings.items():
        reg[j, start:start + n] = 1.0 / n
    return reg


def _one_hot_skin(skin: np.ndarray, num_joints: int) -> np.ndarray:
    weights = np.zeros((skin.shape[0], num_joints))
    weights[np.arange(skin.shape[0]), skin] = 1.0
    return weights


def _hand_shape_basis(geo: _HandGeometry, rng: np.random.Generator) -> np.ndarray:
    v = geo.vertices
    n = v.shape[0]
    basis = np.zeros((n, 3, NUM_BETAS))
    palm = geo.digit_of_vertex < 0
    digit = geo.digit_of_vertex
    base = np.where(palm[:, None], v, geo.digit_bases[np.maximum(digit, 0)])

    basis[:, :, 0] = SHAPE_UNIT * v
    # ancho de palma: la palma escala en z y los dedos se trasladan con su base
    basis[:, 2, 1] = SHAPE_UNIT * base[:, 2]
    basis[:, 0, 2] = SHAPE_UNIT * base[:, 0]
    for k in range(len(_DIGITS)):
        mask = digit == k
        d = geo.digit_dirs[k]
        along = (v[mask] - geo.digit_bases[k]) @ d
        basis[mask, :, 3 + k] = SHAPE_UNIT * along[:, None] * d
    basis[:, :, 8] = SHAPE_UNIT * (v - geo.centers)
    mixing = 0.3 * rng.standard_normal((3, 3))
    basis[:, :, 9] = SHAPE_UNIT * v @ mixing.T
    return basis


def _hand_regressor(geo: _HandGeometry) -> np.ndarray:
    return _ring_regressor(geo.joint_rings, len(HAND_PARENTS), geo.vertices.shape[0])


def _generate_hand(seed: int) -> ArticulatedModelSpec:
    rng = np.random.default_rng(seed)
    geo = _build_hand(rng)
    basis = _hand_shape_basis(geo, rng)
    spec = ArticulatedModelSpec(
        kind="hand",
        parents=list(HAND_PARENTS),
        template_vertices=torch.as_tensor(geo.vertices, dtype=DTYPE),
        faces=torch.as_tensor(geo.faces),
        rest_joint_regressor=torch.as_tensor(_hand_regressor(geo), dtype=DTYPE),
        skinning_weights=torch.as_tensor(_one_hot_skin(geo.skin, len(HAND_PARENTS)), dtype=DTYPE),
        shape_basis=torch.as_tensor(basis, dtype=DTYPE),
        named_joints={name: i for i, name in enumerate(HAND_JOINT_NAMES)},
        tip_vertices=list(geo.tip_vertices),
    )
    return validate_spec(spec)


# ==================== Cuerpo ====================

def _body_shape_basis(points: np.ndarray, groups: Sequence[str], centers: np.ndarray,
                      eval_points: np.ndarray, eval_groups: Sequence[str],
                      mixing: np.ndarray) -> np.ndarray:
    """
    Base de forma del cuerpo.

    Las columnas 0 (escala) y 1 (grosor) actúan sobre cada vértice; las
    columnas 2..9 se evalúan en eval_points, que para la región de mano es la
    muñeca, así que allí sólo trasladan la mano.
    """
    n = points.shape[0]
    basis = np.zeros((n, 3, NUM_BETAS))
    basis[:, :, 0] = SHAPE_UNIT * points
    basis[:, :, 1] = SHAPE_UNIT * (points - centers)

    p = eval_points
    g = np.asarray(eval_groups)
    sign_x = np.sign(p[:, 0])
    arms = np.char.startswith(g.astype(str), "arm")
    legs = np.char.startswith(g.astype(str), "leg")

    basis[:, 1, 2] = SHAPE_UNIT * p[:, 1]
    basis[arms, 0, 3] = SHAPE_UNIT * sign_x[arms] * np.maximum(np.abs(p[arms, 0]) - _SHOULDER_X, 0.0)
    basis[legs, 1, 4] = SHAPE_UNIT * np.maximum(p[legs, 1] - _HIP_Y, 0.0)
    basis[arms, 0, 5] = 0.5 * SHAPE_UNIT * sign_x[arms] * np.minimum(np.abs(p[arms, 0]), _SHOULDER_X) / _SHOULDER_X
    basis[legs, 0, 6] = SHAPE_UNIT * 0.09 * sign_x[legs]
    torso = g == "torso"
    basis[torso, 2, 7] = SHAPE_UNIT * p[torso, 2]
    head = g == "head"
    basis[head, :, 8] = SHAPE_UNIT * (p[head] - _NECK)
    basis[:, :, 9] = 0.5 * SHAPE_UNIT * p @ mixing.T
    return basis


def _add_tube(b: _MeshBuilder, start, end, axes, joint: int, group: str,
              transform: Optional[np.ndarray], rng: np.random.Generator) -> List[int]:
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    direction = end - start
    starts = []
    for k in range(_TUBE_RINGS):
        t = k / _TUBE_RINGS
        jitter = 1.0 + 0.03 * rng.standard_normal()
        starts.append(b.add_ring(start + t * direction, direction, (axes[0] * jitter, axes[1] * jitter),
                                 BODY_RING, joint, group, transform))
    for a, c in zip(starts[:-1], starts[1:]):
        b.connect(a, c, BODY_RING)
    return starts


def _generate_body(seed: int) -> ArticulatedModelSpec:
    rng = np.random.default_rng(seed)
    hand = _build_hand(np.random.default_rng(seed))
    index = {name: i for i, name in enumerate(BODY_JOINT_NAMES)}
    rest = {name: np.asarray(pos, dtype=np.float64) for name, _, pos in BODY_JOINTS}
    b = _MeshBuilder()
    joint_rings: Dict[int, Tuple[int, int]] = {}

    for start_name, end, axes, group in _SPINE_BONES:
        end_point = rest[end] if isinstance(end, str) else np.asarray(end)
        starts = _add_tube(b, rest[start_name], end_point, axes, index[start_name], group, None, rng)
        joint_rings[index[start_name]] = (starts[0], BODY_RING)

    mirror_x = np.diag([-1.0, 1.0, 1.0])
    for side, transform in (("left", None), ("right", mirror_x)):
        for start_part, end, axes in _LEG_BONES:
            # la pierna derecha es el espejo en x de la izquierda (los pies siguen mirando a -z)
            name = f"{side}_{start_part}"
            left_start = rest[f"left_{start_part}"]
            left_end = rest[f"left_{end}"] if isinstance(end, str) else np.asarray(end)
            starts = _add_tube(b, left_start, left_end, axes, index[name], f"leg_{side}", transform, rng)
            joint_rings[index[name]] = (starts[0], BODY_RING)

    regions: Dict[str, HandRegion] = {}
    hand_reg = _hand_regressor(hand)
    markers = hand_reg[[HAND_JOINT_NAMES.index(n) for n in MARKER_JOINTS]]
    wrist_points = {}
    turn_y = np.diag([-1.0, 1.0, -1.0])
    for side, transform in (("left", None), ("right", turn_y)):
        # el brazo y la mano derechos son el giro de pi en y de los izquierdos
        for start_part, end, axes in _ARM_BONES:
            name = f"{side}_{start_part}"
            starts = _add_tube(b, rest[f"left_{start_part}"], rest[f"left_{end}"], axes,
                               index[name], f"arm_{side}", transform, rng)
            joint_rings[index[name]] = (starts[0], BODY_RING)

        elbow = rest["left_elbow"]
        wrist = rest["left_wrist"]
        x_axis = wrist - elbow
        forearm_end = wrist - _WRIST_GAP * x_axis / np.linalg.norm(x_axis)
        elbow_joint = index[f"{side}_elbow"]
        starts = []
        for k in range(_TUBE_RINGS):
            t = k / (_TUBE_RINGS - 1)
            if k == _TUBE_RINGS - 1:
                axes = WRIST_RING_AXES
            else:
                jitter = 1.0 + 0.03 * rng.standard_normal()
                axes = tuple(jitter * ((1 - t) * a + t * w) for a, w in zip(_FOREARM_START_AXES, WRIST_RING_AXES))
            starts.append(b.add_ring(elbow + t * (forearm_end - elbow), x_axis, axes, BODY_RING,
                                     elbow_joint, f"arm_{side}", transform))
        for a, c in zip(starts[:-1], starts[1:]):
            b.connect(a, c, BODY_RING)
        joint_rings[elbow_joint] = (starts[0], BODY_RING)

        rot = np.eye(3) if transform is None else transform
        wrist_world = rot @ wrist
        wrist_points[side] = wrist_world
        wrist_joint = index[f"{side}_wrist"]
        region_start = b.count
        for p, c in zip(hand.vertices, hand.centers):
            b.vertices.append(rot @ p + wrist_world)
            b.centers.append(rot @ c + wrist_world)
            b.skin.append(wrist_joint)
            b.groups.append(f"hand_{side}")
        for f in hand.faces:
            b.faces.append(tuple(int(i) + region_start for i in f))
        # tira de caras que cose el antebrazo al anillo de muñeca
        b.connect(starts[-1], region_start, BODY_RING)
        ring0, ring_n = hand.joint_rings[0]
        joint_rings[wrist_joint] = (region_start + ring0, ring_n)
        k = hand.vertices.shape[0]
        regions[side] = HandRegion(
            vertex_indices=list(range(region_start, region_start + k)),
            boundary_ring=list(range(region_start + ring0, region_start + ring0 + ring_n)),
            correspondence=list(range(k)),
            marker_regressor=torch.as_tensor(markers, dtype=DTYPE),
        )

    vertices = np.stack(b.vertices)
    centers = np.stack(b.centers)
    eval_points = vertices.copy()
    eval_groups = list(b.groups)
    for i, g in enumerate(b.groups):
        if g.startswith("hand_"):
            side = g.split("_", 1)[1]
            eval_points[i] = wrist_points[side]
            eval_groups[i] = f"arm_{side}"
    mixing = rng.standard_normal((3, 3))
    basis = _body_shape_basis(vertices, b.groups, centers, eval_points, eval_groups, mixing)

    j = len(BODY_PARENTS)
    spec = ArticulatedModelSpec(
        kind="body",
        parents=list(BODY_PARENTS),
        template_vertices=torch.as_tensor(vertices, dtype=DTYPE),
        faces=torch.as_tensor(np.asarray(b.faces, dtype=np.int64)),
        rest_joint_regressor=torch.as_tensor(_ring_regressor(joint_rings, j, vertices.shape[0]), dtype=DTYPE),
        skinning_weights=torch.as_tensor(_one_hot_skin(np.asarray(b.skin), j), dtype=DTYPE),
        shape_basis=torch.as_tensor(basis, dtype=DTYPE),
        named_joints={name: i for i, name in enumerate(BODY_JOINT_NAMES)},
        hand_regions=regions,
    )
    return validate_spec(spec)


_GENERATORS: Dict[str, Callable[[int], ArticulatedModelSpec]] = {
    "body": _generate_body,
    "hand": _generate_hand,
}


def generate_toy_spec(kind: str, seed: int) -> ArticulatedModelSpec:
    """
    Genera el spec de juguete de forma determinista.

    Args:
        kind: "body" o "hand"
        seed: Semilla de los jitters de radio y de la columna aleatoria de forma

    Returns:
        Spec validado; la misma semilla produce specs idénticos bit a bit
    """
    if kind not in _GENERATORS:
        raise InvariantViolation("kind", f"tipo de modelo desconocido '{kind}'")
    spec = _GENERATORS[kind](seed)
    logger.geometry(
        f"Modelo '{kind}' generado: J={spec.joint_count}, V={spec.vertex_count}, B={spec.num_betas}"
    )
    return spec


def hand_template_for_body(seed: int) -> np.ndarray:
    """Vértices de la plantilla de mano que usa el cuerpo con esta semilla."""
    return _build_hand(np.random.default_rng(seed)).vertices
