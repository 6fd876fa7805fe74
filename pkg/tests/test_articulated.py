"""
Tests de los modelos articulados: generación, formato de spec, forma,
cinemática directa, skinning y proyección.
"""

import copy
import math

import numpy as np
import pytest
import torch

from articulated.kinematics import (
    Camera,
    PoseState,
    forward_kinematics,
    global_joint_orientation,
    hand_keypoints,
    keypoints_3d,
    pose_model,
    project_points,
    shape_mesh,
    skin_mesh,
    skin_vertices,
)
from articulated.spec import load_model_spec, save_model_spec, spec_from_dict, spec_hash, spec_to_dict
from articulated.toy_models import generate_toy_spec, hand_template_for_body
from geometry.rigid import RigidTransform, apply_rigid
from geometry.rotations import axis_angle_to_matrix, rx, rz
from geometry.tensors import DTYPE
from utils.errors import BehindCamera, DimMismatch, InvariantViolation, ParseError, UnknownJoint


def _random_pose(spec, seed: int, scale: float = 0.4, translation: bool = True) -> PoseState:
    gen = torch.Generator().manual_seed(seed)
    root = scale * torch.randn(3, generator=gen, dtype=DTYPE)
    local = scale * torch.randn(spec.joint_count - 1, 3, generator=gen, dtype=DTYPE)
    t = torch.randn(3, generator=gen, dtype=DTYPE) if translation else torch.zeros(3, dtype=DTYPE)
    beta = torch.randn(spec.num_betas, generator=gen, dtype=DTYPE)
    return PoseState.from_axis_angle(root, t, local, beta)


# ============================================
# Tests Unitarios - Generación y formato
# ============================================

@pytest.mark.unit
class TestToySpecs:
    """Tests de los modelos de juguete."""

    def test_body_dimensions(self, body_spec):
        """Test que el cuerpo tiene 22 articulaciones y unos 2000 vértices."""
        assert body_spec.joint_count == 22
        assert 1500 < body_spec.vertex_count < 2500
        assert body_spec.num_betas == 10
        for name in ("pelvis", "left_wrist", "right_wrist"):
            assert name in body_spec.named_joints
        assert body_spec.joint_index("pelvis") == 0

    def test_hand_dimensions(self, hand_spec):
        """Test que la mano tiene 16 articulaciones, unos 400 vértices y 5 puntas."""
        assert hand_spec.joint_count == 16
        assert 300 < hand_spec.vertex_count < 500
        assert hand_spec.num_betas == 10
        assert len(hand_spec.tip_vertices) == 5

    def test_hand_fingers_have_depth_four(self, hand_spec):
        """Test que cada dedo es una cadena muñeca -> 3 articulaciones."""
        leaves = [j for j in range(hand_spec.joint_count) if j not in hand_spec.parents]
        assert len(leaves) == 5
        for leaf in leaves:
            assert len(hand_spec.chain(leaf)) == 4
            assert hand_spec.chain(leaf)[0] == 0

    def test_generation_is_deterministic(self):
        """Test que la misma semilla da specs idénticos bit a bit."""
        a = generate_toy_spec("body", 7)
        b = generate_toy_spec("body", 7)
        assert torch.equal(a.template_vertices, b.template_vertices)
        assert torch.equal(a.shape_basis, b.shape_basis)
        assert torch.equal(a.faces, b.faces)
        assert spec_hash(a) == spec_hash(b)

    def test_different_seed_changes_spec(self):
        """Test que otra semilla cambia la plantilla."""
        a = generate_toy_spec("hand", 7)
        b = generate_toy_spec("hand", 8)
        assert not torch.equal(a.template_vertices, b.template_vertices)

    def test_unknown_kind(self):
        """Test que un tipo desconocido se rechaza."""
        with pytest.raises(InvariantViolation) as exc:
            generate_toy_spec("face", 1)
        assert exc.value.field == "kind"

    def test_hand_region_is_bijection(self, body_spec, hand_spec):
        """Test que la región de mano del cuerpo tiene tantos vértices como la mano."""
        for side in ("left", "right"):
            region = body_spec.hand_region(side)
            assert len(region.vertex_indices) == hand_spec.vertex_count
            assert sorted(region.correspondence) == list(range(hand_spec.vertex_count))
            assert set(region.boundary_ring) <= set(region.vertex_indices)

    def test_hand_region_is_rigid_copy_of_hand(self, body_spec, hand_spec):
        """Test que la región en reposo es una copia rígida de la plantilla de mano."""
        from geometry.registration import kabsch_rigid, rigid_residual

        hand = torch.as_tensor(hand_template_for_body(7), dtype=DTYPE)
        assert torch.equal(hand, hand_spec.template_vertices)
        for side in ("left", "right"):
            region = body_spec.hand_region(side)
            target = body_spec.template_vertices[region.vertex_indices]
            transform = kabsch_rigid(hand[region.correspondence], target)
            assert float(rigid_residual(transform, hand[region.correspondence], target)) < 1e-18


@pytest.mark.unit
class TestSpecFile:
    """Tests de lectura, escritura y validación del archivo de spec."""

    def test_round_trip_is_bit_identical(self, body_spec, tmp_path):
        """Test que escribir y leer conserva todos los campos exactamente."""
        path = save_model_spec(body_spec, str(tmp_path / "body.json"))
        loaded = load_model_spec(path)
        assert loaded.joint_count == 22
        assert loaded.parents == body_spec.parents
        assert loaded.named_joints == body_spec.named_joints
        for name in ("template_vertices", "faces", "rest_joint_regressor", "skinning_weights", "shape_basis"):
            assert torch.equal(getattr(loaded, name), getattr(body_spec, name)), name
        for side in ("left", "right"):
            a, b = loaded.hand_region(side), body_spec.hand_region(side)
            assert a.vertex_indices == b.vertex_indices
            assert a.boundary_ring == b.boundary_ring
            assert torch.equal(a.marker_regressor, b.marker_regressor)
        assert spec_hash(loaded) == spec_hash(body_spec)

    def test_skinning_row_not_summing_to_one(self, hand_spec):
        """Test que una fila de skinning que suma 0.9 se rechaza nombrando el campo."""
        raw = spec_to_dict(hand_spec)
        row = raw["skinning_weights"][0]
        raw["skinning_weights"][0] = [0.9 * w for w in row]
        with pytest.raises(InvariantViolation) as exc:
            spec_from_dict(raw)
        assert exc.value.field == "skinning_weights"

    def test_missing_pelvis(self, body_spec):
        """Test que un cuerpo sin 'pelvis' se rechaza en named_joints."""
        raw = spec_to_dict(body_spec)
        del raw["named_joints"]["pelvis"]
        with pytest.raises(InvariantViolation) as exc:
            spec_from_dict(raw)
        assert exc.value.field == "named_joints"

    def test_bad_parent_order(self, hand_spec):
        """Test que un padre posterior al hijo rompe el árbol."""
        raw = spec_to_dict(hand_spec)
        raw["parents"][1] = 5
        with pytest.raises(InvariantViolation) as exc:
            spec_from_dict(raw)
        assert exc.value.field == "parents"

    def test_wrong_version(self, hand_spec):
        """Test que otra versión de esquema es un ParseError."""
        raw = copy.deepcopy(spec_to_dict(hand_spec))
        raw["version"] = "posefuse-spec-v0"
        with pytest.raises(ParseError):
            spec_from_dict(raw)

    def test_missing_file(self, tmp_path):
        """Test que un archivo inexistente es un ParseError."""
        with pytest.raises(ParseError):
            load_model_spec(str(tmp_path / "nada.json"))


# ============================================
# Tests Unitarios - Forma y cinemática
# ============================================

@pytest.mark.unit
class TestShape:
    """Tests de la mezcla de forma."""

    def test_zero_beta_is_template(self, body_spec):
        """Test que beta = 0 devuelve la plantilla exacta."""
        vertices, _ = shape_mesh(body_spec, torch.zeros(10, dtype=DTYPE))
        assert torch.equal(vertices, body_spec.template_vertices + 0.0)

    def test_unit_beta_adds_column(self, hand_spec):
        """Test que beta = e1 suma la primera columna de la base."""
        beta = torch.zeros(10, dtype=DTYPE)
        beta[0] = 1.0
        vertices, _ = shape_mesh(hand_spec, beta)
        expected = hand_spec.template_vertices + hand_spec.shape_basis[:, :, 0]
        assert torch.allclose(vertices, expected, atol=1e-15)

    def test_superposition(self, body_spec):
        """Test de linealidad sobre 100 pares aleatorios de beta."""
        gen = torch.Generator().manual_seed(0)
        betas = torch.randn(100, 2, 10, generator=gen, dtype=DTYPE)
        v1, j1 = shape_mesh(body_spec, betas[:, 0])
        v2, j2 = shape_mesh(body_spec, betas[:, 1])
        v12, j12 = shape_mesh(body_spec, betas[:, 0] + betas[:, 1])
        assert float((v1 + v2 - body_spec.template_vertices - v12).abs().max()) < 1e-12
        rest = body_spec.rest_joint_regressor @ body_spec.template_vertices
        assert float((j1 + j2 - rest - j12).abs().max()) < 1e-12

    def test_wrong_beta_length(self, hand_spec):
        """Test que un beta de longitud incorrecta es DimMismatch."""
        with pytest.raises(DimMismatch):
            shape_mesh(hand_spec, torch.zeros(5, dtype=DTYPE))


@pytest.mark.unit
class TestForwardKinematics:
    """Tests de la cinemática directa."""

    def test_zero_pose_gives_rest_joints(self, body_spec):
        """Test que la pose nula deja las articulaciones en reposo."""
        pose = PoseState.zeros(body_spec.joint_count, body_spec.num_betas)
        _, rest = shape_mesh(body_spec, pose.shape)
        posed = forward_kinematics(body_spec, pose, rest).translation
        assert float((posed - rest).abs().max()) <= 1e-12

    def test_elbow_rotation_moves_wrist(self, body_spec):
        """Test del cálculo de dos eslabones con el codo girado Rz(pi/2)."""
        pose = PoseState.zeros(body_spec.joint_count, body_spec.num_betas)
        elbow = body_spec.joint_index("left_elbow")
        wrist = body_spec.joint_index("left_wrist")
        pose.local_rotations[elbow - 1] = rz(math.pi / 2)
        _, rest = shape_mesh(body_spec, pose.shape)
        posed = forward_kinematics(body_spec, pose, rest).translation
        expected = rest[elbow] + rz(math.pi / 2) @ (rest[wrist] - rest[elbow])
        assert torch.allclose(posed[wrist], expected, atol=1e-12)

    def test_root_translation_shifts_all(self, body_spec):
        """Test que la traslación de raíz desplaza todas las articulaciones."""
        pose = _random_pose(body_spec, 1, translation=False)
        shifted = PoseState(pose.root_orientation, torch.tensor([0.3, -0.2, 1.5], dtype=DTYPE),
                            pose.local_rotations, pose.shape)
        diff = keypoints_3d(body_spec, shifted) - keypoints_3d(body_spec, pose)
        assert torch.allclose(diff, torch.tensor([0.3, -0.2, 1.5], dtype=DTYPE).expand_as(diff), atol=1e-12)

    def test_chain_composition(self, body_spec):
        """Test que la FK coincide con componer a mano los pasos locales."""
        for seed in range(100):
            pose = _random_pose(body_spec, seed)
            _, rest = shape_mesh(body_spec, pose.shape)
            transforms = forward_kinematics(body_spec, pose, rest)
            for joint in (body_spec.joint_index("left_wrist"), body_spec.joint_index("right_foot")):
                chain = body_spec.chain(joint)
                rotation = pose.root_orientation
                position = rest[0] + pose.root_translation
                for parent, child in zip(chain[:-1], chain[1:]):
                    position = position + rotation @ (rest[child] - rest[parent])
                    rotation = rotation @ pose.local_rotations[child - 1]
                assert torch.allclose(transforms.translation[joint], position, atol=1e-9)
                assert torch.allclose(transforms.rotation[joint], rotation, atol=1e-9)

    def test_keypoints_match_fk(self, hand_spec):
        """Test que keypoints_3d es exactamente la parte de traslación de la FK."""
        pose = _random_pose(hand_spec, 3)
        _, rest = shape_mesh(hand_spec, pose.shape)
        assert torch.equal(keypoints_3d(hand_spec, pose), forward_kinematics(hand_spec, pose, rest).translation)

    def test_batched_pose(self, hand_spec):
        """Test que un batch de poses coincide con evaluarlas una a una."""
        poses = [_random_pose(hand_spec, s) for s in range(4)]
        batched = keypoints_3d(hand_spec, PoseState.stack(poses))
        for k, pose in enumerate(poses):
            assert torch.allclose(batched[k], keypoints_3d(hand_spec, pose), atol=1e-12)


@pytest.mark.unit
class TestGlobalOrientation:
    """Tests de la orientación global por articulación."""

    def test_zero_pose_identity(self, body_spec):
        """Test que la pose nula da la identidad en todas las articulaciones."""
        pose = PoseState.zeros(body_spec.joint_count, body_spec.num_betas)
        for name in body_spec.named_joints:
            assert torch.equal(global_joint_orientation(body_spec, pose, name), torch.eye(3, dtype=DTYPE))

    def test_shoulder_then_elbow(self, body_spec):
        """Test que hombro Rz(30) y codo Rx(40) dan Rz(30) Rx(40) en la muñeca."""
        pose = PoseState.zeros(body_spec.joint_count, body_spec.num_betas)
        shoulder = body_spec.joint_index("left_shoulder")
        elbow = body_spec.joint_index("left_elbow")
        pose.local_rotations[shoulder - 1] = rz(math.radians(30))
        pose.local_rotations[elbow - 1] = rx(math.radians(40))
        wrist = global_joint_orientation(body_spec, pose, "left_wrist")
        assert torch.allclose(wrist, rz(math.radians(30)) @ rx(math.radians(40)), atol=1e-12)

    def test_root_only(self, body_spec):
        """Test que con sólo la raíz rotada todas las articulaciones valen Q."""
        pose = PoseState.zeros(body_spec.joint_count, body_spec.num_betas)
        q = axis_angle_to_matrix(torch.tensor([0.2, -0.5, 0.9], dtype=DTYPE))
        pose.root_orientation = q
        for name in ("pelvis", "left_wrist", "right_wrist"):
            assert torch.allclose(global_joint_orientation(body_spec, pose, name), q, atol=1e-15)

    def test_unknown_joint(self, body_spec):
        """Test que un nombre desconocido lanza UnknownJoint."""
        pose = PoseState.zeros(body_spec.joint_count, body_spec.num_betas)
        with pytest.raises(UnknownJoint) as exc:
            global_joint_orientation(body_spec, pose, "left_thumb")
        assert exc.value.name == "left_thumb"


@pytest.mark.unit
class TestSkinning:
    """Tests del linear blend skinning."""

    def test_zero_pose_keeps_vertices(self, body_spec):
        """Test que la pose nula no deforma la malla."""
        pose = PoseState.zeros(body_spec.joint_count, body_spec.num_betas)
        shaped, rest = shape_mesh(body_spec, pose.shape)
        mesh = skin_mesh(body_spec, shaped, forward_kinematics(body_spec, pose, rest))
        assert float((mesh.vertices - shaped).abs().max()) < 1e-9
        assert torch.equal(mesh.faces, body_spec.faces)

    def test_rigid_equivariance(self, body_spec):
        """Test que una pose sólo de raíz es un movimiento rígido de la malla en reposo."""
        gen = torch.Generator().manual_seed(4)
        for _ in range(100):
            q = axis_angle_to_matrix(torch.randn(3, generator=gen, dtype=DTYPE))
            t = torch.randn(3, generator=gen, dtype=DTYPE)
            beta = torch.randn(10, generator=gen, dtype=DTYPE)
            pose = PoseState.zeros(body_spec.joint_count, body_spec.num_betas)
            pose.root_orientation, pose.root_translation, pose.shape = q, t, beta
            shaped, rest = shape_mesh(body_spec, beta)
            posed = skin_vertices(body_spec, shaped, forward_kinematics(body_spec, pose, rest))
            expected = apply_rigid(RigidTransform(q, rest[0] + t - q @ rest[0]), shaped)
            assert float((posed - expected).abs().max()) < 1e-9

    def test_single_joint_vertex(self, hand_spec):
        """Test que un vértice con peso 1 en j sigue el marco de j."""
        pose = _random_pose(hand_spec, 9)
        posed = pose_model(hand_spec, pose)
        tip = hand_spec.tip_vertices[0]
        joint = int(hand_spec.skinning_weights[tip].argmax())
        assert float(hand_spec.skinning_weights[tip, joint]) == 1.0
        shaped, rest = shape_mesh(hand_spec, pose.shape)
        g = posed.transforms
        expected = g.rotation[joint] @ (shaped[tip] - rest[joint]) + g.translation[joint]
        assert torch.allclose(posed.vertices[tip], expected, atol=1e-12)

    def test_hand_keypoints_has_21(self, hand_spec):
        """Test que los keypoints de mano suman 16 articulaciones y 5 puntas."""
        posed = pose_model(hand_spec, _random_pose(hand_spec, 2))
        kps = hand_keypoints(hand_spec, posed.vertices, posed.joints)
        assert kps.shape == (21, 3)

    def test_vertex_count_mismatch(self, hand_spec):
        """Test que vértices de otro tamaño son DimMismatch."""
        pose = PoseState.zeros(hand_spec.joint_count, hand_spec.num_betas)
        _, rest = shape_mesh(hand_spec, pose.shape)
        with pytest.raises(DimMismatch):
            skin_vertices(hand_spec, torch.zeros(10, 3, dtype=DTYPE), forward_kinematics(hand_spec, pose, rest))


# ============================================
# Tests Unitarios - Proyección
# ============================================

@pytest.mark.unit
class TestProjection:
    """Tests de la cámara pinhole."""

    def test_optical_axis(self):
        """Test que el eje óptico cae en el punto principal."""
        cam = Camera(1000.0, 1000.0, 500.0, 500.0)
        uv = project_points(cam, torch.tensor([[0.0, 0.0, 1.0]], dtype=DTYPE))
        assert torch.allclose(uv, torch.tensor([[500.0, 500.0]], dtype=DTYPE))

    def test_analytic_pinhole(self):
        """Test de (0.1, 0, 1) -> (600, 500)."""
        cam = Camera(1000.0, 1000.0, 500.0, 500.0)
        uv = project_points(cam, torch.tensor([[0.1, 0.0, 1.0]], dtype=DTYPE))
        assert torch.allclose(uv, torch.tensor([[600.0, 500.0]], dtype=DTYPE), atol=1e-9)

    def test_doubling_depth_halves_offset(self, camera):
        """Test que duplicar z reduce a la mitad el desplazamiento respecto al punto principal."""
        gen = torch.Generator().manual_seed(0)
        pts = torch.rand(50, 3, generator=gen, dtype=DTYPE) + torch.tensor([-0.5, -0.5, 1.0], dtype=DTYPE)
        far = pts.clone()
        far[:, 2] *= 2.0
        center = torch.tensor([camera.cx, camera.cy], dtype=DTYPE)
        near_off = project_points(camera, pts) - center
        far_off = project_points(camera, far) - center
        assert torch.allclose(far_off, 0.5 * near_off, atol=1e-9)

    def test_behind_camera(self):
        """Test que un punto con z <= 0 lanza BehindCamera con su índice."""
        cam = Camera.default()
        pts = torch.tensor([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0], [0.1, 0.0, -0.5]], dtype=DTYPE)
        with pytest.raises(BehindCamera) as exc:
            project_points(cam, pts)
        assert exc.value.index == 2

    def test_invalid_focal(self):
        """Test que una focal no positiva se rechaza."""
        with pytest.raises(InvariantViolation):
            Camera(0.0, 100.0, 1.0, 1.0)

    def test_body_projects_inside_image(self, body_spec, camera):
        """Test que el cuerpo en reposo a 2.75 m cabe en la imagen por defecto."""
        pose = PoseState.zeros(body_spec.joint_count, body_spec.num_betas)
        pose.root_translation = torch.tensor([0.0, 0.0, 2.75], dtype=DTYPE)
        uv = project_points(camera, keypoints_3d(body_spec, pose))
        assert float(uv[:, 0].min()) > 0 and float(uv[:, 0].max()) < 192
        assert float(uv[:, 1].min()) > 0 and float(uv[:, 1].max()) < 256
