"""
Tests del núcleo geométrico: rotaciones, registro rígido, grids de tokens,
suavizado laplaciano y verificación de gradientes.
"""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from geometry.gradcheck import autograd_gradient, check_gradient
from geometry.grids import Affine2D, TokenGrid, positional_encoding_2d, resample_grid, resample_grids
from geometry.mesh import Mesh, laplacian_smooth, load_obj, save_obj
from geometry.registration import (
    kabsch_rigid,
    procrustes_similarity,
    rigid_residual,
    similarity_residual,
)
from geometry.rigid import RigidTransform, apply_rigid
from geometry.rotations import axis_angle_to_matrix, matrix_to_axis_angle, rx, rz
from geometry.tensors import DTYPE
from utils.errors import (
    DegenerateConfiguration,
    InvalidDims,
    IsolatedVertex,
    NonFiniteEvaluation,
    NotARotation,
)


def _random_axis_angles(n: int, seed: int, max_angle: float) -> np.ndarray:
    rng = np.random.default_rng(seed)
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(0.0, max_angle, size=(n, 1))
    return axes * angles


def _kabsch_oracle_min(src: np.ndarray, dst: np.ndarray, candidates: np.ndarray) -> float:
    """Mínimo residual sobre rotaciones candidatas con traslación óptima."""
    src_c = src - src.mean(0)
    dst_c = dst - dst.mean(0)
    h = src_c.T @ dst_c
    const = (src_c ** 2).sum() + (dst_c ** 2).sum()
    traces = np.einsum("kab,ba->k", candidates, h)
    return float(const - 2.0 * traces.max())


# ============================================
# Tests Unitarios - Rotaciones
# ============================================

@pytest.mark.unit
class TestRotations:
    """Tests de conversión eje-ángulo <-> matriz."""

    def test_zero_vector_is_identity(self):
        """Test que el vector nulo da la identidad exacta."""
        r = axis_angle_to_matrix(torch.zeros(3, dtype=DTYPE))
        assert torch.equal(r, torch.eye(3, dtype=DTYPE))

    def test_quarter_turn_about_z(self):
        """Test del giro analítico de 90 grados en z."""
        r = axis_angle_to_matrix(torch.tensor([0.0, 0.0, math.pi / 2], dtype=DTYPE))
        expected = torch.tensor([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], dtype=DTYPE)
        assert torch.allclose(r, expected, atol=1e-12)

    def test_matrix_to_axis_angle_analytic(self):
        """Test de la inversa en identidad y Rz(pi/2)."""
        zero = matrix_to_axis_angle(torch.eye(3, dtype=DTYPE))
        assert torch.allclose(zero, torch.zeros(3, dtype=DTYPE), atol=1e-15)
        v = matrix_to_axis_angle(rz(math.pi / 2))
        assert torch.allclose(v, torch.tensor([0.0, 0.0, math.pi / 2], dtype=DTYPE), atol=1e-12)

    def test_round_trip_random(self):
        """Test del round trip sobre 1000 semillas con ángulo < pi - 1e-4."""
        v = torch.as_tensor(_random_axis_angles(1000, seed=0, max_angle=math.pi - 1e-4))
        back = matrix_to_axis_angle(axis_angle_to_matrix(v))
        assert (back - v).abs().max() < 1e-8

    def test_matrices_are_rotations(self):
        """Test de ortonormalidad y determinante tras Rodrigues."""
        r = axis_angle_to_matrix(torch.as_tensor(_random_axis_angles(200, seed=1, max_angle=10.0)))
        eye = torch.eye(3, dtype=DTYPE).expand(200, 3, 3)
        assert torch.allclose(r.transpose(-1, -2) @ r, eye, atol=1e-12)
        assert torch.allclose(torch.linalg.det(r), torch.ones(200, dtype=DTYPE), atol=1e-12)

    def test_periodicity(self):
        """Test que sumar 2*pi al ángulo no cambia la matriz."""
        axis = torch.tensor([0.3, -0.5, 0.81], dtype=DTYPE)
        axis = axis / axis.norm()
        r1 = axis_angle_to_matrix(axis * 0.7)
        r2 = axis_angle_to_matrix(axis * (0.7 + 2 * math.pi))
        assert torch.allclose(r1, r2, atol=1e-12)

    def test_near_pi_against_quaternion_oracle(self):
        """Test de la recuperación del ángulo pi - 1e-7 contra scipy."""
        v = _random_axis_angles(20, seed=2, max_angle=1.0)
        v = v / np.linalg.norm(v, axis=1, keepdims=True) * (math.pi - 1e-7)
        matrices = torch.as_tensor(Rotation.from_rotvec(v).as_matrix())
        back = matrix_to_axis_angle(matrices).numpy()
        assert np.abs(back - v).max() < 1e-6
        assert np.abs(np.linalg.norm(back, axis=1) - (math.pi - 1e-7)).max() < 1e-6

    def test_axis_sign_at_pi(self):
        """Test que en ángulo pi el eje tiene su primera componente no nula positiva."""
        for matrix in (rx(math.pi), axis_angle_to_matrix(torch.tensor([-math.pi, 0.0, 0.0], dtype=DTYPE))):
            v = matrix_to_axis_angle(matrix)
            assert torch.allclose(v, torch.tensor([math.pi, 0.0, 0.0], dtype=DTYPE), atol=1e-7)
        diag = torch.tensor([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]], dtype=DTYPE)
        v = matrix_to_axis_angle(diag)
        assert torch.allclose(v, torch.tensor([0.0, math.pi, 0.0], dtype=DTYPE), atol=1e-7)

    def test_not_a_rotation(self):
        """Test que una matriz escalada se rechaza."""
        with pytest.raises(NotARotation):
            matrix_to_axis_angle(1.1 * torch.eye(3, dtype=DTYPE))
        with pytest.raises(NotARotation):
            matrix_to_axis_angle(torch.diag(torch.tensor([1.0, 1.0, -1.0], dtype=DTYPE)))

    def test_gradients_finite_at_identity(self):
        """Test que el round trip tiene gradiente finito en el vector nulo."""
        v = torch.zeros(3, dtype=DTYPE, requires_grad=True)
        matrix_to_axis_angle(axis_angle_to_matrix(v)).sum().backward()
        assert torch.isfinite(v.grad).all()
        assert torch.allclose(v.grad, torch.ones(3, dtype=DTYPE), atol=1e-9)


# ============================================
# Tests Unitarios - Transformaciones rígidas
# ============================================

@pytest.mark.unit
class TestRigidTransform:
    """Tests de apply_rigid y composición."""

    def test_identity_and_translation(self):
        """Test de identidad y traslación pura."""
        pts = torch.randn(10, 3, dtype=DTYPE, generator=torch.Generator().manual_seed(0))
        assert torch.equal(apply_rigid(RigidTransform.identity(), pts), pts)
        t = torch.tensor([1.0, -2.0, 0.5], dtype=DTYPE)
        moved = apply_rigid(RigidTransform(torch.eye(3, dtype=DTYPE), t), pts)
        assert torch.allclose(moved, pts + t, atol=1e-15)

    def test_inverse(self):
        """Test que inverse ∘ T es la identidad."""
        t = RigidTransform(axis_angle_to_matrix(torch.tensor([0.2, -1.0, 0.4], dtype=DTYPE)),
                           torch.tensor([0.3, 0.1, -2.0], dtype=DTYPE))
        ident = t.inverse().compose(t)
        assert torch.allclose(ident.rotation, torch.eye(3, dtype=DTYPE), atol=1e-12)
        assert torch.allclose(ident.translation, torch.zeros(3, dtype=DTYPE), atol=1e-12)

    @settings(deadline=None, max_examples=50)
    @given(
        st.lists(st.floats(-3.0, 3.0), min_size=12, max_size=12),
        st.integers(0, 10_000),
    )
    def test_composition_and_distances(self, params, seed):
        """Test que T2∘T1 equivale a aplicar en secuencia y preserva distancias."""
        p = torch.tensor(params, dtype=DTYPE)
        t1 = RigidTransform(axis_angle_to_matrix(p[0:3]), p[3:6])
        t2 = RigidTransform(axis_angle_to_matrix(p[6:9]), p[9:12])
        pts = torch.randn(8, 3, dtype=DTYPE, generator=torch.Generator().manual_seed(seed))
        once = apply_rigid(t2.compose(t1), pts)
        seq = apply_rigid(t2, apply_rigid(t1, pts))
        assert torch.allclose(once, seq, atol=1e-12)
        assert torch.allclose(torch.cdist(once, once), torch.cdist(pts, pts), atol=1e-12)


# ============================================
# Tests Unitarios - Registro
# ============================================

@pytest.mark.unit
class TestRegistration:
    """Tests de Kabsch y Procrustes."""

    @pytest.fixture
    def points(self):
        return torch.tensor(
            [[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [0.1, 1.3, 0.4], [0.5, -0.4, 1.1], [-0.7, 0.3, 0.2]],
            dtype=DTYPE,
        )

    def test_same_points(self, points):
        """Test que src = dst da la identidad."""
        t = kabsch_rigid(points, points)
        assert torch.allclose(t.rotation, torch.eye(3, dtype=DTYPE), atol=1e-12)
        assert torch.allclose(t.translation, torch.zeros(3, dtype=DTYPE), atol=1e-12)
        assert float(rigid_residual(t, points, points)) < 1e-20

    def test_exact_motion_recovered(self, points):
        """Test que un movimiento rígido exacto se recupera."""
        offset = torch.tensor([1.0, 2.0, 3.0], dtype=DTYPE)
        dst = points @ rz(math.pi / 2).T + offset
        t = kabsch_rigid(points, dst)
        assert torch.allclose(t.rotation, rz(math.pi / 2), atol=1e-12)
        assert torch.allclose(t.translation, offset, atol=1e-12)
        assert float(rigid_residual(t, points, dst)) < 1e-12

    def test_reflection_corrected(self, points):
        """Test que un destino reflejado produce una rotación propia."""
        dst = points * torch.tensor([1.0, 1.0, -1.0], dtype=DTYPE)
        t = kabsch_rigid(points, dst)
        assert abs(float(torch.linalg.det(t.rotation)) - 1.0) < 1e-12

    @pytest.mark.parametrize("n_instances", [20])
    def test_optimality_against_random_rotations(self, n_instances):
        """Test que el residual no supera el de 1e5 rotaciones aleatorias."""
        _check_kabsch_optimality(n_instances, seed=10)

    @pytest.mark.slow
    def test_optimality_full(self):
        """Test de optimalidad sobre 500 instancias."""
        _check_kabsch_optimality(500, seed=11)

    def test_invariance_under_common_rotation(self, points):
        """Test que rotar src y dst por Q conjuga la rotación recuperada."""
        rng = torch.Generator().manual_seed(3)
        dst = points @ axis_angle_to_matrix(torch.tensor([0.3, 0.5, -0.2], dtype=DTYPE)).T
        dst = dst + 0.01 * torch.randn(dst.shape, dtype=DTYPE, generator=rng)
        q = axis_angle_to_matrix(torch.tensor([-1.0, 0.4, 0.9], dtype=DTYPE))
        r = kabsch_rigid(points, dst).rotation
        rq = kabsch_rigid(points @ q.T, dst @ q.T).rotation
        assert torch.allclose(rq, q @ r @ q.T, atol=1e-9)

    def test_degenerate(self):
        """Test que puntos colineales o N < 3 se rechazan."""
        line = torch.tensor([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0], [3.0, 3.0, 3.0]], dtype=DTYPE)
        with pytest.raises(DegenerateConfiguration):
            kabsch_rigid(line, line)
        with pytest.raises(DegenerateConfiguration):
            procrustes_similarity(line[:2], line[:2])

    def test_similarity_scale(self, points):
        """Test que dst = 2 src da escala 2 e identidad."""
        scale, t = procrustes_similarity(points, 2.0 * points)
        assert abs(float(scale) - 2.0) < 1e-12
        assert torch.allclose(t.rotation, torch.eye(3, dtype=DTYPE), atol=1e-12)
        scale, t = procrustes_similarity(points, points)
        assert abs(float(scale) - 1.0) < 1e-12
        assert float(similarity_residual(scale, t, points, points)) < 1e-20

    def test_similarity_dominates_rigid(self, points):
        """Test que el ajuste de similitud nunca es peor que el rígido."""
        rng = torch.Generator().manual_seed(4)
        for _ in range(10):
            dst = 1.3 * points + 0.05 * torch.randn(points.shape, dtype=DTYPE, generator=rng)
            scale, sim = procrustes_similarity(points, dst)
            rigid = kabsch_rigid(points, dst)
            assert float(similarity_residual(scale, sim, points, dst)) <= float(rigid_residual(rigid, points, dst)) + 1e-12


def _check_kabsch_optimality(n_instances: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    candidates = Rotation.random(100_000, random_state=seed).as_matrix()
    for _ in range(n_instances):
        src = rng.normal(size=(6, 3))
        r = Rotation.random(random_state=rng.integers(1 << 31)).as_matrix()
        dst = src @ r.T + rng.normal(size=3) + rng.normal(scale=0.01, size=(6, 3))
        t = kabsch_rigid(torch.as_tensor(src), torch.as_tensor(dst))
        residual = float(rigid_residual(t, torch.as_tensor(src), torch.as_tensor(dst)))
        assert residual <= _kabsch_oracle_min(src, dst, candidates) + 1e-12


# ============================================
# Tests Unitarios - Grids de tokens
# ============================================

@pytest.mark.unit
class TestTokenGrids:
    """Tests de remuestreo y codificación posicional."""

    @pytest.fixture
    def body_affine(self):
        return Affine2D.scale_offset(16.0, 16.0)

    def test_identity_resample(self, body_affine):
        """Test que remuestrear con el mismo afín es la identidad."""
        data = torch.randn(16, 12, 8, dtype=DTYPE, generator=torch.Generator().manual_seed(0))
        out = resample_grid(TokenGrid(data, body_affine), body_affine, 16, 12)
        assert (out.data - data).abs().max() < 1e-9
        assert out.affine is body_affine

    def test_left_half_crop_fills_right_half(self, body_affine):
        """Test que un recorte de la mitad izquierda deja la derecha en fill."""
        crop_affine = Affine2D.from_box(0.0, 0.0, 96.0, 256.0, cols=6, rows=16)
        data = torch.randn(16, 6, 4, dtype=DTYPE, generator=torch.Generator().manual_seed(1))
        out = resample_grid(TokenGrid(data, crop_affine), body_affine, 16, 12, fill=-3.0).data
        assert torch.equal(out[:, 6:], torch.full((16, 6, 4), -3.0, dtype=DTYPE))
        assert (out[:, :6] - data).abs().max() < 1e-9

    def test_zero_source(self, body_affine):
        """Test que una fuente nula produce salida nula con fill 0."""
        crop_affine = Affine2D.scale_offset(5.0, 5.0, 40.0, 60.0)
        out = resample_grid(TokenGrid.zeros(8, 8, 4, crop_affine), body_affine, 16, 12)
        assert torch.equal(out.data, torch.zeros(16, 12, 4, dtype=DTYPE))

    def test_batched_resample_matches_single(self, body_affine):
        """Test que remuestrear un batch equivale a hacerlo grid a grid."""
        crop_affine = Affine2D.scale_offset(6.0, 6.0, 50.0, 70.0)
        stack = torch.randn(3, 8, 8, 4, dtype=DTYPE, generator=torch.Generator().manual_seed(2))
        batched = resample_grid(TokenGrid(stack, crop_affine), body_affine, 16, 12).data
        for d in range(3):
            single = resample_grid(TokenGrid(stack[d], crop_affine), body_affine, 16, 12).data
            assert torch.equal(batched[d], single)

    def test_multi_source_resample_matches_single(self, body_affine):
        """Test que remuestrear grids con afines distintos en una pasada equivale a hacerlo una a una."""
        affines = [Affine2D.scale_offset(6.0, 6.0, 50.0, 70.0), Affine2D.scale_offset(9.0, 7.0, 100.0, 20.0)]
        stack = torch.randn(2, 8, 8, 4, dtype=DTYPE, generator=torch.Generator().manual_seed(4))
        values, footprint = resample_grids(stack, affines, body_affine, 16, 12)
        assert values.shape == (2, 16, 12, 4)
        assert footprint.shape == (2, 16, 12, 1)
        for d, affine in enumerate(affines):
            single = resample_grid(TokenGrid(stack[d], affine), body_affine, 16, 12).data
            assert torch.allclose(values[d], single, atol=1e-14)
            assert torch.equal(footprint[d, ..., 0] > 0, single.abs().sum(-1) > 0)

    def test_multi_source_resample_needs_one_affine_per_grid(self, body_affine):
        """Test que el número de afines debe coincidir con el de grids."""
        with pytest.raises(InvalidDims):
            resample_grids(torch.zeros(2, 8, 8, 4, dtype=DTYPE), [body_affine], body_affine, 16, 12)

    def test_invalid_output_dims(self, body_affine):
        """Test que una salida vacía se rechaza."""
        with pytest.raises(InvalidDims):
            resample_grid(TokenGrid.zeros(2, 2, 4, body_affine), body_affine, 0, 12)

    def test_affine_key_round_trip(self):
        """Test que la clave del afín reconstruye la misma matriz y su inversa."""
        a = Affine2D.from_box(32.0, 48.0, 64.0, 64.0, 8, 8)
        b = Affine2D.from_key(a.key)
        assert b.key == a.key
        assert torch.equal(b.matrix, a.matrix)
        pts = torch.tensor([[40.0, 50.0], [90.0, 100.0]], dtype=DTYPE)
        assert torch.allclose(a.apply(a.inverse_apply(pts)), pts, atol=1e-12)

    def test_singular_affine(self):
        """Test que un afín no invertible se rechaza."""
        with pytest.raises(InvalidDims):
            Affine2D.scale_offset(0.0, 1.0)

    def test_encoding_determinism(self):
        """Test que recortes con afines idénticos dan codificaciones idénticas."""
        a = Affine2D.scale_offset(7.5, 7.5, 30.0, 40.0)
        b = Affine2D.scale_offset(7.5, 7.5, 30.0, 40.0)
        assert torch.equal(positional_encoding_2d(8, 8, 32, a, 192, 256).data,
                           positional_encoding_2d(8, 8, 32, b, 192, 256).data)

    def test_encoding_boundary_value(self):
        """Test que en la coordenada (0, 0) los senos valen 0 y los cosenos 1."""
        affine = Affine2D.scale_offset(1.0, 1.0, -0.5, -0.5)
        enc = positional_encoding_2d(256, 192, 16, affine, 192, 256).data[0, 0]
        sines = torch.cat([enc[0::4], enc[2::4]])
        cosines = torch.cat([enc[1::4], enc[3::4]])
        assert sines.abs().max() < 1e-15
        assert (cosines - 1.0).abs().max() < 1e-15

    def test_encoding_matches_generate_then_crop(self):
        """Test que codificar el recorte equivale a recortar la codificación completa."""
        canvas_affine = Affine2D.scale_offset(4.0, 4.0)
        canvas = positional_encoding_2d(64, 48, 32, canvas_affine, 192, 256)
        crop_affine = Affine2D.scale_offset(60.0 / 8, 60.0 / 8, 50.0, 70.0)
        direct = positional_encoding_2d(8, 8, 32, crop_affine, 192, 256).data
        cropped = resample_grid(canvas, crop_affine, 8, 8).data
        assert (direct - cropped).abs().max() < 2e-2

    def test_encoding_invalid_channels(self):
        """Test que canales no múltiplos de 4 se rechazan."""
        with pytest.raises(InvalidDims):
            positional_encoding_2d(4, 4, 6, Affine2D.scale_offset(1.0, 1.0), 4, 4)


# ============================================
# Tests Unitarios - Mallas
# ============================================

def _flat_grid_mesh(n: int = 5) -> Mesh:
    vertices = [[float(i), float(j), 0.0] for j in range(n) for i in range(n)]
    faces = []
    for j in range(n - 1):
        for i in range(n - 1):
            a = j * n + i
            faces.append([a, a + 1, a + n + 1])
            faces.append([a, a + n + 1, a + n])
    return Mesh(torch.tensor(vertices, dtype=DTYPE), torch.tensor(faces))


def _spike_mesh(height: float) -> Mesh:
    ring = [[math.cos(k * math.pi / 3), math.sin(k * math.pi / 3), 0.0] for k in range(6)]
    vertices = [[0.0, 0.0, height]] + ring
    faces = [[0, 1 + k, 1 + (k + 1) % 6] for k in range(6)]
    return Mesh(torch.tensor(vertices, dtype=DTYPE), torch.tensor(faces))


@pytest.mark.unit
class TestMesh:
    """Tests del suavizado laplaciano y E/S de OBJ."""

    def test_flat_grid_interior_fixed(self):
        """Test que un vértice interior de una malla plana regular no se mueve."""
        mesh = _flat_grid_mesh()
        out = laplacian_smooth(mesh, [12], lam=0.7, iters=3)
        assert (out.vertices[12] - mesh.vertices[12]).abs().max() < 1e-12

    def test_spike_halved(self):
        """Test que el pico baja a la mitad con lambda 0.5 y una iteración."""
        out = laplacian_smooth(_spike_mesh(0.8), [0], lam=0.5, iters=1)
        assert abs(float(out.vertices[0, 2]) - 0.4) < 1e-12

    def test_zero_iterations_bit_exact(self):
        """Test que iters=0 deja la malla intacta."""
        mesh = _spike_mesh(1.0)
        assert torch.equal(laplacian_smooth(mesh, [0], lam=0.5, iters=0).vertices, mesh.vertices)

    def test_unselected_vertices_untouched(self):
        """Test que los vértices fuera del conjunto no cambian ni un bit."""
        mesh = _flat_grid_mesh()
        noisy = mesh.with_vertices(mesh.vertices + 0.1 * torch.randn(
            mesh.vertices.shape, dtype=DTYPE, generator=torch.Generator().manual_seed(0)))
        selected = [6, 7, 8, 12]
        out = laplacian_smooth(noisy, selected, lam=0.5, iters=4)
        others = [i for i in range(noisy.num_vertices) if i not in selected]
        assert torch.equal(out.vertices[others], noisy.vertices[others])

    def test_isolated_vertex(self):
        """Test que un vértice sin vecinos se rechaza."""
        mesh = _spike_mesh(1.0)
        extra = torch.cat([mesh.vertices, torch.tensor([[5.0, 5.0, 5.0]], dtype=DTYPE)])
        with pytest.raises(IsolatedVertex) as exc:
            laplacian_smooth(Mesh(extra, mesh.faces), [7], lam=0.5, iters=1)
        assert exc.value.vertex == 7

    def test_obj_round_trip(self, tmp_path):
        """Test que escribir y leer un OBJ conserva vértices y caras."""
        mesh = _spike_mesh(0.3)
        path = save_obj(mesh, str(tmp_path / "spike.obj"))
        loaded = load_obj(path)
        assert loaded.num_vertices == mesh.num_vertices
        assert (loaded.vertices - mesh.vertices).abs().max() < 1e-7
        assert torch.equal(loaded.faces, mesh.faces)

    def test_obj_text_layout(self, tmp_path):
        """Test que el OBJ escrito tiene una línea v por vértice y caras 1-indexadas."""
        mesh = _spike_mesh(0.3)
        path = save_obj(mesh, str(tmp_path / "nested" / "spike.obj"))
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        vertex_lines = [line for line in lines if line.startswith("v ")]
        face_lines = [line for line in lines if line.startswith("f ")]
        assert len(vertex_lines) == mesh.num_vertices
        assert len(lines) == len(vertex_lines) + len(face_lines)
        first = [int(i) for i in face_lines[0].split()[1:]]
        assert first == [int(i) + 1 for i in mesh.faces[0].tolist()]
        assert min(int(i) for line in face_lines for i in line.split()[1:]) == 1


# ============================================
# Tests Unitarios - Verificación de gradientes
# ============================================

@pytest.mark.unit
class TestGradientCheck:
    """Tests del verificador por diferencias centrales."""

    def test_squared_norm(self):
        """Test con f(x) = ||x||^2."""
        x = torch.tensor([0.3, -1.2, 2.5, 0.0], dtype=DTYPE)
        report = check_gradient(lambda v: (v * v).sum(), x, 2 * x)
        assert report.max_relative_error < 1e-8

    def test_sum_of_sines(self):
        """Test con f(x) = sum sin(x_i)."""
        x = torch.tensor([0.1, 1.0, -2.0, 3.0], dtype=DTYPE)
        report = check_gradient(lambda v: torch.sin(v).sum(), x, torch.cos(x))
        assert report.max_relative_error < 1e-7

    def test_kabsch_residual_gradient(self):
        """Test del gradiente del residual de Kabsch respecto al destino."""
        rng = torch.Generator().manual_seed(5)
        src = torch.randn(6, 3, dtype=DTYPE, generator=rng)
        dst = src @ rz(0.4).T + 0.1 * torch.randn(6, 3, dtype=DTYPE, generator=rng)

        def residual(flat):
            target = flat.reshape(6, 3)
            return rigid_residual(kabsch_rigid(src, target), src, target)

        x = dst.reshape(-1)
        report = check_gradient(residual, x, autograd_gradient(residual, x))
        assert report.max_relative_error < 1e-4

    def test_non_finite(self):
        """Test que una evaluación no finita se reporta."""
        x = torch.tensor([-1.0], dtype=DTYPE)
        with pytest.raises(NonFiniteEvaluation):
            check_gradient(lambda v: torch.log(v).sum(), x, torch.ones(1, dtype=DTYPE))
