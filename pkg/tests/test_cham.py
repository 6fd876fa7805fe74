"""
Tests de CHAM: inicialización en cero, condición de manos, atención
cruzada, realineación al grid del cuerpo y fusión por máximo.
"""

import pytest
import torch

from backbones.body import body_backbone_forward, init_body_backbone
from backbones.common import count_parameters
from backbones.hand import hand_backbone_forward, init_hand_backbone
from cham.attention import attention_weights, cross_attention_encode
from cham.forward import build_condition, cham_forward, merge_hands, project_per_block, realign_to_body
from cham.modulator import ModulationStack, cham_parameter_count, init_cham
from geometry.grids import Affine2D, TokenGrid, positional_encoding_2d
from geometry.tensors import DTYPE
from utils.errors import DimMismatch

CHANNELS = 8
DEPTH = 3
BODY_GRID = (16, 12)
IMAGE_DIMS = (192, 256)
BODY_AFFINE = Affine2D.from_box(0.0, 0.0, 192.0, 256.0, 12, 16)
# recorte de 64 px: cubre las celdas del cuerpo de filas 3-6 y columnas 2-5
LEFT_CROP = Affine2D.from_box(32.0, 48.0, 64.0, 64.0, 8, 8)
RIGHT_CROP = Affine2D.from_box(112.0, 144.0, 64.0, 64.0, 8, 8)


def _observation(hand_params, side: str, affine: Affine2D, seed: int, detected: bool = True):
    gen = torch.Generator().manual_seed(seed)
    tokens = TokenGrid(torch.randn(8, 8, CHANNELS, generator=gen, dtype=DTYPE), affine)
    return hand_backbone_forward(hand_params, tokens, side, detected)


@pytest.fixture(scope="module")
def hand_params():
    return init_hand_backbone(11, CHANNELS)


@pytest.fixture
def observations(hand_params):
    return (
        _observation(hand_params, "left", LEFT_CROP, 0),
        _observation(hand_params, "right", RIGHT_CROP, 1),
    )


def _with_branches(cham, left_bias: float, right_bias: float, weight_scale: float = 0.0):
    gen = torch.Generator().manual_seed(9)
    with torch.no_grad():
        for branch, bias in ((cham.left_branch, left_bias), (cham.right_branch, right_bias)):
            branch.bias.fill_(bias)
            branch.weight.copy_(weight_scale * torch.randn(branch.weight.shape, generator=gen, dtype=DTYPE))
    return cham


# ============================================
# Tests Unitarios - Inicialización
# ============================================

@pytest.mark.unit
class TestChamInit:
    """Tests de la inicialización de CHAM."""

    def test_parameter_count_closed_form(self):
        """Test que el conteo cerrado coincide con los parámetros del módulo."""
        for depth, channels in ((6, 32), (2, 8), (1, 4)):
            assert count_parameters(init_cham(13, depth, channels)) == cham_parameter_count(depth, channels)
        assert cham_parameter_count(6, 32) == 37536

    def test_branches_start_at_zero(self):
        """Test que las ramas arrancan exactamente en cero y la atención no."""
        cham = init_cham(13, DEPTH, CHANNELS)
        for branch in (cham.left_branch, cham.right_branch):
            assert torch.equal(branch.weight, torch.zeros(DEPTH, CHANNELS, CHANNELS, dtype=DTYPE))
            assert torch.equal(branch.bias, torch.zeros(DEPTH, CHANNELS, dtype=DTYPE))
        assert float(cham.attention[0].query.abs().sum()) > 0.0

    def test_zero_init_is_identity(self, observations):
        """Test que CHAM recién inicializado no cambia la salida del backbone de cuerpo."""
        cham = init_cham(13, DEPTH, CHANNELS)
        stack = cham_forward(*observations, cham, BODY_GRID, BODY_AFFINE, IMAGE_DIMS)
        assert stack.is_zero()
        assert stack.grids.shape == (DEPTH, *BODY_GRID, CHANNELS)

        body = init_body_backbone(11, DEPTH, CHANNELS)
        gen = torch.Generator().manual_seed(5)
        tokens = TokenGrid(torch.randn(*BODY_GRID, CHANNELS, generator=gen, dtype=DTYPE), BODY_AFFINE)
        plain, _ = body_backbone_forward(body, tokens)
        modulated, _ = body_backbone_forward(body, tokens, stack)
        assert torch.equal(plain.local_rotations, modulated.local_rotations)
        assert torch.equal(plain.root_translation, modulated.root_translation)

    def test_zero_init_gradients(self, observations):
        """Test que en cero sólo las ramas reciben gradiente; la atención no."""
        cham = init_cham(13, DEPTH, CHANNELS)
        body = init_body_backbone(11, DEPTH, CHANNELS)
        body.requires_grad_(False)
        gen = torch.Generator().manual_seed(6)
        tokens = TokenGrid(torch.randn(*BODY_GRID, CHANNELS, generator=gen, dtype=DTYPE), BODY_AFFINE)
        stack = cham_forward(*observations, cham, BODY_GRID, BODY_AFFINE, IMAGE_DIMS)
        pose, _ = body_backbone_forward(body, tokens, stack)
        (pose.root_translation.sum() + pose.shape.sum()).backward()
        assert float(cham.left_branch.bias.grad.abs().sum()) > 0.0
        assert float(cham.right_branch.weight.grad.abs().sum()) > 0.0
        for p in cham.attention.parameters():
            assert p.grad is None or float(p.grad.abs().max()) == 0.0


# ============================================
# Tests Unitarios - Condición y atención
# ============================================

@pytest.mark.unit
class TestCondition:
    """Tests de la condición de manos."""

    def test_one_hand_skips_attention(self, hand_params):
        """Test que con una sola mano detectada los tokens pasan tal cual."""
        cham = init_cham(13, DEPTH, CHANNELS)
        left = _observation(hand_params, "left", LEFT_CROP, 0)
        right = _observation(hand_params, "right", RIGHT_CROP, 1, detected=False)
        out_left, out_right = build_condition(left, right, cham, IMAGE_DIMS)
        assert torch.equal(out_left.data, left.tokens.data)
        assert torch.equal(out_right.data, right.tokens.data)

    def test_ablation_keeps_positional_encoding(self, observations):
        """Test que sin atención la condición es tokens + codificación posicional."""
        cham = init_cham(13, DEPTH, CHANNELS)
        left, right = observations
        out_left, out_right = build_condition(left, right, cham, IMAGE_DIMS, use_cross_attention=False)
        pe_left = positional_encoding_2d(8, 8, CHANNELS, LEFT_CROP, *IMAGE_DIMS).data
        pe_right = positional_encoding_2d(8, 8, CHANNELS, RIGHT_CROP, *IMAGE_DIMS).data
        assert torch.allclose(out_left.data, left.tokens.data + pe_left, atol=1e-14)
        assert torch.allclose(out_right.data, right.tokens.data + pe_right, atol=1e-14)

    def test_attention_changes_condition(self, observations):
        """Test que la atención cruzada modifica las características."""
        cham = init_cham(13, DEPTH, CHANNELS)
        with_attention = build_condition(*observations, cham, IMAGE_DIMS, use_cross_attention=True)
        without = build_condition(*observations, cham, IMAGE_DIMS, use_cross_attention=False)
        assert not torch.allclose(with_attention[0].data, without[0].data)
        assert with_attention[0].affine is observations[0].crop_affine

    def test_attention_weights_are_stochastic(self):
        """Test que los pesos de atención suman 1 por consulta."""
        cham = init_cham(13, DEPTH, CHANNELS)
        gen = torch.Generator().manual_seed(2)
        q = torch.randn(64, CHANNELS, generator=gen, dtype=DTYPE)
        k = torch.randn(64, CHANNELS, generator=gen, dtype=DTYPE)
        weights = attention_weights(cham.attention[0], q, k)
        assert weights.shape == (64, 64)
        assert bool((weights >= 0).all())
        assert torch.allclose(weights.sum(-1), torch.ones(64, dtype=DTYPE), atol=1e-12)

    def test_encoder_swaps_with_inputs(self):
        """Test que intercambiar las manos intercambia las salidas (mapas compartidos)."""
        cham = init_cham(13, DEPTH, CHANNELS)
        gen = torch.Generator().manual_seed(8)
        a = TokenGrid(torch.randn(8, 8, CHANNELS, generator=gen, dtype=DTYPE), LEFT_CROP)
        b = TokenGrid(torch.randn(8, 8, CHANNELS, generator=gen, dtype=DTYPE), RIGHT_CROP)
        a1, b1 = cross_attention_encode(a, b, cham)
        b2, a2 = cross_attention_encode(b, a, cham)
        assert torch.allclose(a1.data, a2.data, atol=1e-12)
        assert torch.allclose(b1.data, b2.data, atol=1e-12)

    def test_encoder_shape_mismatch(self):
        """Test que grids de manos con formas distintas se rechazan."""
        cham = init_cham(13, DEPTH, CHANNELS)
        a = TokenGrid(torch.zeros(8, 8, CHANNELS, dtype=DTYPE), LEFT_CROP)
        b = TokenGrid(torch.zeros(4, 4, CHANNELS, dtype=DTYPE), RIGHT_CROP)
        with pytest.raises(DimMismatch):
            cross_attention_encode(a, b, cham)

    def test_channel_mismatch(self):
        """Test que tokens con otros canales se rechazan."""
        cham = init_cham(13, DEPTH, 16)
        hand = init_hand_backbone(11, CHANNELS)
        left = _observation(hand, "left", LEFT_CROP, 0)
        right = _observation(hand, "right", RIGHT_CROP, 1)
        with pytest.raises(DimMismatch):
            build_condition(left, right, cham, IMAGE_DIMS)


# ============================================
# Tests Unitarios - Proyección, realineación y fusión
# ============================================

@pytest.mark.unit
class TestModulation:
    """Tests de las pilas de modulación."""

    def test_projection_is_per_block_linear(self):
        """Test que la entrada k de la proyección es feats @ W_k + b_k."""
        cham = _with_branches(init_cham(13, DEPTH, CHANNELS), 0.1, 0.2, weight_scale=0.3)
        gen = torch.Generator().manual_seed(1)
        feats = TokenGrid(torch.randn(8, 8, CHANNELS, generator=gen, dtype=DTYPE), LEFT_CROP)
        out = project_per_block(cham.left_branch, feats)
        assert out.data.shape == (DEPTH, 8, 8, CHANNELS)
        for k in range(DEPTH):
            expected = feats.data @ cham.left_branch.weight[k] + cham.left_branch.bias[k]
            assert torch.allclose(out.data[k], expected, atol=1e-12)

    def test_realign_is_zero_outside_footprint(self):
        """Test que una grid constante queda constante en su huella y cero fuera."""
        crop = TokenGrid(torch.full((DEPTH, 8, 8, CHANNELS), 2.5, dtype=DTYPE), LEFT_CROP)
        body = realign_to_body(crop, BODY_GRID, BODY_AFFINE).data
        assert body.shape == (DEPTH, *BODY_GRID, CHANNELS)
        inside = torch.zeros(BODY_GRID, dtype=torch.bool)
        inside[3:7, 2:6] = True
        assert torch.equal(body[:, inside], torch.full_like(body[:, inside], 2.5))
        assert torch.equal(body[:, ~inside], torch.zeros_like(body[:, ~inside]))

    def test_merge_is_elementwise_max(self):
        """Test que la fusión es el máximo elemento a elemento."""
        gen = torch.Generator().manual_seed(3)
        a = ModulationStack(torch.randn(DEPTH, *BODY_GRID, CHANNELS, generator=gen, dtype=DTYPE), BODY_AFFINE)
        b = ModulationStack(torch.randn(DEPTH, *BODY_GRID, CHANNELS, generator=gen, dtype=DTYPE), BODY_AFFINE)
        merged = merge_hands(a, b)
        assert torch.equal(merged.grids, torch.maximum(a.grids, b.grids))
        assert torch.equal(merge_hands(b, a).grids, merged.grids)

    def test_merge_shape_mismatch(self):
        """Test que pilas de distinta profundidad no se fusionan."""
        a = ModulationStack.zeros(DEPTH, *BODY_GRID, CHANNELS, BODY_AFFINE)
        b = ModulationStack.zeros(DEPTH + 1, *BODY_GRID, CHANNELS, BODY_AFFINE)
        with pytest.raises(DimMismatch):
            merge_hands(a, b)

    def test_undetected_side_contributes_nothing(self, hand_params):
        """Test que la mano no detectada no aporta aunque su rama tenga sesgo."""
        cham = _with_branches(init_cham(13, DEPTH, CHANNELS), 1.0, 5.0)
        left = _observation(hand_params, "left", LEFT_CROP, 0)
        right = _observation(hand_params, "right", RIGHT_CROP, 1, detected=False)
        stack = cham_forward(left, right, cham, BODY_GRID, BODY_AFFINE, IMAGE_DIMS)
        inside = torch.zeros(BODY_GRID, dtype=torch.bool)
        inside[3:7, 2:6] = True
        assert torch.equal(stack.grids[:, inside], torch.ones_like(stack.grids[:, inside]))
        assert torch.equal(stack.grids[:, ~inside], torch.zeros_like(stack.grids[:, ~inside]))

    def test_forward_matches_project_then_realign(self, observations):
        """Test que el forward coincide con proyectar cada mano, realinearla y fusionar."""
        cham = _with_branches(init_cham(13, DEPTH, CHANNELS), 0.1, -0.2, weight_scale=0.3)
        feats = build_condition(*observations, cham, IMAGE_DIMS)
        expected = merge_hands(*(
            ModulationStack(realign_to_body(project_per_block(cham.branch(obs.side), f), BODY_GRID, BODY_AFFINE).data,
                            BODY_AFFINE)
            for obs, f in zip(observations, feats)
        ))
        stack = cham_forward(*observations, cham, BODY_GRID, BODY_AFFINE, IMAGE_DIMS)
        assert stack.grids.shape == expected.grids.shape
        assert torch.allclose(stack.grids, expected.grids, atol=1e-12)

    def test_forward_one_hand_matches_composition(self, hand_params):
        """Test que con una mano la pila es su proyección realineada fusionada con ceros."""
        cham = _with_branches(init_cham(13, DEPTH, CHANNELS), 0.4, 0.7, weight_scale=0.5)
        left = _observation(hand_params, "left", LEFT_CROP, 0, detected=False)
        right = _observation(hand_params, "right", RIGHT_CROP, 1)
        projected = project_per_block(cham.right_branch, right.tokens)
        expected = realign_to_body(projected, BODY_GRID, BODY_AFFINE).data.clamp(min=0.0)
        stack = cham_forward(left, right, cham, BODY_GRID, BODY_AFFINE, IMAGE_DIMS)
        assert torch.allclose(stack.grids, expected, atol=1e-12)

    def test_no_hands_gives_zero_stack(self, hand_params):
        """Test que sin detecciones la pila es cero con cualquier parámetro."""
        cham = _with_branches(init_cham(13, DEPTH, CHANNELS), 1.0, 1.0, weight_scale=1.0)
        left = _observation(hand_params, "left", LEFT_CROP, 0, detected=False)
        right = _observation(hand_params, "right", RIGHT_CROP, 1, detected=False)
        assert cham_forward(left, right, cham, BODY_GRID, BODY_AFFINE, IMAGE_DIMS).is_zero()

    def test_stack_batches(self):
        """Test que stack añade una dimensión de batch y conserva la profundidad."""
        a = ModulationStack.zeros(DEPTH, *BODY_GRID, CHANNELS, BODY_AFFINE)
        batched = ModulationStack.stack([a, a])
        assert batched.grids.shape == (2, DEPTH, *BODY_GRID, CHANNELS)
        assert batched.depth == DEPTH
        assert len(batched.grid(0).data) == 2
