"""
Forward de CHAM: condición de manos -> proyecciones por bloque ->
realineación al grid del cuerpo -> fusión por máximo.
"""

from typing import Dict, List, Tuple

import torch

from backbones.hand import HandObservation
from cham.attention import cross_attention_encode
from cham.modulator import BranchProjections, ChamParams, ModulationStack
from geometry.grids import Affine2D, TokenGrid, positional_encoding_2d, resample_grid, resample_grids
from geometry.tensors import DTYPE
from utils.errors import DimMismatch


def build_condition(left: HandObservation, right: HandObservation, params: ChamParams,
                    image_dims: Tuple[int, int],
                    use_cross_attention: bool = True) -> Tuple[TokenGrid, TokenGrid]:
    """
    Características de condición de ambas manos.

    Con las dos manos detectadas se suma la codificación posicional de la
    imagen completa, evaluada en las celdas de cada recorte, y se pasa por la
    atención cruzada. En otro caso los tokens se devuelven tal cual.

    Args:
        left: Observación de la mano izquierda
        right: Observación de la mano derecha
        params: Parámetros de CHAM
        image_dims: (ancho, alto) de la imagen en píxeles
        use_cross_attention: False omite la atención (ablación) pero conserva la codificación

    Returns:
        (características izquierda, características derecha)

    Raises:
        DimMismatch: tokens con canales distintos de los de CHAM
    """
    for obs in (left, right):
        if obs.tokens.channels != params.channels:
            raise DimMismatch(f"Tokens de {obs.tokens.channels} canales, CHAM usa {params.channels}")
    if not (left.detected and right.detected):
        return left.tokens, right.tokens

    image_w, image_h = image_dims
    encoded = []
    for obs in (left, right):
        tokens = obs.tokens
        pe = positional_encoding_2d(tokens.height, tokens.width, tokens.channels, obs.crop_affine, image_w, image_h)
        encoded.append(TokenGrid(tokens.data + pe.data, obs.crop_affine))
    if not use_cross_attention:
        return encoded[0], encoded[1]
    return cross_attention_encode(encoded[0], encoded[1], params)


def project_per_block(branch: BranchProjections, feats: TokenGrid) -> TokenGrid:
    """
    Aplica los D mapas 1x1 de una rama.

    Returns:
        TokenGrid (D, h, w, C): la entrada k es feats @ W_k + b_k, con el afín de feats

    Raises:
        DimMismatch: si los canales no coinciden
    """
    c = branch.weight.shape[-1]
    if feats.channels != c:
        raise DimMismatch(f"Características de {feats.channels} canales para mapas de {c}")
    projected = torch.einsum("...hwc,dce->...dhwe", feats.data, branch.weight)
    return TokenGrid(projected + branch.bias[:, None, None, :], feats.affine)


def realign_to_body(grid: TokenGrid, body_dims: Tuple[int, int], body_affine: Affine2D) -> TokenGrid:
    """Deshace el recorte: remuestrea en el grid del cuerpo con ceros fuera de la huella."""
    h, w = body_dims
    return resample_grid(grid, body_affine, h, w, fill=0.0)


def merge_hands(left_stack: ModulationStack, right_stack: ModulationStack) -> ModulationStack:
    """
    Máximo elemento a elemento de las pilas de ambas manos.

    Raises:
        DimMismatch: si las pilas no tienen la misma forma
    """
    if left_stack.grids.shape != right_stack.grids.shape:
        raise DimMismatch(
            f"Pilas de modulación distintas: {tuple(left_stack.grids.shape)} vs {tuple(right_stack.grids.shape)}"
        )
    return ModulationStack(torch.maximum(left_stack.grids, right_stack.grids), left_stack.affine)


def _realigned_projections(sides: List[Tuple[int, HandObservation, TokenGrid]], params: ChamParams,
                           body_dims: Tuple[int, int], body_affine: Affine2D) -> Dict[int, torch.Tensor]:
    if len({feats.data.shape for _, _, feats in sides}) > 1:
        out = {}
        for side in sides:
            out.update(_realigned_projections([side], params, body_dims, body_affine))
        return out
    h, w = body_dims
    data = torch.stack([feats.data for _, _, feats in sides])
    realigned, footprint = resample_grids(data, [feats.affine for _, _, feats in sides], body_affine, h, w)
    weight = torch.stack([params.branch(obs.side).weight for _, obs, _ in sides])
    bias = torch.stack([params.branch(obs.side).bias for _, obs, _ in sides])
    # dentro de la huella los pesos bilineales suman 1: el mapa 1x1 conmuta con el remuestreo
    grids = torch.einsum("nhwc,ndce->ndhwe", realigned, weight)
    grids = grids + bias[:, :, None, None, :] * footprint[:, None]
    return {slot: grids[i] for i, (slot, _, _) in enumerate(sides)}


def cham_forward(left: HandObservation, right: HandObservation, params: ChamParams,
                 body_dims: Tuple[int, int], body_affine: Affine2D, image_dims: Tuple[int, int],
                 use_cross_attention: bool = True) -> ModulationStack:
    """
    Pipeline completo de CHAM para una escena.

    Equivale a realign_to_body(project_per_block(...)) por mano seguido de
    merge_hands, con las manos detectadas remuestreadas en una sola pasada.
    Una mano no detectada aporta una pila de ceros.

    Args:
        left: Observación izquierda
        right: Observación derecha
        params: Parámetros de CHAM
        body_dims: (filas, columnas) del grid del cuerpo
        body_affine: Afín del grid del cuerpo
        image_dims: (ancho, alto) de la imagen
        use_cross_attention: Ver build_condition

    Returns:
        ModulationStack con D grids a resolución del cuerpo
    """
    left_feats, right_feats = build_condition(left, right, params, image_dims, use_cross_attention)
    h, w = body_dims
    zeros = torch.zeros(params.depth, h, w, params.channels, dtype=DTYPE)
    sides = [(slot, obs, feats) for slot, (obs, feats) in enumerate(((left, left_feats), (right, right_feats)))
             if obs.detected]
    by_side = _realigned_projections(sides, params, body_dims, body_affine) if sides else {}
    return merge_hands(
        ModulationStack(by_side.get(0, zeros), body_affine),
        ModulationStack(by_side.get(1, zeros), body_affine),
    )
