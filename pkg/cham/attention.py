"""
Atención cruzada bidireccional entre las dos manos.

En cada capa la mano izquierda atiende a la derecha y viceversa con los
mismos mapas; ambas se actualizan a la vez a partir de la entrada de la capa.
"""

import math
from typing import Iterable, Tuple

import torch

from cham.modulator import ChamParams, CrossAttentionLayer
from geometry.grids import TokenGrid
from utils.errors import DimMismatch


def attention_weights(layer: CrossAttentionLayer, queries: torch.Tensor, keys: torch.Tensor) -> torch.Tensor:
    """Softmax sobre las posiciones de las claves, escala 1/sqrt(C): (..., Nq, Nk)."""
    q = queries @ layer.query
    k = keys @ layer.key
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    return torch.softmax(scores, dim=-1)


def _attend(layer: CrossAttentionLayer, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    weights = attention_weights(layer, x, y)
    return (weights @ (y @ layer.value)) @ layer.output


def _feed_forward(layer: CrossAttentionLayer, x: torch.Tensor) -> torch.Tensor:
    return torch.tanh(x @ layer.ff1_weight + layer.ff1_bias) @ layer.ff2_weight + layer.ff2_bias


def encode_tokens(layers: Iterable[CrossAttentionLayer], a: torch.Tensor,
                  b: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Versión sobre tensores (..., N, C) de cross_attention_encode."""
    # ambas direcciones en un batch: la fila 0 es a, la 1 es b
    pair = torch.stack([a, b])
    for layer in layers:
        mid = pair + _attend(layer, pair, pair.flip(0))
        pair = mid + _feed_forward(layer, mid)
    return pair[0], pair[1]


def cross_attention_encode(a: TokenGrid, b: TokenGrid, params: ChamParams) -> Tuple[TokenGrid, TokenGrid]:
    """
    Codificador de atención cruzada de tres capas.

    Args:
        a: Tokens de una mano (h, w, C)
        b: Tokens de la otra mano, mismas dimensiones
        params: Parámetros de CHAM (se usan sus capas de atención)

    Returns:
        (a', b') con los afines de entrada

    Raises:
        DimMismatch: si las dimensiones difieren
    """
    if a.data.shape != b.data.shape:
        raise DimMismatch(f"Grids de manos con formas distintas: {tuple(a.data.shape)} vs {tuple(b.data.shape)}")
    h, w, c = a.height, a.width, a.channels
    if c != params.channels:
        raise DimMismatch(f"Tokens de {c} canales para una atención de {params.channels}")
    flat_a = a.data.reshape(*a.data.shape[:-3], h * w, c)
    flat_b = b.data.reshape(*b.data.shape[:-3], h * w, c)
    out_a, out_b = encode_tokens(params.attention, flat_a, flat_b)
    return (
        TokenGrid(out_a.reshape(a.data.shape), a.affine),
        TokenGrid(out_b.reshape(b.data.shape), b.affine),
    )
