"""
Backbone de mano de juguete (análogo del estimador de manos).

Recibe el grid de tokens de un recorte (8x8xC) y devuelve los tokens de la
última capa, la pose de dedos (15 eje-ángulo), la forma (10) y una
orientación de muñeca en el marco de la cámara que sólo usa la estrategia
wrist_copy.

El contrato de canales del recorte (HandTokenLayout) lo comparten el
renderizador sintético y este backbone.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import torch
from torch import nn

from articulated.spec import SIDES
from backbones.common import TokenBlock, load_module, seeded_generator
from geometry.grids import Affine2D, TokenGrid
from geometry.rotations import nearest_rotation
from geometry.tensors import DTYPE
from utils.errors import DimMismatch, InvalidDims, UnknownSide

HAND_KEYPOINT_COUNT = 21
FINGER_JOINTS = 15
HAND_BETAS = 10
HAND_PARAM_COUNT = 3 * FINGER_JOINTS + HAND_BETAS
WRIST_STREAM = 9
# el código de parámetros se escribe amplificado; la lectura divide por la ganancia
CODE_GAIN = 4.0
LAYOUT_SEED = 101


@dataclass(frozen=True)
class HandTokenLayout:
    """
    Reparto de canales de un recorte de mano.

    Attributes:
        heat_embed: (21, C) firma de canal de cada keypoint
        wrist_embed: (9, C) firma de las entradas de la matriz de muñeca
        code_channels: Canales finales reservados al código de parámetros
        code_basis: (g·g·code_channels, 55) columnas ortonormales
    """

    channels: int
    grid: int
    heat_embed: torch.Tensor
    wrist_embed: torch.Tensor
    code_channels: int
    code_basis: torch.Tensor

    @property
    def sensor_channels(self) -> int:
        return self.channels - self.code_channels

    def encode_params(self, theta: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
        """Código (g, g, code_channels) de [theta (15, 3); beta (10)]."""
        params = torch.cat([theta.reshape(-1), beta.reshape(-1)])
        code = CODE_GAIN * (self.code_basis @ params)
        return code.reshape(self.grid, self.grid, self.code_channels)


@lru_cache(maxsize=8)
def hand_token_layout(channels: int, grid: int = 8, seed: int = LAYOUT_SEED) -> HandTokenLayout:
    """
    Layout determinista para C canales.

    Con C >= 30 + n (n = canales mínimos para el código) cada keypoint y
    cada entrada de la muñeca tienen canal propio y el código ocupa los C - 30
    restantes; con menos canales las firmas son vectores unitarios aleatorios
    en los primeros C - n canales.

    Raises:
        InvalidDims: si no caben los 55 parámetros junto a algún canal sensor
    """
    cells = grid * grid
    minimum = math.ceil(HAND_PARAM_COUNT / cells)
    gen = seeded_generator(seed)
    sensors = HAND_KEYPOINT_COUNT + WRIST_STREAM
    if channels >= sensors + minimum:
        code_channels = channels - sensors
        eye = torch.eye(channels, dtype=DTYPE)
        heat = eye[:HAND_KEYPOINT_COUNT]
        wrist = eye[HAND_KEYPOINT_COUNT:sensors]
    else:
        code_channels = minimum
        width = channels - code_channels
        if width < 1:
            raise InvalidDims(f"{channels} canales no alcanzan para el recorte de mano")
        raw = torch.randn(sensors, width, generator=gen, dtype=DTYPE)
        raw = raw / raw.norm(dim=-1, keepdim=True)
        padded = torch.cat([raw, torch.zeros(sensors, code_channels, dtype=DTYPE)], dim=-1)
        heat = padded[:HAND_KEYPOINT_COUNT]
        wrist = padded[HAND_KEYPOINT_COUNT:]
    q, _ = torch.linalg.qr(torch.randn(cells * code_channels, HAND_PARAM_COUNT, generator=gen, dtype=DTYPE))
    return HandTokenLayout(channels, grid, heat, wrist, code_channels, q)


@dataclass
class HandObservation:
    """
    Salida del backbone de mano para un lado.

    Si detected es False los tokens son todos cero y theta/beta no existen.

    Attributes:
        side: "left" o "right"
        detected: Si el detector encontró la mano
        crop_affine: Afín del recorte (grid -> imagen completa)
        tokens: Tokens de la última capa (8, 8, C)
        theta: (15, 3) eje-ángulo de los dedos
        beta: (10,) forma de la mano
        wrist_orientation: (3, 3) orientación global de muñeca vista por el flujo de mano
    """

    side: str
    detected: bool
    crop_affine: Affine2D
    tokens: TokenGrid
    theta: Optional[torch.Tensor] = None
    beta: Optional[torch.Tensor] = None
    wrist_orientation: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.side not in SIDES:
            raise UnknownSide(self.side)

    @classmethod
    def undetected(cls, side: str, affine: Affine2D, grid: int, channels: int) -> "HandObservation":
        return cls(side, False, affine, TokenGrid.zeros(grid, grid, channels, affine))


class HandBackboneParams(nn.Module):
    """Parámetros congelables del backbone de mano (el bloque y las lecturas lineales)."""

    def __init__(self, channels: int, grid: int, seed: int):
        super().__init__()
        layout = hand_token_layout(channels, grid)
        gen = seeded_generator(seed)
        self.grid = int(grid)
        self.seed = int(seed)
        self.layout = layout
        self.block = TokenBlock(grid * grid, channels, gen)
        self.register_buffer("code_readout", layout.code_basis.T.clone() / CODE_GAIN)
        self.register_buffer("wrist_readout", torch.linalg.pinv(layout.wrist_embed.T))

    @property
    def channels(self) -> int:
        return self.layout.channels

    def metadata(self) -> dict:
        return {"channels": self.channels, "grid": self.grid, "seed": self.seed}


def init_hand_backbone(seed: int, channels: int, grid: int = 8) -> HandBackboneParams:
    """Backbone de mano determinista para la semilla dada."""
    return HandBackboneParams(channels, grid, seed)


def hand_backbone_forward(params: HandBackboneParams, crop_tokens: TokenGrid, side: str = "left",
                          detected: bool = True) -> HandObservation:
    """
    Forward del backbone de mano sobre un recorte.

    Args:
        params: Parámetros del backbone
        crop_tokens: Grid del recorte (8, 8, C) con su afín
        side: Lado de la mano
        detected: Con False se devuelve la observación vacía (tokens a cero)

    Returns:
        HandObservation

    Raises:
        DimMismatch: si el recorte no es g x g x C
    """
    g, c = params.grid, params.channels
    if (crop_tokens.height, crop_tokens.width, crop_tokens.channels) != (g, g, c):
        raise DimMismatch(f"Recorte {tuple(crop_tokens.data.shape)} para un backbone de {g}x{g}x{c}")
    if not detected:
        return HandObservation.undetected(side, crop_tokens.affine, g, c)

    data = crop_tokens.data
    final = params.block(data.reshape(g * g, c)).reshape(g, g, c)
    code = data[..., c - params.layout.code_channels:].reshape(-1)
    decoded = params.code_readout @ code
    theta = decoded[:3 * FINGER_JOINTS].reshape(FINGER_JOINTS, 3)
    beta = decoded[3 * FINGER_JOINTS:]
    wrist = params.wrist_readout @ data.reshape(g * g, c).mean(dim=0)
    return HandObservation(
        side=side,
        detected=True,
        crop_affine=crop_tokens.affine,
        tokens=TokenGrid(final, crop_tokens.affine),
        theta=theta,
        beta=beta,
        wrist_orientation=nearest_rotation(wrist.reshape(3, 3)),
    )


def load_hand_backbone(path: str) -> HandBackboneParams:
    """Carga y congela un backbone de mano guardado con save_module."""
    return load_module(path, "hand_backbone",
                       lambda meta: init_hand_backbone(meta["seed"], meta["channels"], meta["grid"]))
