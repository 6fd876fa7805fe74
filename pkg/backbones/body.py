"""
Backbone de cuerpo de juguete (análogo del estimador de cuerpo completo).

D bloques de tokens sobre el grid 16x12; cada bloque es un punto de fusión
donde se suma la modulación de CHAM. Las cabezas leen el promedio de los
tokens finales y producen los campos de un PoseState.
"""

import math
from typing import List, Optional, Tuple

import torch
from torch import nn

from articulated.kinematics import DEFAULT_ROOT_DEPTH, PoseState
from backbones.common import TokenBlock, load_module, normal_parameter, seeded_generator, zero_parameter
from cham.modulator import ModulationStack
from geometry.grids import TokenGrid
from geometry.rotations import axis_angle_to_matrix
from geometry.tensors import DTYPE
from utils.errors import DimMismatch

# las cabezas devuelven eje-ángulo de norma estrictamente menor que pi
MAX_HEAD_ANGLE = math.pi - 1e-3


def soft_clamp_axis_angle(v: torch.Tensor, limit: float = MAX_HEAD_ANGLE) -> torch.Tensor:
    """Escala v -> v · limit · tanh(|v| / limit) / |v|; la norma queda por debajo de limit."""
    sq = (v * v).sum(dim=-1, keepdim=True)
    r = torch.sqrt(sq.clamp_min(1e-30))
    factor = limit * torch.tanh(r / limit) / r
    taylor = 1.0 - sq / (3.0 * limit * limit)
    return v * torch.where(sq < 1e-12, taylor, factor)


class BodyBackboneParams(nn.Module):
    """Parámetros del backbone de cuerpo."""

    def __init__(self, depth: int, channels: int, grid: Tuple[int, int], joint_count: int,
                 num_betas: int, seed: int):
        super().__init__()
        gen = seeded_generator(seed)
        h, w = grid
        c = channels
        self.grid = (int(h), int(w))
        self.joint_count = int(joint_count)
        self.num_betas = int(num_betas)
        self.seed = int(seed)
        self.blocks = nn.ModuleList([TokenBlock(h * w, c, gen) for _ in range(depth)])
        self.pose_weight = normal_parameter((c, 3 * joint_count), 0.1 / c ** 0.5, gen)
        self.pose_bias = zero_parameter((3 * joint_count,))
        self.shape_weight = normal_parameter((c, num_betas), 0.1 / c ** 0.5, gen)
        self.shape_bias = zero_parameter((num_betas,))
        self.translation_weight = normal_parameter((c, 3), 0.01 / c ** 0.5, gen)
        self.translation_bias = nn.Parameter(torch.tensor([0.0, 0.0, DEFAULT_ROOT_DEPTH], dtype=DTYPE))

    @property
    def depth(self) -> int:
        return len(self.blocks)

    @property
    def channels(self) -> int:
        return self.pose_weight.shape[0]

    @property
    def fusion_points(self) -> int:
        """Un punto de fusión por bloque."""
        return self.depth

    def metadata(self) -> dict:
        return {
            "depth": self.depth,
            "channels": self.channels,
            "grid": list(self.grid),
            "joint_count": self.joint_count,
            "num_betas": self.num_betas,
            "seed": self.seed,
        }


def init_body_backbone(seed: int, depth: int, channels: int, grid: Tuple[int, int] = (16, 12),
                       joint_count: int = 22, num_betas: int = 10) -> BodyBackboneParams:
    """Backbone de cuerpo determinista para la semilla dada."""
    return BodyBackboneParams(depth, channels, grid, joint_count, num_betas, seed)


def _check_inputs(params: BodyBackboneParams, tokens: TokenGrid, modulation: Optional[ModulationStack]) -> None:
    h, w = params.grid
    if (tokens.height, tokens.width, tokens.channels) != (h, w, params.channels):
        raise DimMismatch(
            f"Tokens {tuple(tokens.data.shape[-3:])} para un backbone de {h}x{w}x{params.channels}"
        )
    if modulation is None:
        return
    if modulation.depth != params.depth:
        raise DimMismatch(f"Modulación con {modulation.depth} grids para {params.depth} bloques")
    if tuple(modulation.grids.shape[-3:]) != (h, w, params.channels):
        raise DimMismatch(f"Grids de modulación {tuple(modulation.grids.shape[-3:])} fuera de la resolución del cuerpo")


def body_backbone_forward(params: BodyBackboneParams, tokens: TokenGrid,
                          modulation: Optional[ModulationStack] = None) -> Tuple[PoseState, List[torch.Tensor]]:
    """
    Forward del backbone de cuerpo.

    El bloque k calcula tokens <- Block_k(tokens + modulation[k]).

    Args:
        params: Parámetros (congelados o no)
        tokens: Grid de entrada (..., h, w, C)
        modulation: Pila de D grids o None

    Returns:
        (PoseState predicho, tokens tras cada bloque (..., h, w, C))

    Raises:
        DimMismatch: si las dimensiones no coinciden con el backbone
    """
    _check_inputs(params, tokens, modulation)
    h, w = params.grid
    c = params.channels
    batch = tokens.data.shape[:-3]
    x = tokens.data.reshape(*batch, h * w, c)
    snapshots = []
    for k, block in enumerate(params.blocks):
        if modulation is not None:
            x = x + modulation.grids[..., k, :, :, :].reshape(*modulation.grids.shape[:-4], h * w, c)
        x = block(x)
        snapshots.append(x.reshape(*x.shape[:-2], h, w, c))
    pooled = x.mean(dim=-2)
    j = params.joint_count
    rotations = soft_clamp_axis_angle((pooled @ params.pose_weight + params.pose_bias).reshape(*pooled.shape[:-1], j, 3))
    pose = PoseState(
        root_orientation=axis_angle_to_matrix(rotations[..., 0, :]),
        root_translation=pooled @ params.translation_weight + params.translation_bias,
        local_rotations=axis_angle_to_matrix(rotations[..., 1:, :]),
        shape=pooled @ params.shape_weight + params.shape_bias,
    )
    return pose, snapshots


def load_body_backbone(path: str) -> BodyBackboneParams:
    """Carga y congela un backbone de cuerpo guardado con save_module."""
    def build(meta: dict) -> BodyBackboneParams:
        return init_body_backbone(meta["seed"], meta["depth"], meta["channels"], tuple(meta["grid"]),
                                  meta["joint_count"], meta["num_betas"])

    return load_module(path, "body_backbone", build)
