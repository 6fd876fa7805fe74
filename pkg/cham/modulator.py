"""
Parámetros de CHAM y la pila de modulaciones que produce.

Las ramas izquierda y derecha son D proyecciones 1x1 (lineales por canal)
que arrancan exactamente en cero; la atención cruzada se inicializa al azar
con una semilla fija.
"""

from dataclasses import dataclass

import torch
from torch import nn

from backbones.common import load_module, normal_parameter, seeded_generator, zero_parameter
from geometry.grids import Affine2D, TokenGrid
from geometry.tensors import DTYPE
from utils.errors import DimMismatch

ATTENTION_LAYERS = 3


@dataclass
class ModulationStack:
    """
    Una grid de modulación por bloque del backbone de cuerpo.

    Attributes:
        grids: (..., D, h, w, C) a resolución del cuerpo
        affine: Afín del grid del cuerpo, compartido por todas las grids
    """

    grids: torch.Tensor
    affine: Affine2D

    def __post_init__(self):
        if self.grids.dim() < 4:
            raise DimMismatch(f"ModulationStack necesita (..., D, h, w, C), llegó {tuple(self.grids.shape)}")

    @property
    def depth(self) -> int:
        return self.grids.shape[-4]

    def __len__(self) -> int:
        return self.depth

    def grid(self, k: int) -> TokenGrid:
        return TokenGrid(self.grids[..., k, :, :, :], self.affine)

    @classmethod
    def zeros(cls, depth: int, h: int, w: int, channels: int, affine: Affine2D) -> "ModulationStack":
        return cls(torch.zeros(depth, h, w, channels, dtype=DTYPE), affine)

    @staticmethod
    def stack(stacks) -> "ModulationStack":
        """Apila las pilas de varias escenas en una dimensión de batch."""
        stacks = list(stacks)
        return ModulationStack(torch.stack([s.grids for s in stacks]), stacks[0].affine)

    def is_zero(self) -> bool:
        return not bool(self.grids.detach().abs().max() > 0) if self.grids.numel() else True


class BranchProjections(nn.Module):
    """D mapas 1x1 (C x C) con sesgo, inicializados a cero."""

    def __init__(self, depth: int, channels: int):
        super().__init__()
        self.weight = zero_parameter((depth, channels, channels))
        self.bias = zero_parameter((depth, channels))

    @property
    def depth(self) -> int:
        return self.weight.shape[0]


class CrossAttentionLayer(nn.Module):
    """Una capa de atención cruzada de una cabeza con feed-forward (mapas compartidos por ambos lados)."""

    def __init__(self, channels: int, gen: torch.Generator, ff_factor: int = 2):
        super().__init__()
        c = channels
        hidden = ff_factor * c
        std = 1.0 / c ** 0.5
        self.query = normal_parameter((c, c), std, gen)
        self.key = normal_parameter((c, c), std, gen)
        self.value = normal_parameter((c, c), std, gen)
        self.output = normal_parameter((c, c), 0.5 * std, gen)
        self.ff1_weight = normal_parameter((c, hidden), std, gen)
        self.ff1_bias = zero_parameter((hidden,))
        self.ff2_weight = normal_parameter((hidden, c), 0.5 / hidden ** 0.5, gen)
        self.ff2_bias = zero_parameter((c,))


class ChamParams(nn.Module):
    """Único componente entrenable del pipeline."""

    def __init__(self, depth: int, channels: int, seed: int, layers: int = ATTENTION_LAYERS):
        super().__init__()
        gen = seeded_generator(seed)
        self.attention = nn.ModuleList([CrossAttentionLayer(channels, gen) for _ in range(layers)])
        self.left_branch = BranchProjections(depth, channels)
        self.right_branch = BranchProjections(depth, channels)
        self.seed = int(seed)

    @property
    def depth(self) -> int:
        return self.left_branch.depth

    @property
    def channels(self) -> int:
        return self.left_branch.weight.shape[-1]

    def branch(self, side: str) -> BranchProjections:
        return self.left_branch if side == "left" else self.right_branch

    def metadata(self) -> dict:
        return {"depth": self.depth, "channels": self.channels, "seed": self.seed, "layers": len(self.attention)}


def init_cham(seed: int, depth: int, channels: int, layers: int = ATTENTION_LAYERS) -> ChamParams:
    """
    Inicializa CHAM: ramas exactamente en cero, atención con semilla.

    Args:
        seed: Semilla de la atención cruzada
        depth: D, una proyección por bloque del cuerpo
        channels: C
        layers: Capas de atención cruzada
    """
    return ChamParams(depth, channels, seed, layers)


def cham_parameter_count(depth: int, channels: int, layers: int = ATTENTION_LAYERS) -> int:
    """Conteo cerrado: 2 D (C² + C) de las ramas más L (8 C² + 3 C) de la atención."""
    c = channels
    return 2 * depth * (c * c + c) + layers * (8 * c * c + 3 * c)


def load_cham(path: str) -> ChamParams:
    """Carga parámetros de CHAM (entrenables, sin congelar)."""
    return load_module(
        path, "cham",
        lambda meta: init_cham(meta["seed"], meta["depth"], meta["channels"], meta["layers"]),
        frozen=False,
    )
