"""
Piezas compartidas por los backbones de juguete.

Un bloque mezcla tokens con una matriz N x N y después aplica un MLP de
canales con tanh, ambos con conexión residual. La fusión de CHAM entra
sumada a la entrada del bloque.
"""

from typing import Callable, Dict, Optional

import torch
from torch import nn

from geometry.tensors import DTYPE
from utils.errors import FrozenParamsModified, ParseError
from utils.serialization import load_params, save_params, tensor_hash


def seeded_generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))


def normal_parameter(shape, std: float, gen: torch.Generator) -> nn.Parameter:
    """Parámetro float64 inicializado N(0, std²) con un generador propio."""
    return nn.Parameter(std * torch.randn(*shape, generator=gen, dtype=DTYPE))


def zero_parameter(shape) -> nn.Parameter:
    return nn.Parameter(torch.zeros(*shape, dtype=DTYPE))


class TokenBlock(nn.Module):
    """Bloque token-mix + MLP de canales."""

    def __init__(self, tokens: int, channels: int, gen: torch.Generator, hidden_factor: int = 2,
                 mix_scale: float = 0.5):
        super().__init__()
        hidden = hidden_factor * channels
        self.mix = normal_parameter((tokens, tokens), mix_scale / tokens ** 0.5, gen)
        self.fc1_weight = normal_parameter((channels, hidden), 1.0 / channels ** 0.5, gen)
        self.fc1_bias = zero_parameter((hidden,))
        self.fc2_weight = normal_parameter((hidden, channels), 0.5 / hidden ** 0.5, gen)
        self.fc2_bias = zero_parameter((channels,))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (..., N, C)
        x = x + self.mix @ x
        return x + torch.tanh(x @ self.fc1_weight + self.fc1_bias) @ self.fc2_weight + self.fc2_bias


def parameter_hash(module: nn.Module) -> str:
    """sha256 de todos los tensores del módulo (parámetros y buffers)."""
    return tensor_hash(module.state_dict())


def freeze(module: nn.Module) -> str:
    """
    Congela el módulo y registra su hash.

    Returns:
        Hash de contenido registrado en module.frozen_hash
    """
    module.requires_grad_(False)
    module.eval()
    module.frozen_hash = parameter_hash(module)
    return module.frozen_hash


def is_frozen(module: nn.Module) -> bool:
    return getattr(module, "frozen_hash", None) is not None and not any(
        p.requires_grad for p in module.parameters()
    )


def verify_frozen(module: nn.Module, expected: Optional[str] = None) -> str:
    """
    Recalcula el hash de un módulo congelado.

    Raises:
        FrozenParamsModified: si difiere del registrado (o de `expected`)
    """
    expected = expected or getattr(module, "frozen_hash", None)
    current = parameter_hash(module)
    if expected is None or current != expected:
        raise FrozenParamsModified(
            f"{type(module).__name__}: hash {current[:12]} distinto del congelado {str(expected)[:12]}"
        )
    return current


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def load_state(module: nn.Module, tensors: Dict[str, torch.Tensor]) -> nn.Module:
    """Copia tensores cargados en un módulo ya construido con las mismas dimensiones."""
    with torch.no_grad():
        module.load_state_dict({k: v.to(DTYPE) for k, v in tensors.items()}, strict=True)
    return module


def save_module(module: nn.Module, path: str, kind: str) -> str:
    """Guarda state_dict y metadata() del módulo como archivo de parámetros versionado."""
    return save_params(module.state_dict(), path, kind, module.metadata())


def load_module(path: str, kind: str, factory: Callable[[dict], nn.Module], frozen: bool = True) -> nn.Module:
    """
    Reconstruye un módulo desde su archivo de parámetros.

    Args:
        path: Archivo escrito por save_module
        kind: Tipo esperado ("body_backbone", "hand_backbone", "cham")
        factory: Construye el módulo vacío a partir de la metadata
        frozen: Congelar y registrar el hash tras cargar

    Raises:
        IoError: archivo inexistente
        ParseError: tipo, versión, hash o formas incorrectos
    """
    tensors, metadata = load_params(path, kind)
    module = factory(metadata)
    try:
        load_state(module, tensors)
    except RuntimeError as e:
        raise ParseError(f"Los tensores de {path} no encajan con {type(module).__name__}: {e}") from e
    if frozen:
        freeze(module)
    return module
