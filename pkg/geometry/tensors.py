"""Precisión numérica común: todo el cómputo geométrico va en float64."""

from typing import Any

import numpy as np
import torch

DTYPE = torch.float64


def as_float64(value: Any) -> torch.Tensor:
    """Convierte a tensor float64 sin copiar si ya lo es."""
    if isinstance(value, torch.Tensor):
        return value if value.dtype == DTYPE else value.to(DTYPE)
    return torch.as_tensor(np.asarray(value, dtype=np.float64), dtype=DTYPE)


def as_index(value: Any) -> torch.Tensor:
    """Convierte a tensor de índices int64."""
    if isinstance(value, torch.Tensor):
        return value.to(torch.long)
    return torch.as_tensor(np.asarray(value, dtype=np.int64), dtype=torch.long)
