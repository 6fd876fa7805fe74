"""Transformaciones rígidas (rotación + traslación) con dimensiones de batch."""

from dataclasses import dataclass
from typing import Tuple

import torch

from geometry.tensors import DTYPE, as_float64


@dataclass(frozen=True)
class RigidTransform:
    """
    x -> R x + t.

    Attributes:
        rotation: (..., 3, 3)
        translation: (..., 3) en metros
    """

    rotation: torch.Tensor
    translation: torch.Tensor

    @classmethod
    def identity(cls, batch_shape: Tuple[int, ...] = ()) -> "RigidTransform":
        eye = torch.eye(3, dtype=DTYPE).expand(*batch_shape, 3, 3).clone()
        return cls(eye, torch.zeros(*batch_shape, 3, dtype=DTYPE))

    @classmethod
    def create(cls, rotation, translation) -> "RigidTransform":
        return cls(as_float64(rotation), as_float64(translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: aplica primero `other` y luego `self`."""
        rotation = self.rotation @ other.rotation
        translation = (self.rotation @ other.translation[..., None])[..., 0] + self.translation
        return RigidTransform(rotation, translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.transpose(-1, -2)
        return RigidTransform(rt, -(rt @ self.translation[..., None])[..., 0])

    def apply(self, points: torch.Tensor) -> torch.Tensor:
        """Transforma puntos (..., N, 3)."""
        pts = as_float64(points)
        return pts @ self.rotation.transpose(-1, -2) + self.translation[..., None, :]

    def detach(self) -> "RigidTransform":
        return RigidTransform(self.rotation.detach(), self.translation.detach())


def apply_rigid(transform: RigidTransform, points: torch.Tensor) -> torch.Tensor:
    """p -> R p + t para cada punto."""
    return transform.apply(points)
