"""
Registro de nubes de puntos con correspondencias conocidas.

kabsch_rigid resuelve el problema rígido y procrustes_similarity añade una
escala positiva. Ambos usan pesos uniformes y corrigen reflexiones con el
signo del determinante. Son diferenciables respecto a los puntos mientras
los valores singulares de la covarianza estén separados.
"""

from typing import Tuple

import torch

from geometry.rigid import RigidTransform
from geometry.tensors import DTYPE, as_float64
from utils.errors import DegenerateConfiguration, DimMismatch

# rango < 2 si el segundo valor singular cae por debajo de esta fracción del primero
_RANK_TOL = 1e-10


def _validate_pair(src: torch.Tensor, dst: torch.Tensor) -> None:
    if src.shape != dst.shape or src.shape[-1] != 3:
        raise DimMismatch(f"src {tuple(src.shape)} y dst {tuple(dst.shape)} deben ser (N, 3) iguales")
    if src.shape[-2] < 3:
        raise DegenerateConfiguration(f"Se necesitan al menos 3 puntos, hay {src.shape[-2]}")


def _check_rank(centered: torch.Tensor) -> None:
    sv = torch.linalg.svdvals(centered.detach())
    top = sv[..., 0]
    if bool((top <= 1e-15).any()) or bool((sv[..., 1] <= _RANK_TOL * top).any()):
        raise DegenerateConfiguration("Los puntos de origen son colineales o coincidentes (rango < 2)")


def _center(points: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    mean = points.mean(dim=-2)
    return mean, points - mean[..., None, :]


def _optimal_rotation(src_c: torch.Tensor, dst_c: torch.Tensor):
    """R = V diag(1, 1, d) U^T con H = src_c^T dst_c = U S V^T."""
    h = src_c.transpose(-1, -2) @ dst_c
    u, s, vh = torch.linalg.svd(h)
    v = vh.transpose(-1, -2)
    det = torch.linalg.det((v @ u.transpose(-1, -2)).detach())
    d = torch.where(det < 0, -1.0, 1.0).to(DTYPE)
    signs = torch.ones(*d.shape, 3, dtype=DTYPE)
    signs[..., 2] = d
    rotation = (v * signs[..., None, :]) @ u.transpose(-1, -2)
    return rotation, s, signs


def kabsch_rigid(src: torch.Tensor, dst: torch.Tensor) -> RigidTransform:
    """
    Transformación rígida que minimiza sum ||R src_i + t - dst_i||^2.

    Args:
        src: Puntos de origen (..., N, 3)
        dst: Puntos destino (..., N, 3)

    Returns:
        RigidTransform con rotación propia

    Raises:
        DegenerateConfiguration: N < 3 o src de rango < 2
    """
    src = as_float64(src)
    dst = as_float64(dst)
    _validate_pair(src, dst)
    mean_src, src_c = _center(src)
    mean_dst, dst_c = _center(dst)
    _check_rank(src_c)
    rotation, _, _ = _optimal_rotation(src_c, dst_c)
    translation = mean_dst - (rotation @ mean_src[..., None])[..., 0]
    return RigidTransform(rotation, translation)


def procrustes_similarity(src: torch.Tensor, dst: torch.Tensor) -> Tuple[torch.Tensor, RigidTransform]:
    """
    Similitud (s > 0, R, t) que minimiza sum ||s R src_i + t - dst_i||^2.

    La traslación del RigidTransform devuelto ya incluye la escala:
    dst ~ s * (R src) + t.

    Raises:
        DegenerateConfiguration: N < 3 o src de rango < 2
    """
    src = as_float64(src)
    dst = as_float64(dst)
    _validate_pair(src, dst)
    mean_src, src_c = _center(src)
    mean_dst, dst_c = _center(dst)
    _check_rank(src_c)
    rotation, sv, signs = _optimal_rotation(src_c, dst_c)
    scale = (sv * signs).sum(-1) / (src_c * src_c).sum(dim=(-1, -2))
    translation = mean_dst - scale[..., None] * (rotation @ mean_src[..., None])[..., 0]
    return scale, RigidTransform(rotation, translation)


def apply_similarity(scale: torch.Tensor, transform: RigidTransform, points: torch.Tensor) -> torch.Tensor:
    pts = as_float64(points)
    return scale[..., None, None] * (pts @ transform.rotation.transpose(-1, -2)) + transform.translation[..., None, :]


def rigid_residual(transform: RigidTransform, src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
    """Suma de cuadrados de los residuos tras aplicar la transformación."""
    diff = transform.apply(src) - as_float64(dst)
    return (diff * diff).sum(dim=(-1, -2))


def similarity_residual(scale: torch.Tensor, transform: RigidTransform, src, dst) -> torch.Tensor:
    diff = apply_similarity(scale, transform, src) - as_float64(dst)
    return (diff * diff).sum(dim=(-1, -2))


def covariance_singular_values(src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
    """Valores singulares de la covarianza cruzada centrada (para vigilar degeneración)."""
    _, src_c = _center(as_float64(src))
    _, dst_c = _center(as_float64(dst))
    return torch.linalg.svdvals((src_c.transpose(-1, -2) @ dst_c).detach())
