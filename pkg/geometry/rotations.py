"""
Rotaciones en 3D.

Las orientaciones se almacenan como matrices 3x3; el eje-ángulo sólo aparece
en la entrada/salida y en las pérdidas. Todas las funciones aceptan
dimensiones de batch a la izquierda y son diferenciables con autograd.
"""

import math

import torch

from geometry.tensors import DTYPE, as_float64
from utils.errors import NotARotation

ROTATION_TOL = 1e-6

# sin(ángulo) por debajo de 1e-6 activa las ramas de ángulo pequeño / cercano a pi
_SMALL_SIN2 = 1e-12
# por debajo de este |v|^2 el signo del eje ya no se puede leer de la parte antisimétrica
_SIGN_FROM_VEE2 = 1e-24


def hat(v: torch.Tensor) -> torch.Tensor:
    """Matriz antisimétrica [v]x de un vector (..., 3)."""
    v = as_float64(v)
    zero = torch.zeros_like(v[..., 0])
    rows = [
        torch.stack([zero, -v[..., 2], v[..., 1]], dim=-1),
        torch.stack([v[..., 2], zero, -v[..., 0]], dim=-1),
        torch.stack([-v[..., 1], v[..., 0], zero], dim=-1),
    ]
    return torch.stack(rows, dim=-2)


def axis_angle_to_matrix(v: torch.Tensor) -> torch.Tensor:
    """
    Fórmula de Rodrigues.

    Args:
        v: Eje-ángulo (..., 3); la norma es el ángulo en radianes

    Returns:
        Matrices de rotación (..., 3, 3); el vector nulo da la identidad exacta
    """
    v = as_float64(v)
    theta2 = (v * v).sum(-1)[..., None, None]
    small = theta2 < _SMALL_SIN2
    theta2_safe = torch.where(small, torch.ones_like(theta2), theta2)
    theta = torch.sqrt(theta2_safe)
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / theta2_safe)
    k = hat(v)
    eye = torch.eye(3, dtype=DTYPE).expand(k.shape)
    return eye + a * k + b * (k @ k)


def check_rotation(rotation: torch.Tensor, tol: float = ROTATION_TOL) -> None:
    """
    Verifica ortonormalidad y determinante 1.

    Raises:
        NotARotation: si alguna matriz del batch falla la comprobación
    """
    r = as_float64(rotation).detach()
    if r.shape[-2:] != (3, 3):
        raise NotARotation(f"Se esperaba una matriz 3x3, llegó {tuple(r.shape)}")
    if not torch.isfinite(r).all():
        raise NotARotation("La matriz contiene valores no finitos")
    eye = torch.eye(3, dtype=DTYPE)
    ortho_err = (r.transpose(-1, -2) @ r - eye).abs().amax() if r.numel() else torch.tensor(0.0)
    det_err = (torch.linalg.det(r) - 1.0).abs().amax() if r.numel() else torch.tensor(0.0)
    if ortho_err > tol or det_err > tol:
        raise NotARotation(
            f"Matriz no ortonormal (error {float(ortho_err):.3g}) o det != 1 (error {float(det_err):.3g})"
        )


def matrix_to_axis_angle(rotation: torch.Tensor, check: bool = True) -> torch.Tensor:
    """
    Eje-ángulo canónico de una rotación.

    El ángulo queda en [0, pi]. En ángulo pi exacto el eje se orienta con su
    primera componente no nula positiva.

    Args:
        rotation: Matrices (..., 3, 3)
        check: Validar ortonormalidad antes de convertir

    Returns:
        Vectores eje-ángulo (..., 3)

    Raises:
        NotARotation: si check está activo y la matriz no es una rotación
    """
    r = as_float64(rotation)
    if check:
        check_rotation(r)

    vee = 0.5 * torch.stack(
        [r[..., 2, 1] - r[..., 1, 2], r[..., 0, 2] - r[..., 2, 0], r[..., 1, 0] - r[..., 0, 1]],
        dim=-1,
    )
    s2 = (vee * vee).sum(-1)
    cos = (0.5 * (r.diagonal(dim1=-2, dim2=-1).sum(-1) - 1.0)).clamp(-1.0, 1.0)
    s = torch.sqrt(s2.clamp_min(1e-30))
    angle = torch.atan2(s, cos)

    tiny = s2 < _SMALL_SIN2
    near_pi = tiny & (cos < 0)

    small_branch = vee * (1.0 + s2 / 6.0)[..., None]
    generic_branch = vee * (angle / s)[..., None]

    # Cerca de pi: aa^T = (S - cI) / (1 - c) con S la parte simétrica
    sym = 0.5 * (r + r.transpose(-1, -2))
    denom = torch.where(near_pi, 1.0 - cos, torch.ones_like(cos))
    eye = torch.eye(3, dtype=DTYPE)
    outer = (sym - cos[..., None, None] * eye) / denom[..., None, None]
    diag = outer.diagonal(dim1=-2, dim2=-1)
    col_idx = diag.argmax(dim=-1)
    column = torch.gather(outer, -1, col_idx[..., None, None].expand(*outer.shape[:-1], 1))[..., 0]
    axis = column / torch.sqrt((column * column).sum(-1).clamp_min(1e-30))[..., None]

    dot = (axis * vee).sum(-1)
    nonzero = axis.detach().abs() > 1e-9
    first = nonzero.to(torch.int64).argmax(dim=-1)
    first_comp = torch.gather(axis.detach(), -1, first[..., None])[..., 0]
    canon_sign = torch.where(first_comp < 0, -1.0, 1.0).to(DTYPE)
    vee_sign = torch.where(dot.detach() < 0, -1.0, 1.0).to(DTYPE)
    sign = torch.where(s2.detach() > _SIGN_FROM_VEE2, vee_sign, canon_sign)
    pi_branch = axis * (sign * angle)[..., None]

    out = torch.where(tiny[..., None], small_branch, generic_branch)
    return torch.where(near_pi[..., None], pi_branch, out)


def rotation_angle(rotation: torch.Tensor) -> torch.Tensor:
    """Ángulo de la rotación en [0, pi]."""
    r = as_float64(rotation)
    vee = 0.5 * torch.stack(
        [r[..., 2, 1] - r[..., 1, 2], r[..., 0, 2] - r[..., 2, 0], r[..., 1, 0] - r[..., 0, 1]],
        dim=-1,
    )
    s = torch.sqrt((vee * vee).sum(-1).clamp_min(1e-30))
    cos = (0.5 * (r.diagonal(dim1=-2, dim2=-1).sum(-1) - 1.0)).clamp(-1.0, 1.0)
    return torch.atan2(s, cos)


def geodesic_distance(r1: torch.Tensor, r2: torch.Tensor) -> torch.Tensor:
    """Distancia geodésica (radianes) entre rotaciones."""
    return rotation_angle(as_float64(r1).transpose(-1, -2) @ as_float64(r2))


def rotation_about(axis, angle: float) -> torch.Tensor:
    """Rotación de `angle` radianes alrededor de un eje (no necesariamente unitario)."""
    axis = as_float64(axis)
    axis = axis / torch.linalg.norm(axis)
    return axis_angle_to_matrix(axis * angle)


def rx(angle: float) -> torch.Tensor:
    c, s = math.cos(angle), math.sin(angle)
    return torch.tensor([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]], dtype=DTYPE)


def ry(angle: float) -> torch.Tensor:
    c, s = math.cos(angle), math.sin(angle)
    return torch.tensor([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], dtype=DTYPE)


def rz(angle: float) -> torch.Tensor:
    c, s = math.cos(angle), math.sin(angle)
    return torch.tensor([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], dtype=DTYPE)


def nearest_rotation(matrix: torch.Tensor) -> torch.Tensor:
    """Proyección de una matriz 3x3 arbitraria a SO(3) vía SVD."""
    m = as_float64(matrix)
    u, _, vh = torch.linalg.svd(m)
    d = torch.where(torch.linalg.det(u @ vh) < 0, -1.0, 1.0).to(DTYPE)
    fix = torch.ones(*d.shape, 3, dtype=DTYPE)
    fix[..., 2] = d
    return (u * fix[..., None, :]) @ vh
