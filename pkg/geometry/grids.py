"""
Grids de tokens 2D ubicados en la imagen completa.

Una celda (fila v, columna u) tiene su centro en (u + 0.5, v + 0.5) en
coordenadas de grid; el Affine2D del grid lo lleva a píxeles de la imagen.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Tuple

import torch

from geometry.tensors import DTYPE, as_float64
from utils.errors import InvalidDims

# holgura numérica al decidir si un punto cae dentro de la huella del grid
_INSIDE_EPS = 1e-9


@dataclass(frozen=True)
class Affine2D:
    """
    Mapa afín 2x3: coordenadas de grid (u, v) -> píxeles de imagen (x, y).

    `key` es la matriz aplanada como tupla; identifica el afín en las cachés.
    """

    matrix: torch.Tensor

    def __post_init__(self):
        m = as_float64(self.matrix)
        object.__setattr__(self, "matrix", m)
        if m.shape != (2, 3):
            raise InvalidDims(f"Affine2D necesita una matriz 2x3, llegó {tuple(m.shape)}")
        if abs(float(torch.linalg.det(m[:, :2]))) <= 1e-12:
            raise InvalidDims("La parte lineal del afín no es invertible")
        object.__setattr__(self, "_inverse_linear_t", torch.linalg.inv(m[:, :2]).T.contiguous())
        object.__setattr__(self, "key", tuple(m.reshape(-1).tolist()))

    @classmethod
    def scale_offset(cls, sx: float, sy: float, x0: float = 0.0, y0: float = 0.0) -> "Affine2D":
        return cls(torch.tensor([[sx, 0.0, x0], [0.0, sy, y0]], dtype=DTYPE))

    @classmethod
    def from_box(cls, x0: float, y0: float, width: float, height: float, cols: int, rows: int) -> "Affine2D":
        """Afín de un grid de rows x cols que cubre la caja [x0, x0+width] x [y0, y0+height]."""
        return cls.scale_offset(width / cols, height / rows, x0, y0)

    @property
    def linear(self) -> torch.Tensor:
        return self.matrix[:, :2]

    @property
    def offset(self) -> torch.Tensor:
        return self.matrix[:, 2]

    def apply(self, uv: torch.Tensor) -> torch.Tensor:
        return as_float64(uv) @ self.linear.T + self.offset

    def inverse_apply(self, xy: torch.Tensor) -> torch.Tensor:
        return (as_float64(xy) - self.offset) @ self._inverse_linear_t

    def to_list(self) -> list:
        return self.matrix.tolist()

    @classmethod
    def from_list(cls, rows: Sequence[Sequence[float]]) -> "Affine2D":
        return cls(torch.tensor(rows, dtype=DTYPE))

    @classmethod
    def from_key(cls, key: Tuple[float, ...]) -> "Affine2D":
        return cls(torch.tensor(key, dtype=DTYPE).reshape(2, 3))


@dataclass
class TokenGrid:
    """
    Tokens (..., h, w, C) con su ubicación en la imagen.

    Admite dimensiones de batch a la izquierda para remuestrear varias
    grids con el mismo afín en una sola pasada.
    """

    data: torch.Tensor
    affine: Affine2D

    def __post_init__(self):
        if self.data.dim() < 3:
            raise InvalidDims(f"TokenGrid necesita al menos 3 dimensiones, llegó {tuple(self.data.shape)}")

    @property
    def height(self) -> int:
        return self.data.shape[-3]

    @property
    def width(self) -> int:
        return self.data.shape[-2]

    @property
    def channels(self) -> int:
        return self.data.shape[-1]

    @classmethod
    def zeros(cls, h: int, w: int, channels: int, affine: Affine2D) -> "TokenGrid":
        return cls(torch.zeros(h, w, channels, dtype=DTYPE), affine)


@lru_cache(maxsize=64)
def cell_centers(h: int, w: int) -> torch.Tensor:
    """Centros de celda (h, w, 2) en coordenadas de grid (u, v). Tensor compartido: no modificar."""
    v, u = torch.meshgrid(
        torch.arange(h, dtype=DTYPE) + 0.5, torch.arange(w, dtype=DTYPE) + 0.5, indexing="ij"
    )
    return torch.stack([u, v], dim=-1)


def _bilinear_plan(uv: torch.Tensor, src_h: int, src_w: int):
    u, v = uv[..., 0], uv[..., 1]
    inside = (
        (u >= -_INSIDE_EPS) & (u <= src_w + _INSIDE_EPS)
        & (v >= -_INSIDE_EPS) & (v <= src_h + _INSIDE_EPS)
    )
    col = (u - 0.5).clamp(0.0, src_w - 1.0)
    row = (v - 0.5).clamp(0.0, src_h - 1.0)
    c0 = torch.floor(col).long().clamp(max=src_w - 1)
    r0 = torch.floor(row).long().clamp(max=src_h - 1)
    c1 = (c0 + 1).clamp(max=src_w - 1)
    r1 = (r0 + 1).clamp(max=src_h - 1)
    fc = (col - c0.to(DTYPE))[..., None]
    fr = (row - r0.to(DTYPE))[..., None]
    return inside, r0, r1, c0, c1, fr, fc


def _blend(v00, v01, v10, v11, fr, fc):
    top = v00 + fc * (v01 - v00)
    bottom = v10 + fc * (v11 - v10)
    return top + fr * (bottom - top)


def _check_output_dims(out_h: int, out_w: int):
    if out_h <= 0 or out_w <= 0:
        raise InvalidDims(f"Dimensiones de salida inválidas: {out_h}x{out_w}")


@lru_cache(maxsize=1024)
def _sampling_plan(source_keys: Tuple[Tuple[float, ...], ...], src_h: int, src_w: int,
                   target_key: Tuple[float, ...], out_h: int, out_w: int):
    """Plan bilineal (N, out_h, out_w) de N fuentes sobre un destino. Tensores compartidos: no modificar."""
    xy = Affine2D.from_key(target_key).apply(cell_centers(out_h, out_w))
    uv = torch.stack([Affine2D.from_key(key).inverse_apply(xy) for key in source_keys])
    inside, r0, r1, c0, c1, fr, fc = _bilinear_plan(uv, src_h, src_w)
    batch = torch.arange(len(source_keys))[:, None, None]
    return inside, inside.to(DTYPE)[..., None], batch, r0, r1, c0, c1, fr, fc


def resample_grid(grid: TokenGrid, target_affine: Affine2D, out_h: int, out_w: int,
                  fill: float = 0.0) -> TokenGrid:
    """
    Remuestrea un grid en las celdas de otro grid ubicado por target_affine.

    Cada centro de celda destino se lleva a píxeles con target_affine y de ahí
    a coordenadas del grid fuente con la inversa de su afín. Dentro de la
    huella del fuente se interpola bilinealmente; fuera se escribe `fill`.

    Args:
        grid: Grid fuente (..., h, w, C)
        target_affine: Afín del grid de salida
        out_h: Filas de salida
        out_w: Columnas de salida
        fill: Valor para celdas fuera del fuente

    Returns:
        TokenGrid (..., out_h, out_w, C) con afín target_affine

    Raises:
        InvalidDims: si out_h * out_w == 0
    """
    _check_output_dims(out_h, out_w)
    data = as_float64(grid.data)
    plan = _sampling_plan((grid.affine.key,), grid.height, grid.width, target_affine.key, out_h, out_w)
    inside, _, _, r0, r1, c0, c1, fr, fc = (t[0] for t in plan)
    values = _blend(data[..., r0, c0, :], data[..., r0, c1, :],
                    data[..., r1, c0, :], data[..., r1, c1, :], fr, fc)
    out = torch.where(inside[..., None], values, torch.full_like(values, fill))
    return TokenGrid(out, target_affine)


def resample_grids(data: torch.Tensor, source_affines: Sequence[Affine2D], target_affine: Affine2D,
                   out_h: int, out_w: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Remuestrea N grids (N, h, w, C), cada una con su afín, en un mismo grid destino.

    Equivale a llamar resample_grid con fill 0 grid a grid, en una sola pasada.

    Returns:
        (valores (N, out_h, out_w, C), huella (N, out_h, out_w, 1) en float64)

    Raises:
        InvalidDims: salida vacía o número de afines distinto de N
    """
    _check_output_dims(out_h, out_w)
    data = as_float64(data)
    if data.dim() != 4 or data.shape[0] != len(source_affines):
        raise InvalidDims(f"Se esperaban {len(source_affines)} grids (N, h, w, C), llegó {tuple(data.shape)}")
    plan = _sampling_plan(tuple(a.key for a in source_affines), data.shape[1], data.shape[2],
                          target_affine.key, out_h, out_w)
    _, footprint, n, r0, r1, c0, c1, fr, fc = plan
    values = _blend(data[n, r0, c0], data[n, r0, c1], data[n, r1, c0], data[n, r1, c1], fr, fc)
    return values * footprint, footprint


@lru_cache(maxsize=16)
def _encoding_frequencies(n_freq: int) -> torch.Tensor:
    if n_freq == 1:
        return torch.tensor([math.pi], dtype=DTYPE)
    return math.pi * torch.pow(torch.tensor(4.0, dtype=DTYPE),
                               torch.arange(n_freq, dtype=DTYPE) / (n_freq - 1))


@lru_cache(maxsize=1024)
def _encoding(h: int, w: int, channels: int, affine_key: Tuple[float, ...],
              image_w: float, image_h: float) -> torch.Tensor:
    xy = Affine2D.from_key(affine_key).apply(cell_centers(h, w))
    freqs = _encoding_frequencies(channels // 4)
    x = xy[..., 0:1] / image_w
    y = xy[..., 1:2] / image_h
    enc = torch.stack(
        [torch.sin(freqs * x), torch.cos(freqs * x), torch.sin(freqs * y), torch.cos(freqs * y)],
        dim=-1,
    )
    return enc.reshape(h, w, channels)


def positional_encoding_2d(h: int, w: int, channels: int, affine: Affine2D,
                           image_w: float, image_h: float) -> TokenGrid:
    """
    Codificación sinusoidal 2D en coordenadas normalizadas de la imagen completa.

    Con F = channels / 4 frecuencias w_k = pi * 4^(k / (F - 1)), los canales
    4k..4k+3 son sin(w_k x), cos(w_k x), sin(w_k y), cos(w_k y) con
    x, y en [0, 1]. Evaluarla en las celdas de un recorte equivale a
    generarla sobre la imagen y recortarla. Se cachea por afín: el tensor
    devuelto es compartido y no debe modificarse.

    Raises:
        InvalidDims: canales no múltiplo de 4 o grid vacío
    """
    if channels <= 0 or channels % 4 != 0:
        raise InvalidDims(f"channels debe ser múltiplo positivo de 4, llegó {channels}")
    if h <= 0 or w <= 0:
        raise InvalidDims(f"Grid vacío: {h}x{w}")
    return TokenGrid(_encoding(h, w, channels, affine.key, float(image_w), float(image_h)), affine)


def grid_shape(grid: TokenGrid) -> Tuple[int, int, int]:
    return grid.height, grid.width, grid.channels
