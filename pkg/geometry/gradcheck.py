"""
Verificación de gradientes por diferencias centrales en doble precisión.

Se usa en los tests para contrastar autograd con la derivada numérica de
las pérdidas, la transferencia de manos y el registro rígido.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import torch

from geometry.tensors import as_float64
from utils.errors import DimMismatch, NonFiniteEvaluation

DEFAULT_STEP = 1e-5

ScalarFn = Callable[[torch.Tensor], Union[float, torch.Tensor]]


@dataclass
class GradientReport:
    """Resultado de la comparación analítico vs numérico."""

    max_relative_error: float
    worst_index: int
    numeric: torch.Tensor
    analytic: torch.Tensor

    def passed(self, tol: float) -> bool:
        return self.max_relative_error < tol


def _evaluate(f: ScalarFn, x: torch.Tensor) -> float:
    with torch.no_grad():
        value = f(x)
    value = float(value.item() if isinstance(value, torch.Tensor) else value)
    if value != value or value in (float("inf"), float("-inf")):
        raise NonFiniteEvaluation(f"f devolvió {value}")
    return value


def numeric_gradient(f: ScalarFn, x: torch.Tensor, step: float = DEFAULT_STEP,
                     indices: Optional[Sequence[int]] = None) -> torch.Tensor:
    """
    Gradiente por diferencias centrales.

    Args:
        f: Función escalar de un vector
        x: Punto de evaluación (se aplana)
        step: Paso de la diferencia
        indices: Coordenadas a evaluar; el resto queda en 0

    Raises:
        NonFiniteEvaluation: si f devuelve inf o NaN
    """
    base = as_float64(x).detach().reshape(-1).clone()
    grad = torch.zeros_like(base)
    coords = range(base.numel()) if indices is None else indices
    for i in coords:
        plus = base.clone()
        minus = base.clone()
        plus[i] += step
        minus[i] -= step
        grad[i] = (_evaluate(f, plus.reshape(x.shape)) - _evaluate(f, minus.reshape(x.shape))) / (2.0 * step)
    return grad.reshape(x.shape)


def autograd_gradient(f: ScalarFn, x: torch.Tensor) -> torch.Tensor:
    """Gradiente de f en x con autograd."""
    xv = as_float64(x).detach().clone().requires_grad_(True)
    value = f(xv)
    if not torch.isfinite(value):
        raise NonFiniteEvaluation(f"f devolvió {float(value)}")
    (grad,) = torch.autograd.grad(value, xv)
    return grad


def check_gradient(f: ScalarFn, x: torch.Tensor, analytic_grad: torch.Tensor,
                   step: float = DEFAULT_STEP, indices: Optional[Sequence[int]] = None) -> GradientReport:
    """
    Compara un gradiente analítico con diferencias centrales.

    El error reportado es max_i |a_i - n_i| / max(1, |n_i|).

    Raises:
        NonFiniteEvaluation: si f no es finita cerca de x
        DimMismatch: si analytic_grad no tiene la forma de x
    """
    x = as_float64(x)
    analytic = as_float64(analytic_grad).detach()
    if analytic.shape != x.shape:
        raise DimMismatch(f"Gradiente {tuple(analytic.shape)} vs x {tuple(x.shape)}")
    numeric = numeric_gradient(f, x, step, indices)
    a = analytic.reshape(-1)
    n = numeric.reshape(-1)
    if indices is not None:
        idx = torch.as_tensor(list(indices), dtype=torch.long)
        a, n = a[idx], n[idx]
    if n.numel() == 0:
        return GradientReport(0.0, -1, numeric, analytic)
    rel = (a - n).abs() / n.abs().clamp_min(1.0)
    worst = int(rel.argmax())
    return GradientReport(float(rel[worst]), worst, numeric, analytic)
