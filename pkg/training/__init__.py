"""
Pérdidas, métricas y ajuste de forma. El bucle de entrenamiento vive en training.trainer.
"""

from .losses import LossPrediction, LossTargets, total_loss
from .metrics import MetricsReport, SampleMetrics, mpvpe, mrrpe, pa_mpvpe
from .shape_fit import ShapeFitReport, fit_shape_to_target

__all__ = [
    "LossPrediction",
    "LossTargets",
    "total_loss",
    "MetricsReport",
    "SampleMetrics",
    "mpvpe",
    "mrrpe",
    "pa_mpvpe",
    "ShapeFitReport",
    "fit_shape_to_target",
]
