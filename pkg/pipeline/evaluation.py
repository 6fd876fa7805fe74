"""
Evaluación sobre un split y benchmark de tiempos.
"""

from typing import Dict, List, Optional

from tqdm import tqdm

from cham.modulator import ChamParams
from pipeline.dataset import SyntheticDataset
from pipeline.inference import STRATEGIES, Backbones, InferenceContext, infer
from pipeline.timing import StageTimer, TimingReport
from training.metrics import MetricsReport, SampleMetrics, aggregate
from utils.config import PosefuseConfig
from utils.errors import ConfigError, EmptySplit, InvariantViolation
from utils.rich_logger import get_logger
from utils.serialization import write_json

logger = get_logger("posefuse.evaluation")


def report_context(dataset: SyntheticDataset, backbones: Backbones, config: PosefuseConfig) -> Dict:
    """Semillas, hashes de backbones y eco de configuración que acompañan a un reporte."""
    return {
        "seeds": {
            "dataset": dataset.manifest.seed,
            "spec": dataset.manifest.spec_seed,
            "pretrain": config.pretrain.seed,
            "train": config.train.seed,
        },
        "backbone_hashes": backbones.hashes(),
        "config": config.model_dump(mode="json"),
    }


def evaluate(dataset: SyntheticDataset, split: str, backbones: Backbones, cham: Optional[ChamParams],
             config: PosefuseConfig, strategy: str = "cham", oracle: bool = False,
             show_progress: bool = False) -> MetricsReport:
    """
    Métricas por muestra y su media sobre un split.

    Args:
        dataset: Dataset sintético
        split: "train" o "heldout"
        backbones: Backbones congelados
        cham: Parámetros de CHAM (ignorados salvo con strategy="cham")
        config: Configuración (se copia en el reporte)
        strategy: Estrategia de combinación
        oracle: Alimentar la verdad de terreno en lugar de las predicciones
        show_progress: Mostrar barra de progreso

    Returns:
        MetricsReport con una entrada por muestra, en orden de índice

    Raises:
        EmptySplit: si el split no tiene muestras
    """
    indices = dataset.split(split)
    if not indices:
        raise EmptySplit(f"El split '{split}' está vacío")
    context = InferenceContext.from_dataset(dataset, config.train.use_cross_attention)

    per_sample: List[SampleMetrics] = []
    for index in tqdm(indices, desc=f"Evaluación {strategy}", disable=not show_progress):
        result = infer(dataset.sample(index), backbones, cham, context, strategy,
                       ground_truth=dataset.ground_truth(index), oracle=oracle)
        per_sample.append(result.metrics)

    name = f"{strategy}+oracle" if oracle else strategy
    report = aggregate(per_sample, name, split, **report_context(dataset, backbones, config))
    logger.metrics_report(f"{name}/{split}", report.summary())
    return report


def run_baseline(strategy: str, dataset: SyntheticDataset, backbones: Backbones, cham: Optional[ChamParams],
                 config: PosefuseConfig, split: str = "heldout") -> MetricsReport:
    """Evalúa una de las estrategias frozen, wrist_copy o cham sobre un split."""
    if strategy not in STRATEGIES:
        raise InvariantViolation("strategy", f"estrategia desconocida '{strategy}'")
    return evaluate(dataset, split, backbones, cham, config, strategy)


def compare_strategies(dataset: SyntheticDataset, backbones: Backbones, cham: ChamParams,
                       config: PosefuseConfig, split: str = "heldout") -> Dict[str, MetricsReport]:
    """Las tres estrategias sobre el mismo split, con una tabla resumen en el log."""
    reports = {strategy: run_baseline(strategy, dataset, backbones, cham, config, split) for strategy in STRATEGIES}
    logger.table(
        ["estrategia", "MPVPE cuerpo", "MPVPE manos", "MRRPE", "PA-MPVPE", "muñeca (rad)"],
        [
            [name, f"{r.mpvpe_full:.2f}", f"{r.mpvpe_hands:.2f}", f"{r.mrrpe:.2f}",
             f"{r.pa_mpvpe:.2f}", f"{r.wrist_geodesic:.4f}"]
            for name, r in reports.items()
        ],
    )
    return reports


def write_report(report: MetricsReport, path: str) -> str:
    """JSON canónico del reporte (sin campos de reloj, reproducible byte a byte)."""
    return write_json(path, report.model_dump(mode="json"))


# ==================== Tiempos ====================

def report_timings(dataset: SyntheticDataset, backbones: Backbones, cham: ChamParams, config: PosefuseConfig,
                   runs: Optional[int] = None, index: Optional[int] = None) -> TimingReport:
    """
    Tiempos medios por etapa del pipeline completo sobre una muestra.

    Por defecto se usa la primera muestra con ambas manos detectadas, para
    que todas las etapas corran.

    Args:
        dataset: Dataset sintético
        backbones: Backbones congelados
        cham: Parámetros de CHAM
        config: Configuración (evaluation.timing_runs por defecto)
        runs: Número de ejecuciones
        index: Muestra a usar

    Returns:
        TimingReport con la media de cada etapa

    Raises:
        ConfigError: si runs < 1
    """
    if runs is None:
        runs = config.evaluation.timing_runs
    if runs < 1:
        raise ConfigError(f"Se necesita al menos una ejecución para medir tiempos, llegó runs={runs}")
    if index is None:
        both = [i for i in range(len(dataset)) if all(dataset.scene(i).detected.values())]
        index = both[0] if both else 0
    sample = dataset.sample(index)
    context = InferenceContext.from_dataset(dataset, config.train.use_cross_attention)

    # una pasada de calentamiento fuera de la medición
    infer(sample, backbones, cham, context, "cham")
    timer = StageTimer()
    for _ in range(runs):
        infer(sample, backbones, cham, context, "cham", timer=timer)
    report = timer.report(runs)
    logger.table(["etapa", "media (ms)"], [[name, f"{1000.0 * value:.3f}"] for name, value in report.stages.items()])
    logger.info(f"CHAM ocupa el {100.0 * report.cham_fraction:.1f}% del pipeline ({runs} ejecuciones)")
    return report
