"""
Tiempos por etapa del pipeline de inferencia.
"""

import time
from contextlib import contextmanager
from typing import Dict, List

from pydantic import BaseModel, ConfigDict

# etapas en el orden en que corre la inferencia
STAGES = ("hand_backbone", "cham", "body_backbone", "skinning", "transfer")


class TimingReport(BaseModel):
    """Medias por etapa (segundos) sobre `runs` ejecuciones."""

    model_config = ConfigDict(extra="forbid")

    runs: int
    stages: Dict[str, float]
    total: float
    cham_fraction: float


class StageTimer:
    """Acumula tiempos de pared por etapa con time.perf_counter."""

    def __init__(self):
        self.samples: Dict[str, List[float]] = {stage: [] for stage in STAGES}

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.samples.setdefault(name, []).append(time.perf_counter() - start)

    def report(self, runs: int) -> TimingReport:
        """Media por ejecución de cada etapa (una etapa puede correr varias veces por ejecución)."""
        runs = max(runs, 1)
        stages = {name: sum(values) / runs for name, values in self.samples.items()}
        total = sum(stages.values())
        return TimingReport(
            runs=runs,
            stages=stages,
            total=total,
            cham_fraction=stages.get("cham", 0.0) / total if total > 0 else 0.0,
        )


class NullTimer(StageTimer):
    """Timer que no mide nada (inferencia sin benchmark)."""

    @contextmanager
    def stage(self, name: str):
        yield
