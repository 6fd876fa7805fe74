"""
Estado compartido del workflow de experimento.
"""

from typing import Any, Dict, List, Optional, TypedDict


class ExperimentState(TypedDict, total=False):
    """Estado que recorre los nodos del experimento."""

    # Entrada
    config: Any  # PosefuseConfig
    seed: int
    out_dir: str
    data_dir: Optional[str]
    show_progress: bool

    # Artefactos
    dataset: Any  # SyntheticDataset
    backbones: Any  # Backbones
    cham: Any  # ChamParams
    pretrain_history: List[Dict[str, Any]]
    training_logs: List[str]

    # Evaluación
    reports: Dict[str, Dict[str, float]]
    report_paths: Dict[str, str]

    # Control del workflow
    round: int
    max_rounds: int
    decision: Optional[str]
