"""
Configuración del pipeline.

Un único archivo JSON validado con pydantic; cualquier clave desconocida se
rechaza. Los valores por defecto reproducen la configuración de escritorio
(tamaños de juguete, hiperparámetros de entrenamiento por defecto).
"""

import json
import os
from typing import Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.errors import ConfigError, IoError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DatasetConfig(_Section):
    """Generación de escenas sintéticas."""

    train_size: int = Field(2000, ge=0)
    heldout_size: int = Field(400, ge=0)
    kind_mix: Dict[str, float] = Field(
        default_factory=lambda: {"full_body": 0.4, "interacting_hands": 0.4, "single_hand": 0.2}
    )
    miss_rate: float = Field(0.1, ge=0.0, le=1.0)
    crop_padding: float = Field(0.2, ge=0.0)
    crop_min_size: float = Field(48.0, gt=0.0)
    image_width: int = Field(192, gt=0)
    image_height: int = Field(256, gt=0)
    focal: float = Field(220.0, gt=0.0)
    camera_depth: float = Field(2.75, gt=0.0)
    token_noise: float = Field(0.02, ge=0.0)
    code_noise: float = Field(0.05, ge=0.0)
    wrist_stream_offset: float = Field(1.2, ge=0.0)
    wrist_stream_noise: float = Field(0.1, ge=0.0)
    wrist_spread: float = Field(0.35, ge=0.0)
    body_wrist_noise: float = Field(0.35, ge=0.0)
    body_pose_scale: float = Field(0.15, ge=0.0)

    @field_validator("kind_mix")
    @classmethod
    def _check_mix(cls, value: Dict[str, float]) -> Dict[str, float]:
        expected = {"full_body", "interacting_hands", "single_hand"}
        if set(value) != expected:
            raise ValueError(f"kind_mix debe tener exactamente {sorted(expected)}")
        if any(v < 0 for v in value.values()) or sum(value.values()) <= 0:
            raise ValueError("kind_mix necesita pesos no negativos con suma positiva")
        return value


class ModelConfig(_Section):
    """Dimensiones de los modelos."""

    channels: int = Field(32, gt=0)
    depth: int = Field(6, gt=0)
    body_grid: Tuple[int, int] = (16, 12)
    hand_grid: int = Field(8, gt=0)
    spec_seed: int = 7
    backbone_seed: int = 11
    cham_seed: int = 13

    @model_validator(mode="after")
    def _check_channels(self) -> "ModelConfig":
        if self.channels % 4 != 0:
            raise ValueError("channels debe ser múltiplo de 4 (codificación posicional)")
        return self


class PretrainConfig(_Section):
    """Preentrenamiento del backbone de cuerpo con etiquetas de muñeca corruptas."""

    steps: int = Field(600, ge=0)
    batch_size: int = Field(32, gt=0)
    lr: float = Field(0.02, gt=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    wrist_label_noise: float = Field(0.3, ge=0.0)
    seed: int = 3
    # error medio de articulaciones del cuerpo en heldout tras congelar; None lo desactiva
    max_heldout_joint_error_mm: Optional[float] = Field(40.0, gt=0.0)


class TrainConfig(_Section):
    """Entrenamiento de CHAM (backbones congelados)."""

    epochs: int = Field(4, ge=0)
    batch_size: int = Field(32, gt=0)
    lr: float = Field(1e-4, gt=0.0)
    lr_decay: float = Field(0.1, gt=0.0)
    decay_at: float = Field(0.75, gt=0.0, le=1.0)
    checkpoint_every: int = Field(0, ge=0)
    eval_every_epoch: bool = True
    use_cross_attention: bool = True
    seed: int = 5


class LossWeights(_Section):
    """Pesos de los términos de la pérdida total."""

    pose: float = 1.0
    shape: float = 1.0
    keypoints_3d: float = 1.0
    keypoints_2d: float = 1.0
    wrist: float = 1.0
    upright: float = 1.0


class TransferConfig(_Section):
    """Suavizado de la costura mano-cuerpo."""

    smooth_lambda: float = Field(0.5, gt=0.0, le=1.0)
    smooth_iters: int = Field(5, ge=0)
    smooth_band: int = Field(1, ge=0)


class EvaluationConfig(_Section):
    timing_runs: int = Field(100, gt=0)


class PosefuseConfig(_Section):
    """Configuración completa."""

    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    transfer: TransferConfig = Field(default_factory=TransferConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)


def load_config(path: Optional[str] = None) -> PosefuseConfig:
    """
    Carga y valida la configuración.

    Args:
        path: Ruta al JSON; None devuelve los valores por defecto

    Returns:
        Configuración validada

    Raises:
        ConfigError: JSON ilegible, claves desconocidas o valores fuera de rango
    """
    if path is None:
        return PosefuseConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"No existe el archivo de configuración: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON inválido en {path}: {e}") from e
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> PosefuseConfig:
    """Valida un diccionario como configuración."""
    try:
        return PosefuseConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Configuración inválida: {e}") from e


def dump_config(config: PosefuseConfig, path: str) -> str:
    """Escribe la configuración canónica en JSON."""
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(config.model_dump(mode="json"), f, indent=2, sort_keys=True)
    except OSError as e:
        raise IoError(f"No se pudo escribir {path}: {e}") from e
    return path


def slow_tests_enabled() -> bool:
    return os.environ.get("POSEFUSE_SLOW_TESTS", "0").lower() in ("1", "true", "yes")
