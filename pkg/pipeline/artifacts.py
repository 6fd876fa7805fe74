"""
Artefactos de un experimento en disco: backbones congelados y CHAM.

Un directorio de experimento contiene body_backbone.json, hand_backbone.json
y cham.json; los tres son archivos de parámetros versionados con hash.
"""

import os
from typing import List, Tuple

from backbones.body import load_body_backbone
from backbones.common import freeze, save_module
from backbones.hand import init_hand_backbone, load_hand_backbone
from backbones.pretrain import pretrain_body_backbone
from cham.modulator import ChamParams, init_cham, load_cham
from pipeline.dataset import SyntheticDataset
from pipeline.inference import Backbones
from utils.config import PosefuseConfig
from utils.rich_logger import get_logger

logger = get_logger("posefuse.artifacts")

BODY_BACKBONE_FILE = "body_backbone.json"
HAND_BACKBONE_FILE = "hand_backbone.json"
CHAM_FILE = "cham.json"


def build_backbones(dataset: SyntheticDataset, config: PosefuseConfig,
                    show_progress: bool = True) -> Tuple[Backbones, List[dict]]:
    """
    Backbone de mano con la semilla del modelo y backbone de cuerpo preentrenado, ambos congelados.

    Returns:
        (Backbones, historial del preentrenamiento)
    """
    model = config.model
    hand = init_hand_backbone(model.backbone_seed, model.channels, model.hand_grid)
    freeze(hand)
    body, history = pretrain_body_backbone(dataset, config, show_progress=show_progress)
    return Backbones(body=body, hand=hand), history


def save_backbones(backbones: Backbones, directory: str) -> Tuple[str, str]:
    body = save_module(backbones.body, os.path.join(directory, BODY_BACKBONE_FILE), "body_backbone")
    hand = save_module(backbones.hand, os.path.join(directory, HAND_BACKBONE_FILE), "hand_backbone")
    logger.data(f"Backbones guardados en {directory}")
    return body, hand


def load_backbones(directory: str) -> Backbones:
    """
    Carga y congela los dos backbones de un directorio de experimento.

    Raises:
        IoError: si falta algún archivo
        ParseError: si algún archivo está corrupto
    """
    return Backbones(
        body=load_body_backbone(os.path.join(directory, BODY_BACKBONE_FILE)),
        hand=load_hand_backbone(os.path.join(directory, HAND_BACKBONE_FILE)),
    )


def fresh_cham(config: PosefuseConfig) -> ChamParams:
    model = config.model
    return init_cham(model.cham_seed, model.depth, model.channels)


def save_cham(cham: ChamParams, directory: str) -> str:
    return save_module(cham, os.path.join(directory, CHAM_FILE), "cham")


def load_or_init_cham(directory: str, config: PosefuseConfig) -> ChamParams:
    """CHAM guardado en el directorio o, si no hay, uno recién inicializado (ramas en cero)."""
    path = os.path.join(directory, CHAM_FILE)
    if os.path.exists(path):
        return load_cham(path)
    logger.warning(f"No hay {CHAM_FILE} en {directory}: se usa CHAM recién inicializado")
    return fresh_cham(config)
