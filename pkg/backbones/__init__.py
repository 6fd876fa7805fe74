"""Backbones de juguete congelados: cuerpo completo y mano."""

from backbones.common import freeze, is_frozen, parameter_hash, verify_frozen
from backbones.body import BodyBackboneParams, body_backbone_forward, init_body_backbone
from backbones.hand import HandBackboneParams, HandObservation, hand_backbone_forward, init_hand_backbone

__all__ = [
    "freeze",
    "is_frozen",
    "parameter_hash",
    "verify_frozen",
    "BodyBackboneParams",
    "body_backbone_forward",
    "init_body_backbone",
    "HandBackboneParams",
    "HandObservation",
    "hand_backbone_forward",
    "init_hand_backbone",
]
