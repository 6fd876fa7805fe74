"""CHAM: modulador condicional de manos (único componente entrenable)."""

from cham.modulator import ChamParams, ModulationStack, cham_parameter_count, init_cham
from cham.attention import cross_attention_encode
from cham.forward import build_condition, cham_forward, merge_hands, project_per_block, realign_to_body

__all__ = [
    "ChamParams",
    "ModulationStack",
    "cham_parameter_count",
    "init_cham",
    "cross_attention_encode",
    "build_condition",
    "cham_forward",
    "merge_hands",
    "project_per_block",
    "realign_to_body",
]
