"""Transferencia de manos canónicas al cuerpo."""

from transfer.hand_transfer import (
    align_hand_to_body,
    assemble_full_mesh,
    body_target_points,
    canonical_hand_mesh,
    place_hand_joints,
    seam_discontinuity,
    transfer_hand,
    transfer_jacobian,
)

__all__ = [
    "align_hand_to_body",
    "assemble_full_mesh",
    "body_target_points",
    "canonical_hand_mesh",
    "place_hand_joints",
    "seam_discontinuity",
    "transfer_hand",
    "transfer_jacobian",
]
