"""
Exportación de resultados de inferencia.
"""

import os
from typing import Dict

from geometry.mesh import Mesh, save_obj
from geometry.rotations import matrix_to_axis_angle
from pipeline.inference import InferenceResult
from utils.serialization import write_json


def export_obj(mesh: Mesh, path: str) -> str:
    """
    Escribe la malla en OBJ.

    Raises:
        IoError: si no se puede escribir
    """
    return save_obj(mesh, path)


def pose_payload(result: InferenceResult) -> Dict:
    """Pose predicha y parámetros de mano por lado en un dict serializable."""
    pose = result.pose
    hands = {
        side: {
            "detected": obs.detected,
            "theta": obs.theta.tolist() if obs.detected else None,
            "beta": obs.beta.tolist() if obs.detected else None,
        }
        for side, obs in result.observations.items()
    }
    return {
        "strategy": result.strategy,
        "root_orientation": matrix_to_axis_angle(pose.root_orientation, check=False).tolist(),
        "root_translation": pose.root_translation.tolist(),
        "local_rotations": matrix_to_axis_angle(pose.local_rotations, check=False).tolist(),
        "shape": pose.shape.tolist(),
        "hands": hands,
        "metrics": result.metrics.model_dump(mode="json") if result.metrics is not None else None,
    }


def export_inference(result: InferenceResult, out_dir: str, stem: str) -> Dict[str, str]:
    """Escribe <stem>.obj y <stem>.json (pose, manos y métricas) en out_dir."""
    mesh_path = export_obj(result.mesh, os.path.join(out_dir, f"{stem}.obj"))
    pose_path = write_json(os.path.join(out_dir, f"{stem}.json"), pose_payload(result))
    return {"mesh": mesh_path, "pose": pose_path}
