"""
"Renderizado" sintético de tokens.

El grid del cuerpo lleva mapas gaussianos de las articulaciones proyectadas,
cada uno con una firma de canal fija, más un código constante en el espacio
que resume la escena (raíz, traslación, latentes de pose, forma y las
rotaciones locales de muñeca con ruido). Los recortes de mano siguen el
HandTokenLayout del backbone de mano: mapas de keypoints remuestreados en el
recorte, el flujo de muñeca y el código de parámetros.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict

import torch

from articulated.kinematics import project_points
from articulated.spec import ArticulatedModelSpec
from backbones.common import seeded_generator
from backbones.hand import HandTokenLayout
from geometry.grids import Affine2D, TokenGrid, cell_centers, resample_grid
from geometry.rotations import axis_angle_to_matrix, matrix_to_axis_angle, rotation_about
from geometry.tensors import DTYPE
from pipeline.scenes import POSE_LATENTS, GroundTruth, Scene, wrist_local_indices
from utils.config import DatasetConfig

BODY_LAYOUT_SEED = 307
# raíz 3 + traslación 3 + latentes 8 + forma 10 + muñecas 6
BODY_CODE_SIZE = 3 + 3 + POSE_LATENTS + 10 + 6
# ganancias por bloque del código para que todas las entradas sean de orden 1
_CODE_GAINS = (5.0,) * 3 + (10.0,) * 3 + (1.0,) * POSE_LATENTS + (1.0,) * 10 + (2.0,) * 6
HEAT_CANVAS = (64, 48)
WRIST_STREAM_AXIS = (0.6, 0.0, 0.8)


@dataclass(frozen=True)
class BodyTokenLayout:
    """Firmas de canal del grid del cuerpo: joint_embed (J, C) y code_embed (C, 30)."""

    joint_embed: torch.Tensor
    code_embed: torch.Tensor


@lru_cache(maxsize=8)
def body_token_layout(channels: int, joint_count: int, seed: int = BODY_LAYOUT_SEED) -> BodyTokenLayout:
    gen = seeded_generator(seed)
    joints = torch.randn(joint_count, channels, generator=gen, dtype=DTYPE)
    joints = joints / joints.norm(dim=-1, keepdim=True)
    raw = torch.randn(channels, BODY_CODE_SIZE, generator=gen, dtype=DTYPE)
    if channels >= BODY_CODE_SIZE:
        code, _ = torch.linalg.qr(raw)
    else:
        code = raw / raw.norm(dim=0, keepdim=True)
    return BodyTokenLayout(joints, code)


def body_affine(config: DatasetConfig, grid=(16, 12)) -> Affine2D:
    """Afín del grid del cuerpo: cubre la imagen completa."""
    rows, cols = grid
    return Affine2D.from_box(0.0, 0.0, config.image_width, config.image_height, cols, rows)


def gaussian_heatmaps(points: torch.Tensor, centers: torch.Tensor, sigma: float) -> torch.Tensor:
    """Gaussianas (..., K) en cada centro (..., 2) para K puntos (K, 2) en píxeles."""
    diff = centers[..., None, :] - points
    return torch.exp(-(diff * diff).sum(-1) / (2.0 * sigma * sigma))


def wrist_stream_offset(config: DatasetConfig) -> torch.Tensor:
    """Desfase fijo entre el marco de la cámara del flujo de mano y la orientación real."""
    return rotation_about(WRIST_STREAM_AXIS, config.wrist_stream_offset)


def body_code(scene: Scene, body_spec: ArticulatedModelSpec, config: DatasetConfig,
              gen: torch.Generator) -> torch.Tensor:
    """Código de 30 valores de la escena; las muñecas llevan ruido body_wrist_noise."""
    pose = scene.body_pose
    root = matrix_to_axis_angle(pose.root_orientation, check=False)
    offset = pose.root_translation - torch.tensor([0.0, 0.0, config.camera_depth], dtype=DTYPE)
    wrists = []
    for idx in wrist_local_indices(body_spec).values():
        local = matrix_to_axis_angle(pose.local_rotations[idx], check=False)
        wrists.append(local + config.body_wrist_noise * torch.randn(3, generator=gen, dtype=DTYPE))
    code = torch.cat([root, offset, scene.pose_latents, pose.shape, *wrists])
    return code * torch.tensor(_CODE_GAINS, dtype=DTYPE)


def render_body_tokens(scene: Scene, gt: GroundTruth, body_spec: ArticulatedModelSpec, channels: int,
                       config: DatasetConfig, gen: torch.Generator, grid=(16, 12)) -> TokenGrid:
    """Grid (16, 12, C) del cuerpo para una escena."""
    rows, cols = grid
    layout = body_token_layout(channels, body_spec.joint_count)
    affine = body_affine(config, grid)
    centers = affine.apply(cell_centers(rows, cols))
    joints_2d = project_points(scene.camera, gt.posed.joints)
    sigma = config.image_width / cols
    heat = gaussian_heatmaps(joints_2d, centers, sigma)
    code = layout.code_embed @ body_code(scene, body_spec, config, gen)
    noise = config.token_noise * torch.randn(rows, cols, channels, generator=gen, dtype=DTYPE)
    return TokenGrid(heat @ layout.joint_embed + code + noise, affine)


def render_hand_tokens(scene: Scene, gt: GroundTruth, body_spec: ArticulatedModelSpec, side: str,
                       layout: HandTokenLayout, config: DatasetConfig, gen: torch.Generator) -> TokenGrid:
    """
    Recorte (g, g, C) de una mano.

    Los mapas de keypoints se dibujan en un lienzo de la imagen completa y se
    remuestrean en el recorte con su afín, como hace un crop-and-resize.
    """
    g = layout.grid
    affine = scene.crop_affine(side, g)
    canvas_rows, canvas_cols = HEAT_CANVAS
    canvas_affine = Affine2D.from_box(0.0, 0.0, config.image_width, config.image_height, canvas_cols, canvas_rows)
    keypoints_2d = project_points(scene.camera, gt.placements[side].keypoints)
    canvas_centers = canvas_affine.apply(cell_centers(canvas_rows, canvas_cols))
    sigma = config.image_width / canvas_cols
    canvas = TokenGrid(gaussian_heatmaps(keypoints_2d, canvas_centers, sigma), canvas_affine)
    heat = resample_grid(canvas, affine, g, g).data

    jitter = axis_angle_to_matrix(config.wrist_stream_noise * torch.randn(3, generator=gen, dtype=DTYPE))
    wrist = wrist_stream_offset(config) @ scene.global_wrist(body_spec, side) @ jitter
    code = layout.encode_params(scene.hand_theta[side], scene.hand_beta[side])
    code = code + config.code_noise * torch.randn(code.shape, generator=gen, dtype=DTYPE)

    tokens = heat @ layout.heat_embed + (wrist.reshape(-1) @ layout.wrist_embed)
    tokens = torch.cat([tokens[..., :layout.sensor_channels], tokens[..., layout.sensor_channels:] + code], dim=-1)
    noise = config.token_noise * torch.randn(g, g, layout.channels, generator=gen, dtype=DTYPE)
    return TokenGrid(tokens + noise, affine)


def render_scene(scene: Scene, gt: GroundTruth, body_spec: ArticulatedModelSpec, hand_layout: HandTokenLayout,
                 config: DatasetConfig, grid=(16, 12)) -> tuple:
    """
    Tokens de cuerpo y de ambos recortes con el ruido de scene.noise_seed.

    Los recortes de manos no detectadas se devuelven a cero.

    Returns:
        (TokenGrid del cuerpo, {lado: TokenGrid del recorte})
    """
    gen = seeded_generator(scene.noise_seed)
    body = render_body_tokens(scene, gt, body_spec, hand_layout.channels, config, gen, grid)
    hands: Dict[str, TokenGrid] = {}
    for side in ("left", "right"):
        tokens = render_hand_tokens(scene, gt, body_spec, side, hand_layout, config, gen)
        if not scene.detected[side]:
            tokens = TokenGrid(torch.zeros_like(tokens.data), tokens.affine)
        hands[side] = tokens
    return body, hands

