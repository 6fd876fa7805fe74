"""
Dataset sintético en disco.

Un directorio de dataset contiene:

    manifest.json    DatasetManifest (versión, hashes de specs, splits, offsets)
    samples.bin      registros binarios little-endian de tamaño fijo
    body_spec.json   spec del cuerpo usada para generar
    hand_spec.json   spec de la mano usada para generar

Cada registro guarda la verdad de terreno de la escena (rotaciones como
matrices float64) y los tokens ya "renderizados" en float32. El layout del
registro es el dtype estructurado de record_dtype; los offsets del manifiesto
son índice * record_size.
"""

import os
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator
from tqdm import tqdm

from articulated.kinematics import Camera, PoseState
from articulated.spec import SIDES, ArticulatedModelSpec, load_model_spec, save_model_spec, spec_hash
from articulated.toy_models import generate_toy_spec
from backbones.hand import FINGER_JOINTS, HAND_BETAS, hand_token_layout
from geometry.grids import TokenGrid
from geometry.tensors import DTYPE
from pipeline.rendering import body_affine, render_scene
from pipeline.scenes import KINDS, POSE_LATENTS, GroundTruth, Scene, SceneSampler, assign_kinds, ground_truth
from utils.config import DatasetConfig, PosefuseConfig, TransferConfig
from utils.errors import ConfigError, EmptySplit, InvalidDims, InvariantViolation, IoError, ParseError
from utils.rich_logger import get_logger
from utils.serialization import read_json, write_json

logger = get_logger("posefuse.dataset")

DATASET_VERSION = "posefuse-dataset-v1"
MANIFEST_FILE = "manifest.json"
SAMPLES_FILE = "samples.bin"
BODY_SPEC_FILE = "body_spec.json"
HAND_SPEC_FILE = "hand_spec.json"
SPLITS = ("train", "heldout")


def record_dtype(joint_count: int, num_betas: int, channels: int,
                 body_grid: Tuple[int, int], hand_grid: int) -> np.dtype:
    """Layout binario (little-endian, sin relleno) de un registro."""
    h, w = body_grid
    g = hand_grid
    return np.dtype([
        ("index", "<u4"),
        ("kind", "u1"),
        ("detected", "u1", (2,)),
        ("noise_seed", "<u8"),
        ("root_orientation", "<f8", (3, 3)),
        ("root_translation", "<f8", (3,)),
        ("local_rotations", "<f8", (joint_count - 1, 3, 3)),
        ("shape", "<f8", (num_betas,)),
        ("pose_latents", "<f8", (POSE_LATENTS,)),
        ("hand_theta", "<f8", (2, FINGER_JOINTS, 3)),
        ("hand_beta", "<f8", (2, HAND_BETAS)),
        ("crop_boxes", "<f8", (2, 3)),
        ("body_tokens", "<f4", (h, w, channels)),
        ("hand_tokens", "<f4", (2, g, g, channels)),
    ])


class DatasetManifest(BaseModel):
    """Índice del dataset."""

    model_config = ConfigDict(extra="forbid")

    version: str
    body_spec_sha256: str
    hand_spec_sha256: str
    spec_seed: int
    seed: int
    sample_count: int
    record_size: int
    offsets: List[int]
    splits: Dict[str, List[int]]
    kinds: Dict[str, int]
    channels: int
    body_grid: Tuple[int, int]
    hand_grid: int
    dataset: Dict[str, Any]
    transfer: Dict[str, Any]

    @model_validator(mode="after")
    def _check_layout(self) -> "DatasetManifest":
        if len(self.offsets) != self.sample_count:
            raise ValueError("offsets no coincide con sample_count")
        seen = set()
        for name, indices in self.splits.items():
            overlap = seen.intersection(indices)
            if overlap:
                raise ValueError(f"El split '{name}' comparte muestras con otro split: {sorted(overlap)[:5]}")
            seen.update(indices)
        if any(i < 0 or i >= self.sample_count for i in seen):
            raise ValueError("Índice de split fuera de rango")
        return self


@dataclass
class Sample:
    """Una muestra cargada: escena y tokens de entrada."""

    scene: Scene
    body_tokens: TokenGrid
    hand_tokens: Dict[str, TokenGrid]

    @property
    def index(self) -> int:
        return self.scene.index

    @property
    def kind(self) -> str:
        return self.scene.kind


def _fill_record(record: np.void, scene: Scene, body: TokenGrid, hands: Dict[str, TokenGrid]) -> None:
    pose = scene.body_pose
    record["index"] = scene.index
    record["kind"] = KINDS.index(scene.kind)
    record["detected"] = [int(scene.detected[s]) for s in SIDES]
    record["noise_seed"] = scene.noise_seed
    record["root_orientation"] = pose.root_orientation.numpy()
    record["root_translation"] = pose.root_translation.numpy()
    record["local_rotations"] = pose.local_rotations.numpy()
    record["shape"] = pose.shape.numpy()
    record["pose_latents"] = scene.pose_latents.numpy()
    record["hand_theta"] = np.stack([scene.hand_theta[s].numpy() for s in SIDES])
    record["hand_beta"] = np.stack([scene.hand_beta[s].numpy() for s in SIDES])
    record["crop_boxes"] = np.array([scene.crop_boxes[s] for s in SIDES])
    record["body_tokens"] = body.data.numpy()
    record["hand_tokens"] = np.stack([hands[s].data.numpy() for s in SIDES])


def _tensor(array: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.array(array, dtype=np.float64), dtype=DTYPE)


def _scene_from_record(record: np.void, camera: Camera) -> Scene:
    pose = PoseState(
        root_orientation=_tensor(record["root_orientation"]),
        root_translation=_tensor(record["root_translation"]),
        local_rotations=_tensor(record["local_rotations"]),
        shape=_tensor(record["shape"]),
    )
    return Scene(
        index=int(record["index"]),
        kind=KINDS[int(record["kind"])],
        body_pose=pose,
        pose_latents=_tensor(record["pose_latents"]),
        hand_theta={s: _tensor(record["hand_theta"][i]) for i, s in enumerate(SIDES)},
        hand_beta={s: _tensor(record["hand_beta"][i]) for i, s in enumerate(SIDES)},
        detected={s: bool(record["detected"][i]) for i, s in enumerate(SIDES)},
        crop_boxes={s: tuple(float(v) for v in record["crop_boxes"][i]) for i, s in enumerate(SIDES)},
        camera=camera,
        noise_seed=int(record["noise_seed"]),
    )


def generate_dataset(config: PosefuseConfig, seed: int, out_dir: str,
                     show_progress: bool = True) -> DatasetManifest:
    """
    Genera el dataset completo de forma determinista.

    Los primeros train_size índices forman el split "train" y el resto
    "heldout"; los tipos se reparten dentro de cada split con las cuotas de
    kind_mix. Misma (config, semilla) produce archivos idénticos byte a byte.

    Args:
        config: Configuración completa
        seed: Semilla del dataset
        out_dir: Directorio de salida (se crea si no existe)
        show_progress: Mostrar barra de progreso

    Returns:
        Manifiesto escrito

    Raises:
        ConfigError: si la configuración no admite el layout de tokens
    """
    data_cfg = config.dataset
    model_cfg = config.model
    try:
        hand_layout = hand_token_layout(model_cfg.channels, model_cfg.hand_grid)
    except InvalidDims as e:
        raise ConfigError(f"Configuración de modelo incompatible con el dataset: {e}") from e

    body_spec = generate_toy_spec("body", model_cfg.spec_seed)
    hand_spec = generate_toy_spec("hand", model_cfg.spec_seed)
    rng = np.random.default_rng(seed)
    kinds = (
        assign_kinds(data_cfg.train_size, data_cfg.kind_mix, rng)
        + assign_kinds(data_cfg.heldout_size, data_cfg.kind_mix, rng)
    )
    total = len(kinds)
    dtype = record_dtype(body_spec.joint_count, body_spec.num_betas, model_cfg.channels,
                         model_cfg.body_grid, model_cfg.hand_grid)
    records = np.zeros(total, dtype=dtype)
    sampler = SceneSampler(body_spec, hand_spec, data_cfg, config.transfer)

    logger.data(f"Generando {total} escenas (semilla {seed}) en {out_dir}")
    for i in tqdm(range(total), desc="Escenas", disable=not show_progress):
        scene, gt = sampler.sample(i, kinds[i], rng)
        body, hands = render_scene(scene, gt, body_spec, hand_layout, data_cfg, model_cfg.body_grid)
        _fill_record(records[i], scene, body, hands)

    os.makedirs(out_dir, exist_ok=True)
    samples_path = os.path.join(out_dir, SAMPLES_FILE)
    try:
        with open(samples_path, "wb") as f:
            f.write(records.tobytes())
    except OSError as e:
        raise IoError(f"No se pudo escribir {samples_path}: {e}") from e
    save_model_spec(body_spec, os.path.join(out_dir, BODY_SPEC_FILE))
    save_model_spec(hand_spec, os.path.join(out_dir, HAND_SPEC_FILE))

    train_size = data_cfg.train_size
    manifest = DatasetManifest(
        version=DATASET_VERSION,
        body_spec_sha256=spec_hash(body_spec),
        hand_spec_sha256=spec_hash(hand_spec),
        spec_seed=model_cfg.spec_seed,
        seed=seed,
        sample_count=total,
        record_size=dtype.itemsize,
        offsets=[i * dtype.itemsize for i in range(total)],
        splits={"train": list(range(train_size)), "heldout": list(range(train_size, total))},
        kinds={kind: kinds.count(kind) for kind in KINDS},
        channels=model_cfg.channels,
        body_grid=tuple(model_cfg.body_grid),
        hand_grid=model_cfg.hand_grid,
        dataset=data_cfg.model_dump(mode="json"),
        transfer=config.transfer.model_dump(mode="json"),
    )
    write_json(os.path.join(out_dir, MANIFEST_FILE), manifest.model_dump(mode="json"))
    logger.success(f"Dataset escrito: {total} muestras, {dtype.itemsize} bytes por registro")
    return manifest


class SyntheticDataset:
    """
    Lectura de un dataset generado.

    Comprueba al abrir que las specs incluidas coinciden con los hashes del
    manifiesto y que el binario tiene el tamaño esperado.
    """

    def __init__(self, directory: str):
        self.directory = directory
        raw = read_json(os.path.join(directory, MANIFEST_FILE))
        try:
            self.manifest = DatasetManifest.model_validate(raw)
        except ValidationError as e:
            raise ParseError(f"Manifiesto inválido en {directory}: {e}") from e
        if self.manifest.version != DATASET_VERSION:
            raise ParseError(f"Versión de dataset '{self.manifest.version}' no soportada")

        self.body_spec = load_model_spec(os.path.join(directory, BODY_SPEC_FILE))
        self.hand_spec = load_model_spec(os.path.join(directory, HAND_SPEC_FILE))
        if spec_hash(self.body_spec) != self.manifest.body_spec_sha256:
            raise ParseError("La spec del cuerpo no coincide con el hash del manifiesto")
        if spec_hash(self.hand_spec) != self.manifest.hand_spec_sha256:
            raise ParseError("La spec de la mano no coincide con el hash del manifiesto")

        self.dataset_config = DatasetConfig.model_validate(self.manifest.dataset)
        self.transfer_config = TransferConfig.model_validate(self.manifest.transfer)
        self.dtype = record_dtype(self.body_spec.joint_count, self.body_spec.num_betas, self.manifest.channels,
                                  self.manifest.body_grid, self.manifest.hand_grid)
        if self.dtype.itemsize != self.manifest.record_size:
            raise ParseError(f"record_size {self.manifest.record_size} no coincide con el layout ({self.dtype.itemsize})")

        path = os.path.join(directory, SAMPLES_FILE)
        if not os.path.exists(path):
            raise IoError(f"No existe {path}")
        self.records = np.fromfile(path, dtype=self.dtype)
        if len(self.records) != self.manifest.sample_count:
            raise ParseError(f"{path} tiene {len(self.records)} registros, el manifiesto declara "
                             f"{self.manifest.sample_count}")

        cfg = self.dataset_config
        self.camera = Camera.default(cfg.image_width, cfg.image_height, cfg.focal)
        self.body_affine = body_affine(cfg, self.manifest.body_grid)
        self._ground_truth: Dict[int, GroundTruth] = {}

    @classmethod
    def load(cls, directory: str) -> "SyntheticDataset":
        return cls(directory)

    def __len__(self) -> int:
        return self.manifest.sample_count

    @property
    def image_dims(self) -> Tuple[int, int]:
        """(ancho, alto) de la imagen."""
        return self.dataset_config.image_width, self.dataset_config.image_height

    @property
    def body_grid(self) -> Tuple[int, int]:
        return tuple(self.manifest.body_grid)

    def split(self, name: str) -> List[int]:
        """
        Índices de un split.

        Raises:
            EmptySplit: si el split no existe o no tiene muestras
        """
        indices = self.manifest.splits.get(name)
        if not indices:
            raise EmptySplit(f"El split '{name}' no existe o está vacío")
        return list(indices)

    def _record(self, index: int) -> np.void:
        if not 0 <= index < len(self):
            raise InvariantViolation("index", f"muestra {index} fuera de [0, {len(self)})")
        return self.records[index]

    def scene(self, index: int) -> Scene:
        return _scene_from_record(self._record(index), self.camera)

    def sample(self, index: int) -> Sample:
        record = self._record(index)
        scene = _scene_from_record(record, self.camera)
        body = TokenGrid(_tensor(record["body_tokens"]), self.body_affine)
        g = self.manifest.hand_grid
        hands = {
            side: TokenGrid(_tensor(record["hand_tokens"][i]), scene.crop_affine(side, g))
            for i, side in enumerate(SIDES)
        }
        return Sample(scene, body, hands)

    def samples(self, indices: Optional[List[int]] = None) -> Iterator[Sample]:
        for index in (range(len(self)) if indices is None else indices):
            yield self.sample(index)

    def ground_truth(self, index: int) -> GroundTruth:
        """Geometría de verdad de terreno (se recalcula una vez y se guarda)."""
        if index not in self._ground_truth:
            self._ground_truth[index] = ground_truth(self.scene(index), self.body_spec, self.hand_spec,
                                                     self.transfer_config)
        return self._ground_truth[index]

    def specs(self) -> Tuple[ArticulatedModelSpec, ArticulatedModelSpec]:
        return self.body_spec, self.hand_spec
