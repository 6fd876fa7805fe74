"""
Serialización de parámetros y reportes.

Los parámetros de los backbones y de CHAM se guardan como JSON versionado
("posefuse-params-v1") con un sha256 sobre los tensores ordenados por
nombre; el hash se vuelve a comprobar al cargar.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, ValidationError

from utils.errors import IoError, ParseError

PARAMS_VERSION = "posefuse-params-v1"


def tensor_hash(tensors: Mapping[str, torch.Tensor]) -> str:
    """
    sha256 de un conjunto de tensores.

    Se recorre por nombre ordenado y se hashean nombre, forma y bytes
    float64 little-endian, así que el hash no depende del orden de registro.
    """
    digest = hashlib.sha256()
    for name in sorted(tensors):
        array = np.ascontiguousarray(tensors[name].detach().cpu().numpy().astype("<f8"))
        digest.update(name.encode("utf-8"))
        digest.update(json.dumps(list(array.shape)).encode("utf-8"))
        digest.update(array.tobytes())
    return digest.hexdigest()


class _TensorEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    shape: List[int]
    data: List[float]


class _ParamFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: str
    kind: str
    sha256: str
    metadata: Dict[str, Any]
    tensors: Dict[str, _TensorEntry]


def write_json(path: str, payload: Any, indent: Optional[int] = 2) -> str:
    """Escribe JSON canónico (claves ordenadas)."""
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=indent, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise IoError(f"No se pudo escribir {path}: {e}") from e
    return path


def read_json(path: str) -> Any:
    if not os.path.exists(path):
        raise IoError(f"No existe {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"JSON inválido en {path}: {e}") from e


def save_params(tensors: Mapping[str, torch.Tensor], path: str, kind: str,
                metadata: Optional[Dict[str, Any]] = None) -> str:
    """
    Guarda un state_dict con su hash.

    Args:
        tensors: Tensores por nombre (state_dict)
        path: Archivo de salida
        kind: Tipo de parámetros ("body_backbone", "hand_backbone", "cham")
        metadata: Dimensiones y semillas necesarias para reconstruir el módulo

    Returns:
        Ruta escrita
    """
    payload = {
        "version": PARAMS_VERSION,
        "kind": kind,
        "sha256": tensor_hash(tensors),
        "metadata": metadata or {},
        "tensors": {
            name: {
                "shape": list(t.shape),
                "data": t.detach().cpu().to(torch.float64).reshape(-1).tolist(),
            }
            for name, t in sorted(tensors.items())
        },
    }
    return write_json(path, payload, indent=None)


def load_params(path: str, kind: str) -> tuple:
    """
    Lee un archivo de parámetros y verifica versión, tipo y hash.

    Returns:
        (tensores por nombre, metadata)

    Raises:
        IoError: archivo inexistente
        ParseError: esquema, versión, tipo o hash incorrectos
    """
    raw = read_json(path)
    try:
        parsed = _ParamFile.model_validate(raw)
    except ValidationError as e:
        raise ParseError(f"Archivo de parámetros inválido {path}: {e}") from e
    if parsed.version != PARAMS_VERSION:
        raise ParseError(f"Versión '{parsed.version}' no soportada (se espera {PARAMS_VERSION})")
    if parsed.kind != kind:
        raise ParseError(f"Se esperaban parámetros '{kind}', el archivo es '{parsed.kind}'")
    tensors = {}
    for name, entry in parsed.tensors.items():
        try:
            tensors[name] = torch.tensor(entry.data, dtype=torch.float64).reshape(entry.shape)
        except RuntimeError as e:
            raise ParseError(f"Tensor '{name}' con forma incoherente: {e}") from e
    if tensor_hash(tensors) != parsed.sha256:
        raise ParseError(f"El hash de {path} no coincide con su contenido")
    return tensors, parsed.metadata
