"""
Utilidades compartidas del sistema: logging, errores, configuración y serialización.
"""

from .errors import PosefuseError
from .config import PosefuseConfig, load_config, config_from_dict, dump_config
from .rich_logger import get_logger, setup_logging, JsonlLogSink
from .serialization import write_json, read_json, save_params, load_params, tensor_hash

__all__ = [
    "PosefuseError",
    "PosefuseConfig",
    "load_config",
    "config_from_dict",
    "dump_config",
    "get_logger",
    "setup_logging",
    "JsonlLogSink",
    "write_json",
    "read_json",
    "save_params",
    "load_params",
    "tensor_hash",
]
