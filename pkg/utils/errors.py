"""
Jerarquía de errores del pipeline posefuse.

Cada error lleva un código de salida que el CLI devuelve tal cual:
1 para errores de uso o configuración, 2 para violaciones de contrato
o de invariantes y 3 para fallos numéricos.
"""

from typing import Optional


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONTRACT = 2
EXIT_NUMERIC = 3


class PosefuseError(Exception):
    """Error base del sistema."""

    exit_code: int = EXIT_CONTRACT


# ==================== Geometría ====================

class NotARotation(PosefuseError):
    """La matriz no es ortonormal con determinante 1."""


class DegenerateConfiguration(PosefuseError):
    """Conjunto de puntos sin rango suficiente para registrar."""


class InvalidDims(PosefuseError):
    """Dimensiones de grid o de canales inválidas."""


class IsolatedVertex(PosefuseError):
    """Un vértice seleccionado para suavizar no tiene vecinos."""

    def __init__(self, vertex: int):
        self.vertex = vertex
        super().__init__(f"El vértice {vertex} no tiene vecinos")


class NonFiniteEvaluation(PosefuseError):
    """La función evaluada devolvió un valor no finito."""

    exit_code = EXIT_NUMERIC


# ==================== Modelos articulados ====================

class ParseError(PosefuseError):
    """Archivo de spec o de parámetros ilegible o con esquema incorrecto."""


class InvariantViolation(PosefuseError):
    """Un campo del spec viola un invariante del tipo."""

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        message = f"Invariante violado en '{field}'"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class DimMismatch(PosefuseError):
    """Dimensiones incompatibles entre argumentos."""


class UnknownJoint(PosefuseError):
    """Nombre de articulación inexistente en named_joints."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Articulación desconocida: '{name}'")


class BehindCamera(PosefuseError):
    """Un punto tiene profundidad no positiva respecto a la cámara."""

    def __init__(self, index: int, depth: Optional[float] = None):
        self.index = index
        self.depth = depth
        message = f"El punto {index} está detrás de la cámara"
        if depth is not None:
            message += f" (z={depth:.6g})"
        super().__init__(message)


# ==================== Entrenamiento y transferencia ====================

class NonFiniteLoss(PosefuseError):
    """La pérdida dejó de ser finita."""

    exit_code = EXIT_NUMERIC


class UnknownSide(PosefuseError):
    """Lado de mano distinto de 'left' o 'right'."""

    def __init__(self, side: str):
        self.side = side
        super().__init__(f"Lado desconocido: '{side}'")


class CorrespondenceMissing(PosefuseError):
    """El spec del cuerpo no trae la correspondencia de la región de mano."""


class NearDegenerateAlignment(PosefuseError):
    """Valores singulares casi repetidos: el gradiente de la alineación no es fiable."""


class MissingReference(PosefuseError):
    """Falta la articulación de referencia del marco relativo."""


class FrozenParamsModified(PosefuseError):
    """El hash de un backbone congelado cambió durante el entrenamiento."""


class BackboneUnderfit(PosefuseError):
    """El backbone de cuerpo congelado supera el umbral de error en heldout."""


# ==================== Pipeline ====================

class ConfigError(PosefuseError):
    """Configuración inválida o con claves desconocidas."""

    exit_code = EXIT_USAGE


class EmptySplit(PosefuseError):
    """El split pedido no tiene muestras."""


class IoError(PosefuseError):
    """Fallo de lectura o escritura en disco."""
