"""
Logging con colores para el pipeline posefuse.

Cada etapa (datos, geometría, entrenamiento, evaluación, workflow) tiene su
propio nivel con color y emoji. Las entradas estructuradas (pasos de
entrenamiento, reportes de métricas) se reenvían a callbacks; el volcado
JSONL del entrenamiento es uno de ellos.
"""

import json
import os
import sys
import time
from datetime import datetime
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Optional


class LogLevel(Enum):
    """Niveles de log: (nombre, umbral, color, emoji)."""
    DEBUG = ("DEBUG", 10, "\033[90m", "🔍")
    INFO = ("INFO", 20, "\033[94m", "ℹ️")
    SUCCESS = ("SUCCESS", 20, "\033[92m", "✅")
    WARNING = ("WARNING", 30, "\033[93m", "⚠️")
    ERROR = ("ERROR", 40, "\033[91m", "❌")
    STEP = ("STEP", 20, "\033[96m", "📍")
    DATA = ("DATA", 20, "\033[94m", "🗂️")
    GEOMETRY = ("GEOMETRY", 20, "\033[95m", "📐")
    TRAIN = ("TRAIN", 20, "\033[93m", "🏋️")
    EVAL = ("EVAL", 20, "\033[92m", "📏")
    WORKFLOW = ("WORKFLOW", 20, "\033[96m", "🔄")


_THRESHOLDS = {"DEBUG": 10, "INFO": 20, "WARNING": 30, "ERROR": 40, "CRITICAL": 50}

RESET = "\033[0m"
BOLD = "\033[1m"
DIM = "\033[2m"
GRAY = "\033[90m"
GREEN = "\033[92m"
RED = "\033[91m"
CYAN = "\033[96m"
YELLOW = "\033[93m"

_RULE = "═" * 43

LogCallback = Callable[[Dict[str, Any]], None]
_log_callbacks: List[LogCallback] = []
_logger: Optional["StreamingRichLogger"] = None


def _supports_color() -> bool:
    if os.environ.get("NO_COLOR"):
        return False
    if os.environ.get("FORCE_COLOR"):
        return True
    return hasattr(sys.stdout, "isatty") and sys.stdout.isatty()


def _format_duration(seconds: float) -> str:
    if seconds < 60:
        return f"{seconds:.2f}s"
    if seconds < 3600:
        return f"{int(seconds // 60)}m {seconds % 60:.1f}s"
    return f"{int(seconds // 3600)}h {int((seconds % 3600) // 60)}m"


class RichLogger:
    """
    Logger de consola con prefijo de hora, tiempo transcurrido y nivel.

    Los mensajes por debajo del umbral configurado no se imprimen.
    """

    def __init__(self, name: str = "posefuse", level: str = "INFO", use_colors: bool = True):
        self.name = name
        self.level = level.upper()
        self.threshold = _THRESHOLDS.get(self.level, 20)
        self.use_colors = use_colors and _supports_color()
        self.start_time = time.time()
        self.step_times: Dict[str, float] = {}

    def _paint(self, text: str, color: str) -> str:
        return f"{color}{text}{RESET}" if self.use_colors else text

    def _clock(self) -> str:
        return datetime.now().strftime("%H:%M:%S.%f")[:-3]

    def _elapsed(self) -> str:
        return _format_duration(time.time() - self.start_time)

    def _log(self, level: LogLevel, message: str, **kwargs):
        name, threshold, color, emoji = level.value
        if threshold < self.threshold:
            return
        prefix = " ".join([
            self._paint(f"[{self._clock()}]", GRAY),
            self._paint(f"[+{self._elapsed()}]", DIM),
            self._paint(f"[{emoji} {name}]", color),
        ])
        line = f"{prefix} {message}"
        if kwargs:
            details = " | ".join(f"{k}={v}" for k, v in kwargs.items())
            line += " " + self._paint(f"({details})", DIM)
        print(line, flush=True)

    def debug(self, message: str, **kwargs):
        self._log(LogLevel.DEBUG, message, **kwargs)

    def info(self, message: str, **kwargs):
        self._log(LogLevel.INFO, message, **kwargs)

    def success(self, message: str, **kwargs):
        self._log(LogLevel.SUCCESS, message, **kwargs)

    def warning(self, message: str, **kwargs):
        self._log(LogLevel.WARNING, message, **kwargs)

    def error(self, message: str, **kwargs):
        self._log(LogLevel.ERROR, message, **kwargs)

    def data(self, message: str, **kwargs):
        """Generación o carga del dataset."""
        self._log(LogLevel.DATA, message, **kwargs)

    def geometry(self, message: str, **kwargs):
        """Specs articulados, mallas y ajustes de forma."""
        self._log(LogLevel.GEOMETRY, message, **kwargs)

    def step(self, step_name: str, step_number: Optional[int] = None, total_steps: Optional[int] = None):
        """Inicio de una etapa; step_complete reporta su duración."""
        self.step_times[step_name] = time.time()
        if step_number and total_steps:
            step_name = f"{self._paint(f'[{step_number}/{total_steps}]', CYAN)} {step_name}"
        self._log(LogLevel.STEP, step_name)

    def step_complete(self, step_name: str, details: Optional[str] = None):
        started = self.step_times.pop(step_name, None)
        elapsed = time.time() - started if started is not None else 0.0
        message = f"{step_name} completado {self._paint(f'({elapsed:.2f}s)', GREEN)}"
        if details:
            message += f" - {details}"
        self._log(LogLevel.SUCCESS, message)

    def epoch_summary(self, epoch: int, total_epochs: int, mean_loss: float,
                      metrics: Optional[Dict[str, float]] = None):
        """Resumen de una época de entrenamiento de CHAM."""
        message = f"Época {self._paint(f'[{epoch}/{total_epochs}]', YELLOW + BOLD)} pérdida media {mean_loss:.6f}"
        if metrics:
            message += " - " + ", ".join(f"{k}={v:.3f}" for k, v in sorted(metrics.items()))
        self._log(LogLevel.TRAIN, message)

    def workflow_start(self, workflow_name: str, config: Optional[Dict[str, Any]] = None):
        self.start_time = time.time()
        self.step_times["workflow"] = self.start_time
        self._log(LogLevel.WORKFLOW, _RULE)
        self._log(LogLevel.WORKFLOW, f"  Iniciando workflow: {self._paint(workflow_name, CYAN + BOLD)}")
        for key, value in (config or {}).items():
            self.debug(f"  Config: {key} = {value}")
        self._log(LogLevel.WORKFLOW, _RULE)

    def workflow_complete(self, success: bool = True, summary: Optional[str] = None):
        elapsed = time.time() - self.step_times.pop("workflow", time.time())
        color = GREEN if success else RED
        status = "COMPLETADO" if success else "FALLIDO"
        self._log(LogLevel.WORKFLOW, _RULE)
        self._log(LogLevel.WORKFLOW, f"  Workflow {self._paint(status, color + BOLD)}")
        self._log(LogLevel.WORKFLOW, "  " + self._paint(f"Tiempo total: {elapsed:.2f}s", color))
        if summary:
            self._log(LogLevel.WORKFLOW, f"  {summary}")
        self._log(LogLevel.WORKFLOW, _RULE)

    def table(self, headers: list, rows: list):
        """Tabla alineada por columnas (reportes de métricas y tiempos)."""
        if not rows or self.threshold > 20:
            return
        cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
        widths = [max(len(row[i]) for row in cells if i < len(row)) for i in range(len(headers))]

        def render(row: List[str]) -> str:
            return " │ ".join(cell.ljust(widths[i]) for i, cell in enumerate(row[: len(widths)]))

        print(self._paint(f"  {render(cells[0])}", BOLD), flush=True)
        print(self._paint("  " + "─┼─".join("─" * w for w in widths), DIM), flush=True)
        for row in cells[1:]:
            print(f"  {render(row)}", flush=True)
        print()


class StreamingRichLogger(RichLogger):
    """
    RichLogger que además reenvía cada entrada a los callbacks registrados.

    Las entradas de tipo 'train_step' y 'metrics' llevan un campo 'record'
    con el registro estructurado.
    """

    def _entry(self, level: str, kind: str, **fields) -> Dict[str, Any]:
        return {"timestamp": self._clock(), "elapsed": self._elapsed(), "level": level, "type": kind, **fields}

    def _log(self, level: LogLevel, message: str, **kwargs):
        super()._log(level, message, **kwargs)
        _notify_callbacks(self._entry(level.value[0], "log", message=message, extra=kwargs))

    def train_step(self, record: Dict[str, Any]):
        """Registro de un paso o época de entrenamiento; no imprime nada."""
        _notify_callbacks(self._entry("TRAIN", "train_step", record=record))

    def metrics_report(self, name: str, metrics: Dict[str, float]):
        summary = ", ".join(f"{k}={v:.3f}" for k, v in sorted(metrics.items()))
        self._log(LogLevel.EVAL, f"Métricas [{name}]: {summary}")
        _notify_callbacks(self._entry("EVAL", "metrics", record={"name": name, **metrics}))


class JsonlLogSink:
    """
    Callback que escribe en JSONL el campo 'record' de ciertas entradas.

    Sólo se vuelca el registro (sin timestamps), de modo que dos ejecuciones
    con la misma semilla producen el mismo archivo.
    """

    def __init__(self, path: str, entry_types: Iterable[str] = ("train_step",)):
        self.path = path
        self.entry_types = set(entry_types)
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        self._file = open(path, "w", encoding="utf-8")

    def __call__(self, entry: Dict[str, Any]):
        if entry.get("type") in self.entry_types:
            self._file.write(json.dumps(entry["record"], sort_keys=True) + "\n")
            self._file.flush()

    def close(self):
        if not self._file.closed:
            self._file.close()


def add_log_callback(callback: LogCallback):
    """Agrega un callback para recibir entradas en tiempo real."""
    if callback not in _log_callbacks:
        _log_callbacks.append(callback)


def remove_log_callback(callback: LogCallback):
    if callback in _log_callbacks:
        _log_callbacks.remove(callback)


def _notify_callbacks(entry: Dict[str, Any]):
    for callback in list(_log_callbacks):
        try:
            callback(entry)
        except Exception:
            pass  # Un sumidero roto no debe cortar el pipeline


def get_logger(name: str = "posefuse", level: Optional[str] = None, force_new: bool = False) -> StreamingRichLogger:
    """
    Obtiene el logger singleton o crea uno nuevo.

    Args:
        name: Nombre del logger
        level: Nivel de logging; por defecto LOG_LEVEL del entorno
        force_new: Forzar creación de nuevo logger

    Returns:
        Instancia del StreamingRichLogger
    """
    global _logger
    if _logger is None or force_new:
        _logger = StreamingRichLogger(name=name, level=level or os.environ.get("LOG_LEVEL", "INFO"))
    return _logger


def setup_logging(level: str = "INFO") -> StreamingRichLogger:
    """Configura el logger global del proceso."""
    return get_logger(level=level, force_new=True)
