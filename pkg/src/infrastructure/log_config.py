"""
Configuración de logging del paquete.

La CLI llama a `configure_logging` una vez con el nivel de `--log-level`. La
salida va siempre a la salida de error estándar.
"""

import logging
import sys

from ..domain.logs import ROOT_LOGGER, get_logger

__all__ = ["configure_logging", "get_logger"]

_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str = "WARNING") -> None:
    """
    Instala un único handler a stderr en el logger raíz del paquete.

    Args:
        level (str): Nombre del nivel (DEBUG, INFO, WARNING, ERROR).

    Raises:
        ValueError: Si el nivel no es válido.
    """
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        raise ValueError(f"invalid log level: {level!r}")

    root = logging.getLogger(ROOT_LOGGER)
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(_FORMAT))
    root.addHandler(handler)
    root.setLevel(numeric)
    root.propagate = False
