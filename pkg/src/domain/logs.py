"""
Nombres de logger del paquete.

Todos los módulos obtienen su logger con `get_logger(__name__)`. La
instalación de handlers vive en `infrastructure.log_config`.
"""

import logging

ROOT_LOGGER = "numamap"


def get_logger(name: str) -> logging.Logger:
    """
    Devuelve un logger hijo del logger raíz del paquete.

    Args:
        name (str): Nombre del módulo (normalmente `__name__`).

    Returns:
        logging.Logger: Logger configurado por `configure_logging`.
    """
    short = name.removeprefix("src.")
    return logging.getLogger(f"{ROOT_LOGGER}.{short}")
