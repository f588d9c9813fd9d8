"""
Definición de interfaces abstractas para la medición de contadores y el
almacenamiento de trazas.

Incluye las abstracciones que deben implementar los muestreadores de
contadores hardware y los sinks de trazas de simulación.
"""

from abc import ABC, abstractmethod
from typing import Any

import numpy as np

from .entities import CounterSample, EpochRecord, MappingState, PerfEstimate, RunTrace, Topology


class CounterSampler(ABC):
    """
    Interfaz base para una fuente de contadores de rendimiento (IPC, MPI).

    Sólo existe la implementación sintética; una implementación real leería
    los contadores hardware del host.
    """

    @abstractmethod
    def sample(
        self,
        m: MappingState,
        t: Topology,
        rng: np.random.Generator,
        sigma: float,
        offsets: dict[str, float],
    ) -> tuple[dict[str, PerfEstimate], dict[str, CounterSample]]:
        """
        Mide todas las VMs vivas del mapeo en la época actual.

        Args:
            m (MappingState): Mapeo de la época.
            t (Topology): Topología.
            rng (np.random.Generator): Generador de la ejecución.
            sigma (float): Desviación del ruido por época.
            offsets (dict[str, float]): Término persistente por VM (escala log).

        Returns:
            tuple: Estimaciones y muestras de contadores por VM.
        """
        pass


class TraceSink(ABC):
    """
    Interfaz base para un consumidor de registros de época.
    """

    @abstractmethod
    def push(self, record: EpochRecord) -> None:
        """
        Inserta el registro de una época.

        Args:
            record (EpochRecord): Registro a almacenar.
        """
        pass

    @abstractmethod
    def close(self, trace: RunTrace) -> None:
        """
        Cierra la traza con su resumen.

        Args:
            trace (RunTrace): Traza completa (configuración y resumen).
        """
        pass

    @abstractmethod
    def snapshot(self, n: int = 120) -> Any:
        """
        Devuelve los últimos registros almacenados.

        Args:
            n (int, opcional): Número máximo de registros. Por defecto 120.

        Returns:
            Any: Representación de los registros almacenados.
        """
        pass
