"""
Implementación en memoria de un sink de trazas.

Se utiliza un deque, opcionalmente con tamaño máximo, para conservar los
registros de época más recientes.
"""

from collections import deque

from ...domain.entities import EpochRecord, RunTrace
from ...domain.repositories import TraceSink


class RingBufferTrace(TraceSink):
    """
    Buffer de registros de época basado en deque.
    """

    def __init__(self, capacity: int | None = None) -> None:
        """
        Inicializa el buffer.

        Args:
            capacity (int | None, opcional): Número máximo de registros a
                conservar. None guarda todos (necesario para una traza
                completa). Por defecto None.
        """
        self._buf: deque[EpochRecord] = deque(maxlen=capacity)
        self._trace: RunTrace | None = None

    def push(self, record: EpochRecord) -> None:
        """
        Inserta un registro en el buffer.

        Args:
            record (EpochRecord): Registro de la época.
        """
        self._buf.append(record)

    def close(self, trace: RunTrace) -> None:
        self._trace = trace

    @property
    def trace(self) -> RunTrace | None:
        """Última traza cerrada, si la hay."""
        return self._trace

    def snapshot(self, n: int = 120) -> list[EpochRecord]:
        """
        Recupera los últimos registros almacenados.

        Args:
            n (int, opcional): Número máximo de registros a devolver.
                Si n <= 0, devuelve todo el buffer.
                Por defecto 120.

        Returns:
            list[EpochRecord]: Registros en orden de época.
        """
        if n <= 0:
            return list(self._buf)
        return list(self._buf)[-n:]
