"""
Caso de uso: cerrar una época y registrarla en el sink de trazas.
"""

from ..entities import (
    Action,
    BenefitMatrix,
    CounterSample,
    EpochRecord,
    MappingState,
    PerfEstimate,
)
from ..repositories import TraceSink


class RecordEpoch:
    """
    Congela el estado de una época en un `EpochRecord` y lo envía al sink.
    """

    def __init__(self, sink: TraceSink) -> None:
        """
        Args:
            sink (TraceSink): Destino de los registros.
        """
        self._sink: TraceSink = sink

    def __call__(
        self,
        epoch: int,
        mapping: MappingState,
        estimates: dict[str, PerfEstimate],
        samples: dict[str, CounterSample],
        actions: list[Action],
        rejected: list[str],
        warnings: list[str],
        benefit: BenefitMatrix | None = None,
    ) -> EpochRecord:
        """
        Construye el registro de la época y lo envía al sink.

        La asignación se copia para que cambios posteriores del mapeo no
        alteren el registro.

        Args:
            epoch (int): Época.
            mapping (MappingState): Mapeo al final de la época.
            estimates (dict[str, PerfEstimate]): p estimado por VM.
            samples (dict[str, CounterSample]): Contadores por VM.
            actions (list[Action]): Acciones aplicadas en la época.
            rejected (list[str]): Llegadas rechazadas por capacidad.
            warnings (list[str]): Avisos del bucle de control.
            benefit (BenefitMatrix | None): Matriz de beneficio (None en vanilla).

        Returns:
            EpochRecord: Registro enviado.
        """
        record = EpochRecord(
            epoch=epoch,
            mapping_hash=mapping.fingerprint(),
            assignment={v: list(mapping.vcpu_assign[v]) for v in mapping.vm_ids()},
            estimates=estimates,
            samples=samples,
            actions=actions,
            rejected=rejected,
            warnings=warnings,
            benefit={} if benefit is None else benefit_dump(benefit),
        )
        self._sink.push(record)
        return record


def benefit_dump(bm: BenefitMatrix) -> dict[str, dict[str, float]]:
    """Matriz de beneficio como {clase: {nivel: puntuación}} en orden estable."""
    out: dict[str, dict[str, float]] = {}
    for (animal, level), score in sorted(
        bm.scores.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)
    ):
        out.setdefault(animal.value, {})[level.value] = score
    return out
