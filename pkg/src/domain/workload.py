"""
Carga de trabajo: tipos de VM predefinidos y escenarios de llegadas/salidas.

La clasificación animal y la sensibilidad son estáticas durante una ejecución;
no existe reclasificación en línea.
"""

from __future__ import annotations

from typing import Any, Mapping

from .entities import GIB, AnimalClass, EventKind, ScenarioEvent, VmSpec, VmTypePreset
from .errors import ScenarioError, ValidationError

PRESETS: dict[str, VmTypePreset] = {
    "small": VmTypePreset("small", vcpus=4, memory=16 * GIB),
    "medium": VmTypePreset("medium", vcpus=8, memory=32 * GIB),
    "large": VmTypePreset("large", vcpus=16, memory=64 * GIB),
    "huge": VmTypePreset("huge", vcpus=72, memory=288 * GIB),
}


def preset(name: str) -> VmTypePreset:
    """
    Devuelve la fila fija de la tabla de tipos de VM.

    Args:
        name (str): small, medium, large o huge.

    Returns:
        VmTypePreset: vCPUs y memoria del tipo.

    Raises:
        ScenarioError: Si el nombre no está en la tabla.
    """
    try:
        return PRESETS[str(name).lower()]
    except KeyError as exc:
        raise ScenarioError(f"unknown preset: {name!r}") from exc


def _vm_from_record(record: Mapping[str, Any]) -> VmSpec:
    vm_id = str(record["id"])
    raw_type = record.get("type")
    if raw_type is None:
        raise ScenarioError(f"{vm_id}: arrive record needs a 'type'")
    if isinstance(raw_type, Mapping):
        custom = raw_type.get("custom")
        if not isinstance(custom, Mapping):
            raise ScenarioError(f"{vm_id}: type must be a preset name or custom{{vcpus, memory_gb}}")
        vm_type = "custom"
        vcpus = custom.get("vcpus")
        memory_gb = custom.get("memory_gb")
        if not isinstance(vcpus, int) or not isinstance(memory_gb, (int, float)):
            raise ScenarioError(f"{vm_id}: custom type needs integer vcpus and numeric memory_gb")
        memory = int(memory_gb * GIB)
    else:
        row = preset(raw_type)
        vm_type, vcpus, memory = row.name, row.vcpus, row.memory

    if "class" not in record:
        raise ScenarioError(f"{vm_id}: arrive record needs a 'class'")
    affinity = record.get("affinity")
    try:
        return VmSpec(
            id=vm_id,
            vcpus=vcpus,
            memory=memory,
            animal_class=AnimalClass.parse(record["class"]),
            sensitive=bool(record.get("sensitive", False)),
            expected_perf=float(record.get("expected_perf", 1.0)),
            affinity=frozenset(int(s) for s in affinity) if affinity is not None else None,
            vm_type=vm_type,
        )
    except ScenarioError:
        raise
    except ValidationError as exc:
        raise ScenarioError(str(exc)) from exc


def parse_scenario(document: Any) -> list[ScenarioEvent]:
    """
    Valida un escenario y lo convierte en una lista de eventos ordenada por tiempo.

    El documento es una lista de registros o un mapeo con clave `events`.
    El orden es estable: dentro de un mismo instante se respeta el orden de
    documento.

    Args:
        document (Any): Documento ya parseado (None o vacío = escenario vacío).

    Returns:
        list[ScenarioEvent]: Eventos validados.

    Raises:
        ScenarioError: Preset desconocido, tiempo negativo, id duplicado o
            salida de una VM que no ha llegado.
    """
    if document is None:
        return []
    if isinstance(document, Mapping):
        document = document.get("events") or []
    if not isinstance(document, list):
        raise ScenarioError("scenario must be a list of records")

    events: list[ScenarioEvent] = []
    for idx, record in enumerate(document):
        if not isinstance(record, Mapping):
            raise ScenarioError(f"record {idx} is not a mapping")
        if "id" not in record or "time" not in record:
            raise ScenarioError(f"record {idx} needs 'time' and 'id'")
        time = record["time"]
        if not isinstance(time, int) or isinstance(time, bool):
            raise ScenarioError(f"record {idx}: time must be an integer")
        if time < 0:
            raise ScenarioError(f"record {idx}: negative time {time}")
        try:
            kind = EventKind(record.get("action"))
        except ValueError as exc:
            raise ScenarioError(f"record {idx}: action must be arrive or depart") from exc

        vm = _vm_from_record(record) if kind is EventKind.ARRIVE else None
        events.append(ScenarioEvent(time=time, kind=kind, vm_id=str(record["id"]), vm=vm))

    events.sort(key=lambda e: e.time)

    live: set[str] = set()
    for event in events:
        if event.kind is EventKind.ARRIVE:
            if event.vm_id in live:
                raise ScenarioError(f"duplicate arrival of live VM {event.vm_id!r}")
            live.add(event.vm_id)
        else:
            if event.vm_id not in live:
                raise ScenarioError(f"depart of unknown VM {event.vm_id!r} at t={event.time}")
            live.remove(event.vm_id)
    return events


def serialize_scenario(events: list[ScenarioEvent]) -> list[dict[str, Any]]:
    """Inversa de `parse_scenario`: registros planos listos para volcar a YAML."""
    out: list[dict[str, Any]] = []
    for event in events:
        record: dict[str, Any] = {"time": event.time, "action": event.kind.value, "id": event.vm_id}
        vm = event.vm
        if vm is not None:
            if vm.vm_type in PRESETS:
                record["type"] = vm.vm_type
            else:
                record["type"] = {"custom": {"vcpus": vm.vcpus, "memory_gb": vm.memory / GIB}}
            record["class"] = vm.animal_class.value
            record["sensitive"] = vm.sensitive
            record["expected_perf"] = vm.expected_perf
            if vm.affinity is not None:
                record["affinity"] = sorted(vm.affinity)
        out.append(record)
    return out


def peak_vcpus(events: list[ScenarioEvent]) -> int:
    """Máximo de vCPUs vivas simultáneamente a lo largo del escenario."""
    live: dict[str, int] = {}
    peak = 0
    for event in events:
        if event.kind is EventKind.ARRIVE and event.vm is not None:
            live[event.vm_id] = event.vm.vcpus
        else:
            live.pop(event.vm_id, None)
        peak = max(peak, sum(live.values()))
    return peak
