"""
Serialización de trazas como JSON delimitado por líneas (NDJSON).

Cada traza ocupa un bloque de líneas: una cabecera (configuración, disposición
de núcleos y VMs), un registro por época y un resumen final. Un fichero puede
contener varias trazas seguidas (una por repetición o algoritmo).
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable

from ...domain.entities import (
    Action,
    ActionReason,
    AnimalClass,
    CounterSample,
    EpochRecord,
    PerfBreakdown,
    PerfEstimate,
    RunTrace,
    VmSpec,
)
from ...domain.errors import TraceError, ValidationError


def _dumps(obj: dict[str, Any]) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _vm_to_dict(vm: VmSpec) -> dict[str, Any]:
    return {
        "vm_type": vm.vm_type,
        "vcpus": vm.vcpus,
        "memory": vm.memory,
        "class": vm.animal_class.value,
        "sensitive": vm.sensitive,
        "expected_perf": vm.expected_perf,
        "affinity": sorted(vm.affinity) if vm.affinity is not None else None,
    }


def _vm_from_dict(vm_id: str, raw: dict[str, Any]) -> VmSpec:
    affinity = raw.get("affinity")
    return VmSpec(
        id=vm_id,
        vcpus=int(raw["vcpus"]),
        memory=int(raw["memory"]),
        animal_class=AnimalClass.parse(raw["class"]),
        sensitive=bool(raw["sensitive"]),
        expected_perf=float(raw["expected_perf"]),
        affinity=frozenset(affinity) if affinity is not None else None,
        vm_type=raw["vm_type"],
    )


def _epoch_to_dict(rec: EpochRecord) -> dict[str, Any]:
    return {
        "kind": "epoch",
        "epoch": rec.epoch,
        "mapping_hash": rec.mapping_hash,
        "assignment": rec.assignment,
        "estimates": {
            vm_id: {
                "p": est.p,
                "contention": est.breakdown.contention,
                "locality": est.breakdown.locality,
                "overbooking": est.breakdown.overbooking,
                "noise": est.breakdown.noise,
            }
            for vm_id, est in rec.estimates.items()
        },
        "samples": {vm_id: {"ipc": s.ipc, "mpi": s.mpi} for vm_id, s in rec.samples.items()},
        "actions": [
            {
                "vm_id": a.vm_id,
                "reason": a.reason.value,
                "from_cores": list(a.from_cores),
                "to_cores": list(a.to_cores),
                "flagged": a.flagged,
                "detail": a.detail,
            }
            for a in rec.actions
        ],
        "rejected": rec.rejected,
        "warnings": rec.warnings,
        "benefit": rec.benefit,
    }


def _epoch_from_dict(raw: dict[str, Any]) -> EpochRecord:
    epoch = int(raw["epoch"])
    return EpochRecord(
        epoch=epoch,
        mapping_hash=raw["mapping_hash"],
        assignment={k: list(v) for k, v in raw["assignment"].items()},
        estimates={
            vm_id: PerfEstimate(
                vm_id=vm_id,
                p=e["p"],
                breakdown=PerfBreakdown(
                    contention=e["contention"],
                    locality=e["locality"],
                    overbooking=e["overbooking"],
                    noise=e["noise"],
                ),
            )
            for vm_id, e in raw["estimates"].items()
        },
        samples={
            vm_id: CounterSample(vm_id=vm_id, ipc=s["ipc"], mpi=s["mpi"])
            for vm_id, s in raw["samples"].items()
        },
        actions=[
            Action(
                epoch=epoch,
                vm_id=a["vm_id"],
                reason=ActionReason(a["reason"]),
                from_cores=tuple(a["from_cores"]),
                to_cores=tuple(a["to_cores"]),
                flagged=a["flagged"],
                detail=a["detail"],
            )
            for a in raw["actions"]
        ],
        rejected=list(raw["rejected"]),
        warnings=list(raw["warnings"]),
        benefit=raw.get("benefit") or {},
    )


def encode_trace(trace: RunTrace) -> str:
    """
    Texto NDJSON canónico de una traza (claves ordenadas, sin espacios).

    Args:
        trace (RunTrace): Traza a serializar.

    Returns:
        str: Líneas terminadas en salto de línea.
    """
    lines = [
        _dumps(
            {
                "kind": "header",
                "config": trace.config,
                "layout": trace.layout,
                "torus": trace.torus,
                "vms": {vm_id: _vm_to_dict(vm) for vm_id, vm in trace.vms.items()},
                "vm_order": list(trace.vms),
            }
        )
    ]
    lines.extend(_dumps(_epoch_to_dict(rec)) for rec in trace.epochs)
    lines.append(_dumps({"kind": "summary", "mean_p": trace.summary}))
    return "\n".join(lines) + "\n"


def trace_hash(trace: RunTrace) -> str:
    """SHA-256 del texto NDJSON canónico."""
    return hashlib.sha256(encode_trace(trace).encode("utf-8")).hexdigest()


def decode_traces(lines: Iterable[str]) -> list[RunTrace]:
    """
    Reconstruye las trazas contenidas en un flujo NDJSON.

    Args:
        lines (Iterable[str]): Líneas del fichero.

    Returns:
        list[RunTrace]: Trazas en orden de aparición.

    Raises:
        TraceError: Si una línea no es JSON válido o la estructura no encaja.
    """
    traces: list[RunTrace] = []
    current: RunTrace | None = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            kind = raw["kind"]
            if kind == "header":
                vms = {v: _vm_from_dict(v, raw["vms"][v]) for v in raw.get("vm_order", raw["vms"])}
                current = RunTrace(
                    config=raw["config"],
                    layout=raw["layout"],
                    torus=raw.get("torus", []),
                    vms=vms,
                )
                traces.append(current)
            elif current is None:
                raise TraceError(f"line {lineno}: record before trace header")
            elif kind == "epoch":
                current.epochs.append(_epoch_from_dict(raw))
            elif kind == "summary":
                current.summary = dict(raw["mean_p"])
                current = None
            else:
                raise TraceError(f"line {lineno}: unknown record kind {kind!r}")
        except TraceError:
            raise
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, ValidationError) as exc:
            raise TraceError(f"line {lineno}: malformed trace record ({exc})") from exc
    if not traces:
        raise TraceError("no trace found")
    return traces


def write_traces(traces: list[RunTrace], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(encode_trace(trace))


def read_traces(path: str | Path) -> list[RunTrace]:
    try:
        with open(path, encoding="utf-8") as fh:
            return decode_traces(fh)
    except OSError as exc:
        raise TraceError(f"cannot read trace {path}: {exc.strerror or exc}") from exc
