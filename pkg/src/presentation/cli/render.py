"""
Renderizado en texto del mapeo de una época.
"""

from collections import defaultdict

from ...domain.entities import EpochRecord, RunTrace
from ...domain.errors import TraceError

EMPTY = "."


def find_epoch(trace: RunTrace, epoch: int) -> EpochRecord:
    """
    Busca el registro de una época.

    Raises:
        TraceError: Si la época no está en la traza.
    """
    for record in trace.epochs:
        if record.epoch == epoch:
            return record
    raise TraceError(f"epoch {epoch} out of range (trace has {len(trace.epochs)} epoch(s))")


def render_snapshot(trace: RunTrace, epoch: int) -> str:
    """
    Dibuja la ocupación de núcleos agrupada servidor → socket → nodo NUMA.

    Cada celda muestra la VM que ocupa el núcleo o "." si está libre; un
    núcleo sobresuscrito muestra "*N" con el número de vCPUs.

    Args:
        trace (RunTrace): Traza de la ejecución.
        epoch (int): Época a dibujar.

    Returns:
        str: Rejilla de texto.

    Raises:
        TraceError: Si la época está fuera de rango.
    """
    record = find_epoch(trace, epoch)
    occupants: dict[int, list[str]] = defaultdict(list)
    for vm_id, cores in record.assignment.items():
        for core in cores:
            occupants[core].append(vm_id)

    cells: dict[int, str] = {}
    for core, vms in occupants.items():
        cells[core] = vms[0] if len(vms) == 1 else f"*{len(vms)}"
    width = max([len(EMPTY), *(len(c) for c in cells.values())])

    node_id = 0
    lines = [f"epoch {record.epoch}  mapping {record.mapping_hash[:12]}"]
    for s_idx, server in enumerate(trace.layout):
        coord = trace.torus[s_idx] if s_idx < len(trace.torus) else None
        suffix = f" torus ({coord[0]},{coord[1]})" if coord else ""
        lines.append(f"server {s_idx}{suffix}")
        for k_idx, socket in enumerate(server):
            lines.append(f"  socket {k_idx}")
            for nodes in socket:
                label = f"    numa {node_id}"
                node_id += 1
                row = " ".join(cells.get(core, EMPTY).ljust(width) for core in nodes)
                lines.append(f"{label:<12}| {row.rstrip()}")
    return "\n".join(lines) + "\n"

