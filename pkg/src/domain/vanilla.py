"""
Planificador de referencia que imita el comportamiento por defecto del host:
colocación first-fit sin conocer clases ni distancias, migración aleatoria de
hilos y núcleos sobre-suscritos.
"""

from __future__ import annotations

import numpy as np

from .entities import MappingState, Topology, VanillaParams, VmSpec
from .errors import CapacityError
from .logs import get_logger
from .placement import allocate_memory

logger = get_logger(__name__)


def vanilla_place(
    vm: VmSpec,
    m: MappingState,
    t: Topology,
    rng: np.random.Generator,
    params: VanillaParams | None = None,
) -> MappingState:
    """
    Coloca una VM recorriendo los núcleos desde un desplazamiento aleatorio.

    Se toman primero núcleos ociosos; sólo cuando no queda ninguno se
    sobre-suscriben núcleos (hasta `k_max` vCPUs por núcleo, los menos
    cargados primero). La memoria se asigna en el primer toque, junto a las
    vCPUs, y no se reserva nada.

    Args:
        vm (VmSpec): VM que llega.
        m (MappingState): Mapeo actual (no se modifica).
        t (Topology): Topología.
        rng (np.random.Generator): Generador de la ejecución.
        params (VanillaParams | None): ρ y k_max.

    Returns:
        MappingState: Nuevo mapeo con la VM colocada.

    Raises:
        CapacityError: Si ni sobre-suscribiendo hasta k_max caben las vCPUs.
    """
    params = params or VanillaParams()
    n = t.num_cores
    load = m.core_load(n)
    offset = int(rng.integers(n))
    order = [(offset + i) % n for i in range(n)]

    cores = [c for c in order if load[c] == 0][: vm.vcpus]
    while len(cores) < vm.vcpus:
        candidates = [c for c in order if load[c] < params.k_max and c not in cores]
        if not candidates:
            raise CapacityError(
                f"insufficient cores for {vm.id} even with {params.k_max}-way overbooking"
            )
        pick = min(candidates, key=lambda c: load[c])
        load[pick] += 1
        cores.append(pick)

    alloc, _, _ = allocate_memory(vm, cores, m, t)
    out = m.copy()
    out.vcpu_assign[vm.id] = cores
    out.mem_alloc[vm.id] = alloc
    out.specs[vm.id] = vm
    logger.debug("Vanilla placed %s from offset %d", vm.id, offset)
    return out


def vanilla_step(
    m: MappingState,
    t: Topology,
    rng: np.random.Generator,
    params: VanillaParams | None = None,
) -> MappingState:
    """
    Migración aleatoria de hilos durante una época.

    Cada vCPU migra con probabilidad ρ a un núcleo elegido al azar con peso
    proporcional a su holgura (k_max − carga), de modo que los núcleos menos
    cargados son más probables y ninguno supera k_max. La memoria no se mueve.

    Args:
        m (MappingState): Mapeo actual (no se modifica).
        t (Topology): Topología.
        rng (np.random.Generator): Generador de la ejecución.
        params (VanillaParams | None): ρ y k_max.

    Returns:
        MappingState: Nuevo mapeo.
    """
    params = params or VanillaParams()
    out = m.copy()
    load = out.core_load(t.num_cores).astype(np.int64)
    slots = [(vm_id, i) for vm_id in out.vm_ids() for i in range(len(out.vcpu_assign[vm_id]))]
    flips = rng.random(len(slots))

    for (vm_id, i), flip in zip(slots, flips):
        if flip >= params.migration_prob:
            continue
        current = out.vcpu_assign[vm_id][i]
        load[current] -= 1
        slack = np.clip(params.k_max - load, 0, None).astype(np.float64)
        total = slack.sum()
        if total == 0:
            load[current] += 1
            continue
        dest = int(rng.choice(t.num_cores, p=slack / total))
        load[dest] += 1
        out.vcpu_assign[vm_id][i] = dest
    return out
