"""
Colocación de VMs a su llegada (primera etapa del algoritmo de mapeo).

Una VM se "rebana" lo menos posible: se minimiza, en orden lexicográfico,
(servidores abarcados, nodos NUMA abarcados, violaciones de la matriz de
clases en grupos LLC compartidos, distancia media ponderada por memoria).
A igualdad, se prefieren las vecinas de LLC menos dañinas y luego menos
vecinas.
Cada núcleo aloja como mucho una vCPU.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import Callable

import numpy as np

from .entities import AnimalClass, ClassMatrix, MappingState, Topology, VmSpec
from .errors import CapacityError, MappingError
from .logs import get_logger
from .topology import free_memory

logger = get_logger(__name__)

# Por encima de este número de subconjuntos de nodos se usa la selección voraz
_MAX_SUBSETS = 5000

# Daño que causa cada clase como vecina de LLC
DAMAGE = {AnimalClass.DEVIL: 3, AnimalClass.RABBIT: 2, AnimalClass.SHEEP: 1}

# p sin ruido de una VM en un mapeo dado
Predictor = Callable[[VmSpec, MappingState], float]


@dataclass(frozen=True)
class Slot:
    """
    Hueco candidato para una VM.

    Attributes:
        cores (tuple[int, ...]): Núcleo elegido para cada vCPU.
        servers (int): Servidores abarcados.
        nodes (int): Nodos NUMA abarcados.
        violations (int): VMs incompatibles con las que comparte LLC.
        harm (int): Suma de rangos de daño de cada pareja con sus vecinas de LLC.
        mean_distance (float): Distancia media vCPU → memoria estimada.
        shared (int): VMs con las que comparte algún grupo LLC.
    """

    cores: tuple[int, ...]
    servers: int
    nodes: int
    violations: int
    mean_distance: float
    shared: int = 0
    harm: int = 0

    @property
    def key(self) -> tuple[int, int, int, float, int, int]:
        return (self.servers, self.nodes, self.violations, self.mean_distance, self.harm, self.shared)


@dataclass(frozen=True)
class ReshuffleResult:
    moves: list[tuple[str, tuple[int, ...], tuple[int, ...]]]
    mapping: MappingState
    flagged: bool
    moved_vcpus: int = 0


# ---------- Utilidades ----------


def allowed_servers(vm: VmSpec, t: Topology) -> list[int]:
    servers = [s.id for s in t.servers]
    if vm.affinity is None:
        return servers
    return [s for s in servers if s in vm.affinity]


def llc_residents(m: MappingState, t: Topology, exclude: str | None = None) -> dict[int, set[str]]:
    """VMs presentes en cada grupo LLC."""
    out: dict[int, set[str]] = {}
    for vm_id, cores in m.vcpu_assign.items():
        if vm_id == exclude:
            continue
        for group in set(t.core_llc[cores].tolist()):
            out.setdefault(group, set()).add(vm_id)
    return out


def ideal_span(vm: VmSpec, t: Topology) -> tuple[int, int]:
    """
    Servidores y nodos NUMA mínimos que necesitaría la VM con todo libre.

    Args:
        vm (VmSpec): VM a colocar.
        t (Topology): Topología.

    Returns:
        tuple[int, int]: (servidores, nodos) mínimos.
    """
    servers = allowed_servers(vm, t)
    allowed = set(servers)
    server_cores = sorted(
        (sum(len(n.cores) for sk in t.servers[s].sockets for n in sk.numa_nodes) for s in servers),
        reverse=True,
    )
    node_cores = sorted(
        (len(n.cores) for n in t.numa_nodes if int(t.numa_server[n.id]) in allowed),
        reverse=True,
    )
    return _min_cover(server_cores, vm.vcpus), _min_cover(node_cores, vm.vcpus)


def _min_cover(sizes: list[int], need: int) -> int:
    total = 0
    for count, size in enumerate(sizes, start=1):
        total += size
        if total >= need:
            return count
    return len(sizes) + 1


def _mean_distance(
    t: Topology, node_counts: dict[int, int], memory: dict[int, int] | None = None
) -> float:
    nodes = list(node_counts)
    weights = np.array([node_counts[n] for n in nodes], dtype=np.float64)
    weights /= weights.sum()
    if memory is None:
        # Memoria supuesta en proporción a las vCPUs de cada nodo
        mem_nodes, mem_weights = nodes, weights
    else:
        mem_nodes = list(memory)
        mem_weights = np.array([memory[n] for n in mem_nodes], dtype=np.float64)
        mem_weights /= mem_weights.sum()
    sub = t.distance[np.ix_(nodes, mem_nodes)]
    return float(weights @ sub @ mem_weights)


def _neighbors(
    vm: VmSpec, cores: tuple[int, ...], m: MappingState, t: Topology, cm: ClassMatrix,
    residents: dict[int, set[str]],
) -> tuple[int, int, int]:
    """(VMs incompatibles, VMs en total, daño) que comparten LLC con `cores`."""
    sharing: set[str] = set()
    for group in set(t.core_llc[list(cores)].tolist()):
        sharing.update(residents.get(group, ()))
    offenders = [o for o in sharing if not cm.allows(vm.animal_class, m.specs[o].animal_class)]
    harm = sum(DAMAGE[vm.animal_class] + DAMAGE[m.specs[o].animal_class] for o in sharing)
    return len(offenders), len(sharing), harm


# ---------- Búsqueda de hueco ----------


def find_slot(
    vm: VmSpec,
    m: MappingState,
    t: Topology,
    cm: ClassMatrix,
    eligible: set[int] | None = None,
    memory: dict[int, int] | None = None,
) -> Slot | None:
    """
    Busca el hueco lexicográficamente mínimo entre los núcleos libres.

    Se prueban conjuntos de k servidores con k creciente; dentro del primer k
    factible se enumeran los subconjuntos de nodos de tamaño mínimo. El
    desempate final es el id de nodo más bajo.

    Args:
        vm (VmSpec): VM a colocar.
        m (MappingState): Mapeo actual (no se modifica).
        t (Topology): Topología.
        cm (ClassMatrix): Matriz de clases.
        eligible (set[int] | None): Nodos NUMA permitidos (None = todos).
        memory (dict[int, int] | None): Memoria ya colocada de la VM; si se
            da, la distancia se mide de cada vCPU a esa memoria.

    Returns:
        Slot | None: Mejor hueco, o None si no caben las vCPUs.
    """
    load = m.core_load(t.num_cores)
    free_by_node: dict[int, list[int]] = {}
    for core in np.flatnonzero(load == 0).tolist():
        node = int(t.core_numa[core])
        if eligible is None or node in eligible:
            free_by_node.setdefault(node, []).append(core)

    servers = allowed_servers(vm, t)
    nodes_by_server: dict[int, list[int]] = {s: [] for s in servers}
    for node, cores in free_by_node.items():
        server = int(t.numa_server[node])
        if server in nodes_by_server:
            nodes_by_server[server].append(node)

    residents = llc_residents(m, t, exclude=vm.id)
    need = vm.vcpus

    for k in range(1, len(servers) + 1):
        candidates: list[tuple[int, list[int]]] = []
        for combo in combinations(servers, k):
            nodes = sorted(
                (n for s in combo for n in nodes_by_server[s]),
                key=lambda n: (-len(free_by_node[n]), n),
            )
            sizes = [len(free_by_node[n]) for n in nodes]
            if sum(sizes) < need:
                continue
            candidates.append((_min_cover(sizes, need), nodes))
        if not candidates:
            continue

        n_min = min(c[0] for c in candidates)
        best: Slot | None = None
        best_key: tuple | None = None
        for n_cover, nodes in candidates:
            if n_cover != n_min:
                continue
            if comb(len(nodes), n_min) > _MAX_SUBSETS:
                subsets = [tuple(nodes[:n_min])]
            else:
                subsets = combinations(nodes, n_min)
            for subset in subsets:
                if sum(len(free_by_node[n]) for n in subset) < need:
                    continue
                slot = _build_slot(vm, subset, free_by_node, m, t, cm, residents, memory)
                key = (*slot.key, tuple(sorted(subset)))
                if best_key is None or key < best_key:
                    best, best_key = slot, key
        return best
    return None


def _build_slot(
    vm: VmSpec,
    subset: tuple[int, ...],
    free_by_node: dict[int, list[int]],
    m: MappingState,
    t: Topology,
    cm: ClassMatrix,
    residents: dict[int, set[str]],
    memory: dict[int, int] | None = None,
) -> Slot:
    remaining = vm.vcpus
    cores: list[int] = []
    counts: dict[int, int] = {}
    for node in sorted(subset, key=lambda n: (-len(free_by_node[n]), n)):
        take = min(remaining, len(free_by_node[node]))
        cores.extend(free_by_node[node][:take])
        counts[node] = take
        remaining -= take
        if remaining == 0:
            break
    chosen = tuple(cores)
    violations, shared, harm = _neighbors(vm, chosen, m, t, cm, residents)
    return Slot(
        cores=chosen,
        servers=len({int(t.numa_server[n]) for n in counts}),
        nodes=len(counts),
        violations=violations,
        mean_distance=round(_mean_distance(t, counts, memory), 9),
        shared=shared,
        harm=harm,
    )


def is_good_slot(vm: VmSpec, slot: Slot, t: Topology) -> bool:
    """Un hueco es bueno si no viola la matriz de clases y no rebana más de lo ideal."""
    servers, nodes = ideal_span(vm, t)
    return slot.violations == 0 and slot.servers <= servers and slot.nodes <= nodes


# ---------- Memoria ----------


def allocate_memory(
    vm: VmSpec, cores: tuple[int, ...] | list[int], m: MappingState, t: Topology
) -> tuple[dict[int, int], dict[int, int], dict[int, int]]:
    """
    Reparte la memoria de la VM: primero local a sus vCPUs, el resto en los
    nodos más cercanos.

    Si la VM tiene más memoria por vCPU que la proporción por núcleo de un
    nodo, la memoria que corresponde a los núcleos que quedan libres en ese
    nodo se reserva para VMs pequeñas.

    Args:
        vm (VmSpec): VM (sin memoria asignada todavía en `m`).
        cores: Núcleo de cada vCPU.
        m (MappingState): Mapeo actual (no se modifica).
        t (Topology): Topología.

    Returns:
        tuple: (asignación por nodo, reserva por nodo, reservas ajenas
        consumidas por nodo).

    Raises:
        CapacityError: Si no hay memoria suficiente en el sistema.
    """
    counts = np.bincount(t.core_numa[list(cores)], minlength=t.num_numa_nodes)
    vcpu_nodes = [int(n) for n in np.flatnonzero(counts)]
    free = free_memory(t, m)
    others_reserved = m.reserved_memory(t.num_numa_nodes)

    load = m.core_load(t.num_cores)
    idle = np.bincount(t.core_numa[load == 0], minlength=t.num_numa_nodes)

    taken = np.zeros(t.num_numa_nodes, dtype=np.int64)
    caps: dict[int, int] = {}
    keep: dict[int, int] = {}
    for node in vcpu_nodes:
        spec = t.node(node)
        per_core = spec.memory_capacity // len(spec.cores)
        heavy = vm.memory / vm.vcpus > per_core
        keep[node] = int(max(idle[node] - counts[node], 0) * per_core) if heavy else 0
        avail = int(free[node] + others_reserved[node])
        caps[node] = max(avail - keep[node], 0)

    shares = {n: vm.memory * int(counts[n]) // vm.vcpus for n in vcpu_nodes}
    shares[vcpu_nodes[0]] += vm.memory - sum(shares.values())
    for node in vcpu_nodes:
        taken[node] = min(shares[node], caps[node])

    remaining = vm.memory - int(taken.sum())
    if remaining > 0:
        weighted = counts.astype(np.float64) @ t.distance
        for node in sorted(range(t.num_numa_nodes), key=lambda n: (weighted[n], n)):
            if remaining == 0:
                break
            if node in caps:
                room = caps[node] - int(taken[node])
            else:
                room = int(free[node]) - int(taken[node])
            grab = max(min(room, remaining), 0)
            taken[node] += grab
            remaining -= grab
    if remaining > 0:
        # Último recurso: la memoria que se iba a reservar en los nodos propios
        for node in vcpu_nodes:
            room = int(free[node] + others_reserved[node]) - int(taken[node])
            grab = max(min(room, remaining), 0)
            taken[node] += grab
            remaining -= grab
    if remaining > 0:
        raise CapacityError(f"insufficient memory for {vm.id}: {remaining} bytes short")

    alloc = {int(n): int(taken[n]) for n in np.flatnonzero(taken)}
    consumed = {
        n: int(taken[n] - max(free[n], 0))
        for n in vcpu_nodes
        if taken[n] > max(free[n], 0)
    }
    reservation: dict[int, int] = {}
    for node, amount in keep.items():
        left = int(free[node]) - int(taken[node])
        if amount > 0 and left > 0:
            reservation[node] = min(amount, left)
    return alloc, reservation, consumed


def commit(vm: VmSpec, cores: tuple[int, ...] | list[int], m: MappingState, t: Topology) -> None:
    """
    Registra la VM en `m` (in situ): vCPUs, memoria y reservas.

    Args:
        vm (VmSpec): VM a registrar (no debe estar mapeada).
        cores: Núcleo de cada vCPU.
        m (MappingState): Mapeo que se modifica.
        t (Topology): Topología.
    """
    if len(cores) != vm.vcpus:
        raise MappingError(f"{vm.id}: {len(cores)} cores for {vm.vcpus} vcpus")
    alloc, reservation, consumed = allocate_memory(vm, cores, m, t)
    for node, amount in consumed.items():
        for owner in sorted(m.reservations):
            held = m.reservations[owner].get(node, 0)
            if held == 0:
                continue
            used = min(held, amount)
            m.reservations[owner][node] = held - used
            amount -= used
            if amount == 0:
                break
    m.vcpu_assign[vm.id] = list(cores)
    m.mem_alloc[vm.id] = alloc
    if reservation:
        m.reservations[vm.id] = reservation
    m.specs[vm.id] = vm


# ---------- Operaciones públicas ----------


def place_arrival(vm: VmSpec, m: MappingState, t: Topology, cm: ClassMatrix) -> MappingState:
    """
    Coloca una VM recién llegada en el mejor hueco libre.

    Args:
        vm (VmSpec): VM que llega.
        m (MappingState): Mapeo actual (no se modifica).
        t (Topology): Topología.
        cm (ClassMatrix): Matriz de clases.

    Returns:
        MappingState: Nuevo mapeo con la VM colocada.

    Raises:
        CapacityError: Si no hay núcleos libres suficientes.
    """
    slot = find_slot(vm, m, t, cm)
    if slot is None:
        raise CapacityError(f"insufficient free cores for {vm.id} ({vm.vcpus} vcpus)")
    out = m.copy()
    commit(vm, slot.cores, out, t)
    logger.debug(
        "Placed %s on %d server(s), %d node(s), %d violation(s)",
        vm.id, slot.servers, slot.nodes, slot.violations,
    )
    return out


def violation_damage(m: MappingState, t: Topology, cm: ClassMatrix) -> int:
    """Suma, sobre las parejas incompatibles que comparten LLC, de sus rangos de daño."""
    pairs: set[tuple[str, str]] = set()
    for group in llc_residents(m, t).values():
        for a, b in combinations(sorted(group), 2):
            if not cm.allows(m.specs[a].animal_class, m.specs[b].animal_class):
                pairs.add((a, b))
    return sum(DAMAGE[m.specs[a].animal_class] + DAMAGE[m.specs[b].animal_class] for a, b in pairs)


def _node_span(cores: list[int], t: Topology) -> int:
    return len(set(t.core_numa[cores].tolist()))


def _predicted_total(m: MappingState, predictor: Predictor | None) -> float:
    if predictor is None:
        return 0.0
    return round(sum(predictor(m.specs[v], m) for v in m.vm_ids()), 9)


def reshuffle_for_arrival(
    vm: VmSpec,
    m: MappingState,
    t: Topology,
    cm: ClassMatrix,
    max_moves: int,
    predictor: Predictor | None = None,
) -> ReshuffleResult:
    """
    Reubica VMs en marcha para abrir un hueco bueno a la VM que llega.

    Se buscan, entre todos los conjuntos de hasta `max_moves` VMs, los que
    mueven menos vCPUs; cada VM movida se recoloca (vCPUs y memoria) sin
    violaciones y sin abarcar más nodos que antes. Si no hay solución, la VM
    se coloca en el mejor hueco disponible y el resultado queda marcado; si
    mover VMs (aunque queden rebanadas) reduce el daño de las violaciones,
    o lo deja igual y sube el p total previsto, se aplica ese movimiento.

    Args:
        vm (VmSpec): VM que llega.
        m (MappingState): Mapeo actual (no se modifica).
        t (Topology): Topología.
        cm (ClassMatrix): Matriz de clases.
        max_moves (int): Máximo de VMs a mover.
        predictor (Predictor | None): p sin ruido de una VM en un mapeo; sin
            él, los empates de daño se quedan con la colocación directa.

    Returns:
        ReshuffleResult: Movimientos, nuevo mapeo y marca de mejor esfuerzo.

    Raises:
        CapacityError: Si no hay núcleos libres suficientes.
    """
    slot = find_slot(vm, m, t, cm)
    if slot is None:
        raise CapacityError(f"insufficient free cores for {vm.id} ({vm.vcpus} vcpus)")
    if is_good_slot(vm, slot, t):
        return ReshuffleResult(moves=[], mapping=place_arrival(vm, m, t, cm), flagged=False)

    live = sorted(m.vm_ids(), key=lambda v: (len(m.vcpu_assign[v]), v))
    best: tuple[int, int, tuple[str, ...]] | None = None
    best_result: ReshuffleResult | None = None
    for size in range(1, max_moves + 1):
        for group in combinations(live, size):
            result = _try_reshuffle(vm, group, m, t, cm)
            if result is None:
                continue
            key = (result.moved_vcpus, size, group)
            if best is None or key < best:
                best, best_result = key, result

    if best_result is not None:
        logger.debug("Reshuffled %s for %s (%d vcpus moved)", best[2], vm.id, best[0])
        return best_result

    logger.warning("No reshuffle within %d move(s) for %s; best-effort placement", max_moves, vm.id)
    fallback = ReshuffleResult(moves=[], mapping=place_arrival(vm, m, t, cm), flagged=True)
    best_effort = (
        violation_damage(fallback.mapping, t, cm),
        -_predicted_total(fallback.mapping, predictor),
        0,
        0,
        (),
    )
    for size in range(1, max_moves + 1):
        for group in combinations(live, size):
            result = _try_reshuffle(vm, group, m, t, cm, best_effort=True)
            if result is None:
                continue
            key = (
                violation_damage(result.mapping, t, cm),
                -_predicted_total(result.mapping, predictor),
                result.moved_vcpus,
                size,
                group,
            )
            if key < best_effort:
                best_effort, fallback = key, result
    return fallback


def _try_reshuffle(
    vm: VmSpec,
    group: tuple[str, ...],
    m: MappingState,
    t: Topology,
    cm: ClassMatrix,
    best_effort: bool = False,
) -> ReshuffleResult | None:
    trial = m.copy()
    before = {w: list(m.vcpu_assign[w]) for w in group}
    specs = {w: m.specs[w] for w in group}
    for w in group:
        trial.remove(w)

    slot = find_slot(vm, trial, t, cm)
    if slot is None or (not best_effort and not is_good_slot(vm, slot, t)):
        return None
    try:
        commit(vm, slot.cores, trial, t)
        moves = []
        moved = 0
        for w in sorted(group, key=lambda v: (-specs[v].vcpus, v)):
            w_slot = find_slot(specs[w], trial, t, cm)
            if w_slot is None:
                return None
            if not best_effort and (w_slot.violations > 0 or w_slot.nodes > _node_span(before[w], t)):
                return None
            commit(specs[w], w_slot.cores, trial, t)
            changed = sum(1 for a, b in zip(before[w], w_slot.cores) if a != b)
            if changed == 0:
                return None
            moved += changed
            moves.append((w, tuple(before[w]), tuple(w_slot.cores)))
    except CapacityError:
        return None
    return ReshuffleResult(moves=moves, mapping=trial, flagged=best_effort, moved_vcpus=moved)
