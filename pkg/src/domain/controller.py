"""
Segunda etapa del algoritmo de mapeo: bucle de control en tiempo de ejecución.

Cada intervalo de decisión se detectan las VMs cuyo rendimiento medido cae
por debajo del esperado más allá del umbral T, se ordenan por desviación y,
una a una, se busca una nueva configuración de vCPUs que las separe de su
peor vecino respetando la lista de vecinos compatibles. La matriz de
beneficio aprende de la mejora observada tras cada movimiento.
"""

from __future__ import annotations

from typing import Iterable, Mapping

from .entities import (
    Action,
    ActionReason,
    AffectedList,
    AlgoConfig,
    AnimalClass,
    BenefitMatrix,
    ClassMatrix,
    MapperState,
    MappingState,
    PendingUpdate,
    Remap,
    SeparationLevel,
    Topology,
    VmSpec,
)
from .errors import MappingError
from .logs import get_logger
from .placement import DAMAGE, Predictor, allowed_servers, find_slot, llc_residents

logger = get_logger(__name__)

_LEVELS = (SeparationLevel.SOCKET, SeparationLevel.NUMA_NODE, SeparationLevel.SERVER_NODE)


def detect_affected(
    vms: Iterable[VmSpec], samples: Mapping[str, float], cfg: AlgoConfig
) -> AffectedList:
    """
    VMs cuya desviación relativa (p̄ − p) / p̄ alcanza el umbral.

    Args:
        vms (Iterable[VmSpec]): VMs vivas (aportan p̄ = expected_perf).
        samples (Mapping[str, float]): Rendimiento medido por VM.
        cfg (AlgoConfig): Configuración (umbral T).

    Returns:
        AffectedList: Entradas ordenadas por desviación descendente (empate
        por id); las VMs sin muestra aparecen en `skipped`.
    """
    entries: list[tuple[str, float]] = []
    skipped: list[str] = []
    for vm in vms:
        if vm.id not in samples:
            skipped.append(vm.id)
            continue
        deviation = (vm.expected_perf - samples[vm.id]) / vm.expected_perf
        if deviation >= cfg.threshold:
            entries.append((vm.id, deviation))
    if skipped:
        logger.warning("No sample for %s; skipped by deviation check", ", ".join(sorted(skipped)))
    entries.sort(key=lambda e: (-e[1], e[0]))
    return AffectedList(entries=entries, skipped=sorted(skipped))


def build_neighbor_list(vm: VmSpec, live: Iterable[VmSpec], cm: ClassMatrix) -> set[str]:
    """
    VMs con las que `vm` puede compartir LLC.

    Una VM es vecina potencial si su clase es compatible con la de `vm` y su
    política de afinidad no excluye todos los servidores candidatos de `vm`.

    Args:
        vm (VmSpec): VM de referencia.
        live (Iterable[VmSpec]): VMs vivas.
        cm (ClassMatrix): Matriz de clases.

    Returns:
        set[str]: Ids de las vecinas potenciales (sin incluir a `vm`).
    """
    out: set[str] = set()
    for other in live:
        if other.id == vm.id:
            continue
        if not cm.allows(vm.animal_class, other.animal_class):
            continue
        if (
            vm.affinity is not None
            and other.affinity is not None
            and not vm.affinity & other.affinity
        ):
            continue
        out.add(other.id)
    return out


def worst_interferer(vm: VmSpec, m: MappingState, t: Topology) -> str | None:
    """Vecina de LLC de clase más dañina (empate por id), o None si no comparte."""
    residents = llc_residents(m, t, exclude=vm.id)
    sharing: set[str] = set()
    for group in set(t.core_llc[m.vcpu_assign[vm.id]].tolist()):
        sharing.update(residents.get(group, ()))
    if not sharing:
        return None
    return min(sharing, key=lambda v: (-DAMAGE[m.specs[v].animal_class], v))


def _eligible_nodes(
    level: SeparationLevel, interferer_cores: list[int], t: Topology
) -> set[int]:
    nodes = set(t.core_numa[interferer_cores].tolist())
    if level is SeparationLevel.NUMA_NODE:
        return {n.id for n in t.numa_nodes if n.id not in nodes}
    if level is SeparationLevel.SOCKET:
        sockets = {int(t.numa_socket[n]) for n in nodes}
        return {n.id for n in t.numa_nodes if int(t.numa_socket[n.id]) not in sockets}
    servers = {int(t.numa_server[n]) for n in nodes}
    return {n.id for n in t.numa_nodes if int(t.numa_server[n.id]) not in servers}


def _keep_positions(old: list[int], new: tuple[int, ...]) -> list[int]:
    """Reordena `new` para que las vCPUs que ya estaban en un núcleo destino no se muevan."""
    targets = set(new)
    kept = [c if c in targets else None for c in old]
    stay = {c for c in kept if c is not None}
    spare = iter(c for c in new if c not in stay)
    return [c if c is not None else next(spare) for c in kept]


def compute_remap(
    affected: AffectedList,
    m: MappingState,
    t: Topology,
    cm: ClassMatrix,
    bm: BenefitMatrix,
    live: Iterable[VmSpec],
    cfg: AlgoConfig | None = None,
    predictor: Predictor | None = None,
) -> list[Remap]:
    """
    Nuevas configuraciones de vCPUs para las VMs afectadas.

    Se procesan en el orden de la lista; cada movimiento aceptado se aplica
    sobre una copia antes de estudiar la siguiente VM. Para cada nivel de
    separación respecto al peor interferente se busca el mejor hueco libre
    (cerca de la memoria de la VM) y se puntúa con
    beneficio[clase][nivel] − λ × vCPUs movidas. Sólo se acepta un destino
    cuyas vecinas de LLC estén en la lista de vecinos y cuya puntuación
    supere la de quedarse quieta (0). Con `predictor`, además, el p previsto
    en destino debe mejorar el actual.

    Args:
        affected (AffectedList): VMs afectadas, ya ordenadas.
        m (MappingState): Mapeo actual (no se modifica).
        t (Topology): Topología.
        cm (ClassMatrix): Matriz de clases.
        bm (BenefitMatrix): Matriz de beneficio.
        live (Iterable[VmSpec]): VMs vivas.
        cfg (AlgoConfig | None): Configuración (λ); por defecto la estándar.
        predictor (Predictor | None): p sin ruido de una VM en un mapeo.

    Returns:
        list[Remap]: Sólo las VMs cuya configuración cambia.
    """
    cfg = cfg or AlgoConfig()
    live = list(live)
    work = m.copy()
    remaps: list[Remap] = []

    for vm_id, deviation in affected.entries:
        if not work.is_mapped(vm_id):
            raise MappingError(f"affected VM {vm_id!r} is not mapped")
        vm = work.specs[vm_id]
        interferer = worst_interferer(vm, work, t)
        if interferer is None:
            logger.debug("%s affected (%.3f) without LLC interferer; left in place", vm_id, deviation)
            continue

        neighbors = build_neighbor_list(vm, live, cm)
        current = list(work.vcpu_assign[vm_id])
        p_now = predictor(vm, work) if predictor is not None else None
        allowed = set(allowed_servers(vm, t))

        trial = work.copy()
        del trial.vcpu_assign[vm_id]
        residents = llc_residents(trial, t)

        best: tuple[tuple, Remap] | None = None
        for rank, level in enumerate(_LEVELS):
            eligible = {
                n for n in _eligible_nodes(level, work.vcpu_assign[interferer], t)
                if int(t.numa_server[n]) in allowed
            }
            slot = find_slot(vm, trial, t, cm, eligible=eligible, memory=work.mem_alloc[vm_id])
            if slot is None:
                continue
            sharing: set[str] = set()
            for group in set(t.core_llc[list(slot.cores)].tolist()):
                sharing.update(residents.get(group, ()))
            if not sharing <= neighbors:
                continue
            to_cores = _keep_positions(current, slot.cores)
            moved = sum(1 for a, b in zip(current, to_cores) if a != b)
            if moved == 0:
                continue
            score = bm.get(vm.animal_class, level) - cfg.move_cost * moved
            if score <= 0:
                continue
            p_new = 0.0
            if predictor is not None:
                candidate = work.copy()
                candidate.vcpu_assign[vm_id] = to_cores
                p_new = predictor(vm, candidate)
                if p_new <= p_now + 1e-12:
                    continue
            key = (score, p_new, -rank)
            if best is None or key > best[0]:
                best = (
                    key,
                    Remap(vm_id, tuple(current), tuple(to_cores), level, score),
                )

        if best is None:
            logger.warning("No admissible remap for %s (deviation %.3f)", vm_id, deviation)
            continue
        remap = best[1]
        work = apply_remap(work, remap)
        remaps.append(remap)
        logger.debug(
            "Remap %s at %s level: %d vcpu(s) moved, score %.2f",
            vm_id, remap.level.value, sum(a != b for a, b in zip(remap.from_cores, remap.to_cores)),
            remap.score,
        )
    return remaps


def apply_remap(m: MappingState, remap: Remap) -> MappingState:
    """
    Mueve las vCPUs de una VM a sus núcleos destino; la memoria no se mueve.

    Raises:
        MappingError: Si la VM no está mapeada o algún destino está ocupado.
    """
    if not m.is_mapped(remap.vm_id):
        raise MappingError(f"VM {remap.vm_id!r} is not mapped")
    taken = {c for v, cores in m.vcpu_assign.items() if v != remap.vm_id for c in cores}
    if taken.intersection(remap.to_cores):
        raise MappingError(f"remap of {remap.vm_id!r} targets occupied cores")
    out = m.copy()
    out.vcpu_assign[remap.vm_id] = list(remap.to_cores)
    return out


def update_benefit_matrix(
    bm: BenefitMatrix,
    vm: VmSpec,
    p_before: float,
    p_after: float,
    level: SeparationLevel,
    learning_rate: float = 0.3,
) -> BenefitMatrix:
    """
    Media móvil exponencial de la puntuación hacia 10 × la mejora observada.

    Args:
        bm (BenefitMatrix): Matriz actual.
        vm (VmSpec): VM movida (aporta la clase).
        p_before (float): Rendimiento medido antes del movimiento.
        p_after (float): Rendimiento medido después.
        level (SeparationLevel): Nivel de separación alcanzado.
        learning_rate (float): η.

    Returns:
        BenefitMatrix: Nueva matriz, con la entrada acotada a [1, 10].
    """
    current = bm.get(vm.animal_class, level)
    target = 10.0 * (p_after - p_before) / p_before
    return bm.with_score(vm.animal_class, level, current + learning_rate * (target - current))


def step(
    state: MapperState,
    samples: Mapping[str, float],
    t: Topology,
    cm: ClassMatrix,
    cfg: AlgoConfig,
    predictor: Predictor | None = None,
) -> tuple[MapperState, list[Action], list[str]]:
    """
    Un intervalo de decisión del controlador.

    Primero se incorporan a la matriz de beneficio las mejoras de los
    movimientos de la época anterior; después se detecta, ordena y remapea.

    Args:
        state (MapperState): Estado del controlador (no se modifica).
        samples (Mapping[str, float]): p medido de cada VM viva.
        t (Topology): Topología.
        cm (ClassMatrix): Matriz de clases.
        cfg (AlgoConfig): Configuración del algoritmo.
        predictor (Predictor | None): Ver `compute_remap`.

    Returns:
        tuple[MapperState, list[Action], list[str]]: Nuevo estado, acciones y
        avisos para la traza.
    """
    out = state.copy()
    warnings: list[str] = []

    for vm_id, pending in sorted(state.pending.items()):
        if vm_id in samples and out.mapping.is_mapped(vm_id):
            out.benefit = update_benefit_matrix(
                out.benefit,
                out.mapping.specs[vm_id],
                pending.p_before,
                samples[vm_id],
                pending.level,
                cfg.learning_rate,
            )
    out.pending = {}

    live = [out.mapping.specs[v] for v in out.mapping.vm_ids()]
    affected = detect_affected(live, samples, cfg)
    warnings.extend(f"missing sample for {v}" for v in affected.skipped)
    if not affected:
        return out, [], warnings

    remaps = compute_remap(
        affected, out.mapping, t, cm, out.benefit, live, cfg=cfg, predictor=predictor
    )
    moved = {r.vm_id for r in remaps}
    warnings.extend(
        f"no admissible remap for {v}" for v in affected.vm_ids() if v not in moved
    )

    actions: list[Action] = []
    epoch = out.mapping.epoch
    for remap in remaps:
        out.mapping = apply_remap(out.mapping, remap)
        out.pending[remap.vm_id] = PendingUpdate(level=remap.level, p_before=samples[remap.vm_id])
        actions.append(
            Action(
                epoch=epoch,
                vm_id=remap.vm_id,
                reason=ActionReason.REMAP,
                from_cores=remap.from_cores,
                to_cores=remap.to_cores,
                detail=remap.level.value,
            )
        )
    return out, actions, warnings
