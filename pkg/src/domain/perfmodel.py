"""
Modelo sintético de rendimiento y contadores.

El rendimiento relativo de una VM (1.0 = ejecución en solitario con memoria
local) es el producto de tres efectos: contención en la LLC, localidad de la
memoria y sobre-suscripción de núcleos, más un ruido log-normal.
"""

from __future__ import annotations

from itertools import product
from math import comb, prod
from typing import Any, Mapping

import numpy as np

from .entities import (
    AnimalClass,
    ClassMatrix,
    CounterSample,
    MappingState,
    Metric,
    NoiseRegime,
    PerfBreakdown,
    PerfEstimate,
    PerfParams,
    Topology,
    VmSpec,
)
from .errors import CapacityError, MappingError, OracleTooLargeError, PerfParamsError, ValidationError
from .logs import get_logger
from .placement import commit

logger = get_logger(__name__)

EPSILON = 1e-6
ORACLE_LIMIT = 10**6


# ---------- Parámetros ----------


def _pair_key(raw: str) -> tuple[AnimalClass, AnimalClass]:
    for sep in ("->", "→", ":", ","):
        if sep in raw:
            left, right = raw.split(sep, 1)
            return AnimalClass.parse(left), AnimalClass.parse(right)
    raise PerfParamsError(f"contention key must look like 'devil->rabbit', got {raw!r}")


def _locality_key(raw: str) -> tuple[AnimalClass, bool]:
    name, _, flag = raw.partition("_")
    if flag not in ("sensitive", "insensitive"):
        raise PerfParamsError(
            f"locality_weight key must look like 'rabbit_sensitive', got {raw!r}"
        )
    return AnimalClass.parse(name), flag == "sensitive"


def _per_class(section: Any, what: str) -> dict[AnimalClass, float]:
    if not isinstance(section, Mapping):
        raise PerfParamsError(f"'{what}' must be a mapping of class -> value")
    return {AnimalClass.parse(k): float(v) for k, v in section.items()}


def parse_perf_params(document: Any) -> PerfParams:
    """
    Valida un documento de parámetros de rendimiento.

    Las secciones ausentes toman los valores por defecto; las presentes deben
    estar completas (9 pares de contención, 6 pesos de localidad, 3 bases).

    Args:
        document (Any): Documento ya parseado (None = valores por defecto).

    Returns:
        PerfParams: Parámetros validados.

    Raises:
        PerfParamsError: Claves incompletas o valores fuera de rango.
    """
    defaults = PerfParams.default()
    if document is None:
        return defaults
    if not isinstance(document, Mapping):
        raise PerfParamsError("perf params document must be a mapping")

    try:
        contention = dict(defaults.contention)
        if "contention" in document:
            contention = {_pair_key(k): float(v) for k, v in document["contention"].items()}
        locality = dict(defaults.locality_weight)
        if "locality_weight" in document:
            locality = {_locality_key(k): float(v) for k, v in document["locality_weight"].items()}
        ipc_base = dict(defaults.ipc_base)
        if "ipc_base" in document:
            ipc_base = _per_class(document["ipc_base"], "ipc_base")
        mpi_base = dict(defaults.mpi_base)
        if "mpi_base" in document:
            mpi_base = _per_class(document["mpi_base"], "mpi_base")
        floor = dict(defaults.contention_floor)
        if "contention_floor" in document:
            floor.update(_per_class(document["contention_floor"], "contention_floor"))
        regimes = dict(defaults.regimes)
        for name, raw in (document.get("noise") or {}).items():
            if name not in regimes:
                raise PerfParamsError(f"unknown noise regime {name!r} (stable or churn)")
            regimes[name] = NoiseRegime(
                epoch_sigma=float(raw.get("epoch_sigma", regimes[name].epoch_sigma)),
                run_sigma=float(raw.get("run_sigma", regimes[name].run_sigma)),
            )
        params = PerfParams(
            contention=contention,
            locality_weight=locality,
            ipc_base=ipc_base,
            mpi_base=mpi_base,
            noise_sigma=float(document.get("noise_sigma", defaults.noise_sigma)),
            contention_floor=floor,
            locality_exponent=float(document.get("locality_exponent", defaults.locality_exponent)),
            miss_weight=float(document.get("miss_weight", defaults.miss_weight)),
            regimes=regimes,
        )
    except PerfParamsError:
        raise
    except (AttributeError, TypeError, ValueError, ValidationError) as exc:
        raise PerfParamsError(f"malformed perf params: {exc}") from exc

    validate_perf_params(params)
    return params


def validate_perf_params(params: PerfParams) -> None:
    classes = list(AnimalClass)
    missing = [p for p in product(classes, classes) if p not in params.contention]
    if missing:
        raise PerfParamsError(f"missing contention pairs: {missing}")
    if any(not 0.0 < v <= 1.0 for v in params.contention.values()):
        raise PerfParamsError("contention penalties must be in (0, 1]")
    if any(k not in params.locality_weight for k in product(classes, (True, False))):
        raise PerfParamsError("locality_weight needs all 6 class x sensitivity keys")
    if any(not 0.0 <= v < 1.0 for v in params.locality_weight.values()):
        raise PerfParamsError("locality_weight must be in [0, 1)")
    for name, table in (("ipc_base", params.ipc_base), ("mpi_base", params.mpi_base)):
        if set(table) != set(classes):
            raise PerfParamsError(f"{name} needs one value per class")
    if any(v <= 0 for v in params.ipc_base.values()):
        raise PerfParamsError("ipc_base must be > 0")
    if any(v < 0 for v in params.mpi_base.values()):
        raise PerfParamsError("mpi_base must be >= 0")
    if any(not 0.0 <= v <= 1.0 for v in params.contention_floor.values()):
        raise PerfParamsError("contention_floor must be in [0, 1]")
    if params.noise_sigma < 0 or params.locality_exponent <= 0 or params.miss_weight < 0:
        raise PerfParamsError("noise_sigma >= 0, locality_exponent > 0 and miss_weight >= 0")
    for regime in params.regimes.values():
        if regime.epoch_sigma < 0 or regime.run_sigma < 0:
            raise PerfParamsError("noise sigmas must be >= 0")


def serialize_perf_params(params: PerfParams) -> dict[str, Any]:
    """Documento equivalente a `params`, legible por `parse_perf_params`."""
    return {
        "contention": {
            f"{a.value}->{b.value}": v for (a, b), v in params.contention.items()
        },
        "locality_weight": {
            f"{c.value}_{'sensitive' if s else 'insensitive'}": v
            for (c, s), v in params.locality_weight.items()
        },
        "ipc_base": {c.value: v for c, v in params.ipc_base.items()},
        "mpi_base": {c.value: v for c, v in params.mpi_base.items()},
        "noise_sigma": params.noise_sigma,
        "contention_floor": {c.value: v for c, v in params.contention_floor.items()},
        "locality_exponent": params.locality_exponent,
        "miss_weight": params.miss_weight,
        "noise": {
            name: {"epoch_sigma": r.epoch_sigma, "run_sigma": r.run_sigma}
            for name, r in params.regimes.items()
        },
    }


# ---------- Factores ----------


def _cores_of(vm: VmSpec, m: MappingState) -> list[int]:
    try:
        return m.vcpu_assign[vm.id]
    except KeyError as exc:
        raise MappingError(f"VM {vm.id!r} is not mapped") from exc


def llc_neighbors(vm: VmSpec, m: MappingState, t: Topology) -> list[str]:
    """VMs distintas de `vm` que comparten algún grupo LLC con ella (orden por id)."""
    groups = set(t.core_llc[_cores_of(vm, m)].tolist())
    out = []
    for other in m.vm_ids():
        if other == vm.id:
            continue
        if groups.intersection(t.core_llc[m.vcpu_assign[other]].tolist()):
            out.append(other)
    return out


def contention_factor(vm: VmSpec, m: MappingState, t: Topology, params: PerfParams) -> float:
    """
    Producto de las penalizaciones (agresor → víctima) de cada vecina de LLC.

    Args:
        vm (VmSpec): VM víctima (debe estar mapeada).
        m (MappingState): Mapeo actual.
        t (Topology): Topología.
        params (PerfParams): Parámetros del modelo.

    Returns:
        float: Factor en (0, 1]; 1.0 si no comparte LLC.

    Raises:
        MappingError: Si la VM no está mapeada.
    """
    factor = prod(
        params.contention[(m.specs[other].animal_class, vm.animal_class)]
        for other in llc_neighbors(vm, m, t)
    )
    return max(float(factor), params.contention_floor.get(vm.animal_class, 0.0))


def mean_memory_distance(vm: VmSpec, m: MappingState, t: Topology) -> float:
    """Distancia media de cada vCPU a cada página, ponderada por la memoria."""
    cores = _cores_of(vm, m)
    alloc = m.mem_alloc.get(vm.id) or {}
    if not alloc:
        raise MappingError(f"VM {vm.id!r} has no memory placement")
    nodes = np.fromiter(alloc.keys(), dtype=np.int64)
    weights = np.fromiter(alloc.values(), dtype=np.float64)
    weights /= weights.sum()
    cpu_nodes = t.core_numa[cores]
    return float((t.distance[np.ix_(cpu_nodes, nodes)] @ weights).mean())


def locality_factor(vm: VmSpec, m: MappingState, t: Topology, params: PerfParams) -> float:
    """
    1 − peso × D_norm^exponente, con D_norm la distancia media normalizada
    entre la distancia local y la máxima de la topología.

    Args:
        vm (VmSpec): VM mapeada con memoria asignada.
        m (MappingState): Mapeo actual.
        t (Topology): Topología.
        params (PerfParams): Parámetros del modelo.

    Returns:
        float: Factor en (0, 1].
    """
    avg_d = mean_memory_distance(vm, m, t)
    d_local, d_max = t.local_distance, t.max_distance
    if d_max <= d_local:
        return 1.0
    d_norm = min(max((avg_d - d_local) / (d_max - d_local), 0.0), 1.0)
    weight = params.locality_weight[(vm.animal_class, vm.sensitive)]
    return 1.0 - weight * d_norm**params.locality_exponent


def overbooking_factor(vm: VmSpec, m: MappingState) -> float:
    """Media, sobre las vCPUs de la VM, de 1 / (vCPUs que comparten su núcleo)."""
    cores = _cores_of(vm, m)
    load = m.core_load(max(max(c) for c in m.vcpu_assign.values()) + 1)
    return float(np.mean(1.0 / load[cores]))


def estimate_perf(
    vm: VmSpec,
    m: MappingState,
    t: Topology,
    params: PerfParams,
    rng: np.random.Generator | None = None,
    sigma: float | None = None,
    log_offset: float = 0.0,
) -> PerfEstimate:
    """
    Compone los tres factores y el ruido multiplicativo log-normal.

    Args:
        vm (VmSpec): VM mapeada.
        m (MappingState): Mapeo actual.
        t (Topology): Topología.
        params (PerfParams): Parámetros del modelo.
        rng (np.random.Generator | None): Generador de la ejecución; sin él
            no hay ruido por época.
        sigma (float | None): Desviación del ruido por época
            (por defecto `params.noise_sigma`).
        log_offset (float): Término aditivo en escala logarítmica, persistente
            durante una ejecución.

    Returns:
        PerfEstimate: p y desglose.
    """
    sigma = params.noise_sigma if sigma is None else sigma
    log_noise = log_offset
    if rng is not None and sigma > 0:
        log_noise += float(rng.normal(0.0, sigma))
    breakdown = PerfBreakdown(
        contention=contention_factor(vm, m, t, params),
        locality=locality_factor(vm, m, t, params),
        overbooking=overbooking_factor(vm, m),
        noise=float(np.exp(log_noise)),
    )
    p = breakdown.contention * breakdown.locality * breakdown.overbooking * breakdown.noise
    return PerfEstimate(vm_id=vm.id, p=p, breakdown=breakdown)


def predict_perf(vm: VmSpec, m: MappingState, t: Topology, params: PerfParams) -> float:
    """p sin ruido de `vm` en el mapeo `m`."""
    return estimate_perf(vm, m, t, params, rng=None, sigma=0.0).p


# ---------- Contadores ----------


def sample_counters(est: PerfEstimate, vm: VmSpec, params: PerfParams) -> CounterSample:
    """
    Deriva IPC y MPI de un rendimiento estimado.

    La IPC es proporcional a p; la MPI es inversamente proporcional a p y
    crece con la pérdida por contención.

    Args:
        est (PerfEstimate): Estimación de la época.
        vm (VmSpec): VM estimada.
        params (PerfParams): Parámetros del modelo.

    Returns:
        CounterSample: Muestra de contadores.
    """
    extra = params.miss_weight * (1.0 - est.breakdown.contention)
    ipc = params.ipc_base[vm.animal_class] * est.p
    mpi = params.mpi_base[vm.animal_class] / max(est.p, EPSILON) * (1.0 + extra)
    return CounterSample(vm_id=vm.id, ipc=ipc, mpi=mpi)


def measured_performance(
    sample: CounterSample, vm: VmSpec, params: PerfParams, metric: Metric
) -> float:
    """
    Rendimiento relativo observado a partir de la métrica configurada.

    Ambas métricas se normalizan con la base en solitario de la clase, de
    modo que una VM sola con memoria local mide 1.0.
    """
    if metric is Metric.IPC:
        return sample.ipc / params.ipc_base[vm.animal_class]
    base = params.mpi_base[vm.animal_class]
    if base == 0:
        return sample.ipc / params.ipc_base[vm.animal_class]
    return base / max(sample.mpi, EPSILON)


# ---------- Oráculo ----------


def _compositions(total: int, caps: list[int]) -> list[tuple[int, ...]]:
    """Repartos de `total` vCPUs entre nodos con capacidad `caps`."""
    if not caps:
        return [()] if total == 0 else []
    out = []
    for first in range(min(total, caps[0]), -1, -1):
        for rest in _compositions(total - first, caps[1:]):
            out.append((first, *rest))
    return out


def oracle_best_mapping(
    vms: list[VmSpec], t: Topology, params: PerfParams
) -> tuple[MappingState, float]:
    """
    Enumera todos los mapeos sin sobre-suscripción y devuelve el de mayor Σ p.

    Los núcleos de un mismo nodo NUMA se consideran intercambiables, así que
    sólo se enumera cuántas vCPUs de cada VM van a cada nodo. La memoria se
    reparte igual que en la colocación (local primero). Sin ruido.

    Args:
        vms (list[VmSpec]): VMs a colocar.
        t (Topology): Topología pequeña.
        params (PerfParams): Parámetros del modelo.

    Returns:
        tuple[MappingState, float]: Mejor mapeo y su rendimiento total.

    Raises:
        OracleTooLargeError: Si el número de candidatos supera el límite.
        CapacityError: Si ningún mapeo admite todas las VMs.
    """
    if not vms:
        return MappingState(), 0.0

    n = t.num_numa_nodes
    bound = prod(comb(vm.vcpus + n - 1, n - 1) for vm in vms)
    if bound > ORACLE_LIMIT:
        raise OracleTooLargeError(f"~{bound} candidate mappings exceed the {ORACLE_LIMIT} limit")

    node_cores = [list(t.node(i).cores) for i in range(n)]
    best: MappingState | None = None
    best_total = -1.0

    def search(idx: int, used: list[int], plan: list[tuple[int, ...]]) -> None:
        nonlocal best, best_total
        if idx == len(vms):
            m = _materialize(vms, plan, node_cores, t)
            if m is None:
                return
            total = sum(predict_perf(vm, m, t, params) for vm in vms)
            if total > best_total + 1e-12:
                best, best_total = m, total
            return
        caps = [len(node_cores[i]) - used[i] for i in range(n)]
        for split in _compositions(vms[idx].vcpus, caps):
            search(idx + 1, [u + s for u, s in zip(used, split)], plan + [split])

    search(0, [0] * n, [])
    if best is None:
        raise CapacityError("no mapping of the given VMs fits the topology")
    logger.debug("Oracle best total p = %.6f over %d VM(s)", best_total, len(vms))
    return best, best_total


def _materialize(
    vms: list[VmSpec], plan: list[tuple[int, ...]], cores_by_node: list[list[int]], t: Topology
) -> MappingState | None:
    m = MappingState()
    used = [0] * len(cores_by_node)
    try:
        for vm, split in zip(vms, plan):
            cores: list[int] = []
            for node, count in enumerate(split):
                cores.extend(cores_by_node[node][used[node]:used[node] + count])
                used[node] += count
            commit(vm, cores, m, t)
    except CapacityError:
        return None
    return m


def total_perf(m: MappingState, t: Topology, params: PerfParams) -> float:
    """Σ p sin ruido de todas las VMs del mapeo."""
    return sum(predict_perf(m.specs[v], m, t, params) for v in m.vm_ids())


def class_compliant(m: MappingState, t: Topology, cm: ClassMatrix) -> bool:
    """Ninguna VM comparte LLC con otra de clase incompatible."""
    for vm_id in m.vm_ids():
        vm = m.specs[vm_id]
        for other in llc_neighbors(vm, m, t):
            if not cm.allows(vm.animal_class, m.specs[other].animal_class):
                return False
    return True
