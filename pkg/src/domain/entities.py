"""
Estructuras de datos del motor de mapeo NUMA.

Incluye la topología de hardware (servidores, sockets, nodos NUMA), las
especificaciones de VM y eventos de escenario, los parámetros y resultados del
modelo de rendimiento, el estado de mapeo y las matrices del algoritmo, y los
registros de una ejecución de simulación.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import ValidationError

GIB: int = 1024**3


# ---------- Enumeraciones ----------


class AnimalClass(str, Enum):
    """Clase de interferencia de una aplicación respecto a la LLC."""

    SHEEP = "sheep"
    RABBIT = "rabbit"
    DEVIL = "devil"

    @classmethod
    def parse(cls, raw: str) -> AnimalClass:
        """
        Convierte un nombre (sin distinguir mayúsculas) en la clase.

        Args:
            raw (str): Nombre de la clase, p. ej. "Rabbit".

        Returns:
            AnimalClass: Clase correspondiente.

        Raises:
            ValidationError: Si el nombre no pertenece a la enumeración.
        """
        try:
            return cls(str(raw).strip().lower())
        except ValueError as exc:
            raise ValidationError(f"unknown animal class: {raw!r}") from exc


class LlcScope(str, Enum):
    NUMA_NODE = "numa_node"
    SOCKET = "socket"


class SeparationLevel(str, Enum):
    """Granularidad de aislamiento respecto al peor vecino."""

    SOCKET = "socket"
    NUMA_NODE = "numa_node"
    SERVER_NODE = "server_node"


class Metric(str, Enum):
    IPC = "ipc"
    MPI = "mpi"


class Algorithm(str, Enum):
    VANILLA = "vanilla"
    SM_IPC = "sm_ipc"
    SM_MPI = "sm_mpi"

    @classmethod
    def parse(cls, raw: str) -> Algorithm:
        try:
            return cls(str(raw).strip().lower().replace("-", "_"))
        except ValueError as exc:
            raise ValidationError(f"unknown algorithm: {raw!r}") from exc

    @property
    def metric(self) -> Metric | None:
        return {Algorithm.SM_IPC: Metric.IPC, Algorithm.SM_MPI: Metric.MPI}.get(self)

    @property
    def noise_regime(self) -> str:
        return "churn" if self is Algorithm.VANILLA else "stable"


class EventKind(str, Enum):
    ARRIVE = "arrive"
    DEPART = "depart"


class ActionReason(str, Enum):
    ARRIVAL = "arrival"
    RESHUFFLE = "reshuffle"
    REMAP = "remap"


# ---------- Topología ----------


@dataclass(frozen=True)
class NumaNode:
    """
    Nodo NUMA: núcleos con memoria local de acceso uniforme.

    Attributes:
        id (int): Identificador denso del nodo.
        cores (tuple[int, ...]): Identificadores de los núcleos del nodo.
        memory_capacity (int): Memoria local en bytes.
        memory_reserved (int): Bytes reservados de forma estática.
    """

    id: int
    cores: tuple[int, ...]
    memory_capacity: int
    memory_reserved: int = 0


@dataclass(frozen=True)
class Socket:
    id: int
    numa_nodes: tuple[NumaNode, ...]


@dataclass(frozen=True)
class Server:
    """
    Servidor físico del sistema desagregado.

    Attributes:
        id (int): Identificador denso.
        sockets (tuple[Socket, ...]): Sockets del servidor.
        torus_coord (tuple[int, int] | None): Coordenada en el toro 2-D.
    """

    id: int
    sockets: tuple[Socket, ...]
    torus_coord: tuple[int, int] | None = None


@dataclass(frozen=True)
class TorusDistanceConfig:
    """Distancias NUMA usadas para derivar la matriz a partir del toro."""

    local: int = 10
    neighbor_same_socket: int = 16
    neighbor_cross_socket: int = 22
    one_hop: int = 160
    two_hop: int = 200


@dataclass(frozen=True, eq=False)
class Topology:
    """
    Disposición de recursos de hardware R.

    Inmutable tras la carga; las tablas de búsqueda (núcleo → nodo, nodo →
    socket/servidor, núcleo → grupo LLC) se calculan una única vez.

    Attributes:
        servers (tuple[Server, ...]): Servidores en orden de documento.
        distance (np.ndarray): Matriz de distancias NUMA (enteros).
        llc_scope (LlcScope): Granularidad del grupo que comparte la LLC.
    """

    servers: tuple[Server, ...]
    distance: np.ndarray
    llc_scope: LlcScope = LlcScope.NUMA_NODE

    def __post_init__(self) -> None:
        nodes: list[NumaNode] = []
        socket_server: dict[int, int] = {}
        numa_socket: dict[int, int] = {}
        for server in self.servers:
            for socket in server.sockets:
                socket_server[socket.id] = server.id
                for node in socket.numa_nodes:
                    nodes.append(node)
                    numa_socket[node.id] = socket.id
        nodes.sort(key=lambda n: n.id)

        core_numa = np.zeros(sum(len(n.cores) for n in nodes), dtype=np.int64)
        for node in nodes:
            core_numa[list(node.cores)] = node.id
        numa_socket_arr = np.array([numa_socket[n.id] for n in nodes], dtype=np.int64)
        numa_server_arr = np.array(
            [socket_server[numa_socket[n.id]] for n in nodes], dtype=np.int64
        )

        if self.llc_scope is LlcScope.SOCKET:
            core_llc = numa_socket_arr[core_numa]
        else:
            core_llc = core_numa.copy()
        groups: dict[int, list[int]] = {}
        for core, group in enumerate(core_llc.tolist()):
            groups.setdefault(group, []).append(core)

        self.distance.setflags(write=False)
        object.__setattr__(self, "_nodes", tuple(nodes))
        object.__setattr__(self, "_core_numa", core_numa)
        object.__setattr__(self, "_numa_socket", numa_socket_arr)
        object.__setattr__(self, "_numa_server", numa_server_arr)
        object.__setattr__(self, "_core_llc", core_llc)
        object.__setattr__(
            self,
            "_llc_groups",
            {g: tuple(cores) for g, cores in sorted(groups.items())},
        )

    @property
    def numa_nodes(self) -> tuple[NumaNode, ...]:
        return self._nodes

    @property
    def num_cores(self) -> int:
        return int(self._core_numa.shape[0])

    @property
    def num_numa_nodes(self) -> int:
        return len(self._nodes)

    @property
    def num_sockets(self) -> int:
        return sum(len(s.sockets) for s in self.servers)

    @property
    def core_numa(self) -> np.ndarray:
        return self._core_numa

    @property
    def numa_socket(self) -> np.ndarray:
        return self._numa_socket

    @property
    def numa_server(self) -> np.ndarray:
        return self._numa_server

    @property
    def core_llc(self) -> np.ndarray:
        return self._core_llc

    @property
    def llc_groups(self) -> dict[int, tuple[int, ...]]:
        return self._llc_groups

    @property
    def local_distance(self) -> int:
        return int(self.distance.diagonal().min())

    @property
    def max_distance(self) -> int:
        return int(self.distance.max())

    def node(self, numa_id: int) -> NumaNode:
        return self._nodes[numa_id]

    def layout(self) -> list[list[list[list[int]]]]:
        """Núcleos agrupados servidor → socket → nodo NUMA."""
        return [
            [[list(n.cores) for n in s.numa_nodes] for s in server.sockets]
            for server in self.servers
        ]


@dataclass(frozen=True)
class NodeCapacity:
    free_cores: int
    free_memory: int


# ---------- Carga de trabajo ----------


@dataclass(frozen=True)
class VmTypePreset:
    name: str
    vcpus: int
    memory: int


@dataclass(frozen=True)
class VmSpec:
    """
    Especificación de una VM.

    Attributes:
        id (str): Identificador único en el escenario.
        vcpus (int): Número de vCPUs.
        memory (int): Memoria en bytes.
        animal_class (AnimalClass): Clase de interferencia c_i.
        sensitive (bool): Sensibilidad a memoria remota.
        expected_perf (float): Rendimiento esperado p̄ (1.0 = solo ideal).
        affinity (frozenset[int] | None): Servidores permitidos (a_i).
        vm_type (str): Nombre del preset o "custom".
    """

    id: str
    vcpus: int
    memory: int
    animal_class: AnimalClass
    sensitive: bool = False
    expected_perf: float = 1.0
    affinity: frozenset[int] | None = None
    vm_type: str = "custom"

    def __post_init__(self) -> None:
        if self.vcpus < 1:
            raise ValidationError(f"{self.id}: vcpus must be >= 1")
        if self.memory <= 0:
            raise ValidationError(f"{self.id}: memory must be > 0")
        if self.expected_perf <= 0:
            raise ValidationError(f"{self.id}: expected_perf must be > 0")


@dataclass(frozen=True)
class ScenarioEvent:
    time: int
    kind: EventKind
    vm_id: str
    vm: VmSpec | None = None


# ---------- Modelo de rendimiento ----------


@dataclass(frozen=True)
class NoiseRegime:
    """
    Ruido multiplicativo log-normal.

    Attributes:
        epoch_sigma (float): Desviación del término independiente por época.
        run_sigma (float): Desviación del término persistente por ejecución.
    """

    epoch_sigma: float
    run_sigma: float


_S, _R, _D = AnimalClass.SHEEP, AnimalClass.RABBIT, AnimalClass.DEVIL


@dataclass(frozen=True)
class PerfParams:
    """
    Parámetros del modelo sintético de rendimiento.

    Las claves de `contention` son (agresor, víctima). Los valores por defecto
    son entradas de calibración, no mediciones.
    """

    contention: Mapping[tuple[AnimalClass, AnimalClass], float]
    locality_weight: Mapping[tuple[AnimalClass, bool], float]
    ipc_base: Mapping[AnimalClass, float]
    mpi_base: Mapping[AnimalClass, float]
    noise_sigma: float = 0.02
    contention_floor: Mapping[AnimalClass, float] = field(
        default_factory=lambda: {_S: 0.90, _R: 0.0, _D: 0.0}
    )
    locality_exponent: float = 1.0
    miss_weight: float = 1.0
    regimes: Mapping[str, NoiseRegime] = field(
        default_factory=lambda: {
            "stable": NoiseRegime(epoch_sigma=0.02, run_sigma=0.01),
            "churn": NoiseRegime(epoch_sigma=0.30, run_sigma=0.50),
        }
    )

    @classmethod
    def default(cls) -> PerfParams:
        return cls(
            contention={
                (_S, _S): 0.97, (_S, _R): 0.97, (_S, _D): 0.97,
                (_R, _S): 0.97, (_R, _R): 0.80, (_R, _D): 0.90,
                (_D, _S): 0.97, (_D, _R): 0.55, (_D, _D): 0.75,
            },
            locality_weight={
                (_S, True): 0.12, (_S, False): 0.02,
                (_R, True): 0.17, (_R, False): 0.05,
                (_D, True): 0.15, (_D, False): 0.04,
            },
            ipc_base={_S: 1.2, _R: 1.6, _D: 0.6},
            mpi_base={_S: 0.002, _R: 0.004, _D: 0.03},
        )


@dataclass(frozen=True)
class PerfBreakdown:
    contention: float
    locality: float
    overbooking: float
    noise: float = 1.0


@dataclass(frozen=True)
class PerfEstimate:
    """
    Rendimiento relativo estimado de una VM en una época.

    Attributes:
        vm_id (str): VM evaluada.
        p (float): Rendimiento relativo (solo ideal = 1.0).
        breakdown (PerfBreakdown): Factores que componen `p`.
    """

    vm_id: str
    p: float
    breakdown: PerfBreakdown


@dataclass(frozen=True)
class CounterSample:
    vm_id: str
    ipc: float
    mpi: float


# ---------- Estado de mapeo y algoritmo ----------


@dataclass
class MappingState:
    """
    Asignación global de vCPUs a núcleos y de memoria a nodos NUMA.

    Attributes:
        vcpu_assign (dict[str, list[int]]): Por VM, núcleo de cada vCPU.
        mem_alloc (dict[str, dict[int, int]]): Por VM, bytes por nodo NUMA.
        reservations (dict[str, dict[int, int]]): Memoria reservada por una VM
            en nodos donde deja núcleos libres para VMs pequeñas.
        epoch (int): Contador de intervalos de decisión.
        specs (dict[str, VmSpec]): Especificación de cada VM mapeada.
    """

    vcpu_assign: dict[str, list[int]] = field(default_factory=dict)
    mem_alloc: dict[str, dict[int, int]] = field(default_factory=dict)
    reservations: dict[str, dict[int, int]] = field(default_factory=dict)
    epoch: int = 0
    specs: dict[str, VmSpec] = field(default_factory=dict)

    def copy(self) -> MappingState:
        return copy.deepcopy(self)

    def vm_ids(self) -> list[str]:
        return sorted(self.vcpu_assign)

    def is_mapped(self, vm_id: str) -> bool:
        return vm_id in self.vcpu_assign

    def core_load(self, num_cores: int) -> np.ndarray:
        """Número de vCPUs asignadas a cada núcleo."""
        cores = [c for assign in self.vcpu_assign.values() for c in assign]
        return np.bincount(np.asarray(cores, dtype=np.int64), minlength=num_cores)

    def allocated_memory(self, num_numa: int) -> np.ndarray:
        out = np.zeros(num_numa, dtype=np.int64)
        for alloc in self.mem_alloc.values():
            for node, amount in alloc.items():
                out[node] += amount
        return out

    def reserved_memory(self, num_numa: int) -> np.ndarray:
        out = np.zeros(num_numa, dtype=np.int64)
        for res in self.reservations.values():
            for node, amount in res.items():
                out[node] += amount
        return out

    def remove(self, vm_id: str) -> None:
        self.vcpu_assign.pop(vm_id, None)
        self.mem_alloc.pop(vm_id, None)
        self.reservations.pop(vm_id, None)
        self.specs.pop(vm_id, None)

    def fingerprint(self) -> str:
        """Hash SHA-256 canónico de la asignación (memoria incluida)."""
        doc = {
            "cpu": {k: self.vcpu_assign[k] for k in sorted(self.vcpu_assign)},
            "mem": {
                k: {str(n): b for n, b in sorted(v.items())}
                for k, v in sorted(self.mem_alloc.items())
            },
        }
        raw = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ClassMatrix:
    """Compatibilidad de co-ubicación entre clases (fila, columna)."""

    compatible: Mapping[tuple[AnimalClass, AnimalClass], bool]

    @classmethod
    def default(cls) -> ClassMatrix:
        return cls(
            compatible={
                (_S, _S): True, (_S, _R): True, (_S, _D): True,
                (_R, _S): True, (_R, _R): False, (_R, _D): False,
                (_D, _S): True, (_D, _R): False, (_D, _D): True,
            }
        )

    def allows(self, a: AnimalClass, b: AnimalClass) -> bool:
        # Se exige compatibilidad en ambos sentidos
        return self.compatible[(a, b)] and self.compatible[(b, a)]


@dataclass(frozen=True)
class BenefitMatrix:
    """
    Puntuaciones 1-10 del beneficio esperado de aislar cada clase a cada nivel.
    """

    scores: Mapping[tuple[AnimalClass, SeparationLevel], float]

    MIN_SCORE = 1.0
    MAX_SCORE = 10.0

    @classmethod
    def default(cls) -> BenefitMatrix:
        levels = (SeparationLevel.SOCKET, SeparationLevel.NUMA_NODE, SeparationLevel.SERVER_NODE)
        initial = {_S: (1, 1, 1), _R: (4, 5, 6), _D: (7, 8, 9)}
        return cls(
            scores={
                (cls_, lvl): float(v)
                for cls_, row in initial.items()
                for lvl, v in zip(levels, row)
            }
        )

    def get(self, animal: AnimalClass, level: SeparationLevel) -> float:
        return self.scores[(animal, level)]

    def with_score(
        self, animal: AnimalClass, level: SeparationLevel, value: float
    ) -> BenefitMatrix:
        scores = dict(self.scores)
        scores[(animal, level)] = min(max(value, self.MIN_SCORE), self.MAX_SCORE)
        return BenefitMatrix(scores=scores)


@dataclass(frozen=True)
class AlgoConfig:
    """
    Parámetros del algoritmo de mapeo.

    Attributes:
        threshold (float): T, desviación relativa tolerada.
        duration (int): Intervalo de decisión en épocas.
        metric (Metric): Métrica de rendimiento medida.
        max_reshuffles_per_epoch (int): Máximo de VMs movidas por época.
        move_cost (float): λ, coste por vCPU movida.
        learning_rate (float): η de la matriz de beneficio.
    """

    threshold: float = 0.10
    duration: int = 1
    metric: Metric = Metric.IPC
    max_reshuffles_per_epoch: int = 2
    move_cost: float = 0.25
    learning_rate: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ValidationError("threshold T must be in (0, 1)")
        if self.duration < 1:
            raise ValidationError("duration must be >= 1")
        if self.max_reshuffles_per_epoch < 0:
            raise ValidationError("max_reshuffles_per_epoch must be >= 0")


@dataclass(frozen=True)
class VanillaParams:
    migration_prob: float = 0.2
    k_max: int = 2


@dataclass
class AffectedList:
    entries: list[tuple[str, float]] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def vm_ids(self) -> list[str]:
        return [vm_id for vm_id, _ in self.entries]


@dataclass(frozen=True)
class Remap:
    vm_id: str
    from_cores: tuple[int, ...]
    to_cores: tuple[int, ...]
    level: SeparationLevel
    score: float


@dataclass(frozen=True)
class Action:
    """Entrada del registro de acciones de una época."""

    epoch: int
    vm_id: str
    reason: ActionReason
    from_cores: tuple[int, ...]
    to_cores: tuple[int, ...]
    flagged: bool = False
    detail: str = ""


@dataclass(frozen=True)
class PendingUpdate:
    level: SeparationLevel
    p_before: float


@dataclass
class MapperState:
    """Estado mutable del controlador: mapeo, matriz de beneficio y pendientes."""

    mapping: MappingState
    benefit: BenefitMatrix = field(default_factory=BenefitMatrix.default)
    pending: dict[str, PendingUpdate] = field(default_factory=dict)

    def copy(self) -> MapperState:
        return MapperState(
            mapping=self.mapping.copy(), benefit=self.benefit, pending=dict(self.pending)
        )


# ---------- Simulación ----------


@dataclass(frozen=True)
class RunConfig:
    """
    Configuración de una ejecución.

    Attributes:
        topology (str): Ruta del documento de topología.
        scenario (str): Ruta del escenario.
        perf_params (str): Ruta de los parámetros de rendimiento.
        algorithm (Algorithm): vanilla, sm_ipc o sm_mpi.
        seed (int): Semilla base; la repetición r usa seed + r.
        epochs (int): Épocas por ejecución.
        repeats (int): Repeticiones.
        warmup (int): Épocas iniciales excluidas de las estadísticas.
        workers (int): Procesos para repartir repeticiones.
        sigma_override (float | None): Fuerza el ruido (0 = determinista).
    """

    topology: str
    scenario: str
    perf_params: str
    algorithm: Algorithm = Algorithm.SM_IPC
    seed: int = 0
    epochs: int = 100
    repeats: int = 1
    warmup: int = 3
    workers: int = 1
    sigma_override: float | None = None
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    vanilla: VanillaParams = field(default_factory=VanillaParams)

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.repeats < 1:
            raise ValidationError("repeats must be >= 1")
        if self.warmup < 0:
            raise ValidationError("warmup must be >= 0")

    def describe(self) -> dict[str, object]:
        """Diccionario serializable de la configuración."""
        return {
            "topology": self.topology,
            "scenario": self.scenario,
            "perf_params": self.perf_params,
            "algorithm": self.algorithm.value,
            "seed": self.seed,
            "epochs": self.epochs,
            "warmup": self.warmup,
            "sigma_override": self.sigma_override,
            "threshold": self.algo.threshold,
            "duration": self.algo.duration,
            "max_reshuffles_per_epoch": self.algo.max_reshuffles_per_epoch,
            "move_cost": self.algo.move_cost,
            "learning_rate": self.algo.learning_rate,
            "migration_prob": self.vanilla.migration_prob,
            "k_max": self.vanilla.k_max,
        }


@dataclass
class EpochRecord:
    epoch: int
    mapping_hash: str
    assignment: dict[str, list[int]]
    estimates: dict[str, PerfEstimate] = field(default_factory=dict)
    samples: dict[str, CounterSample] = field(default_factory=dict)
    actions: list[Action] = field(default_factory=list)
    rejected: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    benefit: dict[str, dict[str, float]] = field(default_factory=dict)


@dataclass
class RunTrace:
    """
    Traza completa de una ejecución.

    Attributes:
        config (dict[str, object]): Configuración descrita (ver RunConfig.describe).
        layout (list): Núcleos agrupados servidor → socket → nodo.
        torus (list): Coordenada en el toro de cada servidor (o None).
        vms (dict[str, VmSpec]): VMs admitidas, en orden de llegada.
        epochs (list[EpochRecord]): Un registro por época.
        summary (dict[str, float]): p medio por VM tras el calentamiento.
    """

    config: dict[str, object]
    layout: list[list[list[list[int]]]]
    torus: list[list[int] | None] = field(default_factory=list)
    vms: dict[str, VmSpec] = field(default_factory=dict)
    epochs: list[EpochRecord] = field(default_factory=list)
    summary: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class VmStats:
    vm_id: str
    vm_type: str
    animal_class: str
    algorithm: str
    mean_p: float
    stddev_p: float | None = None
    variability_ratio: float | None = None
    rel_vs_vanilla: float | None = None


@dataclass
class RunStats:
    algorithm: str
    repeats: int
    rows: list[VmStats] = field(default_factory=list)
    mean_p: float = 0.0
    variability_ratio: float | None = None
