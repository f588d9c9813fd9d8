"""
Topología del sistema desagregado: carga, distancias y consultas de capacidad.

El documento de topología llega ya parseado (diccionario); la lectura del
fichero YAML vive en `infrastructure.config.documents`.
"""

from __future__ import annotations

from itertools import product
from typing import Any, Mapping

import networkx as nx
import numpy as np

from .entities import (
    GIB,
    LlcScope,
    MappingState,
    NodeCapacity,
    NumaNode,
    Server,
    Socket,
    Topology,
    TorusDistanceConfig,
)
from .errors import TopologyError
from .logs import get_logger

logger = get_logger(__name__)


# ---------- Carga ----------


def _check_explicit_ids(entries: list[Mapping[str, Any]], offset: int, what: str) -> None:
    """
    Verifica los `id` explícitos opcionales: únicos y densos en orden de documento.

    Args:
        entries (list): Entradas del documento de un mismo nivel.
        offset (int): Primer id denso que correspondería a la primera entrada.
        what (str): Nombre del nivel para el mensaje de error.
    """
    seen: set[int] = set()
    for idx, entry in enumerate(entries):
        if "id" not in entry:
            continue
        explicit = entry["id"]
        if explicit in seen:
            raise TopologyError(f"duplicate {what} id {explicit}")
        seen.add(explicit)
        if explicit != offset + idx:
            raise TopologyError(
                f"{what} id {explicit} is not dense in document order (expected {offset + idx})"
            )


def _as_list(value: Any, what: str) -> list[Mapping[str, Any]]:
    if not isinstance(value, list) or not value:
        raise TopologyError(f"'{what}' must be a non-empty list")
    for item in value:
        if not isinstance(item, Mapping):
            raise TopologyError(f"every '{what}' entry must be a mapping")
    return value


def _parse_coord(raw: Any) -> tuple[int, int]:
    if (
        not isinstance(raw, (list, tuple))
        or len(raw) != 2
        or not all(isinstance(v, int) for v in raw)
    ):
        raise TopologyError(f"torus_coord must be a pair of integers, got {raw!r}")
    return int(raw[0]), int(raw[1])


def load_topology(document: Mapping[str, Any]) -> Topology:
    """
    Materializa y valida una topología a partir de su documento.

    Los identificadores densos se asignan en orden de documento. Si el
    documento trae tanto matriz explícita como parámetros de toro, gana la
    matriz explícita.

    Args:
        document (Mapping[str, Any]): Documento de topología ya parseado.

    Returns:
        Topology: Topología validada e inmutable.

    Raises:
        TopologyError: Documento mal formado, ids duplicados o matriz
            asimétrica / por debajo de la distancia local.
    """
    if not isinstance(document, Mapping):
        raise TopologyError("topology document must be a mapping")

    try:
        llc_scope = LlcScope(document.get("llc_scope", LlcScope.NUMA_NODE.value))
    except ValueError as exc:
        raise TopologyError(f"invalid llc_scope: {document.get('llc_scope')!r}") from exc
    smt_as_cores = bool(document.get("smt_as_cores", True))
    threads_per_core = int(document.get("threads_per_core", 1))
    if threads_per_core < 1:
        raise TopologyError("threads_per_core must be >= 1")

    server_docs = _as_list(document.get("servers"), "servers")
    _check_explicit_ids(server_docs, 0, "server")

    servers: list[Server] = []
    coords_seen: set[tuple[int, int]] = set()
    next_socket = next_numa = next_core = 0
    for server_id, server_doc in enumerate(server_docs):
        coord = None
        if "torus_coord" in server_doc:
            coord = _parse_coord(server_doc["torus_coord"])
            if coord in coords_seen:
                raise TopologyError(f"duplicate torus_coord {coord}")
            coords_seen.add(coord)

        socket_docs = _as_list(server_doc.get("sockets"), "sockets")
        _check_explicit_ids(socket_docs, next_socket, "socket")
        sockets: list[Socket] = []
        for socket_doc in socket_docs:
            numa_docs = _as_list(socket_doc.get("numa_nodes"), "numa_nodes")
            _check_explicit_ids(numa_docs, next_numa, "numa_node")
            nodes: list[NumaNode] = []
            for numa_doc in numa_docs:
                cores = numa_doc.get("cores")
                memory_gb = numa_doc.get("memory_gb")
                reserved_gb = numa_doc.get("reserved_gb", 0)
                if not isinstance(cores, int) or cores < 1:
                    raise TopologyError(f"numa node {next_numa}: cores must be a positive integer")
                if not isinstance(memory_gb, (int, float)) or memory_gb <= 0:
                    raise TopologyError(f"numa node {next_numa}: memory_gb must be > 0")
                if not isinstance(reserved_gb, (int, float)) or not 0 <= reserved_gb <= memory_gb:
                    raise TopologyError(
                        f"numa node {next_numa}: reserved_gb must be in [0, memory_gb]"
                    )
                if not smt_as_cores:
                    cores = max(1, cores // threads_per_core)
                nodes.append(
                    NumaNode(
                        id=next_numa,
                        cores=tuple(range(next_core, next_core + cores)),
                        memory_capacity=int(memory_gb * GIB),
                        memory_reserved=int(reserved_gb * GIB),
                    )
                )
                next_numa += 1
                next_core += cores
            sockets.append(Socket(id=next_socket, numa_nodes=tuple(nodes)))
            next_socket += 1
        servers.append(Server(id=server_id, sockets=tuple(sockets), torus_coord=coord))

    if len(servers) == 1 and servers[0].torus_coord is None:
        servers[0] = Server(id=0, sockets=servers[0].sockets, torus_coord=(0, 0))

    distances = document.get("distances") or {}
    if not isinstance(distances, Mapping):
        raise TopologyError("'distances' must be a mapping")
    if "explicit" in distances:
        try:
            matrix = np.asarray(distances["explicit"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise TopologyError("explicit distance matrix must be a numeric square matrix") from exc
    else:
        torus_doc = distances.get("torus") or {}
        try:
            config = TorusDistanceConfig(**{k: int(v) for k, v in torus_doc.items()})
        except TypeError as exc:
            raise TopologyError(f"unknown torus distance key: {exc}") from exc
        matrix = torus_distances(servers, config)

    _validate_distance(matrix, next_numa)
    topology = Topology(
        servers=tuple(servers), distance=matrix.astype(np.int64), llc_scope=llc_scope
    )
    logger.info(
        "Loaded topology: %d cores, %d NUMA nodes, %d servers",
        topology.num_cores,
        topology.num_numa_nodes,
        len(topology.servers),
    )
    return topology


def _validate_distance(matrix: np.ndarray, n: int) -> None:
    if matrix.shape != (n, n):
        raise TopologyError(f"distance matrix must be {n}x{n}, got {matrix.shape}")
    if not np.array_equal(matrix, matrix.T):
        raise TopologyError("distance matrix is asymmetric")
    diag = matrix.diagonal()
    if np.any(diag <= 0):
        raise TopologyError("local distances must be positive")
    if np.any(matrix < diag[:, None]):
        raise TopologyError("distance below local distance")


# ---------- Distancias ----------


def torus_distances(
    servers: list[Server] | tuple[Server, ...], config: TorusDistanceConfig
) -> np.ndarray:
    """
    Deriva la matriz de distancias NUMA de la posición de los servidores en el toro.

    Dentro de un servidor: local, vecino de socket (16) o de otro socket (22).
    Entre servidores: `one_hop` si son adyacentes en el toro, `two_hop` si no.

    Args:
        servers: Servidores con `torus_coord` asignada.
        config (TorusDistanceConfig): Valores de distancia.

    Returns:
        np.ndarray: Matriz simétrica de distancias entre nodos NUMA.

    Raises:
        TopologyError: Si falta alguna coordenada o no forman una rejilla completa.
    """
    coords = [s.torus_coord for s in servers]
    if any(c is None for c in coords):
        raise TopologyError("missing torus coordinates")
    width = max(c[0] for c in coords) + 1
    height = max(c[1] for c in coords) + 1
    if set(coords) != set(product(range(width), range(height))) or len(coords) != width * height:
        raise TopologyError("torus coordinates do not form a full grid")

    graph = nx.grid_2d_graph(width, height, periodic=True)
    hops = dict(nx.all_pairs_shortest_path_length(graph))

    placement: list[tuple[int, int, tuple[int, int]]] = []  # (socket, server, coord)
    for server in servers:
        for socket in server.sockets:
            for _node in socket.numa_nodes:
                placement.append((socket.id, server.id, server.torus_coord))

    n = len(placement)
    matrix = np.empty((n, n), dtype=np.int64)
    for a, (sock_a, srv_a, coord_a) in enumerate(placement):
        for b, (sock_b, srv_b, coord_b) in enumerate(placement):
            if a == b:
                matrix[a, b] = config.local
            elif sock_a == sock_b:
                matrix[a, b] = config.neighbor_same_socket
            elif srv_a == srv_b:
                matrix[a, b] = config.neighbor_cross_socket
            elif hops[coord_a][coord_b] == 1:
                matrix[a, b] = config.one_hop
            else:
                matrix[a, b] = config.two_hop
    return matrix


def distance(t: Topology, a: int, b: int) -> int:
    """Distancia NUMA entre los nodos `a` y `b`."""
    n = t.num_numa_nodes
    if not (0 <= a < n and 0 <= b < n):
        raise TopologyError(f"unknown NUMA node id in ({a}, {b})")
    return int(t.distance[a, b])


def locate(t: Topology, core: int) -> tuple[int, int, int]:
    """
    Cadena de pertenencia de un núcleo.

    Args:
        t (Topology): Topología.
        core (int): Identificador de núcleo.

    Returns:
        tuple[int, int, int]: (nodo NUMA, socket, servidor).

    Raises:
        TopologyError: Si el núcleo no existe.
    """
    if not 0 <= core < t.num_cores:
        raise TopologyError(f"unknown core id {core}")
    numa = int(t.core_numa[core])
    return numa, int(t.numa_socket[numa]), int(t.numa_server[numa])


# ---------- Capacidad ----------


def free_memory(t: Topology, m: MappingState) -> np.ndarray:
    """Memoria libre por nodo: capacidad − asignada − reservada (estática y dinámica)."""
    capacity = np.array([n.memory_capacity for n in t.numa_nodes], dtype=np.int64)
    static = np.array([n.memory_reserved for n in t.numa_nodes], dtype=np.int64)
    n = t.num_numa_nodes
    return capacity - static - m.allocated_memory(n) - m.reserved_memory(n)


def free_capacity(t: Topology, m: MappingState) -> dict[int, NodeCapacity]:
    """
    Núcleos y memoria libres por nodo NUMA.

    Args:
        t (Topology): Topología.
        m (MappingState): Mapeo consistente con `t`.

    Returns:
        dict[int, NodeCapacity]: Capacidad libre indexada por nodo NUMA.
    """
    load = m.core_load(t.num_cores)
    idle = np.bincount(t.core_numa[load == 0], minlength=t.num_numa_nodes)
    mem = free_memory(t, m)
    return {
        node.id: NodeCapacity(free_cores=int(idle[node.id]), free_memory=int(mem[node.id]))
        for node in t.numa_nodes
    }
