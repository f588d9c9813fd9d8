"""Fixtures compartidas: topologías de prueba y construcción de VMs."""

import pytest

from src.domain.entities import GIB, AnimalClass, MappingState, VmSpec
from src.domain.placement import commit
from src.domain.topology import load_topology
from src.infrastructure.config.documents import ASSETS_DIR, load_topology_file

REFERENCE_TOPO = str(ASSETS_DIR / "topologies" / "reference-numascale.topo")
PAPER_MIX = str(ASSETS_DIR / "scenarios" / "paper-mix.scenario")


def topology_doc(servers=1, sockets=1, numa=2, cores=4, memory_gb=16, **extra):
    """Documento de topología homogénea con servidores en fila sobre el toro."""
    doc = {
        "servers": [
            {
                "torus_coord": [s, 0],
                "sockets": [
                    {"numa_nodes": [{"cores": cores, "memory_gb": memory_gb} for _ in range(numa)]}
                    for _ in range(sockets)
                ],
            }
            for s in range(servers)
        ],
    }
    doc.update(extra)
    return doc


def make_vm(vm_id, vcpus, animal="sheep", sensitive=False, memory_gb=None, **kwargs):
    """VM con 4 GiB por vCPU salvo que se indique otra memoria."""
    memory = int((memory_gb if memory_gb is not None else 4 * vcpus) * GIB)
    return VmSpec(
        id=vm_id,
        vcpus=vcpus,
        memory=memory,
        animal_class=AnimalClass.parse(animal),
        sensitive=sensitive,
        **kwargs,
    )


def mapping_with(t, *placements):
    """Mapeo construido a mano con pares (vm, núcleos)."""
    m = MappingState()
    for vm, cores in placements:
        commit(vm, cores, m, t)
    return m


@pytest.fixture(scope="session")
def reference():
    """Topología de referencia: 288 núcleos, 36 nodos NUMA, 6 servidores."""
    return load_topology_file(REFERENCE_TOPO)


@pytest.fixture
def one_server():
    """Un servidor con 2 sockets de 1 nodo NUMA, 4 núcleos y 16 GiB por nodo."""
    return load_topology(topology_doc(sockets=2, numa=1))


@pytest.fixture
def two_nodes():
    """Un servidor, un socket, dos nodos NUMA de 4 núcleos."""
    return load_topology(topology_doc())
