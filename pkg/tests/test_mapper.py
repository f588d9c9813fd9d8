"""Pruebas del mapeo: colocación, reubicación, bucle de control y vanilla."""

from itertools import combinations

import numpy as np
import pytest

from src.domain.controller import (
    apply_remap,
    build_neighbor_list,
    compute_remap,
    detect_affected,
    step,
    update_benefit_matrix,
    worst_interferer,
)
from src.domain.entities import (
    ActionReason,
    AffectedList,
    AlgoConfig,
    GIB,
    AnimalClass,
    BenefitMatrix,
    ClassMatrix,
    MapperState,
    MappingState,
    PendingUpdate,
    PerfParams,
    Remap,
    SeparationLevel,
    VanillaParams,
)
from src.domain.errors import CapacityError, MappingError
from src.domain.perfmodel import class_compliant, llc_neighbors, predict_perf, total_perf
from src.domain.placement import (
    find_slot,
    ideal_span,
    is_good_slot,
    place_arrival,
    reshuffle_for_arrival,
    violation_damage,
)
from src.domain.topology import load_topology
from src.domain.usecases.admit_vm import AdmitVm
from src.domain.vanilla import vanilla_place, vanilla_step
from tests.conftest import make_vm, mapping_with, topology_doc
from tests.test_sim import _simulate

CM = ClassMatrix.default()


def _cores_on(t, m, vm_id):
    return sorted(set(t.core_numa[m.vcpu_assign[vm_id]].tolist()))


# ---------- Colocación ----------


def test_class_matrix_is_symmetric_as_used():
    assert not CM.allows(AnimalClass.RABBIT, AnimalClass.DEVIL)
    assert not CM.allows(AnimalClass.DEVIL, AnimalClass.RABBIT)
    assert not CM.allows(AnimalClass.RABBIT, AnimalClass.RABBIT)
    assert CM.allows(AnimalClass.SHEEP, AnimalClass.DEVIL)
    assert CM.allows(AnimalClass.DEVIL, AnimalClass.DEVIL)


def test_small_vm_on_empty_system_uses_one_node(reference):
    vm = make_vm("s", 4)
    m = place_arrival(vm, MappingState(), reference, CM)
    assert _cores_on(reference, m, "s") == [0]
    assert m.mem_alloc["s"] == {0: vm.memory}


def test_huge_vm_spans_two_servers(reference):
    vm = make_vm("h", 72, memory_gb=288)
    assert ideal_span(vm, reference) == (2, 9)
    m = place_arrival(vm, MappingState(), reference, CM)
    servers = {int(reference.numa_server[n]) for n in _cores_on(reference, m, "h")}
    assert len(servers) == 2
    assert len(_cores_on(reference, m, "h")) == 9


def test_rabbit_avoids_devil_node(two_nodes):
    d = place_arrival(make_vm("d", 2, "devil"), MappingState(), two_nodes, CM)
    assert _cores_on(two_nodes, d, "d") == [0]
    m = place_arrival(make_vm("r", 2, "rabbit"), d, two_nodes, CM)
    assert _cores_on(two_nodes, m, "r") == [1]
    assert class_compliant(m, two_nodes, CM)


def test_small_vms_spread_before_sharing(two_nodes):
    m = place_arrival(make_vm("a", 2), MappingState(), two_nodes, CM)
    m = place_arrival(make_vm("b", 2), m, two_nodes, CM)
    assert _cores_on(two_nodes, m, "a") == [0]
    assert _cores_on(two_nodes, m, "b") == [1]


def test_placement_never_overbooks(two_nodes):
    m = MappingState()
    for i in range(4):
        m = place_arrival(make_vm(f"v{i}", 2), m, two_nodes, CM)
    assert m.core_load(two_nodes.num_cores).max() == 1
    with pytest.raises(CapacityError):
        place_arrival(make_vm("extra", 1), m, two_nodes, CM)


def test_distance_outranks_neighbour_damage():
    t = load_topology(topology_doc(sockets=2, numa=2, cores=2, memory_gb=8))
    m = mapping_with(t, (make_vm("d", 1, "devil", memory_gb=1), [0]), (make_vm("s", 1, memory_gb=1), [4]))
    slot = find_slot(make_vm("new", 3, memory_gb=1), m, t, CM)
    nodes = sorted(set(t.core_numa[list(slot.cores)].tolist()))
    assert int(t.distance[nodes[0], nodes[1]]) == 16
    assert nodes == [2, 3]


def _exhaustive_key(vm, m, t):
    """(servidores, nodos, violaciones, distancia) mínimo sobre todos los núcleos libres."""
    free = np.flatnonzero(m.core_load(t.num_cores) == 0).tolist()
    residents = {}
    for other, cores in m.vcpu_assign.items():
        for group in set(t.core_llc[cores].tolist()):
            residents.setdefault(group, set()).add(other)
    best = None
    for cores in combinations(free, vm.vcpus):
        nodes = t.core_numa[list(cores)]
        weights = np.bincount(nodes, minlength=t.num_numa_nodes) / vm.vcpus
        sharing = set().union(*(residents.get(g, set()) for g in set(t.core_llc[list(cores)].tolist())))
        key = (
            len({int(t.numa_server[n]) for n in nodes.tolist()}),
            len(set(nodes.tolist())),
            sum(not CM.allows(vm.animal_class, m.specs[o].animal_class) for o in sharing),
            round(float(weights @ t.distance @ weights), 6),
        )
        if best is None or key < best:
            best = key
    return best


def test_find_slot_matches_exhaustive_enumeration():
    rng = np.random.default_rng(17)
    classes = [a.value for a in AnimalClass]
    for n in range(150):
        servers, sockets, numa = (int(x) for x in rng.integers(1, 3, size=3))
        cores = min(int(rng.integers(1, 5)), max(16 // (servers * sockets * numa), 1))
        t = load_topology(topology_doc(servers=servers, sockets=sockets, numa=numa, cores=cores, memory_gb=8))
        order = rng.permutation(t.num_cores).tolist()
        placed = [
            (make_vm(f"p{i}", 1, classes[int(rng.integers(3))], memory_gb=1), [order[i]])
            for i in range(int(rng.integers(0, t.num_cores)))
        ]
        m = mapping_with(t, *placed)
        vcpus = int(rng.integers(1, min(t.num_cores - len(placed), 3) + 1))
        vm = make_vm("new", vcpus, classes[int(rng.integers(3))], memory_gb=1)

        slot = find_slot(vm, m, t, CM)
        actual = (slot.servers, slot.nodes, slot.violations, round(slot.mean_distance, 6))
        assert actual == _exhaustive_key(vm, m, t), n


def test_placement_respects_affinity(reference):
    vm = make_vm("pinned", 4, affinity=frozenset({3}))
    m = place_arrival(vm, MappingState(), reference, CM)
    assert {int(reference.numa_server[n]) for n in _cores_on(reference, m, "pinned")} == {3}


def test_memory_heavy_vm_reserves_for_small_ones(two_nodes):
    heavy = make_vm("heavy", 2, memory_gb=12)
    m = place_arrival(heavy, MappingState(), two_nodes, CM)
    node = _cores_on(two_nodes, m, "heavy")[0]
    assert sum(m.mem_alloc["heavy"].values()) == heavy.memory
    assert m.mem_alloc["heavy"].get(node, 0) > 0
    assert m.reservations["heavy"] == {node: 8 * GIB}


def _half_full(t):
    m = place_arrival(make_vm("a", 2), MappingState(), t, CM)
    return place_arrival(make_vm("b", 2), m, t, CM)


def test_reshuffle_opens_a_whole_node(two_nodes):
    m = _half_full(two_nodes)
    vm = make_vm("c", 4)
    slot = find_slot(vm, m, two_nodes, CM)
    assert not is_good_slot(vm, slot, two_nodes)

    result = reshuffle_for_arrival(vm, m, two_nodes, CM, max_moves=1)
    assert not result.flagged
    assert [mv[0] for mv in result.moves] == ["a"]
    assert result.moved_vcpus == 2
    assert len(_cores_on(two_nodes, result.mapping, "c")) == 1
    assert result.mapping.core_load(two_nodes.num_cores).max() == 1


def test_reshuffle_without_budget_is_best_effort(two_nodes):
    m = _half_full(two_nodes)
    result = reshuffle_for_arrival(make_vm("c", 4), m, two_nodes, CM, max_moves=0)
    assert result.flagged
    assert result.moves == []
    assert len(_cores_on(two_nodes, result.mapping, "c")) == 2


def test_reshuffle_is_a_no_op_when_slot_is_good(two_nodes):
    result = reshuffle_for_arrival(make_vm("c", 4), MappingState(), two_nodes, CM, max_moves=2)
    assert result.moves == []
    assert not result.flagged


def test_admit_vm_logs_reshuffle_and_arrival(two_nodes):
    admit = AdmitVm(two_nodes, CM, AlgoConfig())
    admission = admit(make_vm("c", 4), _half_full(two_nodes))
    reasons = [a.reason for a in admission.actions]
    assert reasons == [ActionReason.RESHUFFLE, ActionReason.ARRIVAL]
    assert admission.moves == 1
    assert not admission.actions[-1].flagged


def test_admit_vm_flags_best_effort(two_nodes):
    admit = AdmitVm(two_nodes, CM, AlgoConfig(max_reshuffles_per_epoch=0))
    admission = admit(make_vm("c", 4), _half_full(two_nodes))
    assert admission.actions[-1].flagged
    assert admission.actions[-1].detail == "best-effort"


@pytest.fixture
def tiny():
    """Un servidor con dos nodos NUMA de 2 núcleos."""
    return load_topology(topology_doc(cores=2, memory_gb=8))


def test_devil_prefers_a_sheep_neighbour(tiny):
    m = mapping_with(tiny, (make_vm("d", 1, "devil"), [0]), (make_vm("s", 1), [2]))
    m = place_arrival(make_vm("d2", 1, "devil"), m, tiny, CM)
    assert m.vcpu_assign["d2"] == [3]


def test_forced_rabbit_shares_with_rabbit(tiny):
    m = mapping_with(tiny, (make_vm("r", 1, "rabbit"), [0]), (make_vm("d", 1, "devil"), [2]))
    result = reshuffle_for_arrival(make_vm("r2", 1, "rabbit"), m, tiny, CM, max_moves=2)
    assert result.flagged
    assert result.moves == []
    assert _cores_on(tiny, result.mapping, "r2") == [0]
    assert violation_damage(result.mapping, tiny, CM) == 4


def test_best_effort_moves_reduce_violation_damage(tiny):
    m = mapping_with(tiny, (make_vm("r", 1, "rabbit"), [0]), (make_vm("r2", 1, "rabbit"), [2]))
    assert violation_damage(place_arrival(make_vm("d", 1, "devil"), m, tiny, CM), tiny, CM) == 5

    result = reshuffle_for_arrival(make_vm("d", 1, "devil"), m, tiny, CM, max_moves=2)
    assert result.flagged
    assert result.moves == [("r", (0,), (3,))]
    assert result.mapping.vcpu_assign["d"] == [0]
    assert violation_damage(result.mapping, tiny, CM) == 4


def test_best_effort_may_slice_a_sheep(tiny):
    """Partir la oveja separa al Rabbit del Devil."""
    m = mapping_with(tiny, (make_vm("s", 2, memory_gb=2), [0, 1]), (make_vm("d", 1, "devil"), [2]))
    result = reshuffle_for_arrival(make_vm("r", 1, "rabbit"), m, tiny, CM, max_moves=2)
    assert result.flagged
    assert [mv[0] for mv in result.moves] == ["s"]
    assert _cores_on(tiny, result.mapping, "s") == [0, 1]
    assert violation_damage(result.mapping, tiny, CM) == 0
    assert class_compliant(result.mapping, tiny, CM)


def test_best_effort_tie_goes_to_higher_predicted_p(tiny):
    params = PerfParams.default()
    m = mapping_with(
        tiny,
        (make_vm("d", 1, "devil", memory_gb=1), [0]),
        (make_vm("r", 1, "rabbit", memory_gb=1), [2]),
    )
    d2 = make_vm("d2", 2, "devil", memory_gb=2)

    plain = reshuffle_for_arrival(d2, m, tiny, CM, max_moves=2)
    assert plain.moves == []
    assert _cores_on(tiny, plain.mapping, "d2") == [0, 1]

    guided = reshuffle_for_arrival(
        d2, m, tiny, CM, max_moves=2,
        predictor=lambda vm, state: predict_perf(vm, state, tiny, params),
    )
    assert guided.flagged
    assert len(guided.moves) == 1
    assert len(_cores_on(tiny, guided.mapping, "d2")) == 1
    assert violation_damage(guided.mapping, tiny, CM) == violation_damage(plain.mapping, tiny, CM) == 5
    assert total_perf(guided.mapping, tiny, params) > total_perf(plain.mapping, tiny, params)


# ---------- Bucle de control ----------


def test_detect_affected_orders_by_deviation():
    vms = [make_vm("a", 1), make_vm("b", 1), make_vm("c", 1), make_vm("d", 1)]
    samples = {"a": 0.85, "b": 0.5, "c": 0.95, "d": 0.5}
    affected = detect_affected(vms, samples, AlgoConfig(threshold=0.1))
    assert affected.vm_ids() == ["b", "d", "a"]


def test_detect_affected_skips_missing_samples():
    affected = detect_affected([make_vm("a", 1)], {}, AlgoConfig())
    assert not affected
    assert affected.skipped == ["a"]


def test_detect_affected_uses_expected_perf():
    vm = make_vm("a", 1, expected_perf=0.5)
    assert detect_affected([vm], {"a": 0.48}, AlgoConfig(threshold=0.1)).vm_ids() == []
    assert detect_affected([vm], {"a": 0.40}, AlgoConfig(threshold=0.1)).vm_ids() == ["a"]


def test_neighbor_list_follows_class_matrix():
    r = make_vm("r", 1, "rabbit")
    live = [r, make_vm("s", 1), make_vm("d", 1, "devil"), make_vm("r2", 1, "rabbit")]
    assert build_neighbor_list(r, live, CM) == {"s"}


def test_neighbor_list_drops_disjoint_affinity():
    d = make_vm("d", 1, "devil", affinity=frozenset({0}))
    live = [d, make_vm("s", 1, affinity=frozenset({1})), make_vm("d2", 1, "devil")]
    assert build_neighbor_list(d, live, CM) == {"d2"}


@pytest.fixture
def crowded(one_server):
    """Rabbit y Devil comparten el nodo 0; el nodo 1 (otro socket) está libre."""
    r = make_vm("r", 2, "rabbit")
    d = make_vm("d", 2, "devil")
    return mapping_with(one_server, (r, [0, 1]), (d, [2, 3]))


def test_worst_interferer(one_server, crowded):
    m = place_arrival(make_vm("s", 1), crowded, one_server, CM)
    assert worst_interferer(m.specs["r"], crowded, one_server) == "d"
    assert worst_interferer(m.specs["s"], m, one_server) is None


def test_compute_remap_isolates_rabbit(one_server, crowded):
    params = PerfParams.default()
    live = [crowded.specs[v] for v in crowded.vm_ids()]
    affected = AffectedList(entries=[("r", 0.45)])
    remaps = compute_remap(
        affected, crowded, one_server, CM, BenefitMatrix.default(), live,
        predictor=lambda vm, m: predict_perf(vm, m, one_server, params),
    )
    assert len(remaps) == 1
    remap = remaps[0]
    assert remap.vm_id == "r"
    assert remap.level is SeparationLevel.NUMA_NODE
    assert remap.score == pytest.approx(5.0 - 0.25 * 2)
    assert set(remap.to_cores) <= {4, 5, 6, 7}

    moved = apply_remap(crowded, remap)
    assert class_compliant(moved, one_server, CM)
    assert moved.mem_alloc["r"] == crowded.mem_alloc["r"]


def test_compute_remap_leaves_unbothered_vm(one_server):
    m = mapping_with(one_server, (make_vm("r", 2, "rabbit"), [0, 1]))
    live = [m.specs["r"]]
    remaps = compute_remap(AffectedList(entries=[("r", 0.3)]), m, one_server, CM, BenefitMatrix.default(), live)
    assert remaps == []


def test_predictor_guard_blocks_useless_moves(one_server, crowded):
    live = [crowded.specs[v] for v in crowded.vm_ids()]
    remaps = compute_remap(
        AffectedList(entries=[("r", 0.45)]), crowded, one_server, CM,
        BenefitMatrix.default(), live, predictor=lambda vm, m: 0.5,
    )
    assert remaps == []


def test_move_cost_can_outweigh_benefit(one_server, crowded):
    live = [crowded.specs[v] for v in crowded.vm_ids()]
    remaps = compute_remap(
        AffectedList(entries=[("r", 0.45)]), crowded, one_server, CM,
        BenefitMatrix.default(), live, cfg=AlgoConfig(move_cost=5.0),
    )
    assert remaps == []


def test_remap_targets_only_share_with_listed_neighbours():
    t = load_topology(topology_doc(sockets=2, numa=2, cores=3, memory_gb=16))
    params = PerfParams.default()
    rng = np.random.default_rng(23)
    classes = [a.value for a in AnimalClass]
    for _ in range(60):
        order = rng.permutation(t.num_cores).tolist()
        placed, used = [], 0
        for i in range(int(rng.integers(2, 7))):
            vcpus = int(rng.integers(1, 3))
            placed.append((make_vm(f"v{i}", vcpus, classes[int(rng.integers(3))], memory_gb=1), order[used:used + vcpus]))
            used += vcpus
        m = mapping_with(t, *placed)
        live = [vm for vm, _ in placed]
        affected = AffectedList(entries=[(vm.id, 0.5) for vm in live])
        remaps = compute_remap(
            affected, m, t, CM, BenefitMatrix.default(), live,
            predictor=lambda vm, state: predict_perf(vm, state, t, params),
        )
        for remap in remaps:
            m = apply_remap(m, remap)
            vm = m.specs[remap.vm_id]
            assert set(llc_neighbors(vm, m, t)) <= build_neighbor_list(vm, live, CM)


def test_apply_remap_rejects_occupied_target(crowded):
    remap = Remap("r", (0, 1), (2, 3), SeparationLevel.NUMA_NODE, 1.0)
    with pytest.raises(MappingError):
        apply_remap(crowded, remap)
    with pytest.raises(MappingError):
        apply_remap(crowded, Remap("ghost", (), (5,), SeparationLevel.NUMA_NODE, 1.0))


@pytest.mark.parametrize(
    "improvement, target",
    [(0.5, 5.0), (0.25, 2.5), (2.0, 10.0), (-0.3, 1.0)],
)
def test_benefit_matrix_converges(improvement, target):
    vm = make_vm("r", 1, "rabbit")
    bm = BenefitMatrix.default()
    for _ in range(30):
        bm = update_benefit_matrix(bm, vm, 1.0, 1.0 + improvement, SeparationLevel.SOCKET, 0.3)
        assert 1.0 <= bm.get(AnimalClass.RABBIT, SeparationLevel.SOCKET) <= 10.0
    assert bm.get(AnimalClass.RABBIT, SeparationLevel.SOCKET) == pytest.approx(target, abs=0.5)


def test_step_remaps_then_learns(one_server, crowded):
    params = PerfParams.default()
    predictor = lambda vm, m: predict_perf(vm, m, one_server, params)  # noqa: E731
    state = MapperState(mapping=crowded)
    cfg = AlgoConfig()

    state, actions, warnings = step(state, {"r": 0.55, "d": 0.95}, one_server, CM, cfg, predictor)
    assert [a.reason for a in actions] == [ActionReason.REMAP]
    assert state.pending["r"] == PendingUpdate(level=SeparationLevel.NUMA_NODE, p_before=0.55)
    assert warnings == []

    before = state.benefit.get(AnimalClass.RABBIT, SeparationLevel.NUMA_NODE)
    state, actions, _ = step(state, {"r": 0.95, "d": 1.0}, one_server, CM, cfg, predictor)
    after = state.benefit.get(AnimalClass.RABBIT, SeparationLevel.NUMA_NODE)
    assert actions == []
    assert state.pending == {}
    assert after == pytest.approx(before + 0.3 * (10 * 0.4 / 0.55 - before))


def test_step_without_affected_vms_is_quiet(one_server, crowded):
    state = MapperState(mapping=crowded)
    new_state, actions, _ = step(state, {"r": 1.0, "d": 1.0}, one_server, CM, AlgoConfig())
    assert actions == []
    assert new_state.mapping.vcpu_assign == crowded.vcpu_assign


def test_mapper_reaches_fixed_point_without_noise():
    rng = np.random.default_rng(31)
    classes = [a.value for a in AnimalClass]
    for _ in range(30):
        t = load_topology(topology_doc(numa=int(rng.integers(1, 3)), cores=int(rng.integers(2, 4)), memory_gb=8))
        count = int(rng.integers(1, t.num_cores // 2 + 1))
        events = [
            {
                "time": int(rng.integers(0, 3)),
                "action": "arrive",
                "id": f"vm{i}",
                "type": {"custom": {"vcpus": int(rng.integers(1, 3)), "memory_gb": 1}},
                "class": classes[int(rng.integers(3))],
            }
            for i in range(count)
        ]
        vcpus = sum(e["type"]["custom"]["vcpus"] for e in events)
        if vcpus > t.num_cores:
            continue
        settle = 3 + 3 * count
        trace = _simulate(t, events, epochs=settle + 3, sigma=0.0)
        hashes = {record.mapping_hash for record in trace.epochs[settle:]}
        assert len(hashes) == 1


# ---------- Vanilla ----------


def test_vanilla_place_uses_idle_cores_first(two_nodes):
    rng = np.random.default_rng(0)
    m = vanilla_place(make_vm("a", 4), MappingState(), two_nodes, rng)
    m = vanilla_place(make_vm("b", 4), m, two_nodes, rng)
    assert m.core_load(two_nodes.num_cores).max() == 1


def test_vanilla_place_overbooks_up_to_k_max(two_nodes):
    rng = np.random.default_rng(0)
    m = vanilla_place(make_vm("a", 8, memory_gb=8), MappingState(), two_nodes, rng)
    m = vanilla_place(make_vm("b", 8, memory_gb=8), m, two_nodes, rng)
    assert m.core_load(two_nodes.num_cores).tolist() == [2] * 8
    with pytest.raises(CapacityError):
        vanilla_place(make_vm("c", 1, memory_gb=1), m, two_nodes, rng, VanillaParams(k_max=2))


def test_vanilla_step_churns_without_losing_vcpus(reference):
    rng = np.random.default_rng(3)
    m = MappingState()
    for i in range(6):
        m = vanilla_place(make_vm(f"v{i}", 16), m, reference, rng)
    memory = {v: dict(a) for v, a in m.mem_alloc.items()}
    moved = vanilla_step(m, reference, rng, VanillaParams(migration_prob=0.5, k_max=2))
    assert {v: len(c) for v, c in moved.vcpu_assign.items()} == {v: 16 for v in m.vcpu_assign}
    assert moved.core_load(reference.num_cores).max() <= 2
    assert moved.vcpu_assign != m.vcpu_assign
    assert moved.mem_alloc == memory


def test_vanilla_is_reproducible(reference):
    def run(seed):
        rng = np.random.default_rng(seed)
        m = vanilla_place(make_vm("a", 16), MappingState(), reference, rng)
        return vanilla_step(m, reference, rng).vcpu_assign

    assert run(11) == run(11)


def test_vanilla_place_of_single_node_topology():
    t = load_topology(topology_doc(numa=1, cores=2, memory_gb=8))
    m = vanilla_place(make_vm("a", 2), MappingState(), t, np.random.default_rng(1))
    assert sorted(m.vcpu_assign["a"]) == [0, 1]
