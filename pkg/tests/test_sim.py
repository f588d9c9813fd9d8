"""Pruebas del bucle de simulación, las trazas y los informes."""

from dataclasses import replace

import pytest

from src.application.services.report_service import ROW_SCHEMA, ReportService
from src.application.services.simulation_service import SimulationService
from src.domain.entities import (
    ActionReason,
    AlgoConfig,
    Algorithm,
    AnimalClass,
    BenefitMatrix,
    EpochRecord,
    PerfParams,
    RunConfig,
    RunTrace,
    SeparationLevel,
)
from src.domain.errors import ConfigMismatchError, TraceError
from src.domain.topology import load_topology
from src.domain.usecases.record_epoch import RecordEpoch
from src.domain.usecases.run_simulation import RunSimulation
from src.domain.workload import parse_scenario
from src.infrastructure.counters.synthetic_sampler import SyntheticCounterSampler
from src.infrastructure.persistence.ndjson_trace import (
    decode_traces,
    encode_trace,
    read_traces,
    trace_hash,
    write_traces,
)
from src.infrastructure.persistence.ring_buffer import RingBufferTrace
from tests.conftest import PAPER_MIX, REFERENCE_TOPO, make_vm, mapping_with, topology_doc

SOLO_SHEEP = PAPER_MIX.replace("paper-mix", "solo-sheep")


def _simulate(t, doc, algorithm=Algorithm.SM_IPC, epochs=6, seed=0, sigma=None, sink=None, algo=None):
    params = PerfParams.default()
    run = RunSimulation(
        t,
        parse_scenario(doc),
        params,
        sampler=SyntheticCounterSampler(params),
        sink=sink or RingBufferTrace(),
    )
    cfg = RunConfig(
        topology="inline",
        scenario="inline",
        perf_params="",
        algorithm=algorithm,
        seed=seed,
        epochs=epochs,
        warmup=1,
        sigma_override=sigma,
        algo=algo or AlgoConfig(),
    )
    return run(cfg)


def _arrive(vm_id, vm_type="small", animal="sheep", time=0, **extra):
    return {"time": time, "action": "arrive", "id": vm_id, "type": vm_type, "class": animal, **extra}


def _fake(seed, summary, algorithm="sm_ipc", **config):
    """Traza mínima con resumen dado, para probar los agregados."""
    trace = RunTrace(
        config={"topology": "t", "scenario": "s", "algorithm": algorithm, "seed": seed, **config},
        layout=[],
    )
    for vm_id in summary:
        trace.vms[vm_id] = make_vm(vm_id, 4, "rabbit" if vm_id.startswith("r") else "sheep")
    trace.summary = dict(summary)
    return trace


# ---------- Bucle de simulación ----------


def test_empty_scenario_runs_quietly(two_nodes):
    trace = _simulate(two_nodes, [], epochs=10)
    assert len(trace.epochs) == 10
    assert all(rec.assignment == {} and rec.actions == [] for rec in trace.epochs)
    assert len({rec.mapping_hash for rec in trace.epochs}) == 1
    assert trace.summary == {}


def test_same_seed_same_trace(reference):
    doc = [_arrive("a", "medium", "devil"), _arrive("b", "medium", "rabbit", sensitive=True)]
    hashes = {}
    for algorithm in Algorithm:
        first = _simulate(reference, doc, algorithm=algorithm, seed=9)
        second = _simulate(reference, doc, algorithm=algorithm, seed=9)
        assert trace_hash(first) == trace_hash(second)
        hashes[algorithm] = trace_hash(first)
    other = _simulate(reference, doc, algorithm=Algorithm.VANILLA, seed=10)
    assert trace_hash(other) != hashes[Algorithm.VANILLA]


def test_sensitive_arrivals_are_placed_first(two_nodes):
    doc = [_arrive("plain", "small", "sheep"), _arrive("picky", "small", "rabbit", sensitive=True)]
    trace = _simulate(two_nodes, doc, epochs=1)
    arrivals = [a.vm_id for a in trace.epochs[0].actions if a.reason is ActionReason.ARRIVAL]
    assert arrivals == ["picky", "plain"]
    assert list(trace.vms) == ["picky", "plain"]


def test_departure_frees_the_vm(two_nodes):
    doc = [_arrive("a"), _arrive("b"), {"time": 2, "action": "depart", "id": "a"}]
    trace = _simulate(two_nodes, doc, epochs=4)
    assert set(trace.epochs[1].assignment) == {"a", "b"}
    assert set(trace.epochs[2].assignment) == {"b"}
    assert "a" not in trace.epochs[3].estimates
    assert set(trace.summary) == {"a", "b"}


def test_arrival_beyond_capacity_is_rejected(two_nodes):
    doc = [_arrive("a"), _arrive("b"), _arrive("c")]
    for algorithm in (Algorithm.SM_IPC, Algorithm.VANILLA):
        trace = _simulate(two_nodes, doc, algorithm=algorithm, epochs=2)
        assert trace.epochs[0].rejected == ["c"]
        assert "c" not in trace.vms
        assert set(trace.epochs[1].assignment) == {"a", "b"}


def test_reshuffle_budget_is_shared_by_the_epoch():
    t = load_topology(topology_doc(numa=4))
    small = {"custom": {"vcpus": 2, "memory_gb": 1}}
    large = {"custom": {"vcpus": 4, "memory_gb": 1}}
    events = [_arrive(v, small) for v in "abcd"] + [_arrive(v, large, time=1) for v in "xy"]
    trace = _simulate(t, events, epochs=2, sigma=0.0, algo=AlgoConfig(max_reshuffles_per_epoch=1))
    actions = trace.epochs[1].actions
    assert len([a for a in actions if a.reason is ActionReason.RESHUFFLE]) == 1
    assert {a.vm_id: a.flagged for a in actions if a.reason is ActionReason.ARRIVAL} == {"x": False, "y": True}


def test_sigma_zero_gives_noise_free_estimates(reference):
    trace = _simulate(reference, [_arrive("m", "medium", "sheep")], sigma=0.0)
    for rec in trace.epochs:
        assert rec.estimates["m"].p == pytest.approx(1.0)
        assert rec.estimates["m"].breakdown.noise == 1.0
    assert trace.summary["m"] == pytest.approx(1.0)


def test_vanilla_records_no_benefit_matrix(two_nodes):
    trace = _simulate(two_nodes, [_arrive("a")], algorithm=Algorithm.VANILLA, epochs=2)
    assert all(rec.benefit == {} for rec in trace.epochs)
    sm = _simulate(two_nodes, [_arrive("a")], epochs=2)
    assert sm.epochs[-1].benefit["rabbit"]["numa_node"] == 5.0


def test_trace_records_torus_and_layout(reference):
    trace = _simulate(reference, [], epochs=1)
    assert trace.torus[0] == [0, 0]
    assert len(trace.layout) == 6
    assert trace.config["algorithm"] == "sm_ipc"


# ---------- Sinks y NDJSON ----------


def test_ring_buffer_keeps_latest():
    sink = RingBufferTrace(capacity=3)
    for epoch in range(5):
        sink.push(EpochRecord(epoch=epoch, mapping_hash="", assignment={}))
    assert [r.epoch for r in sink.snapshot(2)] == [3, 4]
    assert [r.epoch for r in sink.snapshot(0)] == [2, 3, 4]
    assert sink.trace is None


def test_record_epoch_freezes_assignment(two_nodes):
    sink = RingBufferTrace()
    m = mapping_with(two_nodes, (make_vm("a", 2), [0, 1]))
    record = RecordEpoch(sink)(4, m, {}, {}, [], [], [], benefit=BenefitMatrix.default())
    m.vcpu_assign["a"][0] = 5
    assert record.assignment == {"a": [0, 1]}
    assert record.benefit["rabbit"]["numa_node"] == BenefitMatrix.default().get(
        AnimalClass.RABBIT, SeparationLevel.NUMA_NODE
    )
    assert sink.snapshot() == [record]


def test_simulation_closes_sink(two_nodes):
    sink = RingBufferTrace()
    trace = _simulate(two_nodes, [_arrive("a")], epochs=3, sink=sink)
    assert sink.trace is trace
    assert len(sink.snapshot()) == 3


def test_ndjson_keeps_trace_hash(tmp_path, two_nodes):
    """Leer una traza escrita reproduce exactamente el mismo texto canónico."""
    doc = [_arrive("a", "small", "devil"), _arrive("b", "small", "rabbit")]
    traces = [_simulate(two_nodes, doc, seed=s) for s in (1, 2)]
    path = tmp_path / "run.ndjson"
    write_traces(traces, path)
    loaded = read_traces(path)
    assert [trace_hash(t) for t in loaded] == [trace_hash(t) for t in traces]


@pytest.mark.parametrize(
    "lines",
    [
        [],
        ["{not json"],
        ['{"kind": "epoch", "epoch": 0}'],
        ['{"kind": "mystery"}'],
    ],
)
def test_malformed_traces(lines):
    with pytest.raises(TraceError):
        decode_traces(lines)


def test_missing_trace_file(tmp_path):
    with pytest.raises(TraceError):
        read_traces(tmp_path / "nope.ndjson")


def test_encoded_trace_is_one_line_per_record(two_nodes):
    text = encode_trace(_simulate(two_nodes, [_arrive("a")], epochs=4))
    lines = text.splitlines()
    assert len(lines) == 1 + 4 + 1
    assert lines[0].startswith('{"config"')
    assert '"kind":"summary"' in lines[-1]


# ---------- Servicio de simulación ----------


@pytest.fixture
def base_cfg():
    return RunConfig(
        topology=REFERENCE_TOPO,
        scenario=SOLO_SHEEP,
        perf_params="default.perf",
        epochs=4,
        warmup=1,
    )


def test_colocation_pairs_keep_devil_away_from_rabbit(reference, base_cfg):
    cfg = replace(base_cfg, scenario="colocation-pairs.scenario", algorithm=Algorithm.SM_IPC, epochs=60)
    trace = SimulationService().run(cfg)
    shared = [
        record.epoch
        for record in trace.epochs
        if {"rabbit-d", "devil-a"} <= set(record.assignment)
        and set(reference.core_llc[record.assignment["rabbit-d"]].tolist())
        & set(reference.core_llc[record.assignment["devil-a"]].tolist())
    ]
    assert [r.epoch for r in trace.epochs if "devil-a" in r.assignment] == list(range(40, 60))
    assert shared == []


def test_repeats_use_consecutive_seeds(base_cfg):
    traces = SimulationService().run_repeats(replace(base_cfg, seed=5, repeats=3))
    assert [t.config["seed"] for t in traces] == [5, 6, 7]


def test_worker_processes_match_sequential_run(base_cfg):
    cfg = replace(base_cfg, algorithm=Algorithm.VANILLA, repeats=2)
    sequential = SimulationService().run_repeats(cfg)
    parallel = SimulationService().run_repeats(replace(cfg, workers=2))
    assert [trace_hash(t) for t in parallel] == [trace_hash(t) for t in sequential]


def test_compare_groups_by_algorithm(base_cfg):
    cfgs = [replace(base_cfg, algorithm=a, repeats=2) for a in (Algorithm.VANILLA, Algorithm.SM_IPC)]
    out = SimulationService().compare(cfgs)
    assert list(out) == ["vanilla", "sm_ipc"]
    assert [len(v) for v in out.values()] == [2, 2]


def test_compare_same_algorithm_twice_gives_unit_factors(base_cfg):
    cfgs = [replace(base_cfg, algorithm=Algorithm.VANILLA, repeats=2, seed=9)] * 2
    out = SimulationService().compare(cfgs)
    assert list(out) == ["vanilla#0", "vanilla#1"]

    report = ReportService().report(out)
    assert report.baseline == "vanilla#0"
    assert report.rows["algorithm"].to_list() == ["vanilla#0", "vanilla#1"]
    assert report.rows["rel_vs_vanilla"].to_list() == [1.0, 1.0]


@pytest.mark.parametrize(
    "variants",
    [
        [{}],
        [{"algorithm": Algorithm.VANILLA}, {"algorithm": Algorithm.SM_IPC, "seed": 4}],
    ],
)
def test_compare_rejects_bad_groups(base_cfg, variants):
    with pytest.raises(ConfigMismatchError):
        SimulationService().compare([replace(base_cfg, **v) for v in variants])


# ---------- Informes ----------


def test_aggregate_two_repeats():
    stats = ReportService().aggregate([_fake(0, {"s": 0.5}), _fake(1, {"s": 1.5})])
    (row,) = stats.rows
    assert row.mean_p == pytest.approx(1.0)
    assert row.stddev_p == pytest.approx(0.70710678)
    assert row.variability_ratio == pytest.approx(0.70710678)
    assert stats.repeats == 2
    assert stats.mean_p == pytest.approx(1.0)


def test_aggregate_single_run_has_no_spread():
    stats = ReportService().aggregate([_fake(0, {"s": 0.8})])
    assert stats.rows[0].stddev_p is None
    assert stats.rows[0].variability_ratio is None
    assert stats.variability_ratio is None


def test_aggregate_rejects_mixed_configs():
    with pytest.raises(ConfigMismatchError):
        ReportService().aggregate([_fake(0, {"s": 1.0}), _fake(1, {"s": 1.0}, epochs=7)])
    with pytest.raises(ConfigMismatchError):
        ReportService().aggregate([])


def test_report_against_vanilla():
    service = ReportService()
    report = service.report(
        {
            "sm_ipc": [_fake(0, {"s": 0.9, "r": 0.8}), _fake(1, {"s": 0.9, "r": 0.8})],
            "vanilla": [
                _fake(0, {"s": 0.6, "r": 0.4}, algorithm="vanilla"),
                _fake(1, {"s": 0.3, "r": 0.4}, algorithm="vanilla"),
            ],
        }
    )
    assert report.baseline == "vanilla"
    assert report.rows.columns == list(ROW_SCHEMA)
    assert report.rows.height == 4
    sm = report.rows.filter(report.rows["algorithm"] == "sm_ipc").sort("vm_id")
    assert sm["rel_vs_vanilla"].to_list() == pytest.approx([2.0, 2.0])
    by_class = report.by_class.filter(report.by_class["algorithm"] == "sm_ipc")
    assert by_class["factor"].to_list() == pytest.approx([2.0, 2.0])
    assert by_class["vms"].to_list() == [1, 1]


def test_report_without_vanilla_uses_first_algorithm():
    report = ReportService().report(
        {"sm_mpi": [_fake(0, {"s": 0.5}, algorithm="sm_mpi")], "sm_ipc": [_fake(0, {"s": 1.0})]}
    )
    assert report.baseline == "sm_mpi"
    assert report.rows["rel_vs_vanilla"].to_list() == pytest.approx([1.0, 2.0])


def test_report_rejects_different_scenarios():
    with pytest.raises(ConfigMismatchError):
        ReportService().report(
            {
                "sm_ipc": [_fake(0, {"s": 1.0})],
                "vanilla": [_fake(0, {"s": 1.0}, algorithm="vanilla", scenario="other")],
            }
        )


def test_render_formats():
    service = ReportService()
    report = service.report({"vanilla": [_fake(0, {"s": 0.5}, algorithm="vanilla")]})
    csv = service.render(report, "csv")
    assert csv.splitlines()[0] == ",".join(ROW_SCHEMA)
    assert len(csv.splitlines()) == 2
    assert service.render(report, "json").startswith("[")
    table = service.render(report, "table")
    assert "factors by VM type (vs vanilla)" in table
    with pytest.raises(ValueError):
        service.render(report, "xml")
