"""Pruebas de tipos de VM y escenarios."""

import pytest

from src.domain.entities import GIB, AnimalClass, EventKind
from src.domain.errors import ScenarioError, ValidationError
from src.domain.workload import parse_scenario, peak_vcpus, preset, serialize_scenario
from src.infrastructure.config.documents import dump_scenario, load_scenario_file
from tests.conftest import PAPER_MIX


@pytest.mark.parametrize(
    "name, vcpus, memory_gb",
    [("small", 4, 16), ("medium", 8, 32), ("large", 16, 64), ("huge", 72, 288)],
)
def test_preset_table(name, vcpus, memory_gb):
    row = preset(name)
    assert row.vcpus == vcpus
    assert row.memory == memory_gb * GIB


def test_unknown_preset():
    with pytest.raises(ScenarioError):
        preset("gigantic")


def test_class_names_are_case_insensitive():
    assert AnimalClass.parse("Rabbit") is AnimalClass.RABBIT
    with pytest.raises(ValidationError):
        AnimalClass.parse("wolf")


def test_paper_mix_scenario():
    """La mezcla de evaluación trae 20 llegadas y 256 vCPUs simultáneas."""
    events = load_scenario_file(PAPER_MIX)
    assert len(events) == 20
    assert all(e.kind is EventKind.ARRIVE and e.time == 0 for e in events)
    assert peak_vcpus(events) == 256
    types = [e.vm.vm_type for e in events]
    assert types.count("small") == 12
    assert types.count("huge") == 2


def test_empty_scenario():
    assert parse_scenario(None) == []
    assert parse_scenario([]) == []


def test_events_sorted_stably_by_time():
    doc = [
        {"time": 5, "action": "depart", "id": "a"},
        {"time": 0, "action": "arrive", "id": "a", "type": "small", "class": "sheep"},
        {"time": 0, "action": "arrive", "id": "b", "type": "small", "class": "devil"},
    ]
    events = parse_scenario(doc)
    assert [(e.time, e.vm_id) for e in events] == [(0, "a"), (0, "b"), (5, "a")]


def test_custom_type():
    doc = [
        {
            "time": 0,
            "action": "arrive",
            "id": "x",
            "type": {"custom": {"vcpus": 6, "memory_gb": 12}},
            "class": "rabbit",
            "sensitive": True,
            "expected_perf": 0.9,
        }
    ]
    (event,) = parse_scenario(doc)
    assert event.vm.vcpus == 6
    assert event.vm.memory == 12 * GIB
    assert event.vm.vm_type == "custom"
    assert event.vm.expected_perf == pytest.approx(0.9)


@pytest.mark.parametrize(
    "doc",
    [
        [{"time": -1, "action": "arrive", "id": "a", "type": "small", "class": "sheep"}],
        [{"time": 0, "action": "depart", "id": "ghost"}],
        [{"time": 0, "action": "arrive", "id": "a", "type": "tiny", "class": "sheep"}],
        [{"time": 0, "action": "arrive", "id": "a", "type": "small"}],
        [
            {"time": 0, "action": "arrive", "id": "a", "type": "small", "class": "sheep"},
            {"time": 1, "action": "arrive", "id": "a", "type": "small", "class": "sheep"},
        ],
        [{"time": 0, "action": "launch", "id": "a"}],
    ],
)
def test_invalid_scenarios(doc):
    with pytest.raises(ScenarioError):
        parse_scenario(doc)


def test_scenario_survives_yaml_dump(tmp_path):
    """Volcar un escenario y volver a leerlo produce los mismos eventos."""
    events = load_scenario_file(PAPER_MIX)
    path = tmp_path / "mix.scenario"
    dump_scenario(events, path)
    assert load_scenario_file(path) == events
    assert serialize_scenario(parse_scenario(serialize_scenario(events))) == serialize_scenario(events)


def test_peak_counts_departures():
    doc = [
        {"time": 0, "action": "arrive", "id": "a", "type": "large", "class": "sheep"},
        {"time": 1, "action": "depart", "id": "a"},
        {"time": 1, "action": "arrive", "id": "b", "type": "small", "class": "sheep"},
    ]
    assert peak_vcpus(parse_scenario(doc)) == 16
