"""
Lectura y escritura de los documentos YAML: topología, escenario y
parámetros del modelo de rendimiento.

Los parsers del dominio reciben el documento ya cargado; este módulo sólo
resuelve rutas, lee el fichero y traduce los fallos de E/S o de sintaxis a la
excepción de validación correspondiente.
"""

from pathlib import Path
from typing import Any

import yaml

from ...domain.entities import PerfParams, ScenarioEvent, Topology
from ...domain.errors import PerfParamsError, ScenarioError, TopologyError, ValidationError
from ...domain.perfmodel import parse_perf_params, serialize_perf_params
from ...domain.topology import load_topology
from ...domain.workload import parse_scenario, serialize_scenario
from ..log_config import get_logger

logger = get_logger(__name__)

ASSETS_DIR = Path(__file__).resolve().parents[3] / "assets"


def resolve(path: str | Path, kind: str) -> Path:
    """
    Resuelve una ruta; si no existe, se busca por nombre en `assets/<kind>`.

    Args:
        path (str | Path): Ruta indicada por el usuario.
        kind (str): Subdirectorio de assets (topologies, scenarios, params).

    Returns:
        Path: Ruta existente o la original si no se encuentra.
    """
    candidate = Path(path)
    if candidate.exists():
        return candidate
    shipped = ASSETS_DIR / kind / candidate.name
    return shipped if shipped.exists() else candidate


def read_yaml(path: str | Path, error: type[ValidationError] = ValidationError) -> Any:
    """
    Lee un documento YAML con `yaml.safe_load`.

    Args:
        path (str | Path): Fichero a leer.
        error (type[ValidationError]): Excepción a lanzar si falla.

    Returns:
        Any: Documento parseado (None si el fichero está vacío).
    """
    try:
        with open(path, encoding="utf-8") as fh:
            return yaml.safe_load(fh)
    except OSError as exc:
        raise error(f"cannot read {path}: {exc.strerror or exc}") from exc
    except yaml.YAMLError as exc:
        raise error(f"invalid YAML in {path}: {exc}") from exc


def load_topology_file(path: str | Path) -> Topology:
    resolved = resolve(path, "topologies")
    topology = load_topology(read_yaml(resolved, TopologyError))
    logger.info("Topology document %s loaded", resolved)
    return topology


def load_scenario_file(path: str | Path) -> list[ScenarioEvent]:
    resolved = resolve(path, "scenarios")
    events = parse_scenario(read_yaml(resolved, ScenarioError))
    logger.info("Scenario %s loaded: %d event(s)", resolved, len(events))
    return events


def load_perf_params_file(path: str | Path | None) -> PerfParams:
    """Parámetros de rendimiento; sin ruta se usan los valores por defecto."""
    if not path:
        return PerfParams.default()
    resolved = resolve(path, "params")
    params = parse_perf_params(read_yaml(resolved, PerfParamsError))
    logger.info("Perf params %s loaded", resolved)
    return params


def dump_scenario(events: list[ScenarioEvent], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(serialize_scenario(events), fh, sort_keys=False)


def dump_perf_params(params: PerfParams, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(serialize_perf_params(params), fh, sort_keys=False, allow_unicode=True)
