"""
Servicio de aplicación para ejecutar simulaciones:
- Cargar los documentos referenciados por una configuración.
- Ejecutar una o varias repeticiones (en paralelo si se piden procesos).
- Comparar algoritmos sobre la misma configuración.
"""

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from ...domain.entities import PerfParams, RunConfig, RunTrace, ScenarioEvent, Topology
from ...domain.errors import ConfigMismatchError
from ...domain.usecases.run_simulation import RunSimulation
from ...infrastructure.config import documents
from ...infrastructure.counters.synthetic_sampler import SyntheticCounterSampler
from ...infrastructure.log_config import get_logger
from ...infrastructure.persistence.ring_buffer import RingBufferTrace

logger = get_logger(__name__)


@dataclass(frozen=True)
class Inputs:
    """Documentos cargados de una configuración."""

    topology: Topology
    events: list[ScenarioEvent]
    params: PerfParams


def execute(inputs: Inputs, cfg: RunConfig) -> RunTrace:
    """
    Ejecuta una repetición con la semilla de `cfg`.

    Función de módulo para poder enviarse a un proceso trabajador.
    """
    run = RunSimulation(
        inputs.topology,
        inputs.events,
        inputs.params,
        sampler=SyntheticCounterSampler(inputs.params),
        sink=RingBufferTrace(),
    )
    return run(cfg)


class SimulationService:
    """
    Servicio que orquesta la carga de documentos y el reparto de ejecuciones
    independientes entre procesos.
    """

    def load(self, cfg: RunConfig) -> Inputs:
        """
        Carga topología, escenario y parámetros de rendimiento.

        Args:
            cfg (RunConfig): Configuración con las rutas.

        Returns:
            Inputs: Documentos validados.
        """
        return Inputs(
            topology=documents.load_topology_file(cfg.topology),
            events=documents.load_scenario_file(cfg.scenario),
            params=documents.load_perf_params_file(cfg.perf_params),
        )

    def run(self, cfg: RunConfig, inputs: Inputs | None = None) -> RunTrace:
        """Una sola ejecución con `cfg.seed`."""
        return execute(inputs or self.load(cfg), cfg)

    def run_repeats(self, cfg: RunConfig, inputs: Inputs | None = None) -> list[RunTrace]:
        """
        Ejecuta `cfg.repeats` repeticiones; la repetición r usa la semilla seed + r.

        Args:
            cfg (RunConfig): Configuración de la ejecución.
            inputs (Inputs | None): Documentos ya cargados.

        Returns:
            list[RunTrace]: Trazas en orden de repetición.
        """
        inputs = inputs or self.load(cfg)
        jobs = [replace(cfg, seed=cfg.seed + r) for r in range(cfg.repeats)]
        return self._fan_out(inputs, jobs, cfg.workers)

    def compare(self, cfgs: list[RunConfig]) -> dict[str, list[RunTrace]]:
        """
        Ejecuta las repeticiones de varias configuraciones que sólo difieren en
        el algoritmo.

        Un algoritmo que aparece más de una vez se etiqueta con su posición
        entre los repetidos (`vanilla#0`, `vanilla#1`).

        Args:
            cfgs (list[RunConfig]): Una configuración por algoritmo.

        Returns:
            dict[str, list[RunTrace]]: Trazas por etiqueta, en el orden dado.

        Raises:
            ConfigMismatchError: Menos de dos algoritmos o configuraciones que
                difieren en algo más que el algoritmo.
        """
        if len(cfgs) < 2:
            raise ConfigMismatchError("compare needs at least two algorithms")
        reference = cfgs[0]
        for other in cfgs[1:]:
            if replace(other, algorithm=reference.algorithm) != reference:
                raise ConfigMismatchError("configs differ in more than the algorithm")

        names = Counter(c.algorithm.value for c in cfgs)
        seen: Counter[str] = Counter()
        labels = []
        for c in cfgs:
            name = c.algorithm.value
            labels.append(f"{name}#{seen[name]}" if names[name] > 1 else name)
            seen[name] += 1

        inputs = self.load(cfgs[0])
        jobs = [
            (label, replace(c, seed=c.seed + r))
            for label, c in zip(labels, cfgs)
            for r in range(c.repeats)
        ]
        traces = self._fan_out(inputs, [job for _, job in jobs], cfgs[0].workers)
        out: dict[str, list[RunTrace]] = {label: [] for label in labels}
        for (label, _), trace in zip(jobs, traces):
            out[label].append(trace)
        return out

    @staticmethod
    def _fan_out(inputs: Inputs, jobs: list[RunConfig], workers: int) -> list[RunTrace]:
        if workers <= 1 or len(jobs) == 1:
            return [execute(inputs, job) for job in jobs]
        logger.info("Running %d job(s) on %d worker process(es)", len(jobs), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(execute, [inputs] * len(jobs), jobs))
