"""
Caso de uso: ejecutar una simulación por épocas de un escenario.
"""

from collections import defaultdict
from dataclasses import replace

import numpy as np

from ..controller import step
from ..entities import (
    Action,
    ActionReason,
    Algorithm,
    ClassMatrix,
    EventKind,
    MapperState,
    MappingState,
    PerfParams,
    RunConfig,
    RunTrace,
    ScenarioEvent,
    Topology,
    VmSpec,
)
from ..errors import CapacityError
from ..logs import get_logger
from ..perfmodel import measured_performance, predict_perf
from ..repositories import CounterSampler, TraceSink
from ..vanilla import vanilla_place, vanilla_step
from .admit_vm import AdmitVm
from .record_epoch import RecordEpoch

logger = get_logger(__name__)


class RunSimulation:
    """
    Bucle de simulación de una ejecución.

    En cada época: salidas, llegadas (las sensibles primero), paso del
    algoritmo, estimación de rendimiento y muestreo de contadores de todas las
    VMs vivas, y registro de la época en el sink.
    """

    def __init__(
        self,
        topology: Topology,
        events: list[ScenarioEvent],
        params: PerfParams,
        sampler: CounterSampler,
        sink: TraceSink,
        class_matrix: ClassMatrix | None = None,
    ) -> None:
        """
        Inicializa el caso de uso.

        Args:
            topology (Topology): Topología del sistema.
            events (list[ScenarioEvent]): Escenario validado.
            params (PerfParams): Parámetros del modelo de rendimiento.
            sampler (CounterSampler): Fuente de contadores.
            sink (TraceSink): Destino de los registros de época.
            class_matrix (ClassMatrix | None): Por defecto la matriz estándar.
        """
        self._t = topology
        self._events = events
        self._params = params
        self._sampler = sampler
        self._sink = sink
        self._record = RecordEpoch(sink)
        self._cm = class_matrix or ClassMatrix.default()

    def _predict(self, vm: VmSpec, m: MappingState) -> float:
        return predict_perf(vm, m, self._t, self._params)

    def __call__(self, cfg: RunConfig) -> RunTrace:
        """
        Ejecuta `cfg.epochs` épocas con la semilla `cfg.seed`.

        Args:
            cfg (RunConfig): Configuración de la ejecución.

        Returns:
            RunTrace: Traza completa; también se entrega al sink con `close`.
        """
        t = self._t
        rng = np.random.default_rng(cfg.seed)
        regime = self._params.regimes[cfg.algorithm.noise_regime]
        epoch_sigma, run_sigma = regime.epoch_sigma, regime.run_sigma
        if cfg.sigma_override is not None:
            epoch_sigma = run_sigma = cfg.sigma_override

        is_vanilla = cfg.algorithm is Algorithm.VANILLA
        algo = cfg.algo
        if not is_vanilla:
            algo = replace(algo, metric=cfg.algorithm.metric)
        admit = AdmitVm(t, self._cm, algo, predictor=self._predict)

        by_time: dict[int, list[ScenarioEvent]] = defaultdict(list)
        for event in self._events:
            by_time[event.time].append(event)

        trace = RunTrace(
            config=cfg.describe(),
            layout=t.layout(),
            torus=[list(s.torus_coord) if s.torus_coord else None for s in t.servers],
        )
        state = MapperState(mapping=MappingState())
        offsets: dict[str, float] = {}
        measured: dict[str, float] = {}
        p_history: dict[str, list[float]] = defaultdict(list)

        logger.info(
            "Run start: %s, seed %d, %d epoch(s)", cfg.algorithm.value, cfg.seed, cfg.epochs
        )
        for epoch in range(cfg.epochs):
            state.mapping.epoch = epoch
            actions: list[Action] = []
            rejected: list[str] = []
            warnings: list[str] = []
            events = by_time.get(epoch, [])

            for event in (e for e in events if e.kind is EventKind.DEPART):
                if not state.mapping.is_mapped(event.vm_id):
                    warnings.append(f"depart of unmapped VM {event.vm_id}")
                    continue
                state.mapping.remove(event.vm_id)
                offsets.pop(event.vm_id, None)
                measured.pop(event.vm_id, None)
                state.pending.pop(event.vm_id, None)

            arrivals = [e.vm for e in events if e.kind is EventKind.ARRIVE and e.vm is not None]
            arrivals.sort(key=lambda vm: not vm.sensitive)
            budget = algo.max_reshuffles_per_epoch
            for vm in arrivals:
                try:
                    if is_vanilla:
                        state.mapping = vanilla_place(vm, state.mapping, t, rng, cfg.vanilla)
                        actions.append(
                            Action(
                                epoch=epoch,
                                vm_id=vm.id,
                                reason=ActionReason.ARRIVAL,
                                from_cores=(),
                                to_cores=tuple(state.mapping.vcpu_assign[vm.id]),
                            )
                        )
                    else:
                        admission = admit(vm, state.mapping, budget=budget)
                        state.mapping = admission.mapping
                        budget = max(budget - admission.moves, 0)
                        actions.extend(admission.actions)
                        if admission.moves:
                            # Las VMs reubicadas no pueden atribuir su cambio a un remapeo
                            for a in admission.actions:
                                state.pending.pop(a.vm_id, None)
                except CapacityError as exc:
                    rejected.append(vm.id)
                    logger.info("Arrival of %s rejected at epoch %d: %s", vm.id, epoch, exc)
                    continue
                offsets[vm.id] = (
                    float(rng.normal(-(run_sigma**2) / 2.0, run_sigma)) if run_sigma > 0 else 0.0
                )
                trace.vms.setdefault(vm.id, vm)

            if is_vanilla:
                state.mapping = vanilla_step(state.mapping, t, rng, cfg.vanilla)
            elif not arrivals and epoch % algo.duration == 0 and measured:
                state, step_actions, step_warnings = step(
                    state, measured, t, self._cm, algo, predictor=self._predict
                )
                actions.extend(step_actions)
                warnings.extend(step_warnings)

            estimates, samples = self._sampler.sample(state.mapping, t, rng, epoch_sigma, offsets)
            if not is_vanilla:
                measured = {
                    vm_id: measured_performance(
                        samples[vm_id], state.mapping.specs[vm_id], self._params, algo.metric
                    )
                    for vm_id in samples
                }
            for vm_id, est in estimates.items():
                if epoch >= cfg.warmup:
                    p_history[vm_id].append(est.p)

            record = self._record(
                epoch,
                state.mapping,
                estimates,
                samples,
                actions,
                rejected,
                warnings,
                benefit=None if is_vanilla else state.benefit,
            )
            trace.epochs.append(record)

        for vm_id in trace.vms:
            history = p_history.get(vm_id)
            if not history:
                # VM que sólo vivió durante el calentamiento
                history = [r.estimates[vm_id].p for r in trace.epochs if vm_id in r.estimates]
            if history:
                trace.summary[vm_id] = float(np.mean(history))

        self._sink.close(trace)
        logger.info("Run finished: %s, seed %d", cfg.algorithm.value, cfg.seed)
        return trace
