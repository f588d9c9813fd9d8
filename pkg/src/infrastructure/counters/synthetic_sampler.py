"""
Muestreador de contadores sintético basado en el modelo de rendimiento.
"""

import numpy as np

from ...domain.entities import CounterSample, MappingState, PerfEstimate, PerfParams, Topology
from ...domain.perfmodel import estimate_perf, sample_counters
from ...domain.repositories import CounterSampler


class SyntheticCounterSampler(CounterSampler):
    """
    Genera IPC y MPI a partir del p estimado de cada VM.

    Las VMs se recorren en orden de id para que el consumo del generador
    aleatorio sea reproducible.
    """

    def __init__(self, params: PerfParams) -> None:
        """
        Args:
            params (PerfParams): Parámetros del modelo de rendimiento.
        """
        self._params: PerfParams = params

    def sample(
        self,
        m: MappingState,
        t: Topology,
        rng: np.random.Generator,
        sigma: float,
        offsets: dict[str, float],
    ) -> tuple[dict[str, PerfEstimate], dict[str, CounterSample]]:
        estimates: dict[str, PerfEstimate] = {}
        samples: dict[str, CounterSample] = {}
        for vm_id in m.vm_ids():
            vm = m.specs[vm_id]
            est = estimate_perf(
                vm, m, t, self._params, rng=rng, sigma=sigma, log_offset=offsets.get(vm_id, 0.0)
            )
            estimates[vm_id] = est
            samples[vm_id] = sample_counters(est, vm, self._params)
        return estimates, samples
