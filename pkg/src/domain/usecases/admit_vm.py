"""
Caso de uso: admitir una VM recién llegada (primera etapa del algoritmo).
"""

from dataclasses import dataclass, field

from ..entities import Action, ActionReason, AlgoConfig, ClassMatrix, MappingState, Topology, VmSpec
from ..errors import CapacityError
from ..placement import Predictor, find_slot, is_good_slot, place_arrival, reshuffle_for_arrival


@dataclass
class Admission:
    """
    Resultado de admitir una VM.

    Attributes:
        mapping (MappingState): Mapeo con la VM colocada.
        actions (list[Action]): Movimientos de reubicación y la propia llegada.
        moves (int): VMs reubicadas para abrirle hueco.
    """

    mapping: MappingState
    actions: list[Action] = field(default_factory=list)
    moves: int = 0


class AdmitVm:
    """
    Coloca una VM en el mejor hueco libre y, si ese hueco no es bueno, intenta
    una reubicación limitada de VMs en marcha antes de aceptar una colocación
    de mejor esfuerzo.
    """

    def __init__(
        self,
        topology: Topology,
        class_matrix: ClassMatrix,
        cfg: AlgoConfig,
        predictor: Predictor | None = None,
    ) -> None:
        """
        Args:
            topology (Topology): Topología del sistema.
            class_matrix (ClassMatrix): Compatibilidad entre clases.
            cfg (AlgoConfig): Configuración del algoritmo.
            predictor (Predictor | None): p sin ruido; desempata las
                colocaciones de mejor esfuerzo.
        """
        self._t = topology
        self._cm = class_matrix
        self._cfg = cfg
        self._predictor = predictor

    def __call__(self, vm: VmSpec, mapping: MappingState, budget: int | None = None) -> Admission:
        """
        Admite `vm` sobre `mapping`.

        Args:
            vm (VmSpec): VM que llega.
            mapping (MappingState): Mapeo actual (no se modifica).
            budget (int | None): VMs que aún se pueden mover en esta época
                (por defecto `max_reshuffles_per_epoch`).

        Returns:
            Admission: Nuevo mapeo y acciones.

        Raises:
            CapacityError: Si no hay núcleos libres suficientes.
        """
        epoch = mapping.epoch
        budget = self._cfg.max_reshuffles_per_epoch if budget is None else budget
        slot = find_slot(vm, mapping, self._t, self._cm)
        if slot is None:
            raise CapacityError(f"insufficient free cores for {vm.id} ({vm.vcpus} vcpus)")

        if is_good_slot(vm, slot, self._t):
            placed = place_arrival(vm, mapping, self._t, self._cm)
            return Admission(mapping=placed, actions=[self._arrival(vm, placed, epoch)])

        result = reshuffle_for_arrival(
            vm, mapping, self._t, self._cm, max_moves=budget, predictor=self._predictor
        )
        actions = [
            Action(
                epoch=epoch,
                vm_id=moved,
                reason=ActionReason.RESHUFFLE,
                from_cores=before,
                to_cores=after,
                detail=f"for {vm.id}",
            )
            for moved, before, after in result.moves
        ]
        actions.append(self._arrival(vm, result.mapping, epoch, flagged=result.flagged))
        return Admission(mapping=result.mapping, actions=actions, moves=len(result.moves))

    @staticmethod
    def _arrival(vm: VmSpec, m: MappingState, epoch: int, flagged: bool = False) -> Action:
        return Action(
            epoch=epoch,
            vm_id=vm.id,
            reason=ActionReason.ARRIVAL,
            from_cores=(),
            to_cores=tuple(m.vcpu_assign[vm.id]),
            flagged=flagged,
            detail="best-effort" if flagged else "",
        )
