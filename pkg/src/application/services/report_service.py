"""
Servicio de aplicación para resumir trazas:
- Agregar repeticiones de un mismo algoritmo (media, desviación, variabilidad).
- Construir el informe comparativo frente a la línea base.
- Renderizar tablas como CSV, JSON o texto.
"""

from dataclasses import dataclass

import numpy as np
import polars as pl

from ...domain.entities import Algorithm, RunStats, RunTrace, VmStats
from ...domain.errors import ConfigMismatchError

ROW_SCHEMA = {
    "vm_id": pl.Utf8,
    "vm_type": pl.Utf8,
    "class": pl.Utf8,
    "algorithm": pl.Utf8,
    "mean_p": pl.Float64,
    "stddev_p": pl.Float64,
    "variability_ratio": pl.Float64,
    "rel_vs_vanilla": pl.Float64,
}

_FORMATS = ("csv", "json", "table")


@dataclass
class ComparisonReport:
    """
    Informe de una o varias ejecuciones agrupadas por algoritmo.

    Attributes:
        rows (pl.DataFrame): Una fila por (VM, algoritmo) con las columnas de ROW_SCHEMA.
        by_type (pl.DataFrame): Factor relativo medio y variabilidad por tipo de VM.
        by_class (pl.DataFrame): Lo mismo por clase de interferencia.
        baseline (str): Algoritmo de referencia de `rel_vs_vanilla`.
        stats (dict[str, RunStats]): Agregados por algoritmo.
    """

    rows: pl.DataFrame
    by_type: pl.DataFrame
    by_class: pl.DataFrame
    baseline: str
    stats: dict[str, RunStats]


def _comparable(config: dict[str, object], *ignored: str) -> dict[str, object]:
    return {k: v for k, v in config.items() if k not in ignored}


def _ratio(std: float | None, mean: float) -> float | None:
    if std is None:
        return None
    return std / mean if mean > 0 else 0.0


class ReportService:
    """
    Servicio de informes sobre trazas ya ejecutadas o leídas de disco.
    """

    def aggregate(self, traces: list[RunTrace], label: str | None = None) -> RunStats:
        """
        Agrega las repeticiones de una misma configuración.

        La desviación típica es muestral (ddof=1) y sólo se calcula con dos o
        más repeticiones; con una sola, desviación y variabilidad quedan a None.

        Args:
            traces (list[RunTrace]): Trazas que sólo difieren en la semilla.
            label (str | None): Nombre del grupo en las filas (por defecto el
                algoritmo de las trazas).

        Returns:
            RunStats: Filas por VM y agregado de la ejecución.

        Raises:
            ConfigMismatchError: Lista vacía o configuraciones distintas.
        """
        if not traces:
            raise ConfigMismatchError("no traces to aggregate")
        reference = _comparable(traces[0].config, "seed")
        for trace in traces[1:]:
            if _comparable(trace.config, "seed") != reference:
                raise ConfigMismatchError("traces differ in more than the seed")

        algorithm = label or str(traces[0].config["algorithm"])
        specs = {}
        for trace in traces:
            for vm_id, vm in trace.vms.items():
                specs.setdefault(vm_id, vm)

        rows: list[VmStats] = []
        for vm_id, vm in specs.items():
            values = np.array([t.summary[vm_id] for t in traces if vm_id in t.summary])
            if values.size == 0:
                continue
            mean = float(values.mean())
            std = float(values.std(ddof=1)) if values.size >= 2 else None
            rows.append(
                VmStats(
                    vm_id=vm_id,
                    vm_type=vm.vm_type,
                    animal_class=vm.animal_class.value,
                    algorithm=algorithm,
                    mean_p=mean,
                    stddev_p=std,
                    variability_ratio=_ratio(std, mean),
                )
            )

        run_means = np.array([np.mean(list(t.summary.values())) for t in traces if t.summary])
        stats = RunStats(algorithm=algorithm, repeats=len(traces), rows=rows)
        if run_means.size:
            stats.mean_p = float(run_means.mean())
            if run_means.size >= 2:
                stats.variability_ratio = _ratio(float(run_means.std(ddof=1)), stats.mean_p)
        return stats

    def report(self, traces_by_algorithm: dict[str, list[RunTrace]]) -> ComparisonReport:
        """
        Construye el informe comparativo.

        La referencia es el primer grupo de vanilla si lo hay y, si no, el
        primer grupo dado; `rel_vs_vanilla` es mean_p / mean_p de la referencia
        para la misma VM.

        Args:
            traces_by_algorithm (dict[str, list[RunTrace]]): Trazas por
                algoritmo o etiqueta de grupo.

        Returns:
            ComparisonReport: Filas y factores por tipo y por clase.

        Raises:
            ConfigMismatchError: Si los grupos no comparten configuración
                salvo algoritmo y semilla.
        """
        if not traces_by_algorithm:
            raise ConfigMismatchError("no traces to report")
        groups = {k: v for k, v in traces_by_algorithm.items() if v}
        references = {
            repr(sorted(_comparable(v[0].config, "seed", "algorithm").items()))
            for v in groups.values()
        }
        if len(references) > 1:
            raise ConfigMismatchError("traces differ in more than algorithm and seed")

        stats = {label: self.aggregate(traces, label) for label, traces in groups.items()}
        baseline = next(
            (k for k, v in groups.items() if v[0].config["algorithm"] == Algorithm.VANILLA.value),
            next(iter(groups)),
        )
        base_p = {row.vm_id: row.mean_p for row in stats[baseline].rows}

        records = [
            {
                "vm_id": row.vm_id,
                "vm_type": row.vm_type,
                "class": row.animal_class,
                "algorithm": row.algorithm,
                "mean_p": row.mean_p,
                "stddev_p": row.stddev_p,
                "variability_ratio": row.variability_ratio,
                "rel_vs_vanilla": (
                    row.mean_p / base_p[row.vm_id] if base_p.get(row.vm_id) else None
                ),
            }
            for s in stats.values()
            for row in s.rows
        ]
        rows = pl.DataFrame(records, schema=ROW_SCHEMA)
        return ComparisonReport(
            rows=rows,
            by_type=self._factors(rows, "vm_type"),
            by_class=self._factors(rows, "class"),
            baseline=baseline,
            stats=stats,
        )

    @staticmethod
    def _factors(rows: pl.DataFrame, key: str) -> pl.DataFrame:
        return (
            rows.group_by(["algorithm", key], maintain_order=True)
            .agg(
                pl.len().alias("vms"),
                pl.col("mean_p").mean().alias("mean_p"),
                pl.col("rel_vs_vanilla").mean().alias("factor"),
                pl.col("variability_ratio").mean().alias("variability_ratio"),
            )
            .sort(["algorithm", key])
        )

    def render(self, report: ComparisonReport, fmt: str) -> str:
        """
        Renderiza el informe.

        `csv` y `json` contienen sólo las filas por VM; `table` añade los
        factores por tipo y por clase.

        Args:
            report (ComparisonReport): Informe a renderizar.
            fmt (str): "csv", "json" o "table".

        Returns:
            str: Texto listo para escribir.
        """
        if fmt not in _FORMATS:
            raise ValueError(f"unknown report format {fmt!r}")
        if fmt == "csv":
            return report.rows.write_csv()
        if fmt == "json":
            return report.rows.write_json() + "\n"
        with pl.Config(tbl_rows=-1, tbl_cols=-1, tbl_hide_dataframe_shape=True, tbl_width_chars=160):
            parts = [
                str(report.rows),
                f"factors by VM type (vs {report.baseline})",
                str(report.by_type),
                f"factors by class (vs {report.baseline})",
                str(report.by_class),
            ]
        return "\n".join(parts) + "\n"
