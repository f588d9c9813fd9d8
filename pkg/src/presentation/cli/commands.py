"""
Interfaz de línea de comandos.

Subcomandos: validate-topology, run, compare, snapshot y report. Los datos van
a --out o a la salida estándar; los diagnósticos a la salida de error.

Códigos de salida:
  0 - éxito
  1 - documento o argumento inválido (incluidos errores de uso)
  2 - error de ejecución
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, Sequence

from ...application.services.report_service import ReportService
from ...application.services.simulation_service import SimulationService
from ...domain.entities import Algorithm, AlgoConfig, RunConfig, RunTrace, VanillaParams
from ...domain.errors import NumamapError, ValidationError
from ...infrastructure.config.documents import load_topology_file
from ...infrastructure.log_config import configure_logging, get_logger
from ...infrastructure.persistence.ndjson_trace import encode_trace, read_traces
from .render import render_snapshot

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

_ALGORITHMS = ("vanilla", "sm-ipc", "sm-mpi")


class UsageError(ValidationError):
    """Argumentos de línea de comandos inválidos."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _add_run_flags(p: argparse.ArgumentParser, fmt_default: str) -> None:
    p.add_argument("--topology", required=True, help="Documento de topología")
    p.add_argument("--scenario", required=True, help="Documento de escenario")
    p.add_argument("--perf-params", default="", help="Parámetros del modelo (por defecto los de fábrica)")
    p.add_argument("--seed", type=int, default=0, help="Semilla base (default: 0)")
    p.add_argument("--epochs", type=int, default=100, help="Épocas por ejecución (default: 100)")
    p.add_argument("--repeats", type=int, default=1, help="Repeticiones (default: 1)")
    p.add_argument("--warmup", type=int, default=3, help="Épocas excluidas de las estadísticas (default: 3)")
    p.add_argument("--workers", type=int, default=1, help="Procesos para repartir repeticiones (default: 1)")
    p.add_argument("--sigma", type=float, default=None, help="Fuerza el ruido; 0 = determinista")
    p.add_argument("--threshold", type=float, default=0.10, help="Desviación tolerada T (default: 0.10)")
    p.add_argument("--duration", type=int, default=1, help="Intervalo de decisión en épocas (default: 1)")
    p.add_argument("--max-reshuffles", type=int, default=2, help="VMs movidas por época al llegar (default: 2)")
    p.add_argument("--move-cost", type=float, default=0.25, help="Coste por vCPU movida (default: 0.25)")
    p.add_argument("--learning-rate", type=float, default=0.3, help="Tasa de la matriz de beneficio (default: 0.3)")
    p.add_argument("--migration-prob", type=float, default=0.2, help="Migración por época en vanilla (default: 0.2)")
    p.add_argument("--k-max", type=int, default=2, help="vCPUs máximas por núcleo en vanilla (default: 2)")
    p.add_argument("--out", default=None, help="Fichero de salida (por defecto stdout)")
    p.add_argument(
        "--format",
        choices=["json", "csv", "table"],
        default=fmt_default,
        help=f"Formato de salida (default: {fmt_default})",
    )


def build_parser() -> argparse.ArgumentParser:
    """Construye el parser con todos los subcomandos."""
    parser = _Parser(
        prog="numamap",
        description="Motor de mapeo de VMs a núcleos consciente de NUMA",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s validate-topology --topology reference-numascale.topo
  %(prog)s run --topology reference-numascale.topo --scenario paper-mix.scenario --sigma 0
  %(prog)s compare --topology reference-numascale.topo --scenario paper-mix.scenario \\
      --algorithm vanilla --algorithm sm-ipc --repeats 3
  %(prog)s snapshot --trace run.ndjson --epoch 50
""",
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Nivel de log en stderr (default: WARNING)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-topology", help="Valida un documento de topología")
    p.add_argument("--topology", required=True)
    p.set_defaults(handler=_cmd_validate_topology)

    p = sub.add_parser("run", help="Ejecuta un escenario con un algoritmo")
    _add_run_flags(p, fmt_default="json")
    p.add_argument("--algorithm", choices=_ALGORITHMS, default="sm-ipc")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("compare", help="Compara algoritmos sobre el mismo escenario")
    _add_run_flags(p, fmt_default="csv")
    p.add_argument("--algorithm", choices=_ALGORITHMS, action="append", required=True)
    p.set_defaults(handler=_cmd_compare)

    p = sub.add_parser("snapshot", help="Dibuja el mapeo de una época de una traza")
    p.add_argument("--trace", required=True)
    p.add_argument("--epoch", type=int, required=True)
    p.add_argument("--run", type=int, default=0, help="Índice de la traza en el fichero (default: 0)")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_snapshot)

    p = sub.add_parser("report", help="Resume las trazas de un fichero")
    p.add_argument("--trace", required=True)
    p.add_argument("--format", choices=["json", "csv", "table"], default="csv")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_report)
    return parser


def run_config(args: argparse.Namespace, algorithm: str) -> RunConfig:
    """
    Traduce los flags de ejecución a una RunConfig.

    Raises:
        ValidationError: Si algún valor está fuera de rango.
    """
    return RunConfig(
        topology=args.topology,
        scenario=args.scenario,
        perf_params=args.perf_params,
        algorithm=Algorithm.parse(algorithm),
        seed=args.seed,
        epochs=args.epochs,
        repeats=args.repeats,
        warmup=args.warmup,
        workers=max(args.workers, 1),
        sigma_override=args.sigma,
        algo=AlgoConfig(
            threshold=args.threshold,
            duration=args.duration,
            max_reshuffles_per_epoch=args.max_reshuffles,
            move_cost=args.move_cost,
            learning_rate=args.learning_rate,
        ),
        vanilla=VanillaParams(migration_prob=args.migration_prob, k_max=args.k_max),
    )


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
        logger.info("Output written to %s", out)
    else:
        sys.stdout.write(text)


def _group(traces: list[RunTrace]) -> dict[str, list[RunTrace]]:
    groups: dict[str, list[RunTrace]] = {}
    for trace in traces:
        groups.setdefault(str(trace.config["algorithm"]), []).append(trace)
    return groups


def _render(groups: dict[str, list[RunTrace]], fmt: str) -> str:
    reports = ReportService()
    return reports.render(reports.report(groups), fmt)


def _cmd_validate_topology(args: argparse.Namespace) -> int:
    t = load_topology_file(args.topology)
    print(f"{t.num_cores} cores, {t.num_numa_nodes} NUMA nodes, {len(t.servers)} servers")
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = run_config(args, args.algorithm)
    traces = SimulationService().run_repeats(cfg)
    if args.format == "json":
        _emit("".join(encode_trace(t) for t in traces), args.out)
    else:
        _emit(_render(_group(traces), args.format), args.out)
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    cfgs = [run_config(args, name) for name in args.algorithm]
    _emit(_render(SimulationService().compare(cfgs), args.format), args.out)
    return EXIT_OK


def _cmd_snapshot(args: argparse.Namespace) -> int:
    traces = read_traces(args.trace)
    if not 0 <= args.run < len(traces):
        raise UsageError(f"--run {args.run} out of range ({len(traces)} trace(s) in file)")
    _emit(render_snapshot(traces[args.run], args.epoch), args.out)
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    _emit(_render(_group(read_traces(args.trace)), args.format), args.out)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    """
    Punto de entrada de la CLI.

    Args:
        argv (Sequence[str] | None): Argumentos sin el nombre del programa.

    Returns:
        int: Código de salida.
    """
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("usage: numamap {validate-topology,run,compare,snapshot,report} ...", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)

    configure_logging(args.log_level)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumamapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        logger.exception("Unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
