import argparse
import logging
import re
import sys
from typing import List, Optional

from pydantic import ValidationError
from rich.console import Console
from rich.markup import escape

from src.app import HomLabApp, summarize_fit, validation_messages
from src.config import get_default_correlation, get_runtime_settings
from src.errors import (
    ConfigError,
    DomainError,
    EvaluationError,
    FormatError,
    InvariantViolation,
    PreconditionError,
)
from src.fit_adapters import FitModelFactory
from src.logging_config import setup_logging
from src.repositories import (
    BinaryTagRepository,
    CsvCurveRepository,
    JsonDocumentRepository,
)
from src.units import parse_frequency_hz, parse_time_ps, parse_voltage

logger = logging.getLogger("cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_DOMAIN = 4

NEGATIVE_QUANTITY = re.compile(r"^-\.?\d")

console = Console()
err_console = Console(stderr=True)


def _time_arg(text: str) -> int:
    try:
        return parse_time_ps(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _frequency_arg(text: str) -> float:
    try:
        return parse_frequency_hz(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _voltage_arg(text: str) -> float:
    try:
        return parse_voltage(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


class QuantityParser(argparse.ArgumentParser):
    """Reads "-800MHz" or "-10V" as a value rather than an option."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = NEGATIVE_QUANTITY


def build_parser() -> argparse.ArgumentParser:
    defaults = get_default_correlation()
    parser = QuantityParser(
        prog="homlab",
        description=(
            "Two-photon interference between remote emitters: simulate "
            "time tags, correlate them, fit models, pick Stark setpoints."
        ),
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="Worker threads (falls back to HOMLAB_THREADS, then 1).",
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    parser.add_argument("--log-file", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Monte Carlo time tags.")
    simulate.add_argument("config", help="ExperimentConfig JSON.")
    simulate.add_argument("--out", required=True, help="Tag file to write.")
    simulate.add_argument("--seed", type=int, default=None)

    correlate = sub.add_parser("correlate", help="Tags to a g2 curve CSV.")
    correlate.add_argument("tags", help="Tag file to read.")
    correlate.add_argument("--a", type=int, default=1, help="Start channel.")
    correlate.add_argument("--b", type=int, default=2, help="Stop channel.")
    correlate.add_argument(
        "--bin",
        type=_time_arg,
        default=defaults.bin_width_ps,
        help="Bin width, e.g. 512ps.",
    )
    correlate.add_argument(
        "--window",
        type=_time_arg,
        default=defaults.window_ps,
        help="Half window, e.g. 100ns.",
    )
    correlate.add_argument("--out", required=True)

    fit = sub.add_parser("fit", help="Fit a model to a curve CSV.")
    fit.add_argument("data", help="g2 or tuning curve CSV.")
    fit.add_argument(
        "--model", required=True, choices=FitModelFactory.names()
    )
    fit.add_argument("--init", default=None, help="Init document JSON.")
    fit.add_argument("--out", required=True, help="FitResult JSON to write.")

    stark = sub.add_parser("stark", help="Voltage for a target detuning.")
    stark.add_argument(
        "--model", required=True, dest="params", help="StarkParams JSON."
    )
    stark.add_argument(
        "--target", required=True, type=_frequency_arg, help="e.g. 800MHz."
    )
    stark.add_argument(
        "--bracket",
        nargs=2,
        type=_voltage_arg,
        default=None,
        metavar=("VMIN", "VMAX"),
    )

    predict = sub.add_parser("predict", help="Plot-ready model curves.")
    predict.add_argument("tpi", help="TpiConfig JSON.")
    predict.add_argument(
        "--tau-window", type=_time_arg, default=20_000, help="e.g. 20ns."
    )
    predict.add_argument("--bin", type=_time_arg, default=100)
    predict.add_argument("--jitter", type=_time_arg, default=0)
    predict.add_argument("--out", required=True)
    return parser


def run_command(app: HomLabApp, args: argparse.Namespace) -> None:
    if args.command == "simulate":
        summary = app.simulate(args.config, args.out, seed=args.seed)
        per_channel = ", ".join(
            f"ch{ch}: {n}" for ch, n in summary["per_channel"].items()
        )
        console.print(
            f"[green]Wrote {summary['tags']} tags[/green] "
            f"over {summary['duration_ps'] / 1e12:.3g} s ({per_channel})"
        )
    elif args.command == "correlate":
        curve = app.correlate(
            args.tags,
            args.out,
            channel_a=args.a,
            channel_b=args.b,
            bin_width_ps=args.bin,
            window_ps=args.window,
        )
        zero = curve.zero_index
        console.print(
            f"[green]{len(curve)} bins[/green], "
            f"{int(curve.counts.sum())} coincidences, "
            f"g2(0) = {curve.g2[zero]:.3f} +- {curve.sigma[zero]:.3f}"
        )
    elif args.command == "fit":
        result = app.fit(args.data, args.model, args.out, init_path=args.init)
        console.print(summarize_fit(result))
        if result.unidentifiable:
            console.print(
                "[yellow]unidentifiable:[/yellow] "
                + ", ".join(result.unidentifiable)
            )
    elif args.command == "stark":
        bracket = tuple(args.bracket) if args.bracket else None
        solution = app.stark(args.params, args.target, bracket)
        note = "" if solution.unique else " (first of several roots)"
        console.print(f"{solution.voltage:.6g} V{note}")
    elif args.command == "predict":
        columns = app.predict(
            args.tpi,
            args.out,
            window_ps=args.tau_window,
            bin_width_ps=args.bin,
            jitter_ps=args.jitter,
        )
        console.print(f"[green]Wrote {columns['tau_ps'].size} points[/green]")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        runtime = get_runtime_settings(args.threads)
    except ValueError as e:
        err_console.print(f"[red]config error:[/red] {escape(str(e))}")
        return EXIT_CONFIG

    setup_logging(
        getattr(logging, args.log_level),
        log_file=args.log_file or runtime.log_file,
    )
    logger.debug(f"Running '{args.command}' with {runtime.threads} thread(s)")

    app = HomLabApp(
        tags=BinaryTagRepository(),
        curves=CsvCurveRepository(),
        documents=JsonDocumentRepository(),
        threads=runtime.threads,
    )

    try:
        run_command(app, args)
    except ValidationError as e:
        for line in validation_messages(e):
            err_console.print(f"[red]config error:[/red] {escape(line)}")
        return EXIT_CONFIG
    except (ConfigError, PreconditionError, FileNotFoundError) as e:
        err_console.print(f"[red]config error:[/red] {escape(str(e))}")
        return EXIT_CONFIG
    except FormatError as e:
        err_console.print(f"[red]format error:[/red] {escape(str(e))}")
        return EXIT_FORMAT
    except (DomainError, EvaluationError, InvariantViolation) as e:
        err_console.print(f"[red]domain error:[/red] {escape(str(e))}")
        return EXIT_DOMAIN
    except ValueError as e:
        err_console.print(f"[red]config error:[/red] {escape(str(e))}")
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
