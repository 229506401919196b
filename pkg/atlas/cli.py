"""
Command-line interface:

    atlas run --config <path>
    atlas select --config <path> --city <name>
    atlas moran --config <path> --city <name> --var <name> [--scheme queen|rook]
    atlas breaks --config <path> --var <name> --k <n>

Exit codes: 0 success, 1 config error, 2 data error, 3 numeric error.

"""
import argparse
import sys
from typing import List, Optional

from rich.console import Console
from rich.table import Table
from rich.text import Text

# Local imports
from .config import RunConfig
from .export import format_value
from .geo import contiguity_weights, row_standardize
from .stats import jenks_breaks, morans_i
from .utils import AtlasError, exit_code_for
from .workers import prepare_city, run_pipeline, variable_values


def _cmd_run(args, cons: Console) -> int:
    config = RunConfig.from_json(args.config)
    report = run_pipeline(config, console=cons)

    tab = Table(title="Cities")
    for column in ("city", "status", "exit code", "stage", "message"):
        tab.add_column(column)
    for status in report.cities.values():
        tab.add_row(
            status.name,
            "ok" if status.ok else "failed",
            str(status.exit_code),
            status.stage or "",
            Text(status.message or ""),
        )
    cons.print(tab)
    cons.print(f"Artifacts in {report.output_dir}")
    return report.exit_code


def _cmd_select(args, cons: Console) -> int:
    config = RunConfig.from_json(args.config)
    ops = prepare_city(config, args.city, until="run_selection")

    medians = ops.reference.medians
    cons.print(
        f"Reference medians ({medians.source_city}): PERCSNAP {medians.med_snap:.3f}, "
        f"ABRPOP {medians.med_abr:.6f}, PERCVAC {medians.med_vac:.3f}"
    )
    tab = Table(title=f"Selections for {ops.name}")
    for column in ("kind", "label", "N", "% of eligible", "low N"):
        tab.add_column(column)
    for sel in ops.selections.values():
        tab.add_row(
            sel.kind.value,
            sel.label,
            str(sel.n_selected),
            format_value(100 * sel.share),
            "yes" if sel.low_n else "",
        )
    cons.print(tab)
    if args.list:
        for geoid in ops.selections["trivariate"].sorted_geoids():
            cons.print(geoid)
    return 0


def _cmd_moran(args, cons: Console) -> int:
    config = RunConfig.from_json(args.config)
    ops = prepare_city(config, args.city, until="run_indices")
    scheme = args.scheme or config.weights_scheme

    values = variable_values(ops.dataset, ops.bundle, args.var.upper())
    weights = contiguity_weights(ops.dataset.subset(values.geoids), scheme)
    if args.binary:
        value = morans_i(values, weights)
    else:
        value = morans_i(values, row_standardize(weights))

    tab = Table(show_header=False)
    tab.add_row("city", ops.name)
    tab.add_row("variable", values.name)
    tab.add_row("scheme", scheme + (" (binary)" if args.binary else " (row-standardized)"))
    tab.add_row("N", str(len(values)))
    tab.add_row("islands", str(len(weights.islands)))
    tab.add_row("Moran's I", f"{value:.6f}")
    cons.print(tab)
    return 0


def _cmd_breaks(args, cons: Console) -> int:
    config = RunConfig.from_json(args.config)
    city = args.city or config.reference_city
    ops = prepare_city(config, city, until="run_indices")
    values = variable_values(ops.dataset, ops.bundle, args.var.upper())
    breaks = jenks_breaks(values, args.k)

    tab = Table(title=f"{values.name} natural breaks ({ops.name}, k={args.k})")
    tab.add_column("class")
    tab.add_column("upper bound")
    for idx, bound in enumerate(breaks):
        tab.add_row(str(idx), f"{bound:.6g}")
    tab.add_row(str(len(breaks)), f"{float(values.values.max()):.6g}")
    cons.print(tab)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atlas",
        description="Deprivation, crime and vacancy analysis of census block groups.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run the full pipeline")
    run.add_argument("--config", required=True, help="Path to the JSON run config")
    run.set_defaults(func=_cmd_run)

    select = sub.add_parser("select", help="Selections for one city")
    select.add_argument("--config", required=True, help="Path to the JSON run config")
    select.add_argument("--city", required=True, help="City name")
    select.add_argument("--list", action="store_true", help="Print the selected geoids")
    select.set_defaults(func=_cmd_select)

    moran = sub.add_parser("moran", help="Moran's I of one variable")
    moran.add_argument("--config", required=True, help="Path to the JSON run config")
    moran.add_argument("--city", required=True, help="City name")
    moran.add_argument("--var", required=True, help="Variable name, e.g. PERCSNAP")
    moran.add_argument("--scheme", choices=("queen", "rook"), help="Contiguity scheme")
    moran.add_argument("--binary", action="store_true", help="Skip row standardization")
    moran.set_defaults(func=_cmd_moran)

    breaks = sub.add_parser("breaks", help="Natural breaks of one variable")
    breaks.add_argument("--config", required=True, help="Path to the JSON run config")
    breaks.add_argument("--var", required=True, help="Variable name, e.g. SD4DET")
    breaks.add_argument("--k", required=True, type=int, help="Number of classes")
    breaks.add_argument("--city", help="City name (default: the reference city)")
    breaks.set_defaults(func=_cmd_breaks)
    return parser


def main(argv: Optional[List[str]] = None, console: Optional[Console] = None) -> int:
    """
    Entry point; returns the exit code.

    """
    args = build_parser().parse_args(argv)
    cons = console or Console()
    try:
        return args.func(args, cons)
    except AtlasError as excep:
        cons.print(f"error: {excep}", style="red", markup=False)
        return excep.exit_code
    except Exception as excep:
        cons.print(f"error: {excep}", style="red", markup=False)
        return exit_code_for(excep)


if __name__ == "__main__":
    sys.exit(main())
