"""
Checks the trivariate selection shares of a finished `atlas run` against the
published 2014 shares (percent of each city's block groups).

Only meaningful when the run used the original 2014 ACS extracts and police
incident data. Not part of the test suite.

    python scripts/check_shares.py <output_dir> [--tolerance 0.5]

"""
from pathlib import Path

import pandas as pd

from atlas.config import slugify

# City name (as in the run config) -> published share, percent
PUBLISHED_SHARES = {
    "Detroit": 18.0,
    "Chicago": 3.3,
    "Milwaukee": 2.9,
    "Minneapolis": 0.3,
    "St. Louis": 10.9,
}


def _share(output_dir: Path, city: str):
    path = output_dir / "cities" / slugify(city) / "selection_summary.csv"
    if not path.is_file():
        return None
    frame = pd.read_csv(path, dtype={"percent": str})
    rows = frame[frame["kind"] == "trivariate"]
    return float(rows["percent"].iloc[0]) if len(rows) else None


if __name__ == "__main__":
    import argparse
    import sys

    from rich.console import Console
    from rich.table import Table

    parser = argparse.ArgumentParser()
    parser.add_argument("output_dir", help="`output_dir` of the run")
    parser.add_argument("--tolerance", type=float, default=0.5, help="Percentage points")
    args = parser.parse_args()

    cons = Console()
    cons.rule("Selected shares")

    tab = Table()
    for column in ("city", "published %", "run %", "ok"):
        tab.add_column(column)
    failed = False
    for city, published in PUBLISHED_SHARES.items():
        share = _share(Path(args.output_dir), city)
        ok = share is not None and abs(share - published) <= args.tolerance
        failed |= not ok
        run = "missing" if share is None else f"{share:.1f}"
        tab.add_row(city, f"{published:.1f}", run, str(ok))

    cons.print(tab)
    cons.rule()
    sys.exit(1 if failed else 0)
