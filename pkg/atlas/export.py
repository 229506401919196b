"""
Artifact writers: choropleth GeoJSON, comparison tables (CSV / Markdown),
selection membership and summaries, and the full-precision values sidecar.

"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from shapely.geometry import mapping
from terminaltables import GithubFlavoredMarkdownTable

# Local imports
from .ingest import CityDataset
from .selection import ComparisonTable, HigherLowerTable, SelectionResult
from .settings import OUTPUT_DECIMALS
from .stats import VariableVector, classify
from .utils import DataError

NA = "NA"
TABLE_FORMATS = ("csv", "markdown")


@dataclass(frozen=True)
class ChoroplethFeature:
    geoid: str
    value: Optional[float]  # None for block groups without a value
    class_index: Optional[int]
    selected: bool = False
    memberships: Tuple[Tuple[str, bool], ...] = ()  # (property, member) per extra group


@dataclass(frozen=True)
class ChoroplethExport:
    """
    Classified features of one city and variable.

    `classification` carries the method, class count, breaks and the city the
    breaks were computed on.

    """

    city: str
    variable: str
    features: Tuple[ChoroplethFeature, ...]
    breaks: Tuple[float, ...]
    classification: Dict[str, object] = field(default_factory=dict, hash=False)

    def class_histogram(self) -> Tuple[int, ...]:
        counts = [0] * (len(self.breaks) + 1)
        for feature in self.features:
            if feature.class_index is not None:
                counts[feature.class_index] += 1
        return tuple(counts)


def check_breaks(breaks: Sequence[float]):
    """
    Raises
    ------
    DataError
        If `breaks` is not strictly increasing or holds non-finite values

    """
    arr = np.asarray(breaks, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DataError("Class breaks must be finite.")
    if np.any(np.diff(arr) <= 0):
        raise DataError(f"Class breaks must be strictly increasing, got {list(breaks)}.")


def export_choropleth(
    city: CityDataset,
    values: VariableVector,
    breaks: Sequence[float],
    selection: Optional[SelectionResult] = None,
    breaks_source: Optional[str] = None,
    memberships: Optional[Mapping[str, SelectionResult]] = None,
) -> ChoroplethExport:
    """
    Classifies a city's values with (usually the reference city's) breaks.

    Values equal to a break take the lower class; values below the first
    break take class 0 and values above the last the top class. Block groups
    of the city without a value (e.g. population 0) are exported with no
    class.

    Parameters
    ----------
    city : CityDataset
        City whose geometries are exported
    values : VariableVector
        Values with geoids; without geoids, aligned to `city.block_groups`
    breaks : Sequence[float]
        Class maxima, strictly increasing
    selection : Optional[SelectionResult]
        Marks selected block groups
    breaks_source : Optional[str]
        City the breaks were computed on, for the metadata
    memberships : Optional[Mapping[str, SelectionResult]]
        Further groups (e.g. the most deprived), flagged per feature under
        the mapping's keys

    Raises
    ------
    DataError
        If breaks are not strictly increasing or values name unknown geoids

    """
    check_breaks(breaks)
    geoids = values.geoids or city.geoids
    if len(geoids) != len(values):
        raise DataError(f"{city.name}: {values.name} is not aligned to the city's block groups.")
    unknown = set(geoids) - set(city.geoids)
    if unknown:
        raise DataError(f"{city.name}: {values.name} has values for unknown geoids.")

    classes = classify(values.values, breaks)
    by_geoid = {g: (float(v), int(c)) for g, v, c in zip(geoids, values.values, classes)}
    chosen = selection.geoids if selection is not None else frozenset()
    groups = sorted((memberships or {}).items())
    features = []
    for geoid in city.geoids:
        value, class_index = by_geoid.get(geoid, (None, None))
        features.append(
            ChoroplethFeature(
                geoid=geoid,
                value=value,
                class_index=class_index,
                selected=geoid in chosen,
                memberships=tuple((key, geoid in sel.geoids) for key, sel in groups),
            )
        )
    return ChoroplethExport(
        city=city.name,
        variable=values.name,
        features=tuple(features),
        breaks=tuple(float(b) for b in breaks),
        classification={
            "method": "fisher-jenks",
            "class_count": len(breaks) + 1,
            "breaks": [float(b) for b in breaks],
            "breaks_source": breaks_source or city.name,
            "selection": selection.label if selection is not None else None,
            "groups": {key: sel.label for key, sel in groups},
        },
    )


def _dump(obj, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as f:
        f.write(json.dumps(obj, sort_keys=True) + "\n")


def write_geojson(export: ChoroplethExport, city: CityDataset, path: Union[str, Path]):
    """
    Writes a choropleth as a GeoJSON FeatureCollection; the classification
    metadata goes in a top-level `classification` member.

    """
    features = [
        {
            "type": "Feature",
            "geometry": mapping(city.geometries[feature.geoid]),
            "properties": {
                "geoid": feature.geoid,
                "variable": export.variable,
                "value": feature.value,
                "class": feature.class_index,
                "selected": feature.selected,
                **dict(feature.memberships),
            },
        }
        for feature in export.features
    ]
    _dump(
        {
            "type": "FeatureCollection",
            "name": f"{export.city}_{export.variable}",
            "classification": export.classification,
            "features": features,
        },
        path,
    )


def format_value(value: float, decimals: int = OUTPUT_DECIMALS) -> str:
    if value is None or np.isnan(value):
        return NA
    text = f"{value:.{decimals}f}"
    # No negative zero in artifacts
    return text[1:] if text.startswith("-") and float(text) == 0 else text


def _headers(table: ComparisonTable) -> List[str]:
    if table.group_sizes:
        return [f"{g} (N={n})" for g, n in zip(table.groups, table.group_sizes)]
    return list(table.groups)


def _comparison_rows(table: ComparisonTable, markdown: bool) -> List[List[str]]:
    headers = _headers(table)
    rows = []
    if markdown or table.flags is None:
        rows.append(["variable"] + headers)
    else:
        rows.append(["variable"] + [h for header in headers for h in (header, f"{header} flag")])

    for r, variable in enumerate(table.variables):
        row = [variable]
        for c in range(len(table.groups)):
            text = format_value(table.cells[r, c])
            flag = table.flags[r, c] if table.flags is not None else ""
            if markdown:
                row.append(text + flag)
            elif table.flags is not None:
                row.extend([text, flag])
            else:
                row.append(text)
        rows.append(row)
    return rows


def _higher_lower_rows(table: HigherLowerTable, markdown: bool) -> List[List[str]]:
    if markdown:
        rows = [["variable", "higher"]]
        rows += [[r.variable + ("*" if r.starred else ""), r.label] for r in table.rows]
    else:
        rows = [["variable", "higher", "starred"]]
        rows += [[r.variable, r.label, "1" if r.starred else "0"] for r in table.rows]
    return rows


def write_table(
    table: Union[ComparisonTable, HigherLowerTable],
    fmt: str,
    path: Union[str, Path],
):
    """
    Writes a table with variables as rows and groups as columns.

    CSV: `.` decimals, 3 places, "NA" for unavailable cells; Z-score flags go
    in a separate column. Markdown holds the same content with flags as
    `*` / `**` suffixes.

    Parameters
    ----------
    table : Union[ComparisonTable, HigherLowerTable]
        Table to write
    fmt : str
        "csv" or "markdown"
    path : Union[str, Path]
        Output file

    Raises
    ------
    ValueError
        If `fmt` is not supported
    OSError
        If `path` is not writable

    """
    if fmt not in TABLE_FORMATS:
        raise ValueError(f"Unsupported table format {fmt!r}; use one of {TABLE_FORMATS}.")
    markdown = fmt == "markdown"
    if isinstance(table, HigherLowerTable):
        rows = _higher_lower_rows(table, markdown)
    else:
        rows = _comparison_rows(table, markdown)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if markdown:
        md = GithubFlavoredMarkdownTable(rows)
        if isinstance(table, ComparisonTable):
            md.justify_columns = {i: "right" for i in range(1, len(rows[0]))}
        title = f"{table.title} ({table.city})" if table.title else table.city
        with open(path, "w", newline="\n") as f:
            f.write(f"### {title}\n\n{md.table}\n")
    else:
        frame = pd.DataFrame(rows[1:], columns=rows[0])
        frame.to_csv(path, index=False, lineterminator="\n")


def write_membership(
    geoids: Iterable[str], selections: Sequence[SelectionResult], path: Union[str, Path]
):
    """
    One row per eligible block group; one 0/1 column per selection.

    """
    index = pd.Index(sorted(geoids), name="geoid")
    frame = pd.DataFrame(
        {sel.label: [int(g in sel.geoids) for g in index] for sel in selections}, index=index
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, lineterminator="\n")


def write_selection_summary(selections: Sequence[SelectionResult], path: Union[str, Path]):
    """
    N and share (percent of eligible block groups) per selection.

    """
    frame = pd.DataFrame(
        [
            {
                "kind": sel.kind.value,
                "label": sel.label,
                "n_selected": sel.n_selected,
                "n_eligible": sel.n_eligible,
                "percent": format_value(100 * sel.share),
                "low_n": int(sel.low_n),
            }
            for sel in selections
        ],
        columns=["kind", "label", "n_selected", "n_eligible", "percent", "low_n"],
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")


def write_raw_values(frame: pd.DataFrame, path: Union[str, Path]):
    """
    Full-precision sidecar of the per-block-group values behind the tables.

    """
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.sort_index().to_csv(path, float_format="%.17g", na_rep=NA, lineterminator="\n")


def write_json(obj, path: Union[str, Path]):
    _dump(obj, path)
