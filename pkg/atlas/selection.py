"""
Block-group selections (trivariate reference-median criterion and
deprivation-only robustness groups) and the comparison tables built on them.

All functions work on a city's eligible (population > 0) block groups, as
listed in its IndexBundle.

"""
import math
from dataclasses import dataclass
from enum import Enum
from logging import Logger
from typing import FrozenSet, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

# Local imports
from .geo import SpatialWeights
from .indices import IndexBundle
from .ingest import CityDataset
from .settings import (
    CORRELATION_VARIABLES,
    EXTRA_COLUMNS,
    LOW_N,
    MORAN_VARIABLES,
    STARRED_VARIABLES,
    SUMMARY_VARIABLES,
    ZSCORE_FLAGS,
)
from .stats import mean, median, morans_i, pearson, spearman, std_dev, z_score
from .utils import DataError, NumericError, SelectionError

CRITERION_VARIABLES = ("PERCSNAP", "ABRPOP", "PERCVAC")
TIE = "tie"


class SelectionKind(Enum):
    TRIVARIATE = "trivariate"
    TOP_FRACTION = "top_fraction"
    TOP_N = "top_n"
    CITY = "city"


class Statistic(Enum):
    MEDIAN = "median"
    ZSCORE = "zscore"
    MEAN = "mean"
    SUMMARY = "summary"
    CORRELATION = "correlation"
    MORAN = "moran"


@dataclass(frozen=True)
class MedianTriple:
    source_city: str
    med_snap: float
    med_abr: float
    med_vac: float

    def __post_init__(self):
        for label in ("med_snap", "med_vac"):
            value = getattr(self, label)
            if not 0 <= value <= 100:
                raise DataError(f"{self.source_city}: {label} {value} outside [0, 100].")
        if not self.med_abr >= 0:
            raise DataError(f"{self.source_city}: med_abr must be >= 0, got {self.med_abr}.")


@dataclass(frozen=True)
class SelectionResult:
    """
    A named group of eligible block groups.

    `share` is n_selected / n_eligible; `low_n` marks groups whose statistics
    rest on `LOW_N` or fewer block groups.

    """

    kind: SelectionKind
    city: str
    geoids: FrozenSet[str]
    n_eligible: int
    label: str

    def __post_init__(self):
        object.__setattr__(self, "geoids", frozenset(self.geoids))
        if self.n_selected > self.n_eligible:
            raise SelectionError(
                f"{self.city}: {self.label} has more members than eligible block groups."
            )

    @property
    def n_selected(self) -> int:
        return len(self.geoids)

    @property
    def share(self) -> float:
        return self.n_selected / self.n_eligible if self.n_eligible else 0.0

    @property
    def low_n(self) -> bool:
        return self.n_selected <= LOW_N

    def sorted_geoids(self) -> Tuple[str, ...]:
        return tuple(sorted(self.geoids))


@dataclass(frozen=True)
class TopFraction:
    fraction: float

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise SelectionError(f"Top fraction must lie in (0, 1], got {self.fraction}.")


@dataclass(frozen=True)
class TopCount:
    count: int

    def __post_init__(self):
        if self.count < 0:
            raise SelectionError(f"Top count must be >= 0, got {self.count}.")


SelectionMode = Union[TopFraction, TopCount]


@dataclass(frozen=True, eq=False)
class ComparisonTable:
    """
    Variable x group grid of statistics.

    Unavailable cells hold NaN and are written as "NA". `flags` (Z-score
    tables only) holds "", "*" or "**" per cell.

    """

    statistic: Statistic
    city: str
    variables: Tuple[str, ...]
    groups: Tuple[str, ...]
    cells: np.ndarray
    group_sizes: Tuple[int, ...] = ()
    flags: Optional[np.ndarray] = None
    title: str = ""

    def __post_init__(self):
        cells = np.array(self.cells, dtype=float).reshape(len(self.variables), len(self.groups))
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "group_sizes", tuple(self.group_sizes))
        if self.group_sizes and len(self.group_sizes) != len(self.groups):
            raise DataError(f"{self.title}: one group size per group is required.")
        if self.flags is not None:
            flags = np.array(self.flags, dtype=object).reshape(cells.shape)
            object.__setattr__(self, "flags", flags)

    def cell(self, variable: str, group: str) -> float:
        return float(self.cells[self.variables.index(variable), self.groups.index(group)])

    def column(self, group: str) -> np.ndarray:
        return self.cells[:, self.groups.index(group)]

    def unavailable(self) -> Tuple[Tuple[str, str], ...]:
        rows, cols = np.nonzero(np.isnan(self.cells))
        return tuple((self.variables[r], self.groups[c]) for r, c in zip(rows, cols))


@dataclass(frozen=True)
class HigherLowerRow:
    variable: str
    label: str  # label_a, label_b, "tie" or "NA"
    starred: bool = False


@dataclass(frozen=True)
class HigherLowerTable:
    city: str
    label_a: str
    label_b: str
    rows: Tuple[HigherLowerRow, ...]
    title: str = ""

    def labels(self) -> dict:
        return {row.variable: row.label for row in self.rows}


def variable_frame(city: CityDataset, bundle: IndexBundle) -> pd.DataFrame:
    """
    Attributes plus index columns for the bundle's (eligible) block groups,
    indexed by geoid. Missing extras are NaN.

    """
    if bundle.city != city.name:
        raise DataError(f"Index bundle for {bundle.city} does not belong to {city.name}.")
    attrs = city.to_frame()
    missing = set(bundle.geoids) - set(attrs.index)
    if missing:
        raise DataError(f"{city.name}: index bundle has unknown geoids.")
    return attrs.loc[list(bundle.geoids)].join(bundle.frame)


def _values(
    frame: pd.DataFrame,
    variable: str,
    geoids: Optional[Sequence[str]] = None,
) -> Optional[np.ndarray]:
    """
    Non-missing values of `variable` over `geoids` (all rows if None), or None
    if the city does not carry the variable.

    Raises
    ------
    DataError
        If the variable is neither core, index nor a known extra
    """
    name = variable.upper()
    if name not in frame.columns:
        if variable.lower() in EXTRA_COLUMNS:
            return None
        raise DataError(f"Unknown variable {variable!r}.")
    column = frame[name] if geoids is None else frame.loc[list(geoids), name]
    values = column.dropna().to_numpy(dtype=float)
    return values if values.size else None


def whole_city(city: CityDataset, bundle: IndexBundle) -> SelectionResult:
    """The group of all eligible block groups."""
    return SelectionResult(
        kind=SelectionKind.CITY,
        city=city.name,
        geoids=frozenset(bundle.geoids),
        n_eligible=len(bundle.geoids),
        label="City",
    )


def reference_medians(ref_bundle: IndexBundle, ref_city: CityDataset) -> MedianTriple:
    """
    Medians of PERCSNAP, ABRPOP and PERCVAC over the reference city's eligible
    block groups.

    Raises
    ------
    SelectionError
        If the reference city has no eligible block groups

    """
    if not ref_bundle.geoids:
        raise SelectionError(f"{ref_city.name}: no eligible block groups for reference medians.")
    frame = variable_frame(ref_city, ref_bundle)
    return MedianTriple(
        source_city=ref_city.name,
        med_snap=median(frame["PERCSNAP"].to_numpy()),
        med_abr=median(frame["ABRPOP"].to_numpy()),
        med_vac=median(frame["PERCVAC"].to_numpy()),
    )


def select_trivariate(city: CityDataset, bundle: IndexBundle, m: MedianTriple) -> SelectionResult:
    """
    Eligible block groups strictly above all three reference medians
    (PERCSNAP, ABRPOP, PERCVAC).

    """
    frame = variable_frame(city, bundle)
    mask = (
        (frame["PERCSNAP"] > m.med_snap)
        & (frame["ABRPOP"] > m.med_abr)
        & (frame["PERCVAC"] > m.med_vac)
    )
    return SelectionResult(
        kind=SelectionKind.TRIVARIATE,
        city=city.name,
        geoids=frozenset(frame.index[mask.to_numpy()]),
        n_eligible=len(frame),
        label="Selected",
    )


def top_count(fraction: float, n_eligible: int) -> int:
    """
    ceil(fraction * n_eligible), rounded first so 0.1 * 870 gives 87.

    """
    return int(math.ceil(round(fraction * n_eligible, 9)))


def select_top_deprived(
    city: CityDataset,
    bundle: IndexBundle,
    mode: SelectionMode,
    variable: str = "SD4DET",
) -> SelectionResult:
    """
    The eligible block groups with the highest `variable` (default SD4DET).

    Ties at the cutoff go to the smaller geoid.

    Parameters
    ----------
    city : CityDataset
        City
    bundle : IndexBundle
        The city's indices
    mode : SelectionMode
        `TopFraction(f)` for ceil(f * N) block groups or `TopCount(n)`
    variable : str
        Ranking column of the bundle
        Default: "SD4DET"

    Raises
    ------
    SelectionError
        If the requested count exceeds the eligible block groups

    """
    column = bundle.frame[variable]
    n_eligible = len(column)
    if isinstance(mode, TopFraction):
        n = top_count(mode.fraction, n_eligible)
        kind, label = SelectionKind.TOP_FRACTION, f"Top {mode.fraction * 100:g}%"
    else:
        n = mode.count
        kind, label = SelectionKind.TOP_N, f"Top {n}"
    if n > n_eligible:
        raise SelectionError(
            f"{city.name}: cannot select {n} block groups; only {n_eligible} are eligible."
        )

    ranked = sorted(zip(column.index, column.to_numpy()), key=lambda gv: (-gv[1], gv[0]))
    return SelectionResult(
        kind=kind,
        city=city.name,
        geoids=frozenset(g for g, _ in ranked[:n]),
        n_eligible=n_eligible,
        label=label,
    )


def _check_groups(city: CityDataset, groups: Sequence[SelectionResult]):
    for group in groups:
        if group.n_selected == 0:
            raise SelectionError(f"{city.name}: group {group.label!r} is empty.")
        if group.city != city.name:
            raise SelectionError(f"Group {group.label!r} belongs to {group.city}, not {city.name}.")


def _warn_unavailable(table: ComparisonTable, logger: Optional[Logger]):
    if logger:
        for variable, group in table.unavailable():
            logger.warning(f"{table.city}: {table.title} cell ({variable}, {group}) unavailable.")


def median_table(
    city: CityDataset,
    bundle: IndexBundle,
    groups: Sequence[SelectionResult],
    variables: Sequence[str],
    logger: Optional[Logger] = None,
) -> ComparisonTable:
    """
    Per-variable, per-group medians.

    Variables the city does not carry are unavailable (NaN). Block groups
    missing an optional estimate are left out of that variable's median.

    Raises
    ------
    SelectionError
        If a group is empty; names the group

    """
    _check_groups(city, groups)
    frame = variable_frame(city, bundle)
    cells = np.full((len(variables), len(groups)), np.nan)
    for r, variable in enumerate(variables):
        for c, group in enumerate(groups):
            values = _values(frame, variable, group.sorted_geoids())
            if values is not None:
                cells[r, c] = median(values)
    table = ComparisonTable(
        statistic=Statistic.MEDIAN,
        city=city.name,
        variables=tuple(variables),
        groups=tuple(g.label for g in groups),
        cells=cells,
        group_sizes=tuple(g.n_selected for g in groups),
        title="Median values",
    )
    _warn_unavailable(table, logger)
    return table


def _zscore_flag(z: float) -> str:
    if math.isnan(z):
        return ""
    for threshold, flag in ZSCORE_FLAGS:
        if abs(z) > threshold:
            return flag
    return ""


def zscore_table(
    city: CityDataset,
    bundle: IndexBundle,
    sel: SelectionResult,
    variables: Sequence[str],
    logger: Optional[Logger] = None,
) -> ComparisonTable:
    """
    (selected mean - city mean) / city SD per variable, with `*` for |Z| > 1
    and `**` for |Z| > 2.

    Cells with a zero city SD or a variable the city lacks are unavailable.

    Raises
    ------
    SelectionError
        If the selection is empty

    """
    _check_groups(city, [sel])
    frame = variable_frame(city, bundle)
    members = sel.sorted_geoids()
    cells = np.full((len(variables), 1), np.nan)
    for r, variable in enumerate(variables):
        city_values = _values(frame, variable)
        sel_values = _values(frame, variable, members)
        if city_values is None or sel_values is None:
            continue
        try:
            cells[r, 0] = z_score(mean(sel_values), mean(city_values), std_dev(city_values))
        except NumericError as excep:
            if logger:
                logger.warning(f"{city.name}: Z-score of {variable} unavailable ({excep}).")
    table = ComparisonTable(
        statistic=Statistic.ZSCORE,
        city=city.name,
        variables=tuple(variables),
        groups=(sel.label,),
        cells=cells,
        group_sizes=(sel.n_selected,),
        flags=np.array([[_zscore_flag(z)] for z in cells[:, 0]], dtype=object),
        title="Z-scores of selected means",
    )
    _warn_unavailable(table, logger)
    return table


def higher_lower(
    table_a: ComparisonTable,
    table_b: ComparisonTable,
    label_a: str,
    label_b: str,
    group_a: Optional[str] = None,
    group_b: Optional[str] = None,
) -> HigherLowerTable:
    """
    For each variable, the label of the group with the larger median.

    Exact ties give "tie"; unavailable cells give "NA". Starred variables
    (MEDVAL, PERCWHITE) are compared the same way; the star is display only.

    Parameters
    ----------
    table_a, table_b : ComparisonTable
        Median tables of the same city over the same variables
    label_a, label_b : str
        Labels reported for the winning group
    group_a, group_b : Optional[str]
        Group column compared in each table
        Default: the last group of each table

    Raises
    ------
    SelectionError
        If the tables are not median tables of one city over the same variables

    """
    for table in (table_a, table_b):
        if table.statistic is not Statistic.MEDIAN:
            raise SelectionError(f"Higher/lower needs median tables, got {table.statistic.value}.")
    if table_a.city != table_b.city:
        raise SelectionError(f"Tables belong to different cities: {table_a.city}, {table_b.city}.")
    if table_a.variables != table_b.variables:
        raise SelectionError("Higher/lower tables list different variables.")

    col_a = table_a.column(group_a or table_a.groups[-1])
    col_b = table_b.column(group_b or table_b.groups[-1])
    rows = []
    for variable, a, b in zip(table_a.variables, col_a, col_b):
        if np.isnan(a) or np.isnan(b):
            label = "NA"
        elif a > b:
            label = label_a
        elif b > a:
            label = label_b
        else:
            label = TIE
        rows.append(HigherLowerRow(variable, label, variable in STARRED_VARIABLES))
    return HigherLowerTable(
        city=table_a.city,
        label_a=label_a,
        label_b=label_b,
        rows=tuple(rows),
        title="Group with the higher median",
    )


def summary_table(
    city: CityDataset,
    bundle: IndexBundle,
    variables: Sequence[str] = SUMMARY_VARIABLES,
    logger: Optional[Logger] = None,
) -> ComparisonTable:
    """
    Mean, SD, minimum and maximum per variable over eligible block groups.

    """
    frame = variable_frame(city, bundle)
    groups = ("Mean", "SD", "Min", "Max")
    cells = np.full((len(variables), len(groups)), np.nan)
    for r, variable in enumerate(variables):
        values = _values(frame, variable)
        if values is None:
            continue
        cells[r, 0] = mean(values)
        cells[r, 2] = float(values.min())
        cells[r, 3] = float(values.max())
        if values.size >= 2:
            cells[r, 1] = std_dev(values)
    table = ComparisonTable(
        statistic=Statistic.SUMMARY,
        city=city.name,
        variables=tuple(variables),
        groups=groups,
        cells=cells,
        title=f"Summary statistics (N={len(frame)})",
    )
    _warn_unavailable(table, logger)
    return table


def correlation_table(
    city: CityDataset,
    bundle: IndexBundle,
    variables: Sequence[str] = CORRELATION_VARIABLES,
    method: str = "pearson",
    logger: Optional[Logger] = None,
) -> ComparisonTable:
    """
    Square matrix of pairwise correlations (Pearson or Spearman) over
    eligible block groups with both values present.

    Raises
    ------
    ValueError
        If `method` is not "pearson" or "spearman"

    """
    kernels = {"pearson": pearson, "spearman": spearman}
    if method not in kernels:
        raise ValueError(f"Unsupported correlation method {method!r}.")
    kernel = kernels[method]

    frame = variable_frame(city, bundle)
    names = [v.upper() for v in variables]
    cells = np.full((len(names), len(names)), np.nan)
    for r, a in enumerate(names):
        for c, b in enumerate(names):
            if a not in frame.columns or b not in frame.columns:
                continue
            pair = frame[list(dict.fromkeys((a, b)))].dropna()
            try:
                cells[r, c] = kernel(pair[a].to_numpy(), pair[b].to_numpy())
            except NumericError as excep:
                if logger and r < c:
                    logger.warning(f"{city.name}: {method} of {a} and {b} unavailable ({excep}).")
    table = ComparisonTable(
        statistic=Statistic.CORRELATION,
        city=city.name,
        variables=tuple(variables),
        groups=tuple(variables),
        cells=cells,
        title=f"{method.capitalize()} correlations (N={len(frame)})",
    )
    return table


def moran_table(
    city: CityDataset,
    bundle: IndexBundle,
    weights: SpatialWeights,
    variables: Sequence[str] = MORAN_VARIABLES,
    logger: Optional[Logger] = None,
) -> ComparisonTable:
    """
    Global Moran's I per variable over eligible block groups.

    Parameters
    ----------
    weights : SpatialWeights
        Weights built on the bundle's block groups, in the same order

    Raises
    ------
    DataError
        If the weights are not aligned to the bundle

    """
    if weights.ids and tuple(weights.ids) != bundle.geoids:
        raise DataError(f"{city.name}: spatial weights are not aligned to the index bundle.")
    if weights.islands and logger:
        logger.warning(f"{city.name}: {len(weights.islands)} island(s) without neighbors.")

    frame = variable_frame(city, bundle)
    cells = np.full((len(variables), 1), np.nan)
    for r, variable in enumerate(variables):
        name = variable.upper()
        if name not in frame.columns or frame[name].isna().any():
            continue
        try:
            cells[r, 0] = morans_i(frame[name].to_numpy(dtype=float), weights)
        except NumericError as excep:
            if logger:
                logger.warning(f"{city.name}: Moran's I of {variable} unavailable ({excep}).")
    scheme = "row-standardized" if weights.row_standardized else "binary"
    return ComparisonTable(
        statistic=Statistic.MORAN,
        city=city.name,
        variables=tuple(variables),
        groups=(city.name,),
        cells=cells,
        group_sizes=(len(frame),),
        title=f"Moran's I ({scheme} weights)",
    )


def vacancy_validation_table(
    city: CityDataset,
    bundle: IndexBundle,
    columns: Sequence[str],
    logger: Optional[Logger] = None,
) -> ComparisonTable:
    """
    Pearson and Spearman correlations of PERCVAC with user-supplied vacancy
    indices (extra columns of the attribute file).

    """
    frame = variable_frame(city, bundle)
    cells = np.full((len(columns), 2), np.nan)
    for r, column in enumerate(columns):
        name = column.upper()
        if name not in frame.columns:
            if logger:
                logger.warning(f"{city.name}: vacancy index {column!r} not in the attribute file.")
            continue
        pair = frame[["PERCVAC", name]].dropna()
        for c, kernel in enumerate((pearson, spearman)):
            try:
                cells[r, c] = kernel(pair["PERCVAC"].to_numpy(), pair[name].to_numpy())
            except NumericError as excep:
                if logger:
                    logger.warning(f"{city.name}: PERCVAC vs {column} unavailable ({excep}).")
    return ComparisonTable(
        statistic=Statistic.CORRELATION,
        city=city.name,
        variables=tuple(c.upper() for c in columns),
        groups=("Pearson", "Spearman"),
        cells=cells,
        title="PERCVAC against vacancy indices",
    )
