"""
Loads, validates and joins block-group attribute tables, block-group
geometries and crime-incident points.

"""
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from logging import Logger
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import pandas as pd
import shapely
from dateutil import parser as dateparser
from shapely.geometry import shape

# Local imports
from .geo import PolygonLike, check_polygon
from .settings import (
    CRIME_ALIASES,
    CRIME_COLUMNS,
    EXTRA_COLUMNS,
    EXTRA_PERCENT_COLUMNS,
    MAX_LISTED_IDS,
    PERCENT_COLUMNS,
    REQUIRED_COLUMNS,
)
from .stats import VariableVector
from .utils import DataError, GeometryError, JoinError, RowValidationError, SchemaError

ABR_CATEGORIES = ("assault", "burglary", "robbery")
CRIME_CATEGORIES = ABR_CATEGORIES + ("other",)

# Table variable name -> BlockGroup attribute
CORE_VARIABLES = {
    "POPULATION": "population",
    "HOUSING_UNITS": "housing_units",
    "PERCPOV": "perc_pov",
    "PERCSNAP": "perc_snap",
    "UNEMP": "unemp",
    "PERCNOHS": "perc_nohs",
    "PERCVAC": "perc_vac",
}


@dataclass(frozen=True)
class BlockGroup:
    geoid: str
    population: int
    housing_units: int
    perc_pov: float
    perc_snap: float
    unemp: float
    perc_nohs: float
    perc_vac: float
    extras: Mapping[str, float] = field(default_factory=dict, hash=False)

    @property
    def eligible(self) -> bool:
        """Block groups without population are left out of per-capita analyses."""
        return self.population > 0

    def value(self, variable: str) -> Optional[float]:
        """
        Value of a core or extra variable by table name (e.g. "PERCSNAP",
        "MEDVAL"); None if the extra is missing for this block group.

        """
        attr = CORE_VARIABLES.get(variable.upper())
        if attr is not None:
            return float(getattr(self, attr))
        return self.extras.get(variable.lower())


@dataclass(frozen=True)
class CrimeIncident:
    id: str
    category: str  # one of CRIME_CATEGORIES
    lon: float
    lat: float
    date: Optional[date] = None
    raw_category: str = ""

    @property
    def flagged(self) -> bool:
        """True if the raw category was not in the alias table."""
        return self.raw_category.strip().lower() not in CRIME_ALIASES


class IncidentList(list):
    """
    List of incidents that remembers how many rows were excluded at load.

    """

    def __init__(self, items: Iterable = (), excluded_count: int = 0):
        super().__init__(items)
        self.excluded_count = excluded_count


@dataclass(frozen=True)
class CityDataset:
    """
    A named city: block groups (sorted by geoid) joined to their geometries.

    """

    name: str
    block_groups: Tuple[BlockGroup, ...]
    geometries: Mapping[str, PolygonLike]
    excluded_count: int = 0
    extras_columns: Tuple[str, ...] = ()
    source: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        bgs = tuple(sorted(self.block_groups, key=lambda bg: bg.geoid))
        geoids = [bg.geoid for bg in bgs]
        if len(set(geoids)) != len(geoids):
            raise DataError(f"{self.name}: duplicate geoids.")
        if set(geoids) != set(self.geometries):
            raise JoinError(f"{self.name}: block groups and geometries are keyed differently.")
        object.__setattr__(self, "block_groups", bgs)
        object.__setattr__(
            self, "geometries", MappingProxyType({g: self.geometries[g] for g in geoids})
        )

    @property
    def geoids(self) -> Tuple[str, ...]:
        return tuple(bg.geoid for bg in self.block_groups)

    def eligible(self) -> Tuple[BlockGroup, ...]:
        return tuple(bg for bg in self.block_groups if bg.eligible)

    def subset(self, geoids: Iterable[str], name: Optional[str] = None) -> "CityDataset":
        keep = set(geoids)
        bgs = tuple(bg for bg in self.block_groups if bg.geoid in keep)
        return CityDataset(
            name=name or self.name,
            block_groups=bgs,
            geometries={bg.geoid: self.geometries[bg.geoid] for bg in bgs},
            excluded_count=self.excluded_count,
            extras_columns=self.extras_columns,
            source=self.source,
        )

    def has_variable(self, variable: str) -> bool:
        return variable.upper() in CORE_VARIABLES or variable.lower() in self.extras_columns

    def column(self, variable: str, eligible_only: bool = False) -> VariableVector:
        """
        Column of a core variable, aligned to block-group order.

        Raises
        ------
        DataError
            If the variable is missing for any block group

        """
        bgs = self.eligible() if eligible_only else self.block_groups
        values = [bg.value(variable) for bg in bgs]
        if any(v is None for v in values):
            raise DataError(f"{self.name}: {variable} is missing for some block groups.")
        return VariableVector(
            name=variable.upper(), values=values, geoids=tuple(bg.geoid for bg in bgs)
        )

    def to_frame(self) -> pd.DataFrame:
        """Attributes (core + extras) as a DataFrame indexed by geoid."""
        rows = []
        for bg in self.block_groups:
            row = {name: bg.value(name) for name in CORE_VARIABLES}
            row.update({c.upper(): bg.extras.get(c) for c in self.extras_columns})
            rows.append(row)
        frame = pd.DataFrame(rows, index=pd.Index(self.geoids, name="geoid"))
        return frame.astype(float)


def _parse_number(raw: str, column: str) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise RowValidationError(f"{column}: cannot parse {raw!r} as a number.")
    if not math.isfinite(value):
        raise RowValidationError(f"{column}: non-finite value {raw!r}.")
    return value


def _parse_count(raw: str, column: str) -> int:
    value = _parse_number(raw, column)
    if value < 0 or not value.is_integer():
        raise RowValidationError(f"{column}: expected a count >= 0, got {raw!r}.")
    return int(value)


def _parse_percent(raw: str, column: str) -> float:
    value = _parse_number(raw, column)
    if not 0 <= value <= 100:
        raise RowValidationError(f"{column}: {value} outside [0, 100].")
    return value


def _parse_block_group(row: Mapping[str, str], extras_columns: Iterable[str]) -> BlockGroup:
    """
    Builds one BlockGroup from a CSV row.

    Raises
    ------
    RowValidationError
        If any required value is missing, unparseable or out of range

    """
    geoid = row["geoid"].strip()
    if not geoid:
        raise RowValidationError("geoid: empty.")

    extras = {}
    for column in extras_columns:
        raw = row[column].strip()
        if raw == "":
            continue  # missing optional estimate
        if column in EXTRA_PERCENT_COLUMNS:
            extras[column] = _parse_percent(raw, column)
        elif column not in EXTRA_COLUMNS:
            # Non-standard columns only contribute what parses as a number
            try:
                extras[column] = _parse_number(raw, column)
            except RowValidationError:
                continue
        else:
            value = _parse_number(raw, column)
            if column == "medval" and value < 0:
                raise RowValidationError(f"medval: negative value {value}.")
            extras[column] = value

    return BlockGroup(
        geoid=geoid,
        population=_parse_count(row["population"], "population"),
        housing_units=_parse_count(row["housing_units"], "housing_units"),
        extras=MappingProxyType(extras),
        **{c: _parse_percent(row[c], c) for c in PERCENT_COLUMNS},
    )


def _load_geometries(geom_path: Path, logger: Optional[Logger]) -> Dict[str, PolygonLike]:
    try:
        with open(geom_path) as f:
            collection = json.load(f)
    except json.JSONDecodeError as excep:
        raise SchemaError(f"{geom_path}: not valid JSON ({excep}).") from excep

    if collection.get("type") != "FeatureCollection":
        raise SchemaError(f"{geom_path}: expected a GeoJSON FeatureCollection.")

    geometries = {}
    for idx, feature in enumerate(collection.get("features", [])):
        props = feature.get("properties") or {}
        if "geoid" not in props or props["geoid"] is None:
            raise SchemaError(f"{geom_path}: feature {idx} has no `geoid` property.")
        geoid = str(props["geoid"]).strip()
        if geoid in geometries:
            raise DataError(f"{geom_path}: duplicate geometry for geoid {geoid}.")
        try:
            geom = shape(feature["geometry"])
        except (KeyError, TypeError, ValueError, AttributeError) as excep:
            raise GeometryError(f"{geom_path}: geoid {geoid}: {excep}") from excep
        check_polygon(geom, label=f"geoid {geoid}")
        if not shapely.is_valid(geom):
            raise GeometryError(
                f"geoid {geoid}: invalid polygon ({shapely.is_valid_reason(geom)})."
            )
        geometries[geoid] = geom

    if logger:
        logger.info(f"Loaded {len(geometries)} geometries from {geom_path}.")
    return geometries


def _list_ids(ids: Iterable[str]) -> str:
    ids = sorted(ids)
    listed = ", ".join(ids[:MAX_LISTED_IDS])
    more = f" (+{len(ids) - MAX_LISTED_IDS} more)" if len(ids) > MAX_LISTED_IDS else ""
    return listed + more


def load_block_groups(
    attr_path: Union[str, Path],
    geom_path: Union[str, Path],
    name: Optional[str] = None,
    logger: Optional[Logger] = None,
) -> CityDataset:
    """
    Loads a city's attribute CSV and geometry GeoJSON and joins them by geoid.

    Rows failing validation are excluded and counted (a warning is logged for
    each one). Columns other than the required and known extras are carried
    as extras if they hold numbers.

    Parameters
    ----------
    attr_path : Union[str, Path]
        Attribute CSV with the required header
    geom_path : Union[str, Path]
        GeoJSON FeatureCollection with a `geoid` property per feature
    name : Optional[str]
        City name
        Default: the attribute file's stem
    logger : Optional[Logger]
        Logger for warnings

    Returns
    -------
    CityDataset
        Joined block groups sorted by geoid

    Raises
    ------
    SchemaError
        If a required column is missing
    JoinError
        If geoids differ between attributes and geometries
    DataError
        If a geoid is duplicated

    """
    attr_path, geom_path = Path(attr_path), Path(geom_path)
    name = name or attr_path.stem

    frame = pd.read_csv(attr_path, dtype=str, keep_default_na=False)
    frame.columns = [c.strip().lower() for c in frame.columns]
    for column in REQUIRED_COLUMNS:
        if column not in frame.columns:
            msg = f"{attr_path}: missing required column `{column}`."
            if logger:
                logger.error(msg)
            raise SchemaError(msg)
    extras_columns = tuple(c for c in frame.columns if c not in REQUIRED_COLUMNS)
    unknown = [c for c in extras_columns if c not in EXTRA_COLUMNS]
    if unknown and logger:
        logger.info(f"{name}: carrying non-standard columns as extras: {unknown}.")

    # Blank geoids fail row validation below and are counted there
    all_geoids = [g for g in (raw.strip() for raw in frame["geoid"]) if g]
    dupes = {g for g, n in Counter(all_geoids).items() if n > 1}
    if dupes:
        msg = f"{attr_path}: duplicate geoids: {_list_ids(dupes)}."
        if logger:
            logger.error(msg)
        raise DataError(msg)

    block_groups, excluded = [], 0
    for line, row in enumerate(frame.to_dict(orient="records"), start=2):
        try:
            block_groups.append(_parse_block_group(row, extras_columns))
        except RowValidationError as excep:
            excluded += 1
            if logger:
                logger.warning(f"{attr_path}:{line}: excluded row ({excep}).")

    geometries = _load_geometries(geom_path, logger)

    no_geom = set(all_geoids) - set(geometries)
    no_attr = set(geometries) - set(all_geoids)
    if no_geom or no_attr:
        parts = []
        if no_geom:
            parts.append(f"without geometry: {_list_ids(no_geom)}")
        if no_attr:
            parts.append(f"without attributes: {_list_ids(no_attr)}")
        msg = f"{name}: geoid mismatch; " + "; ".join(parts) + "."
        if logger:
            logger.error(msg)
        raise JoinError(msg)

    kept = {bg.geoid for bg in block_groups}
    zero_pop = sum(1 for bg in block_groups if bg.population == 0)
    if zero_pop and logger:
        logger.warning(
            f"{name}: {zero_pop} block group(s) with population 0 kept but flagged "
            f"ineligible for per-capita analyses."
        )
    if logger:
        logger.info(f"{name}: loaded {len(block_groups)} block groups, excluded {excluded}.")

    # Extras present in the file but blank everywhere are treated as unavailable
    available = tuple(c for c in extras_columns if any(c in bg.extras for bg in block_groups))
    return CityDataset(
        name=name,
        block_groups=tuple(block_groups),
        geometries={g: geom for g, geom in geometries.items() if g in kept},
        excluded_count=excluded,
        extras_columns=available,
        source=MappingProxyType(
            {"attr_path": str(attr_path), "geom_path": str(geom_path)}
        ),
    )


def _parse_incident(
    row: Mapping[str, str], has_date: bool, logger: Optional[Logger]
) -> CrimeIncident:
    lon = _parse_number(row["lon"], "lon")
    lat = _parse_number(row["lat"], "lat")
    if not -180 <= lon <= 180:
        raise RowValidationError(f"lon {lon} outside [-180, 180].")
    if not -90 <= lat <= 90:
        raise RowValidationError(f"lat {lat} outside [-90, 90].")

    raw_category = row["category"]
    category = CRIME_ALIASES.get(raw_category.strip().lower(), "other")

    when = None
    if has_date and row["date"].strip():
        try:
            when = dateparser.parse(row["date"]).date()
        except (ValueError, OverflowError):
            if logger:
                logger.warning(f"Incident {row['id']}: unparseable date {row['date']!r}.")

    return CrimeIncident(
        id=row["id"].strip(),
        category=category,
        lon=lon,
        lat=lat,
        date=when,
        raw_category=raw_category,
    )


def load_crimes(path: Union[str, Path], logger: Optional[Logger] = None) -> IncidentList:
    """
    Loads crime incidents from CSV (`id,category,lon,lat[,date]`, WGS84).

    Unknown categories become `other` (kept, flagged). Rows with unparseable
    or out-of-range coordinates are excluded and counted.

    Parameters
    ----------
    path : Union[str, Path]
        Crime CSV
    logger : Optional[Logger]
        Logger for warnings

    Returns
    -------
    IncidentList
        Incidents in file order; `excluded_count` holds the excluded rows

    Raises
    ------
    SchemaError
        If a required column is missing

    """
    path = Path(path)
    if path.stat().st_size == 0:
        return IncidentList()
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        return IncidentList()
    frame.columns = [c.strip().lower() for c in frame.columns]
    for column in CRIME_COLUMNS:
        if column not in frame.columns:
            msg = f"{path}: missing required column `{column}`."
            if logger:
                logger.error(msg)
            raise SchemaError(msg)
    has_date = "date" in frame.columns

    incidents, excluded = [], 0
    for line, row in enumerate(frame.to_dict(orient="records"), start=2):
        try:
            incidents.append(_parse_incident(row, has_date, logger))
        except RowValidationError as excep:
            excluded += 1
            if logger:
                logger.warning(f"{path}:{line}: excluded incident ({excep}).")

    flagged = sum(1 for inc in incidents if inc.flagged)
    if logger:
        logger.info(f"Loaded {len(incidents)} incidents from {path}, excluded {excluded}.")
        if flagged:
            logger.warning(
                f"{path}: {flagged} incident(s) with unrecognized categories mapped to `other`."
            )
    return IncidentList(incidents, excluded_count=excluded)


def filter_abr(incidents: Iterable[CrimeIncident]) -> List[CrimeIncident]:
    """
    Keeps assaults, burglaries and robberies, in order.

    """
    return [inc for inc in incidents if inc.category in ABR_CATEGORIES]
