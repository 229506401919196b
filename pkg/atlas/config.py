"""
Run configuration: a single JSON document naming the cities, the reference
city and the analysis parameters.

"""
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Tuple, Union

# Local imports
from .settings import (
    DEFAULT_CLASS_COUNT,
    DEFAULT_TOP_FRACTION,
    DEFAULT_WEIGHTS_SCHEME,
    MAX_CLASS_COUNT,
)
from .utils import ConfigError

CITY_KEYS = ("name", "attr_path", "geom_path", "crimes_path")
OPTIONAL_CITY_KEYS = ("vacancy_indices",)
RUN_KEYS = ("cities", "reference_city")
OPTIONAL_RUN_KEYS = (
    "weights_scheme",
    "class_count",
    "top_fraction",
    "output_dir",
    "per_city_breaks",
)
DEFAULT_OUTPUT_DIR = "atlas_output"


def slugify(name: str) -> str:
    """File-system safe form of a city name."""
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name.strip()) or "city"


@dataclass(frozen=True)
class CityConfig:
    name: str
    attr_path: Path
    geom_path: Path
    crimes_path: Path
    vacancy_indices: Tuple[str, ...] = ()


@dataclass(frozen=True)
class RunConfig:
    """
    Validated run configuration. Paths are absolute.

    """

    cities: Tuple[CityConfig, ...]
    reference_city: str
    output_dir: Path
    weights_scheme: str = DEFAULT_WEIGHTS_SCHEME
    class_count: int = DEFAULT_CLASS_COUNT
    top_fraction: float = DEFAULT_TOP_FRACTION
    per_city_breaks: bool = False
    source_path: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.cities:
            raise ConfigError("At least one city is required.")
        names = [c.name for c in self.cities]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"Duplicate city names: {dupes}.")
        slugs = [slugify(n) for n in names]
        if len(set(slugs)) != len(slugs):
            raise ConfigError(f"City names collide as directory names: {slugs}.")
        if self.reference_city not in names:
            raise ConfigError(
                f"reference_city {self.reference_city!r} is not one of the cities {names}."
            )
        paths = [p for c in self.cities for p in (c.attr_path, c.geom_path, c.crimes_path)]
        if len(set(paths)) != len(paths):
            raise ConfigError("Input paths must be distinct across and within cities.")
        if self.weights_scheme not in ("queen", "rook"):
            raise ConfigError(
                f"weights_scheme must be 'queen' or 'rook', got {self.weights_scheme!r}."
            )
        if (
            isinstance(self.class_count, bool)
            or not isinstance(self.class_count, int)
            or not 2 <= self.class_count <= MAX_CLASS_COUNT
        ):
            raise ConfigError(
                f"class_count must be an integer in [2, {MAX_CLASS_COUNT}], "
                f"got {self.class_count!r}."
            )
        if (
            isinstance(self.top_fraction, bool)
            or not isinstance(self.top_fraction, (int, float))
            or not 0 < self.top_fraction <= 1
        ):
            raise ConfigError(f"top_fraction must lie in (0, 1], got {self.top_fraction!r}.")
        if not isinstance(self.per_city_breaks, bool):
            raise ConfigError(
                f"per_city_breaks must be true or false, got {self.per_city_breaks!r}."
            )

    def city(self, name: str) -> CityConfig:
        for city in self.cities:
            if city.name == name:
                return city
        raise ConfigError(f"Unknown city {name!r}; configured: {[c.name for c in self.cities]}.")

    @property
    def reference(self) -> CityConfig:
        return self.city(self.reference_city)

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: Union[str, Path] = ".") -> "RunConfig":
        """
        Builds a RunConfig from parsed JSON; relative paths resolve against
        `base_dir`.

        Raises
        ------
        ConfigError
            On unknown or missing keys, wrong types or out-of-range values

        """
        base_dir = Path(base_dir).resolve()
        if not isinstance(data, Mapping):
            raise ConfigError("Config must be a JSON object.")
        _check_keys(data, RUN_KEYS, OPTIONAL_RUN_KEYS, "config")
        if not isinstance(data["cities"], list):
            raise ConfigError("`cities` must be a list.")

        def resolve(raw, what: str) -> Path:
            if not isinstance(raw, str) or not raw.strip():
                raise ConfigError(f"{what} must be a nonempty string.")
            path = Path(raw).expanduser()
            return path if path.is_absolute() else (base_dir / path).resolve()

        cities = []
        for idx, entry in enumerate(data["cities"]):
            if not isinstance(entry, Mapping):
                raise ConfigError(f"cities[{idx}] must be an object.")
            _check_keys(entry, CITY_KEYS, OPTIONAL_CITY_KEYS, f"cities[{idx}]")
            name = entry["name"]
            if not isinstance(name, str) or not name.strip():
                raise ConfigError(f"cities[{idx}].name must be a nonempty string.")
            vacancy = entry.get("vacancy_indices", [])
            if not isinstance(vacancy, list) or not all(isinstance(v, str) for v in vacancy):
                raise ConfigError(f"cities[{idx}].vacancy_indices must be a list of column names.")
            cities.append(
                CityConfig(
                    name=name.strip(),
                    attr_path=resolve(entry["attr_path"], f"{name}.attr_path"),
                    geom_path=resolve(entry["geom_path"], f"{name}.geom_path"),
                    crimes_path=resolve(entry["crimes_path"], f"{name}.crimes_path"),
                    vacancy_indices=tuple(v.strip().lower() for v in vacancy),
                )
            )

        return cls(
            cities=tuple(cities),
            reference_city=data["reference_city"],
            output_dir=resolve(data.get("output_dir", DEFAULT_OUTPUT_DIR), "output_dir"),
            weights_scheme=data.get("weights_scheme", DEFAULT_WEIGHTS_SCHEME),
            class_count=data.get("class_count", DEFAULT_CLASS_COUNT),
            top_fraction=data.get("top_fraction", DEFAULT_TOP_FRACTION),
            per_city_breaks=data.get("per_city_breaks", False),
        )

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "RunConfig":
        """
        Reads and validates a JSON config file.

        Raises
        ------
        ConfigError
            If the file cannot be read or parsed, or fails validation

        """
        path = Path(path)
        try:
            with open(path) as f:
                data = json.load(f)
        except OSError as excep:
            raise ConfigError(f"Cannot read config {path}: {excep}") from excep
        except json.JSONDecodeError as excep:
            raise ConfigError(f"Config {path} is not valid JSON: {excep}") from excep
        config = cls.from_dict(data, base_dir=path.resolve().parent)
        object.__setattr__(config, "source_path", path.resolve())
        return config


def _check_keys(data: Mapping, required: Tuple[str, ...], optional: Tuple[str, ...], where: str):
    unknown = sorted(set(data) - set(required) - set(optional))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}.")
    missing = [k for k in required if k not in data]
    if missing:
        raise ConfigError(f"{where}: missing key(s) {missing}.")
