"""
Tunable constants for atlas

"""
import os

# Local imports
from .utils import ConfigError

# NOTE: Tweak as needed
SNAP_GRID = 1e-9  # degrees; vertex snapping for contiguity
PCA_TOLERANCE = 1e-12  # off-diagonal Frobenius norm at which Jacobi stops
PCA_MAX_ROTATIONS = 10_000
JENKS_TIE_TOLERANCE = 1e-9  # relative to the total SSD; closer partitions count as tied
DEFAULT_WEIGHTS_SCHEME = "queen"
DEFAULT_CLASS_COUNT = 5
MAX_CLASS_COUNT = 9
DEFAULT_TOP_FRACTION = 0.10
ZSCORE_FLAGS = ((2.0, "**"), (1.0, "*"))  # checked in order; |Z| strictly above
LOW_N = 1  # groups with <= LOW_N members are flagged
OUTPUT_DECIMALS = 3
MAX_LISTED_IDS = 10  # geoids listed in join error messages
THREADS_ENV = "ATLAS_THREADS"

## Ingest schema
REQUIRED_COLUMNS = (
    "geoid",
    "population",
    "housing_units",
    "perc_pov",
    "perc_snap",
    "unemp",
    "perc_nohs",
    "perc_vac",
)
PERCENT_COLUMNS = ("perc_pov", "perc_snap", "unemp", "perc_nohs", "perc_vac")
# Optional extras; percentages are range-checked, medval must be >= 0
EXTRA_PERCENT_COLUMNS = (
    "perc40comm",
    "percblack",
    "perchous30k",
    "percpubtra",
    "percrent",
    "percwhite",
    "revcomm",
)
EXTRA_COLUMNS = ("medval",) + EXTRA_PERCENT_COLUMNS
CRIME_COLUMNS = ("id", "category", "lon", "lat")

# Case-insensitive alias table; anything else becomes `other` (kept, flagged)
CRIME_ALIASES = {
    "assault": "assault",
    "agg assault": "assault",
    "aggravated assault": "assault",
    "simple assault": "assault",
    "assault & battery": "assault",
    "battery": "assault",
    "aggravated battery": "assault",
    "burglary": "burglary",
    "breaking and entering": "burglary",
    "breaking & entering": "burglary",
    "b&e": "burglary",
    "residential burglary": "burglary",
    "commercial burglary": "burglary",
    "robbery": "robbery",
    "armed robbery": "robbery",
    "strong arm robbery": "robbery",
    "strong-arm robbery": "robbery",
    "other": "other",
}

## Pipeline variables (names as used in all output tables)
SUMMARY_VARIABLES = (
    "ABRPOP",
    "SD4OWN",
    "SD4DET",
    "PCA4",
    "PERCNOHS",
    "PERCPOV",
    "PERCSNAP",
    "PERCVAC",
    "UNEMP",
)
CORRELATION_VARIABLES = ("SD4DET", "PCA4", "SD4OWN", "PERCNOHS", "PERCPOV", "PERCSNAP", "UNEMP")
MORAN_VARIABLES = ("SD4DET", "PERCSNAP", "ABRPOP", "PERCVAC")
COMPARISON_VARIABLES = (
    "SD4DET",
    "ABRPOP",
    "MEDVAL",
    "PERC40COMM",
    "PERCBLACK",
    "PERCHOUS30K",
    "PERCPUBTRA",
    "PERCRENT",
    "PERCSNAP",
    "PERCVAC",
    "PERCWHITE",
    "REVCOMM",
)
# Displayed with a star in the higher/lower table; semantics unchanged
STARRED_VARIABLES = ("MEDVAL", "PERCWHITE")
CHOROPLETH_VARIABLES = ("SD4DET", "PERCSNAP", "ABRPOP", "PERCVAC")
OPTIONAL_CHOROPLETH_VARIABLES = ("PERCWHITE",)  # mapped when the city carries them


def max_threads() -> int:
    """
    Worker thread cap from `ATLAS_THREADS`, else the number of cores.

    Raises
    ------
    ConfigError
        If `ATLAS_THREADS` is set but not a positive integer

    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}.")
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}.")
    return threads
