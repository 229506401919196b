"""
Utility classes & functions: file logger and the error hierarchy

"""
from logging import DEBUG, INFO, FileHandler, Formatter, Logger
from pathlib import Path
from typing import Optional, Union

from rich.logging import RichHandler


class Logger(Logger):
    """
    Logger class for logging to file (and optionally to the terminal via rich)

    Parameters
    ----------
    name : str
        Logger name; also the log file stem
    log_path : Optional[Union[str, Path]]
        Folder for `<name>.log`. No file handler if None.
    level : int
        Logging level
        Default: DEBUG
    console : bool
        Also emit records through `rich.logging.RichHandler`
        Default: False

    """

    def __init__(
        self,
        name: str,
        log_path: Optional[Union[str, Path]] = None,
        level: int = DEBUG,
        console: bool = False,
    ):
        super().__init__(name, level)

        self.setLevel(level)
        self._log_file = None
        if log_path is not None:
            log_path = Path(log_path)
            log_path.mkdir(parents=True, exist_ok=True)
            self._log_file = log_path / f"{name}.log"
            self._log_file.touch(exist_ok=True)

            fh = FileHandler(self._log_file)
            fh.setLevel(level)
            formatter = Formatter(
                "%(asctime)s | %(levelname)s: %(message)s",
                datefmt="%Y-%m-%d %H:%M:%S %Z",
            )
            fh.setFormatter(formatter)
            self.addHandler(fh)

        if console:
            rh = RichHandler(level=INFO, show_path=False, markup=False)
            self.addHandler(rh)

    def close(self):
        """
        Closes and detaches all handlers.

        """
        for handler in list(self.handlers):
            handler.close()
            self.removeHandler(handler)


# NOTE: Exit codes are part of the CLI contract: 1 config, 2 data, 3 numeric.
class AtlasError(Exception):
    """Base class for all errors raised by atlas."""

    exit_code = 2


class ConfigError(AtlasError, ValueError):
    exit_code = 1


class DataError(AtlasError, ValueError):
    exit_code = 2


class SchemaError(DataError):
    """An input file misses a required column or has the wrong layout."""


class JoinError(DataError):
    """Attribute and geometry geoids do not match."""


class RowValidationError(DataError):
    """A single input row failed validation. Callers exclude and count it."""


class GeometryError(DataError):
    """Degenerate or invalid polygon."""


class SelectionError(DataError):
    """Invalid selection request (empty group, count above eligible, ...)."""


class ExcludedBlockGroup(DataError):
    """
    Signals a block group without population. Per-capita analyses drop it
    and count it.

    """

    def __init__(self, geoid: str):
        self.geoid = geoid
        super().__init__(f"Block group {geoid} has population 0.")


class NumericError(AtlasError, ArithmeticError):
    exit_code = 3


class ZeroVarianceError(NumericError):
    """A statistic needs a nonconstant input."""


class ConvergenceError(NumericError):
    """An iterative solver did not converge."""


class StageError(AtlasError):
    """
    Wraps the error that stopped a city's pipeline at a given stage.

    Parameters
    ----------
    city : str
        City name
    stage : str
        Pipeline stage that failed
    cause : Exception
        The original exception

    """

    def __init__(self, city: str, stage: str, cause: Exception):
        self.city = city
        self.stage = stage
        self.cause = cause
        self.exit_code = exit_code_for(cause)
        super().__init__(f"{city}: {stage} failed: {cause}")


def exit_code_for(excep: BaseException) -> int:
    """
    Maps an exception to the CLI exit code.

    Parameters
    ----------
    excep : BaseException
        The exception

    Returns
    -------
    int
        1 (config), 2 (data / I/O) or 3 (numeric)

    """
    if isinstance(excep, AtlasError):
        return excep.exit_code
    if isinstance(excep, (FloatingPointError, ZeroDivisionError)):
        return NumericError.exit_code
    return DataError.exit_code
