"""
Per-city pipeline runner and the multi-city driver.

"""
import shutil
from dataclasses import dataclass, field
from logging import Logger as _BaseLogger
from multiprocessing.pool import ThreadPool
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from rich.console import Console

# Local imports
from .config import CityConfig, RunConfig, slugify
from .export import (
    export_choropleth,
    write_geojson,
    write_json,
    write_membership,
    write_raw_values,
    write_selection_summary,
    write_table,
)
from .geo import JoinResult, SpatialWeights, contiguity_weights, row_standardize, spatial_join
from .indices import IndexBundle, build_index_bundle
from .ingest import CityDataset, filter_abr, load_block_groups, load_crimes
from .selection import (
    MedianTriple,
    SelectionResult,
    TopCount,
    TopFraction,
    correlation_table,
    higher_lower,
    median_table,
    moran_table,
    reference_medians,
    select_top_deprived,
    select_trivariate,
    summary_table,
    vacancy_validation_table,
    variable_frame,
    whole_city,
    zscore_table,
)
from .settings import (
    CHOROPLETH_VARIABLES,
    COMPARISON_VARIABLES,
    OPTIONAL_CHOROPLETH_VARIABLES,
    max_threads,
)
from .stats import VariableVector, jenks_breaks
from .utils import DataError, Logger, NumericError, StageError

TABLE_FORMATS = {"csv": "csv", "markdown": "md"}


@dataclass(frozen=True)
class ReferenceContext:
    """
    What every city borrows from the reference city: its dataset and
    indices (for SD4DET weights), its medians (for the trivariate criterion)
    and its natural breaks (for the choropleths).

    """

    dataset: CityDataset
    bundle: IndexBundle
    medians: MedianTriple
    breaks: Dict[str, List[float]] = field(hash=False)


def variable_values(city: CityDataset, bundle: IndexBundle, variable: str) -> VariableVector:
    """
    A variable over the city's eligible block groups, with geoids. Block
    groups missing the value are left out.

    Raises
    ------
    DataError
        If the city does not carry the variable

    """
    frame = variable_frame(city, bundle)
    if variable not in frame.columns:
        raise DataError(f"{city.name}: unknown variable {variable!r}.")
    frame = frame[variable].dropna()
    return VariableVector(
        name=variable, values=frame.to_numpy(dtype=float), geoids=tuple(frame.index)
    )


def choropleth_variables(city: CityDataset, bundle: IndexBundle) -> List[str]:
    """The mapped variables, plus the optional ones the city has values for."""
    frame = variable_frame(city, bundle)
    optional = [
        v for v in OPTIONAL_CHOROPLETH_VARIABLES if v in frame.columns and frame[v].notna().any()
    ]
    return list(CHOROPLETH_VARIABLES) + optional


def natural_breaks(
    city: CityDataset,
    bundle: IndexBundle,
    variables: Sequence[str],
    class_count: int,
    logger: Optional[_BaseLogger] = None,
) -> Dict[str, List[float]]:
    """
    Jenks breaks per variable. Optional variables with too few distinct
    values are skipped with a warning; the others raise.

    """
    breaks = {}
    for variable in variables:
        try:
            breaks[variable] = jenks_breaks(variable_values(city, bundle, variable), class_count)
        except NumericError as excep:
            if variable not in OPTIONAL_CHOROPLETH_VARIABLES:
                raise
            if logger:
                logger.warning(f"{city.name}: no choropleth for {variable} ({excep}).")
    return breaks


def prepare_reference(
    dataset: CityDataset,
    bundle: IndexBundle,
    class_count: int,
    variables: Optional[Sequence[str]] = None,
    logger: Optional[_BaseLogger] = None,
) -> ReferenceContext:
    medians = reference_medians(bundle, dataset)
    if variables is None:
        variables = choropleth_variables(dataset, bundle)
    breaks = natural_breaks(dataset, bundle, variables, class_count, logger=logger)
    if logger:
        logger.info(
            f"Reference medians from {dataset.name}: PERCSNAP {medians.med_snap:.3f}, "
            f"ABRPOP {medians.med_abr:.6f}, PERCVAC {medians.med_vac:.3f}."
        )
        for variable, values in breaks.items():
            logger.info(f"Reference breaks for {variable}: {[round(b, 6) for b in values]}.")
    return ReferenceContext(dataset=dataset, bundle=bundle, medians=medians, breaks=breaks)


class CityOps:
    """
    Pipeline for one city. Does the following:
    - Loads attributes, geometries and crimes
    - Joins ABR incidents to block groups
    - Builds the deprivation indices and ABRPOP
    - Selects block groups (trivariate and top-deprived)
    - Writes the tables and choropleths to `<output_dir>/cities/<city>/`

    Parameters
    ----------
    city_config : CityConfig
        City inputs
    run_config : RunConfig
        Run parameters
    reference : Optional[ReferenceContext]
        Reference-city context; None for the reference city itself, which
        builds it during `run_indices`

    """

    def __init__(
        self,
        city_config: CityConfig,
        run_config: RunConfig,
        reference: Optional[ReferenceContext] = None,
    ):
        self.city_config = city_config
        self.run_config = run_config
        self.name = city_config.name
        self.is_reference = city_config.name == run_config.reference_city
        if not self.is_reference and reference is None:
            raise ValueError(f"{self.name}: a reference context is required.")
        self.reference = reference

        self.out_dir = run_config.output_dir / "cities" / slugify(self.name)
        self.log_path = run_config.output_dir / "logs"
        self.logger = Logger(log_path=self.log_path, name=f"CityOps_{slugify(self.name)}")
        self.logger.info(f"City {self.name}: writing to {self.out_dir}.")
        self.logger.info(f"Log file: {self.logger._log_file}")

        self.dataset: Optional[CityDataset] = None
        self.incidents = []
        self.abr = []
        self.join: Optional[JoinResult] = None
        self.bundle: Optional[IndexBundle] = None
        self.weights: Optional[SpatialWeights] = None
        self.selections: Dict[str, SelectionResult] = {}

        # Specify the run order (else alphabetical order)
        self._run_order = [
            "run_ingest",
            "run_join",
            "run_indices",
            "run_selection",
            "run_tables",
            "run_choropleths",
            "run_finalize",
        ]

    def _handle_error(self, excep: Exception, caller: str):
        """
        Logs the failure and re-raises it as a StageError naming city and stage

        Parameters
        ----------
        excep : Exception
            The exception that was raised
        caller : str
            The stage that raised the exception

        """
        self.logger.error(f"{caller} step failed for city {self.name}.")
        self.logger.error(f"{excep}", exc_info=True)
        raise StageError(self.name, caller, excep) from excep

    def _run_all(self, until: Optional[str] = None):
        """
        Runs the steps in `_run_order`, optionally stopping after `until`.

        Raises
        ------
        ValueError
            If `_run_order` is not defined

        """
        if not self._run_order:
            raise ValueError("_run_order is not defined.")
        for step in self._run_order:
            getattr(self, step)()
            if step == until:
                break

    def close(self):
        self.logger.close()

    def run_ingest(self):
        self.logger.info(f"Starting ingest for {self.name}.")
        try:
            cfg = self.city_config
            self.dataset = load_block_groups(
                cfg.attr_path, cfg.geom_path, name=self.name, logger=self.logger
            )
            self.incidents = load_crimes(cfg.crimes_path, logger=self.logger)
            self.abr = filter_abr(self.incidents)
        except Exception as e:
            self._handle_error(e, "Ingest")
        self.logger.info(
            f"Finished ingest for {self.name}: {len(self.dataset.block_groups)} block groups, "
            f"{len(self.abr)} ABR incidents of {len(self.incidents)}."
        )

    def run_join(self):
        self.logger.info(f"Starting spatial join for {self.name}.")
        try:
            self.join = spatial_join(self.abr, self.dataset, threads=max_threads())
        except Exception as e:
            self._handle_error(e, "Spatial join")
        if self.join.unassigned:
            self.logger.warning(
                f"{self.name}: {self.join.unassigned} ABR incident(s) outside every block group."
            )
        self.logger.info(f"Finished spatial join for {self.name}.")

    def run_indices(self):
        self.logger.info(f"Starting indices for {self.name}.")
        try:
            ref_dataset = self.dataset if self.is_reference else self.reference.dataset
            self.bundle = build_index_bundle(
                self.dataset, ref_dataset, self.join, logger=self.logger
            )
            if self.is_reference:
                self.reference = prepare_reference(
                    self.dataset,
                    self.bundle,
                    self.run_config.class_count,
                    logger=self.logger,
                )
        except Exception as e:
            self._handle_error(e, "Indices")
        self.logger.info(f"Finished indices for {self.name}.")

    def run_selection(self):
        self.logger.info(f"Starting selection for {self.name}.")
        try:
            city, bundle = self.dataset, self.bundle
            trivariate = select_trivariate(city, bundle, self.reference.medians)
            self.selections = {
                "city": whole_city(city, bundle),
                "trivariate": trivariate,
                "top_fraction": select_top_deprived(
                    city, bundle, TopFraction(self.run_config.top_fraction)
                ),
                "top_n": select_top_deprived(city, bundle, TopCount(trivariate.n_selected)),
            }
        except Exception as e:
            self._handle_error(e, "Selection")
        for sel in self.selections.values():
            self.logger.info(
                f"{self.name}: {sel.label}: {sel.n_selected} of {sel.n_eligible} "
                f"({100 * sel.share:.1f}%)."
            )
            if sel.low_n:
                self.logger.warning(f"{self.name}: {sel.label} has low N ({sel.n_selected}).")
        self.logger.info(f"Finished selection for {self.name}.")

    def _write(self, table, stem: str):
        for fmt, suffix in TABLE_FORMATS.items():
            write_table(table, fmt, self.out_dir / f"{stem}.{suffix}")

    def run_tables(self):
        self.logger.info(f"Starting tables for {self.name}.")
        try:
            city, bundle, log = self.dataset, self.bundle, self.logger
            self._write(summary_table(city, bundle, logger=log), "summary")
            for method in ("pearson", "spearman"):
                self._write(
                    correlation_table(city, bundle, method=method, logger=log),
                    f"correlations_{method}",
                )

            eligible = city.subset(bundle.geoids)
            self.weights = row_standardize(
                contiguity_weights(eligible, self.run_config.weights_scheme)
            )
            self._write(moran_table(city, bundle, self.weights, logger=log), "moran")

            groups = []
            for key in ("city", "trivariate", "top_fraction", "top_n"):
                sel = self.selections[key]
                if sel.n_selected:
                    groups.append(sel)
                else:
                    log.warning(f"{self.name}: group {sel.label!r} is empty; left out of tables.")
            medians = median_table(city, bundle, groups, COMPARISON_VARIABLES, logger=log)
            self._write(medians, "medians")

            trivariate, top_n = self.selections["trivariate"], self.selections["top_n"]
            if trivariate.n_selected:
                self._write(
                    zscore_table(city, bundle, trivariate, COMPARISON_VARIABLES, logger=log),
                    "zscores",
                )
                self._write(
                    higher_lower(
                        medians,
                        medians,
                        "Selection",
                        "Deprivation",
                        group_a=trivariate.label,
                        group_b=top_n.label,
                    ),
                    "higher_lower",
                )

            if self.city_config.vacancy_indices:
                self._write(
                    vacancy_validation_table(
                        city, bundle, self.city_config.vacancy_indices, logger=log
                    ),
                    "vacancy_validation",
                )

            selections = list(self.selections.values())
            write_membership(bundle.geoids, selections[1:], self.out_dir / "selection.csv")
            write_selection_summary(selections[1:], self.out_dir / "selection_summary.csv")
            write_raw_values(variable_frame(city, bundle), self.out_dir / "values_raw.csv")
        except Exception as e:
            self._handle_error(e, "Tables")
        self.logger.info(f"Finished tables for {self.name}.")

    def run_choropleths(self):
        self.logger.info(f"Starting choropleths for {self.name}.")
        try:
            city, bundle = self.dataset, self.bundle
            variables = choropleth_variables(city, bundle)
            # Own breaks when asked to, or when the reference city lacks the variable
            own = [
                v
                for v in variables
                if self.run_config.per_city_breaks or v not in self.reference.breaks
            ]
            own_breaks = natural_breaks(
                city, bundle, own, self.run_config.class_count, logger=self.logger
            )
            memberships = {key: self.selections[key] for key in ("top_fraction", "top_n")}
            for variable in variables:
                if variable in own_breaks:
                    breaks, source = own_breaks[variable], self.name
                elif variable in own:
                    continue
                else:
                    breaks = self.reference.breaks[variable]
                    source = self.reference.dataset.name
                export = export_choropleth(
                    city,
                    variable_values(city, bundle, variable),
                    breaks,
                    selection=self.selections["trivariate"],
                    breaks_source=source,
                    memberships=memberships,
                )
                self.logger.info(
                    f"{self.name}: {variable} classes {export.class_histogram()} "
                    f"on {source} breaks."
                )
                write_geojson(export, self.dataset, self.out_dir / f"choropleth_{variable}.geojson")
        except Exception as e:
            self._handle_error(e, "Choropleths")
        self.logger.info(f"Finished choropleths for {self.name}.")

    def run_finalize(self):
        self.logger.info(f"Finished all steps for {self.name}.")


@dataclass(frozen=True)
class CityStatus:
    name: str
    exit_code: int
    stage: Optional[str] = None
    message: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.exit_code == 0


@dataclass(frozen=True)
class PipelineReport:
    exit_code: int
    cities: Dict[str, CityStatus] = field(hash=False)
    output_dir: Optional[Path] = None


def _run_city(ops: CityOps, logger: _BaseLogger) -> CityStatus:
    if ops.out_dir.exists():
        shutil.rmtree(ops.out_dir)
    try:
        ops._run_all()
        status = CityStatus(name=ops.name, exit_code=0)
        logger.info(f"{ops.name}: done.")
    except StageError as excep:
        # Failed cities leave no partial artifacts
        shutil.rmtree(ops.out_dir, ignore_errors=True)
        status = CityStatus(
            name=ops.name, exit_code=excep.exit_code, stage=excep.stage, message=str(excep.cause)
        )
        logger.error(f"{excep}")
    finally:
        ops.close()
    return status


def run_pipeline(config: RunConfig, console: Optional[Console] = None) -> PipelineReport:
    """
    Runs every city of `config` and writes the artifact tree.

    The reference city runs first (its medians, SDs and breaks feed every
    other city); the remaining cities run in parallel, capped by
    `ATLAS_THREADS`. A failing city is reported and skipped; the others still
    complete. The exit code is the maximum of the per-city codes.

    Parameters
    ----------
    config : RunConfig
        Validated run configuration
    console : Optional[Console]
        Console for progress output

    Returns
    -------
    PipelineReport
        Aggregate exit code and per-city statuses

    Raises
    ------
    ConfigError
        If `ATLAS_THREADS` is invalid

    """
    threads = max_threads()
    config.output_dir.mkdir(parents=True, exist_ok=True)
    logger = Logger(name="atlas", log_path=config.output_dir / "logs")
    logger.info(
        f"Starting run over {[c.name for c in config.cities]}; "
        f"reference {config.reference_city}."
    )
    if console:
        console.rule("atlas run")
        console.print(f"Check {logger._log_file} for details.")

    ref_ops = CityOps(config.reference, config)
    statuses = {config.reference_city: _run_city(ref_ops, logger)}
    others = [c for c in config.cities if c.name != config.reference_city]

    if statuses[config.reference_city].ok:

        def job(city_config: CityConfig) -> CityStatus:
            return _run_city(CityOps(city_config, config, ref_ops.reference), logger)

        if others:
            with ThreadPool(min(threads, len(others))) as pool:
                results = pool.map(job, others)  # NOTE: Blocking call
            statuses.update({s.name: s for s in results})
    else:
        failed = statuses[config.reference_city]
        for city_config in others:
            logger.error(
                f"{city_config.name}: skipped; reference city {config.reference_city} failed."
            )
            statuses[city_config.name] = CityStatus(
                name=city_config.name,
                exit_code=failed.exit_code,
                stage="Reference",
                message=f"reference city {config.reference_city} failed at {failed.stage}",
            )

    ordered = {c.name: statuses[c.name] for c in config.cities}
    exit_code = max(s.exit_code for s in ordered.values())
    write_json(
        {
            "reference_city": config.reference_city,
            "exit_code": exit_code,
            "cities": [
                {"name": s.name, "exit_code": s.exit_code, "stage": s.stage, "message": s.message}
                for s in ordered.values()
            ],
        },
        config.output_dir / "manifest.json",
    )
    logger.info(f"Run finished with exit code {exit_code}.")
    logger.close()
    if console:
        console.rule()
    return PipelineReport(exit_code=exit_code, cities=ordered, output_dir=config.output_dir)


def prepare_city(config: RunConfig, name: str, until: str = "run_selection") -> CityOps:
    """
    Runs the reference city and `name` up to (and including) `until`, which
    must not come before `run_indices`. Writes no artifacts; used by the
    single-purpose CLI commands.

    Raises
    ------
    StageError
        If either city fails

    """
    city_config = config.city(name)
    ref_ops = CityOps(config.reference, config)
    try:
        ref_ops._run_all(until=until if name == config.reference_city else "run_indices")
    finally:
        ref_ops.close()
    if name == config.reference_city:
        return ref_ops

    ops = CityOps(city_config, config, ref_ops.reference)
    try:
        ops._run_all(until=until)
    finally:
        ops.close()
    return ops
