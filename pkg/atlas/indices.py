"""
Per-block-group derived measures: ABR per capita and the three deprivation
indices (own-SD weights, reference-SD weights, first principal component).

"""
from dataclasses import dataclass
from logging import Logger
from typing import Optional, Sequence

import numpy as np
import pandas as pd

# Local imports
from .geo import JoinResult
from .ingest import BlockGroup, CityDataset
from .stats import PcaResult, VariableVector, pca_first_component, std_dev
from .utils import ExcludedBlockGroup, NumericError, ZeroVarianceError

# Component variables, in the order used for SDs, loadings and the index
COMPONENTS = (("POV", "perc_pov"), ("SNAP", "perc_snap"), ("UNEMP", "unemp"), ("NOHS", "perc_nohs"))
INDEX_COLUMNS = ("SD4OWN", "SD4DET", "PCA4", "ABRPOP")


@dataclass(frozen=True)
class SigmaVector:
    source_city: str
    sigma_pov: float
    sigma_snap: float
    sigma_unemp: float
    sigma_nohs: float

    def __post_init__(self):
        for label, _ in COMPONENTS:
            value = getattr(self, f"sigma_{label.lower()}")
            if not value > 0:
                raise ZeroVarianceError(
                    f"{self.source_city}: SD of {label} must be positive, got {value}."
                )

    def as_tuple(self):
        return (self.sigma_pov, self.sigma_snap, self.sigma_unemp, self.sigma_nohs)


@dataclass(frozen=True, eq=False)
class IndexBundle:
    """
    Derived measures for a city's eligible (population > 0) block groups.

    `frame` is indexed by geoid (sorted) with columns SD4OWN, SD4DET, PCA4
    and ABRPOP.

    """

    city: str
    frame: pd.DataFrame
    own_sigmas: SigmaVector
    reference_sigmas: SigmaVector
    reference_city: str
    pca: PcaResult
    ineligible_count: int = 0

    @property
    def geoids(self):
        return tuple(self.frame.index)

    def column(self, name: str) -> VariableVector:
        return VariableVector(
            name=name, values=self.frame[name].to_numpy(), geoids=self.geoids
        )


def compute_sigmas(city: CityDataset) -> SigmaVector:
    """
    Sample SDs of POV, SNAP, UNEMP and NOHS over all of a city's block groups
    (population-0 rows included).

    Raises
    ------
    NumericError
        If the city has fewer than 2 block groups
    ZeroVarianceError
        If a component is constant; names the component

    """
    bgs = city.block_groups
    if len(bgs) < 2:
        raise NumericError(f"{city.name}: need at least 2 block groups for SDs.")
    sigmas = {}
    for label, attr in COMPONENTS:
        sd = std_dev([getattr(bg, attr) for bg in bgs])
        if sd == 0:
            raise ZeroVarianceError(f"{city.name}: {label} is constant; SD is zero.")
        sigmas[f"sigma_{label.lower()}"] = sd
    return SigmaVector(source_city=city.name, **sigmas)


def deprivation_index(bg: BlockGroup, s: SigmaVector) -> float:
    """
    POV / s1 + SNAP / s2 + UNEMP / s3 + NOHS / s4

    """
    return (
        bg.perc_pov / s.sigma_pov
        + bg.perc_snap / s.sigma_snap
        + bg.unemp / s.sigma_unemp
        + bg.perc_nohs / s.sigma_nohs
    )


def deprivation_scores(block_groups: Sequence[BlockGroup], s: SigmaVector) -> np.ndarray:
    return np.array([deprivation_index(bg, s) for bg in block_groups], dtype=float)


def abr_per_capita(abr_count: int, bg: BlockGroup) -> float:
    """
    ABR incidents per resident.

    Raises
    ------
    ExcludedBlockGroup
        If the block group has no population

    """
    if bg.population <= 0:
        raise ExcludedBlockGroup(bg.geoid)
    return abr_count / bg.population


def build_index_bundle(
    city: CityDataset,
    reference: CityDataset,
    join: JoinResult,
    logger: Optional[Logger] = None,
) -> IndexBundle:
    """
    Builds SD4OWN, SD4DET, PCA4 and ABRPOP for a city's eligible block groups.

    Parameters
    ----------
    city : CityDataset
        City to index
    reference : CityDataset
        Reference city supplying the SD4DET weights
    join : JoinResult
        Join of the city's ABR incidents to its block groups
    logger : Optional[Logger]
        Logger

    Returns
    -------
    IndexBundle
        Order-aligned columns keyed by geoid

    """
    own = compute_sigmas(city)
    ref = own if reference.name == city.name else compute_sigmas(reference)

    eligible, excluded = [], 0
    abr = []
    for bg in city.block_groups:
        try:
            abr.append(abr_per_capita(join.counts.get(bg.geoid, 0), bg))
            eligible.append(bg)
        except ExcludedBlockGroup:
            excluded += 1
    if excluded and logger:
        logger.info(f"{city.name}: {excluded} block group(s) excluded from per-capita measures.")

    pca = pca_first_component(
        [
            VariableVector(name=label, values=[getattr(bg, attr) for bg in eligible])
            for label, attr in COMPONENTS
        ]
    )
    if logger:
        loadings = ", ".join(f"{n}={v:.3f}" for n, v in zip(pca.names, pca.loadings))
        logger.info(f"{city.name}: PCA4 eigenvalue {pca.eigenvalue:.3f}; loadings {loadings}.")

    frame = pd.DataFrame(
        {
            "SD4OWN": deprivation_scores(eligible, own),
            "SD4DET": deprivation_scores(eligible, ref),
            "PCA4": pca.scores,
            "ABRPOP": abr,
        },
        index=pd.Index([bg.geoid for bg in eligible], name="geoid"),
        columns=list(INDEX_COLUMNS),
    )
    return IndexBundle(
        city=city.name,
        frame=frame,
        own_sigmas=own,
        reference_sigmas=ref,
        reference_city=reference.name,
        pca=pca,
        ineligible_count=excluded,
    )
