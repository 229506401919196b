"""
Spatial kernels: point-in-polygon assignment of incidents to block groups,
and contiguity-based spatial weights.

"""
from dataclasses import dataclass
from functools import partial
from multiprocessing.pool import ThreadPool
from typing import Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import shapely
from scipy import sparse
from shapely.geometry import MultiPolygon, Point, Polygon

# Local imports
from .settings import SNAP_GRID, max_threads
from .utils import GeometryError

PolygonLike = Union[Polygon, MultiPolygon]
Neighbors = Tuple[Tuple[Tuple[int, float], ...], ...]

# NOTE: Tweak as needed; below this many points the join runs in one chunk
MIN_CHUNK_SIZE = 5_000


@dataclass(frozen=True)
class SpatialWeights:
    """
    Sparse neighbor structure over a city's block groups.

    Parameters
    ----------
    neighbors : Neighbors
        Per-region tuple of (region index, weight) pairs, sorted by index
    row_standardized : bool
        Whether each nonempty row sums to 1
    ids : Tuple[str, ...]
        Region identifiers (geoids), in index order

    """

    neighbors: Neighbors
    row_standardized: bool = False
    ids: Tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return len(self.neighbors)

    @property
    def s0(self) -> float:
        return float(sum(wt for row in self.neighbors for _, wt in row))

    @property
    def cardinalities(self) -> Tuple[int, ...]:
        return tuple(len(row) for row in self.neighbors)

    @property
    def islands(self) -> Tuple[int, ...]:
        """Indices of regions without neighbors."""
        return tuple(i for i, row in enumerate(self.neighbors) if not row)

    def to_sparse(self) -> sparse.csr_matrix:
        rows, cols, vals = [], [], []
        for i, row in enumerate(self.neighbors):
            for j, wt in row:
                rows.append(i)
                cols.append(j)
                vals.append(wt)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))


@dataclass(frozen=True)
class JoinResult:
    counts: Dict[str, int]  # per geoid, in geoid order
    unassigned: int

    @property
    def n_incidents(self) -> int:
        return sum(self.counts.values()) + self.unassigned


def check_polygon(poly: PolygonLike, label: str = "polygon"):
    """
    Rejects non-polygons and rings with fewer than 3 distinct vertices.

    Raises
    ------
    GeometryError
        If `poly` is not a (Multi)Polygon or is degenerate

    """
    if isinstance(poly, Polygon):
        parts = [poly]
    elif isinstance(poly, MultiPolygon):
        parts = list(poly.geoms)
    else:
        raise GeometryError(f"{label}: expected Polygon or MultiPolygon, got {poly.geom_type}.")
    if not parts:
        raise GeometryError(f"{label}: empty geometry.")
    for part in parts:
        for ring in [part.exterior, *part.interiors]:
            distinct = np.unique(shapely.get_coordinates(ring), axis=0)
            if len(distinct) < 3:
                raise GeometryError(
                    f"{label}: degenerate ring with {len(distinct)} distinct vertices."
                )


def point_in_polygon(p: Union[Point, Sequence[float]], poly: PolygonLike) -> bool:
    """
    Even-odd containment test; points on the boundary count as inside.

    Parameters
    ----------
    p : Union[Point, Sequence[float]]
        (lon, lat) point
    poly : PolygonLike
        Polygon or MultiPolygon

    Raises
    ------
    GeometryError
        If `poly` is degenerate

    """
    check_polygon(poly)
    point = p if isinstance(p, Point) else Point(float(p[0]), float(p[1]))
    # NOTE: `intersects` == `covers` for a point, i.e. interior or boundary
    return bool(poly.intersects(point))


def _assign_chunk(geoms: Sequence[PolygonLike], points: np.ndarray) -> np.ndarray:
    """
    Index of the first (smallest-geoid) polygon containing each point, or -1.

    """
    n_geoms = len(geoms)
    out = np.full(len(points), n_geoms, dtype=np.int64)
    if len(points):
        tree = shapely.STRtree(geoms)  # one tree per worker
        pt_idx, geom_idx = tree.query(points, predicate="intersects")
        np.minimum.at(out, pt_idx, geom_idx)
    out[out == n_geoms] = -1
    return out


def spatial_join(incidents: Iterable, city, threads: Optional[int] = None) -> JoinResult:
    """
    Assigns each incident to at most one block group using an STR-tree.

    Boundary points count as inside; a point inside several polygons goes to
    the smallest geoid. Chunks of points are queried in parallel; the result
    does not depend on the number of threads.

    Parameters
    ----------
    incidents : Iterable[CrimeIncident]
        Incidents with `lon` / `lat`
    city : CityDataset
        City whose geometries receive the incidents
    threads : Optional[int]
        Worker threads
        Default: `ATLAS_THREADS` or the number of cores

    Returns
    -------
    JoinResult
        Per-geoid counts and the number of unassigned incidents

    """
    geoids = city.geoids
    geoms = [city.geometries[g] for g in geoids]
    coords = np.array([(inc.lon, inc.lat) for inc in incidents], dtype=float)
    coords = coords.reshape(-1, 2)
    points = shapely.points(coords)

    threads = threads or max_threads()
    n_chunks = max(1, min(threads, len(points) // MIN_CHUNK_SIZE))
    chunks = np.array_split(points, n_chunks)
    if n_chunks == 1:
        assigned = [_assign_chunk(geoms, chunks[0])]
    else:
        with ThreadPool(n_chunks) as pool:
            assigned = pool.map(partial(_assign_chunk, geoms), chunks)  # NOTE: Blocking call
    assignment = np.concatenate(assigned) if assigned else np.empty(0, dtype=np.int64)

    hits = assignment[assignment >= 0]
    counts = np.bincount(hits, minlength=len(geoids))
    return JoinResult(
        counts={g: int(c) for g, c in zip(geoids, counts)},
        unassigned=int(np.count_nonzero(assignment < 0)),
    )


def contiguity_weights(city, scheme: str = "queen") -> SpatialWeights:
    """
    Binary contiguity weights over a city's block groups.

    Coordinates are snapped to `SNAP_GRID` first. Queen: any shared boundary
    point. Rook: a shared boundary segment of positive length.

    Parameters
    ----------
    city : CityDataset
        City whose geometries define the neighbors
    scheme : str
        "queen" or "rook"
        Default: "queen"

    Returns
    -------
    SpatialWeights
        Symmetric binary weights; islands have empty rows

    Raises
    ------
    ValueError
        If `scheme` is not "queen" or "rook"

    """
    if scheme not in ("queen", "rook"):
        raise ValueError(f"Unsupported contiguity scheme {scheme!r}; use 'queen' or 'rook'.")

    geoids = city.geoids
    geoms = np.array([city.geometries[g] for g in geoids], dtype=object)
    snapped = shapely.set_precision(geoms, SNAP_GRID)
    tree = shapely.STRtree(snapped)
    left, right = tree.query(snapped, predicate="intersects")
    keep = left < right
    left, right = left[keep], right[keep]

    if scheme == "rook" and len(left):
        shared = shapely.intersection(
            shapely.boundary(snapped[left]), shapely.boundary(snapped[right])
        )
        keep = shapely.length(shared) > 0
        left, right = left[keep], right[keep]

    adjacency = [set() for _ in geoids]
    for i, j in zip(left.tolist(), right.tolist()):
        adjacency[i].add(j)
        adjacency[j].add(i)
    neighbors = tuple(tuple((j, 1.0) for j in sorted(adj)) for adj in adjacency)
    return SpatialWeights(neighbors=neighbors, row_standardized=False, ids=tuple(geoids))


def row_standardize(w: SpatialWeights) -> SpatialWeights:
    """
    Scales each nonempty row to sum 1; islands stay empty.

    """
    rows = []
    for row in w.neighbors:
        total = sum(wt for _, wt in row)
        if total > 0:
            rows.append(tuple((j, wt / total) for j, wt in row))
        else:
            rows.append(tuple(row))
    return SpatialWeights(neighbors=tuple(rows), row_standardized=True, ids=w.ids)
