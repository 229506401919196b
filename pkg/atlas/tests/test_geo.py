import time

import numpy as np
import pytest
import shapely
from shapely.geometry import MultiPolygon, Point, Polygon, box

from atlas.geo import (
    JoinResult,
    SpatialWeights,
    contiguity_weights,
    point_in_polygon,
    row_standardize,
    spatial_join,
)
from atlas.ingest import CityDataset, CrimeIncident
from atlas.utils import GeometryError

from .builders import build_city, random_attrs

UNIT = box(0, 0, 1, 1)


def _city(polygons, name="shapes"):
    attrs = random_attrs(len(polygons), seed=1)
    city = build_city(name, len(polygons), 1, attrs)
    geoms = dict(zip(city.geoids, polygons))
    return CityDataset(name=name, block_groups=city.block_groups, geometries=geoms)


def _incident(lon, lat, idx=0):
    return CrimeIncident(id=f"i{idx}", category="assault", lon=lon, lat=lat)


def test_point_in_polygon():
    assert point_in_polygon((0.5, 0.5), UNIT)
    assert not point_in_polygon((2, 2), UNIT)
    assert point_in_polygon((1, 0.5), UNIT)
    assert point_in_polygon(Point(0, 0), UNIT)
    holed = Polygon([(0, 0), (4, 0), (4, 4), (0, 4)], [[(1, 1), (3, 1), (3, 3), (1, 3)]])
    assert not point_in_polygon((2, 2), holed)
    assert point_in_polygon((0.5, 2), holed)
    assert point_in_polygon((5.5, 0.5), MultiPolygon([UNIT, box(5, 0, 6, 1)]))


def test_point_in_degenerate_polygon():
    with pytest.raises(GeometryError):
        point_in_polygon((0, 0), Polygon([(0, 0), (1, 1), (0, 0), (1, 1)]))


def test_spatial_join_outside():
    city = _city([UNIT, box(1, 0, 2, 1)])
    result = spatial_join([_incident(10, 10)], city)
    assert result.counts == {g: 0 for g in city.geoids}
    assert result.unassigned == 1


def test_spatial_join_boundary_goes_to_smaller_geoid():
    city = _city([UNIT, box(1, 0, 2, 1)])
    result = spatial_join([_incident(1.0, 0.5)], city)
    first, second = city.geoids
    assert result.counts == {first: 1, second: 0}


def test_spatial_join_centroids(city_a_dataset):
    geoids = city_a_dataset.geoids[:10]
    incidents = [
        _incident(
            city_a_dataset.geometries[g].centroid.x, city_a_dataset.geometries[g].centroid.y, k
        )
        for k, g in enumerate(geoids)
    ]
    result = spatial_join(incidents, city_a_dataset)
    assert result.unassigned == 0
    assert all(result.counts[g] == 1 for g in geoids)
    assert sum(result.counts.values()) == 10


def _naive_assignment(points, geoms):
    """First polygon (in geoid order) containing each point, by full scan."""
    owner = np.full(len(points), -1)
    for k, geom in enumerate(geoms):
        hit = shapely.intersects(geom, points) & (owner < 0)
        owner[hit] = k
    return owner


@pytest.mark.parametrize("threads", [1, 4])
def test_spatial_join_matches_naive_scan(city_a_dataset, threads):
    rng = np.random.default_rng(9)
    lon = rng.uniform(-83.21, -83.09, size=100_000)
    lat = rng.uniform(42.29, 42.36, size=100_000)
    incidents = [_incident(x, y, k) for k, (x, y) in enumerate(zip(lon, lat))]

    start = time.perf_counter()
    result = spatial_join(incidents, city_a_dataset, threads=threads)
    assert time.perf_counter() - start < 2.0

    geoms = [city_a_dataset.geometries[g] for g in city_a_dataset.geoids]
    owner = _naive_assignment(shapely.points(np.column_stack([lon, lat])), geoms)
    expected = np.bincount(owner[owner >= 0], minlength=len(geoms))
    assert [result.counts[g] for g in city_a_dataset.geoids] == expected.tolist()
    assert result.unassigned == int(np.count_nonzero(owner < 0))
    assert result.n_incidents == 100_000


def test_contiguity_disjoint():
    w = contiguity_weights(_city([UNIT, box(3, 3, 4, 4)]))
    assert w.islands == (0, 1)
    assert w.s0 == 0


def test_contiguity_grid(grid_city):
    city = grid_city(2, 2)
    queen = contiguity_weights(city, "queen")
    rook = contiguity_weights(city, "rook")
    assert queen.cardinalities == (3, 3, 3, 3)
    assert rook.cardinalities == (2, 2, 2, 2)
    assert queen.ids == city.geoids
    # Symmetric, binary
    dense = queen.to_sparse().toarray()
    assert (dense == dense.T).all()
    assert set(np.unique(dense)) == {0.0, 1.0}


def test_contiguity_corner_touch():
    city = _city([UNIT, box(1, 1, 2, 2)])
    assert contiguity_weights(city, "queen").cardinalities == (1, 1)
    assert contiguity_weights(city, "rook").islands == (0, 1)


def test_contiguity_bad_scheme(grid_city):
    with pytest.raises(ValueError):
        contiguity_weights(grid_city(2, 2), "bishop")


def test_contiguity_lattice_neighbors(grid_city):
    w = contiguity_weights(grid_city(6, 6), "queen")
    for idx, row in enumerate(w.neighbors):
        i, j = idx % 6, idx // 6
        expected = sorted(
            (jj * 6 + ii)
            for ii in range(max(0, i - 1), min(6, i + 2))
            for jj in range(max(0, j - 1), min(6, j + 2))
            if (ii, jj) != (i, j)
        )
        assert [k for k, _ in row] == expected


def test_row_standardize():
    w = SpatialWeights(neighbors=(((1, 1.0), (2, 1.0)), ((0, 1.0),), ((0, 1.0),), ()))
    rs = row_standardize(w)
    assert rs.neighbors[0] == ((1, 0.5), (2, 0.5))
    assert rs.neighbors[3] == ()
    assert rs.row_standardized


def _neighbor_sets(w):
    return [{j for j, _ in row} for row in w.neighbors]


def test_rook_neighbors_within_queen(grid_city, city_a_dataset):
    bottom = [box(x, 0, x + 1, 1) for x in range(3)]
    top = [box(x + 0.5, 1, x + 1.5, 2) for x in range(2)]
    for city in (grid_city(6, 6), city_a_dataset, _city(bottom + top)):
        queen = _neighbor_sets(contiguity_weights(city, "queen"))
        rook = _neighbor_sets(contiguity_weights(city, "rook"))
        assert all(r <= q for r, q in zip(rook, queen))


def test_row_standardize_keeps_neighbors(grid_city):
    for scheme in ("queen", "rook"):
        w = contiguity_weights(grid_city(5, 4), scheme)
        rs = row_standardize(w)
        assert _neighbor_sets(rs) == _neighbor_sets(w)
        assert rs.ids == w.ids
        for row in rs.neighbors:
            assert sum(wt for _, wt in row) == pytest.approx(1.0)


def test_row_standardize_rook_grid(grid_city):
    assert row_standardize(contiguity_weights(grid_city(2, 2), "rook")).s0 == pytest.approx(4.0)


def test_join_result_conservation():
    result = JoinResult(counts={"a": 2, "b": 3}, unassigned=4)
    assert result.n_incidents == 9
