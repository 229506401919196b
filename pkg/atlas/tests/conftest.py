import json

import pytest

from atlas.geo import JoinResult
from atlas.indices import build_index_bundle

from .builders import (
    build_city,
    city_a,
    city_a_attrs,
    incidents_at,
    random_attrs,
    ref_city,
    ref_counts,
    write_attrs,
    write_crimes,
    write_geoms,
)


@pytest.fixture
def city_a_dataset():
    return city_a()


@pytest.fixture
def city_a_bundle(city_a_dataset):
    _, counts = city_a_attrs()
    join = JoinResult(counts=dict(zip(city_a_dataset.geoids, counts)), unassigned=0)
    return build_index_bundle(city_a_dataset, city_a_dataset, join)


@pytest.fixture
def grid_city():
    """Factory: `grid_city(nx, ny, seed=0)` -> CityDataset of grid cells."""

    def _make(nx, ny, seed=0, name="grid"):
        return build_city(name, nx, ny, random_attrs(nx * ny, seed))

    return _make


@pytest.fixture
def city_files(tmp_path):
    """Writes cityA's attribute CSV, GeoJSON and crimes; returns the paths."""
    city = city_a()
    _, counts = city_a_attrs()
    polys = [city.geometries[g] for g in city.geoids]
    return {
        "city": city,
        "attr_path": write_attrs(tmp_path / "cityA.csv", city, ("medval", "percwhite", "vac_usps")),
        "geom_path": write_geoms(tmp_path / "cityA.geojson", city),
        "crimes_path": write_crimes(
            tmp_path / "cityA_crimes.csv", incidents_at(city.geoids, polys, counts)
        ),
        "counts": counts,
    }


@pytest.fixture
def two_city_config(tmp_path):
    """
    Two-city run config (reference "Ref", plus "CityA") with relative paths;
    returns the config path.

    """
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    ref, a = ref_city(), city_a()
    _, a_counts = city_a_attrs()
    write_attrs(data_dir / "ref.csv", ref, ("medval",))
    write_geoms(data_dir / "ref.geojson", ref)
    write_crimes(
        data_dir / "ref_crimes.csv",
        incidents_at(ref.geoids, [ref.geometries[g] for g in ref.geoids], ref_counts())
        + [{"id": "far", "category": "robbery", "lon": -80.0, "lat": 40.0}],
    )
    write_attrs(data_dir / "a.csv", a, ("medval", "percwhite", "vac_usps"))
    write_geoms(data_dir / "a.geojson", a)
    write_crimes(
        data_dir / "a_crimes.csv",
        incidents_at(a.geoids, [a.geometries[g] for g in a.geoids], a_counts)
        + [{"id": "x1", "category": "ARSON", "lon": -83.15, "lat": 42.32}],
    )
    config = {
        "cities": [
            {
                "name": "Ref",
                "attr_path": "data/ref.csv",
                "geom_path": "data/ref.geojson",
                "crimes_path": "data/ref_crimes.csv",
            },
            {
                "name": "CityA",
                "attr_path": "data/a.csv",
                "geom_path": "data/a.geojson",
                "crimes_path": "data/a_crimes.csv",
                "vacancy_indices": ["vac_usps"],
            },
        ],
        "reference_city": "Ref",
        "weights_scheme": "queen",
        "class_count": 5,
        "top_fraction": 0.1,
        "output_dir": "out",
    }
    path = tmp_path / "config.json"
    with open(path, "w") as f:
        json.dump(config, f, indent=2)
    return path


@pytest.fixture
def config_dict(two_city_config):
    with open(two_city_config) as f:
        return json.load(f)
