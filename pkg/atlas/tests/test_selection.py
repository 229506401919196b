import numpy as np
import pytest
from scipy import stats as sps

from atlas.geo import JoinResult, contiguity_weights, row_standardize
from atlas.indices import build_index_bundle
from atlas.ingest import CityDataset
from atlas.selection import (
    TIE,
    MedianTriple,
    SelectionKind,
    Statistic,
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
    top_count,
    vacancy_validation_table,
    variable_frame,
    whole_city,
    zscore_table,
)
from atlas.stats import morans_i
from atlas.utils import DataError, SelectionError

from .builders import CITY_A_SELECTED, CITY_A_TRIPLE, city_a_attrs


def _brute_force(city, bundle, triple):
    return {
        bg.geoid
        for bg in city.block_groups
        if bg.eligible
        and bg.perc_snap > triple.med_snap
        and bundle.frame.loc[bg.geoid, "ABRPOP"] > triple.med_abr
        and bg.perc_vac > triple.med_vac
    }


def test_trivariate_city_a(city_a_dataset, city_a_bundle):
    sel = select_trivariate(city_a_dataset, city_a_bundle, CITY_A_TRIPLE)
    assert sel.kind is SelectionKind.TRIVARIATE
    assert sel.geoids == {city_a_dataset.geoids[k] for k in CITY_A_SELECTED}
    assert sel.n_eligible == 50
    assert sel.share == pytest.approx(9 / 50)
    assert not sel.low_n


def test_trivariate_strict_at_median(city_a_dataset, city_a_bundle):
    first = city_a_dataset.block_groups[CITY_A_SELECTED[0]]
    triple = MedianTriple("fixture", first.perc_snap, 0.01, 20.0)
    sel = select_trivariate(city_a_dataset, city_a_bundle, triple)
    assert first.geoid not in sel.geoids
    assert sel.geoids == _brute_force(city_a_dataset, city_a_bundle, triple)

    # Equal to all three medians
    abr = city_a_bundle.frame.loc[first.geoid, "ABRPOP"]
    triple = MedianTriple("fixture", first.perc_snap, abr, first.perc_vac)
    sel = select_trivariate(city_a_dataset, city_a_bundle, triple)
    assert first.geoid not in sel.geoids
    assert sel.geoids == _brute_force(city_a_dataset, city_a_bundle, triple)


def test_trivariate_empty(city_a_dataset, city_a_bundle):
    sel = select_trivariate(city_a_dataset, city_a_bundle, MedianTriple("fixture", 100.0, 0.0, 0.0))
    assert sel.n_selected == 0
    assert sel.low_n
    assert sel.sorted_geoids() == ()


def test_trivariate_matches_brute_force_and_is_monotone(city_a_dataset, city_a_bundle):
    rng = np.random.default_rng(12)
    for _ in range(1000):
        triple = MedianTriple(
            "random", rng.uniform(0, 70), rng.uniform(0, 0.035), rng.uniform(0, 60)
        )
        sel = select_trivariate(city_a_dataset, city_a_bundle, triple)
        assert sel.geoids == _brute_force(city_a_dataset, city_a_bundle, triple)

        raised = MedianTriple(
            "random",
            min(100.0, triple.med_snap + rng.uniform(0, 5)),
            triple.med_abr + rng.uniform(0, 0.005),
            min(100.0, triple.med_vac + rng.uniform(0, 5)),
        )
        assert select_trivariate(city_a_dataset, city_a_bundle, raised).geoids <= sel.geoids


def test_median_triple_ranges():
    with pytest.raises(DataError):
        MedianTriple("bad", 101.0, 0.0, 10.0)
    with pytest.raises(DataError):
        MedianTriple("bad", 10.0, -0.1, 10.0)


def test_reference_medians(city_a_dataset, city_a_bundle):
    m = reference_medians(city_a_bundle, city_a_dataset)
    frame = variable_frame(city_a_dataset, city_a_bundle)
    assert m.source_city == "CityA"
    assert m.med_snap == pytest.approx(np.median(frame["PERCSNAP"]))
    assert m.med_abr == pytest.approx(np.median(frame["ABRPOP"]))
    assert m.med_vac == pytest.approx(np.median(frame["PERCVAC"]))


def test_top_count():
    assert top_count(0.1, 50) == 5
    assert top_count(0.1, 51) == 6
    assert top_count(0.1, 870) == 87
    assert top_count(1.0, 3) == 3


def test_top_fraction(city_a_dataset, city_a_bundle):
    sel = select_top_deprived(city_a_dataset, city_a_bundle, TopFraction(0.1))
    assert sel.kind is SelectionKind.TOP_FRACTION
    assert sel.label == "Top 10%"
    column = city_a_bundle.frame["SD4DET"]
    oracle = sorted(column.index, key=lambda g: (-column[g], g))[:5]
    assert sel.geoids == set(oracle)


def test_top_count_ties_go_to_smaller_geoid(city_a_dataset, city_a_bundle):
    # The nine engineered block groups share the largest ABRPOP
    sel = select_top_deprived(city_a_dataset, city_a_bundle, TopCount(5), variable="ABRPOP")
    assert sel.label == "Top 5"
    assert sel.sorted_geoids() == tuple(city_a_dataset.geoids[k] for k in CITY_A_SELECTED[:5])


def test_top_count_bounds(city_a_dataset, city_a_bundle):
    everything = select_top_deprived(city_a_dataset, city_a_bundle, TopCount(50))
    assert everything.geoids == set(city_a_bundle.geoids)
    assert select_top_deprived(city_a_dataset, city_a_bundle, TopCount(0)).n_selected == 0
    with pytest.raises(SelectionError):
        select_top_deprived(city_a_dataset, city_a_bundle, TopCount(51))
    with pytest.raises(SelectionError):
        TopCount(-1)
    for fraction in (0, 1.5):
        with pytest.raises(SelectionError):
            TopFraction(fraction)


def test_top_n_matches_trivariate_size(city_a_dataset, city_a_bundle):
    sel = select_trivariate(city_a_dataset, city_a_bundle, CITY_A_TRIPLE)
    top = select_top_deprived(city_a_dataset, city_a_bundle, TopCount(sel.n_selected))
    assert top.n_selected == sel.n_selected == 9


def test_median_table(city_a_dataset, city_a_bundle):
    city = whole_city(city_a_dataset, city_a_bundle)
    sel = select_trivariate(city_a_dataset, city_a_bundle, CITY_A_TRIPLE)
    variables = ("PERCSNAP", "MEDVAL", "PERCBLACK", "SD4DET")
    table = median_table(city_a_dataset, city_a_bundle, [city, sel], variables)

    assert table.statistic is Statistic.MEDIAN
    assert table.groups == ("City", "Selected")
    assert table.group_sizes == (50, 9)
    bgs = city_a_dataset.block_groups
    chosen = [bgs[k] for k in CITY_A_SELECTED]
    sd4det = city_a_bundle.frame.loc[list(sel.sorted_geoids()), "SD4DET"]
    assert table.cell("PERCSNAP", "City") == pytest.approx(np.median([bg.perc_snap for bg in bgs]))
    expected = np.median([bg.perc_snap for bg in chosen])
    assert table.cell("PERCSNAP", "Selected") == pytest.approx(expected)
    expected = np.median([bg.extras["medval"] for bg in chosen])
    assert table.cell("MEDVAL", "Selected") == pytest.approx(expected)
    assert table.cell("SD4DET", "Selected") == pytest.approx(np.median(sd4det))
    assert table.unavailable() == (("PERCBLACK", "City"), ("PERCBLACK", "Selected"))
    with pytest.raises(ValueError):
        table.cells[0, 0] = 1.0


def test_median_table_empty_group(city_a_dataset, city_a_bundle):
    empty = select_trivariate(city_a_dataset, city_a_bundle, MedianTriple("x", 100.0, 0.0, 0.0))
    with pytest.raises(SelectionError, match="Selected"):
        median_table(city_a_dataset, city_a_bundle, [empty], ("PERCSNAP",))


def test_median_table_ignores_row_order(city_a_dataset, city_a_bundle):
    rng = np.random.default_rng(13)
    order = rng.permutation(len(city_a_dataset.block_groups))
    shuffled = CityDataset(
        name=city_a_dataset.name,
        block_groups=tuple(city_a_dataset.block_groups[k] for k in order),
        geometries={g: city_a_dataset.geometries[g] for g in reversed(city_a_dataset.geoids)},
        extras_columns=city_a_dataset.extras_columns,
    )
    _, counts = city_a_attrs()
    join = JoinResult(counts=dict(zip(city_a_dataset.geoids, counts)), unassigned=0)
    shuffled_bundle = build_index_bundle(shuffled, shuffled, join)

    variables = ("PERCSNAP", "ABRPOP", "SD4DET", "MEDVAL", "PERCBLACK")

    def medians(city, bundle):
        groups = [whole_city(city, bundle), select_trivariate(city, bundle, CITY_A_TRIPLE)]
        return median_table(city, bundle, groups, variables).cells

    np.testing.assert_array_equal(
        medians(shuffled, shuffled_bundle), medians(city_a_dataset, city_a_bundle)
    )


def test_median_table_unknown_variable(city_a_dataset, city_a_bundle):
    city = whole_city(city_a_dataset, city_a_bundle)
    with pytest.raises(DataError, match="FOO"):
        median_table(city_a_dataset, city_a_bundle, [city], ("FOO",))


def test_zscore_whole_city_is_zero(city_a_dataset, city_a_bundle):
    city = whole_city(city_a_dataset, city_a_bundle)
    table = zscore_table(city_a_dataset, city_a_bundle, city, ("PERCSNAP", "ABRPOP", "SD4DET"))
    assert table.cells[:, 0] == pytest.approx([0, 0, 0], abs=1e-12)
    assert list(table.flags[:, 0]) == ["", "", ""]


def test_zscore_flags(city_a_dataset, city_a_bundle):
    sel = select_trivariate(city_a_dataset, city_a_bundle, CITY_A_TRIPLE)
    variables = ("PERCSNAP", "PERCVAC", "ABRPOP", "MEDVAL", "PERCRENT")
    table = zscore_table(city_a_dataset, city_a_bundle, sel, variables)
    frame = variable_frame(city_a_dataset, city_a_bundle)
    members = sel.sorted_geoids()
    for variable in variables[:4]:
        values = frame[variable]
        z = (values[list(members)].mean() - values.mean()) / values.std(ddof=1)
        assert table.cell(variable, "Selected") == pytest.approx(z, abs=1e-9)
        expected = "**" if abs(z) > 2 else "*" if abs(z) > 1 else ""
        assert table.flags[variables.index(variable), 0] == expected
    assert np.isnan(table.cell("PERCRENT", "Selected"))
    assert table.flags[4, 0] == ""


def test_higher_lower_identical_tables(city_a_dataset, city_a_bundle):
    sel = select_trivariate(city_a_dataset, city_a_bundle, CITY_A_TRIPLE)
    table = median_table(city_a_dataset, city_a_bundle, [sel], ("PERCSNAP", "MEDVAL", "PERCBLACK"))
    result = higher_lower(table, table, "Selection", "Deprivation")
    assert result.labels() == {"PERCSNAP": TIE, "MEDVAL": TIE, "PERCBLACK": "NA"}
    assert [row.starred for row in result.rows] == [False, True, False]


def test_higher_lower_groups(city_a_dataset, city_a_bundle):
    city = whole_city(city_a_dataset, city_a_bundle)
    sel = select_trivariate(city_a_dataset, city_a_bundle, CITY_A_TRIPLE)
    variables = ("PERCSNAP", "ABRPOP", "PERCWHITE")
    table = median_table(city_a_dataset, city_a_bundle, [city, sel], variables)
    result = higher_lower(table, table, "Selected", "City", group_a="Selected", group_b="City")
    for variable in variables:
        a, b = table.cell(variable, "Selected"), table.cell(variable, "City")
        expected = "Selected" if a > b else "City" if b > a else TIE
        assert result.labels()[variable] == expected


def test_higher_lower_mismatch(city_a_dataset, city_a_bundle):
    city = whole_city(city_a_dataset, city_a_bundle)
    a = median_table(city_a_dataset, city_a_bundle, [city], ("PERCSNAP",))
    b = median_table(city_a_dataset, city_a_bundle, [city], ("PERCVAC",))
    with pytest.raises(SelectionError):
        higher_lower(a, b, "a", "b")
    z = zscore_table(city_a_dataset, city_a_bundle, city, ("PERCSNAP",))
    with pytest.raises(SelectionError):
        higher_lower(a, z, "a", "b")


def test_summary_table(city_a_dataset, city_a_bundle):
    table = summary_table(city_a_dataset, city_a_bundle, ("PERCSNAP", "PERCBLACK"))
    snap = [bg.perc_snap for bg in city_a_dataset.block_groups]
    assert table.title == "Summary statistics (N=50)"
    assert table.cell("PERCSNAP", "Mean") == pytest.approx(np.mean(snap))
    assert table.cell("PERCSNAP", "SD") == pytest.approx(np.std(snap, ddof=1))
    assert table.cell("PERCSNAP", "Min") == min(snap)
    assert table.cell("PERCSNAP", "Max") == max(snap)
    assert np.isnan(table.column("Mean")[1])


def test_correlation_table(city_a_dataset, city_a_bundle):
    variables = ("PERCPOV", "PERCSNAP", "SD4OWN", "PERCBLACK")
    pearson = correlation_table(city_a_dataset, city_a_bundle, variables)
    spearman = correlation_table(city_a_dataset, city_a_bundle, variables, method="spearman")
    frame = variable_frame(city_a_dataset, city_a_bundle)

    cells = pearson.cells[:3, :3]
    assert np.diag(cells) == pytest.approx([1, 1, 1])
    assert cells == pytest.approx(cells.T)
    assert pearson.cell("PERCPOV", "PERCSNAP") == pytest.approx(
        np.corrcoef(frame["PERCPOV"], frame["PERCSNAP"])[0, 1]
    )
    assert spearman.cell("PERCPOV", "SD4OWN") == pytest.approx(
        sps.spearmanr(frame["PERCPOV"], frame["SD4OWN"]).correlation
    )
    assert np.isnan(pearson.cells[3]).all()
    assert pearson.title == "Pearson correlations (N=50)"
    with pytest.raises(ValueError):
        correlation_table(city_a_dataset, city_a_bundle, variables, method="kendall")


def test_correlation_table_leads_with_sd4det(city_a_dataset, city_a_bundle):
    for method in ("pearson", "spearman"):
        table = correlation_table(city_a_dataset, city_a_bundle, method=method)
        assert table.variables[0] == "SD4DET"
        # Own sigmas are the reference sigmas here
        assert table.cell("SD4DET", "SD4OWN") == pytest.approx(1.0)


def test_moran_table(city_a_dataset, city_a_bundle):
    w = row_standardize(contiguity_weights(city_a_dataset, "queen"))
    table = moran_table(city_a_dataset, city_a_bundle, w, ("SD4DET", "PERCSNAP", "PERCBLACK"))
    frame = variable_frame(city_a_dataset, city_a_bundle)
    assert table.groups == ("CityA",)
    assert table.cell("SD4DET", "CityA") == pytest.approx(morans_i(frame["SD4DET"].to_numpy(), w))
    assert np.isnan(table.cell("PERCBLACK", "CityA"))
    assert table.title == "Moran's I (row-standardized weights)"


def test_moran_table_misaligned(city_a_dataset, city_a_bundle):
    part = city_a_dataset.subset(city_a_dataset.geoids[:10])
    with pytest.raises(DataError):
        moran_table(city_a_dataset, city_a_bundle, contiguity_weights(part))


def test_vacancy_validation(city_a_dataset, city_a_bundle):
    table = vacancy_validation_table(city_a_dataset, city_a_bundle, ["vac_usps", "vac_other"])
    frame = variable_frame(city_a_dataset, city_a_bundle)
    assert table.variables == ("VAC_USPS", "VAC_OTHER")
    assert table.cell("VAC_USPS", "Pearson") == pytest.approx(
        np.corrcoef(frame["PERCVAC"], frame["VAC_USPS"])[0, 1]
    )
    assert table.cell("VAC_USPS", "Spearman") == pytest.approx(
        sps.spearmanr(frame["PERCVAC"], frame["VAC_USPS"]).correlation
    )
    assert np.isnan(table.column("Pearson")[1])


def test_variable_frame_wrong_city(city_a_dataset, city_a_bundle, grid_city):
    with pytest.raises(DataError):
        variable_frame(grid_city(2, 2), city_a_bundle)
