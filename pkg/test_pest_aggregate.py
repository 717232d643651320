import datetime
import logging
import random
from collections import Counter
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from conftest import make_record
from errors import DataError, ValidationError
from pest_aggregate import (
    ALL_PESTS, AREA_UNIT, AreaTable, Bin, RegionLevel, SeriesKey, build_series, choropleth_export,
    corpus_composition, denormalize_by_area, first_occurrence, load_area_table, monthly_profile,
    normalize_by_area, series_from_frame, state_year_table,
)
from pest_lexicon import LabelSource, PestLabel

GCA_SAMPLE = Path(__file__).parent / "data" / "gca_sample.csv"


def labelled_at(when, pest="aphid", state="TAMILNADU", district="TIRUCHIRAPPALLI", crop="wheat"):
    record = make_record(pest, state=state, district=district, created_on=when, crop=crop)
    return record, PestLabel(pest, pest, LabelSource.QUESTION, 0)


def random_corpus(n=500, seed=1):
    rng = random.Random(seed)
    places = [("PUNJAB", "LUDHIANA"), ("PUNJAB", "BATHINDA"), ("MAHARASHTRA", "PUNE")]
    start = datetime.datetime(2015, 1, 1)
    out = []
    for _ in range(n):
        state, district = rng.choice(places)
        when = start + datetime.timedelta(minutes=rng.randrange(6 * 365 * 24 * 60))
        out.append(labelled_at(when, rng.choice(["aphid", "whitefly"]), state, district))
    return out


# -----------------------------
# SeriesKey
# -----------------------------
def test_region_name_is_empty_exactly_for_national():
    with pytest.raises(ValidationError):
        SeriesKey(RegionLevel.NATIONAL, "PUNJAB")
    with pytest.raises(ValidationError):
        SeriesKey(RegionLevel.STATE, "")
    assert SeriesKey("district", "punjab/ ludhiana").region_name == "PUNJAB/LUDHIANA"


# -----------------------------
# build_series
# -----------------------------
def test_hand_counted_daily_fixture():
    day = datetime.datetime(2015, 3, 14, 9, 0)
    labelled = [labelled_at(day)] * 3 + [labelled_at(day + datetime.timedelta(days=1))]
    key = SeriesKey(RegionLevel.DISTRICT, "TIRUCHIRAPPALLI", "aphid")
    series = build_series(labelled, key, Bin.DAILY)
    assert series.start == datetime.date(2015, 1, 1)
    assert len(series) == 6 * 365 + 2
    assert series.values[72:74] == (3.0, 1.0)
    assert series.total == 4.0


def test_empty_input_gives_all_zero_window():
    series = build_series([], SeriesKey(RegionLevel.NATIONAL), Bin.MONTHLY)
    assert len(series) == 72 and series.total == 0.0
    assert series.unit == "queries" and not series.normalized


def test_national_monthly_matches_group_by_oracle():
    labelled = random_corpus()
    series = build_series(labelled, SeriesKey(RegionLevel.NATIONAL, "", ALL_PESTS), Bin.MONTHLY)
    oracle = Counter((r.created_on.year, r.created_on.month) for r, _ in labelled)
    for date, value in zip(series.dates, series.values):
        assert value == oracle.get((date.year, date.month), 0)


def test_district_series_sum_to_state_series():
    labelled = random_corpus(seed=4)
    state = build_series(labelled, SeriesKey(RegionLevel.STATE, "PUNJAB", "aphid"), Bin.MONTHLY)
    parts = [build_series(labelled, SeriesKey(RegionLevel.DISTRICT, f"PUNJAB/{d}", "aphid"), Bin.MONTHLY)
             for d in ("LUDHIANA", "BATHINDA")]
    np.testing.assert_array_equal(parts[0].array + parts[1].array, state.array)


def test_build_series_is_permutation_invariant():
    labelled = random_corpus(seed=8)
    shuffled = list(labelled)
    random.Random(0).shuffle(shuffled)
    key = SeriesKey(RegionLevel.STATE, "PUNJAB", "whitefly")
    assert build_series(labelled, key, Bin.DAILY) == build_series(shuffled, key, Bin.DAILY)


# -----------------------------
# normalization
# -----------------------------
def test_normalize_example_and_round_trip():
    labelled = [labelled_at(datetime.datetime(2016, 1, 5), state="PUNJAB", district="LUDHIANA")] * 40
    areas = AreaTable({("PUNJAB", "LUDHIANA", y): 200000.0 for y in range(2015, 2021)})
    raw = build_series(labelled, SeriesKey(RegionLevel.DISTRICT, "LUDHIANA", "aphid"), Bin.MONTHLY)
    norm = normalize_by_area(raw, areas)
    assert norm.normalized and norm.unit == AREA_UNIT
    assert norm.values[12] == pytest.approx(0.2)
    assert sum(norm.values) == pytest.approx(0.2)
    back = denormalize_by_area(norm, areas)
    np.testing.assert_allclose(back.array, raw.array, rtol=1e-9)


def test_normalization_is_linear_and_state_area_sums_districts():
    areas = AreaTable({("PUNJAB", "LUDHIANA", 2016): 100000.0, ("PUNJAB", "BATHINDA", 2016): 300000.0})
    once = [labelled_at(datetime.datetime(2016, 6, 1), state="PUNJAB", district="LUDHIANA")] * 8
    key = SeriesKey(RegionLevel.STATE, "PUNJAB", "aphid")
    single = normalize_by_area(build_series(once, key, Bin.MONTHLY, "2016-01-01", "2016-12-31"), areas)
    double = normalize_by_area(build_series(once * 2, key, Bin.MONTHLY, "2016-01-01", "2016-12-31"), areas)
    assert single.values[5] == pytest.approx(8 / 400)
    np.testing.assert_allclose(double.array, 2 * single.array)


def test_zero_series_normalizes_to_zero():
    areas = load_area_table(GCA_SAMPLE)
    raw = build_series([], SeriesKey(RegionLevel.NATIONAL), Bin.MONTHLY)
    assert normalize_by_area(raw, areas).total == 0.0


def test_missing_area_year_falls_back_then_fails(caplog):
    areas = AreaTable({("PUNJAB", "LUDHIANA", 2017): 50000.0})
    with caplog.at_level(logging.WARNING):
        assert areas.area(RegionLevel.DISTRICT, "LUDHIANA", 2019) == 50000.0
    assert "using 2017" in caplog.text
    with pytest.raises(DataError, match=r"LUDHIANA, 2020"):
        areas.area(RegionLevel.DISTRICT, "LUDHIANA", 2020)


def test_block_series_cannot_be_normalized():
    areas = load_area_table(GCA_SAMPLE)
    raw = build_series([], SeriesKey(RegionLevel.BLOCK, "AGRA BLOCK 1"), Bin.MONTHLY)
    with pytest.raises(ValidationError):
        normalize_by_area(raw, areas)


def test_area_table_validation(tmp_path):
    assert len(load_area_table(GCA_SAMPLE).rows) == 36
    with pytest.raises(DataError):
        AreaTable({("PUNJAB", "LUDHIANA", 2016): 0.0})
    dup = tmp_path / "dup.csv"
    dup.write_text("state,district,year,gca_ha\nPunjab,Ludhiana,2016,1\nPUNJAB,LUDHIANA,2016,2\n")
    with pytest.raises(DataError):
        load_area_table(dup)


# -----------------------------
# profiles / frames
# -----------------------------
def test_profile_of_march_only_series():
    labelled = [labelled_at(datetime.datetime(y, 3, 10)) for y in (2015, 2018)]
    profile = monthly_profile(build_series(labelled, SeriesKey(RegionLevel.NATIONAL), Bin.DAILY))
    assert list(profile.index) == list(range(1, 13))
    assert profile[3] == 2.0 and profile.drop(3).sum() == 0.0


def test_uniform_daily_profile_follows_days_per_month():
    labelled = [labelled_at(datetime.datetime(2015, 1, 1) + datetime.timedelta(days=i)) for i in range(365)]
    series = build_series(labelled, SeriesKey(RegionLevel.NATIONAL), Bin.DAILY, "2015-01-01", "2015-12-31")
    profile = monthly_profile(series)
    assert list(profile) == [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31]
    assert profile.sum() == series.total


def test_series_frame_round_trip(tmp_path):
    series = build_series(random_corpus(seed=2), SeriesKey(RegionLevel.DISTRICT, "PUNJAB/LUDHIANA"), Bin.MONTHLY)
    path = tmp_path / "series.csv"
    series.to_frame().to_csv(path, index=False)
    assert series_from_frame(pd.read_csv(path, keep_default_na=False)) == series


# -----------------------------
# spatial exports
# -----------------------------
def two_state_areas():
    return AreaTable({("A", "X", 2016): 100000.0, ("B", "Y", 2016): 100000.0})


def test_choropleth_two_region_ratio():
    labelled = ([labelled_at(datetime.datetime(2016, 4, 1), state="A", district="X")] * 10
                + [labelled_at(datetime.datetime(2016, 4, 2), state="B", district="Y")] * 5)
    rows = choropleth_export(labelled, "aphid", (datetime.date(2016, 1, 1), datetime.date(2016, 12, 31)),
                             RegionLevel.STATE, two_state_areas())
    assert [name for name, _ in rows] == ["A", "B"]
    assert rows[0][1] == pytest.approx(2 * rows[1][1])
    assert rows[0][1] == pytest.approx(0.1)


def test_choropleth_empty_period_lists_every_region_at_zero():
    labelled = [labelled_at(datetime.datetime(2016, 4, 1), state="A", district="X")]
    rows = choropleth_export(labelled, "aphid", (datetime.date(2016, 6, 1), datetime.date(2016, 6, 30)),
                             RegionLevel.DISTRICT, two_state_areas())
    assert rows == [("X", 0.0), ("Y", 0.0)]


def test_choropleth_qualifies_duplicate_district_names():
    areas = AreaTable({("A", "CENTRAL", 2016): 1000.0, ("B", "CENTRAL", 2016): 1000.0})
    labelled = [labelled_at(datetime.datetime(2016, 4, 1), state="B", district="CENTRAL")]
    rows = choropleth_export(labelled, ALL_PESTS, (datetime.date(2016, 1, 1), datetime.date(2016, 12, 31)),
                             RegionLevel.DISTRICT, areas)
    assert rows == [("B/CENTRAL", 1.0), ("A/CENTRAL", 0.0)]


def test_choropleth_without_area_row_names_region():
    labelled = [labelled_at(datetime.datetime(2016, 4, 1), state="C", district="Z")]
    with pytest.raises(DataError, match="C"):
        choropleth_export(labelled, "aphid", (datetime.date(2016, 1, 1), datetime.date(2016, 12, 31)),
                          RegionLevel.STATE, two_state_areas())


def test_state_year_table_and_first_occurrence():
    labelled = ([labelled_at(datetime.datetime(2016, 4, 1), state="A", district="X")] * 3
                + [labelled_at(datetime.datetime(2016, 2, 9), state="B", district="Y")])
    table = state_year_table(labelled, two_state_areas(), "aphid")
    assert table.loc["A", 2016] == pytest.approx(0.03)
    assert table.loc["B", 2016] == pytest.approx(0.01)
    onset = first_occurrence(labelled, "aphid", RegionLevel.STATE)
    assert onset == {"A": datetime.date(2016, 4, 1), "B": datetime.date(2016, 2, 9)}


def test_corpus_composition_shares():
    records = [make_record(sector="AGRICULTURE")] * 3 + [make_record(sector="HORTICULTURE")]
    labelled = [labelled_at(datetime.datetime(2016, 1, 1), crop="cotton")] * 2 + [labelled_at(datetime.datetime(2016, 1, 1))]
    comp = corpus_composition(records, labelled)
    sector = comp["sector"]
    assert list(sector["value"]) == ["AGRICULTURE", "HORTICULTURE"]
    assert list(sector["share"]) == [0.75, 0.25]
    assert comp["pest_crop"].iloc[0]["value"] == "cotton"
