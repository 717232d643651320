# pest_aggregate.py
"""
Spatio-temporal aggregation of labelled pest queries
- Calendar-binned (daily / monthly) counts per (region, pest), zero-filled over the window
- Normalization by gross cropped area, reported as queries per 1000 ha
- Monthly profiles, choropleth tables, per-state yearly tables, onset dates
"""

import datetime
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import config
from errors import DataError, ValidationError
from kcc_ingest import KccRecord, canonical_region
from pest_lexicon import PestLabel

logger = logging.getLogger(__name__)

ALL_PESTS = "*"
RAW_UNIT = "queries"
AREA_UNIT = "queries per 1000 ha"
SERIES_COLUMNS = ["date", "region_level", "region", "pest_id", "value", "unit"]

Labelled = Sequence[Tuple[KccRecord, PestLabel]]

# -----------------------------
# Data Structures
# -----------------------------
class RegionLevel(str, Enum):
    STATE = "state"
    DISTRICT = "district"
    BLOCK = "block"
    NATIONAL = "national"


class Bin(str, Enum):
    DAILY = "daily"
    MONTHLY = "monthly"

    @property
    def freq(self) -> str:
        return "D" if self is Bin.DAILY else "MS"


@dataclass(frozen=True)
class SeriesKey:
    region_level: RegionLevel
    region_name: str = ""
    pest_id: str = ALL_PESTS

    def __post_init__(self):
        object.__setattr__(self, "region_level", RegionLevel(self.region_level))
        # district/block names may be qualified as "STATE/DISTRICT"
        name = "/".join(canonical_region(p) for p in self.region_name.split("/")) if self.region_name else ""
        object.__setattr__(self, "region_name", name)
        if (self.region_level is RegionLevel.NATIONAL) != (name == ""):
            raise ValidationError("region_name must be empty exactly when region_level is national")

    @property
    def parts(self) -> Tuple[str, ...]:
        return tuple(self.region_name.split("/")) if self.region_name else ()

    def matches(self, record: KccRecord, label: PestLabel) -> bool:
        if self.pest_id != ALL_PESTS and label.pest_id != self.pest_id:
            return False
        level = self.region_level
        if level is RegionLevel.NATIONAL:
            return True
        if level is RegionLevel.STATE:
            return record.state == self.region_name
        own = record.district if level is RegionLevel.DISTRICT else record.block
        if len(self.parts) > 1:
            return record.state == self.parts[0] and own == self.parts[-1]
        return own == self.region_name


@dataclass(frozen=True)
class FrequencySeries:
    key: SeriesKey
    bin: Bin
    start: datetime.date
    values: Tuple[float, ...]
    normalized: bool = False
    unit: str = RAW_UNIT

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "bin", Bin(self.bin))

    def __len__(self):
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @property
    def dates(self) -> pd.DatetimeIndex:
        return pd.date_range(pd.Timestamp(self.start), periods=len(self.values), freq=self.bin.freq)

    @property
    def total(self) -> float:
        return float(sum(self.values))

    def with_values(self, values, start: Optional[datetime.date] = None, **changes) -> "FrequencySeries":
        return replace(self, values=tuple(values), start=start or self.start, **changes)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "date": [d.date().isoformat() for d in self.dates],
            "region_level": self.key.region_level.value,
            "region": self.key.region_name,
            "pest_id": self.key.pest_id,
            "value": self.array,
            "unit": self.unit,
        }, columns=SERIES_COLUMNS)


def series_from_frame(df: pd.DataFrame) -> FrequencySeries:
    """Inverse of FrequencySeries.to_frame; the bin is inferred from the date step."""
    missing = [c for c in SERIES_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"series CSV lacks columns: {', '.join(missing)}")
    if df.empty:
        raise DataError("series CSV has no rows")
    dates = pd.to_datetime(df["date"])
    if len(dates) > 1:
        step = (dates.iloc[1] - dates.iloc[0]).days
        bin_ = Bin.DAILY if step == 1 else Bin.MONTHLY
    else:
        bin_ = Bin.MONTHLY if dates.iloc[0].day == 1 else Bin.DAILY
    first = df.iloc[0]
    region = "" if pd.isna(first["region"]) else str(first["region"])
    unit = str(first["unit"])
    return FrequencySeries(
        key=SeriesKey(RegionLevel(first["region_level"]), region, str(first["pest_id"])),
        bin=bin_,
        start=dates.iloc[0].date(),
        values=tuple(df["value"].astype(float)),
        normalized=unit == AREA_UNIT,
        unit=unit,
    )


# -----------------------------
# Area table
# -----------------------------
@dataclass
class AreaTable:
    """Gross cropped area in hectares per (state, district, year)."""
    rows: Dict[Tuple[str, str, int], float] = field(default_factory=dict)
    tolerance: int = config.AREA_YEAR_TOLERANCE

    def __post_init__(self):
        self.rows = {(canonical_region(s), canonical_region(d), int(y)): float(a)
                     for (s, d, y), a in self.rows.items()}
        bad = [k for k, a in self.rows.items() if not a > 0]
        if bad:
            raise DataError(f"gross cropped area must be positive: {bad[:3]}")
        self._totals: Dict[Tuple[str, ...], Dict[int, float]] = {}
        for (state, district, year), area in self.rows.items():
            for region in ((state, district), (state,), ()):
                by_year = self._totals.setdefault(region, {})
                by_year[year] = by_year.get(year, 0.0) + area
        self._warned = set()

    @property
    def states(self) -> List[str]:
        return sorted({s for s, _, _ in self.rows})

    @property
    def districts(self) -> List[Tuple[str, str]]:
        return sorted({(s, d) for s, d, _ in self.rows})

    @property
    def years(self) -> List[int]:
        return sorted({y for _, _, y in self.rows})

    def _region(self, level: RegionLevel, name: str) -> Tuple[str, ...]:
        if level is RegionLevel.NATIONAL:
            return ()
        if level is RegionLevel.STATE:
            return (name,)
        if level is RegionLevel.DISTRICT:
            parts = name.split("/")
            if len(parts) == 2:
                return tuple(parts)
            owners = [k for k in self._totals if len(k) == 2 and k[1] == name]
            if len(owners) > 1:
                raise ValidationError(f"district {name} is ambiguous; qualify it as STATE/{name}")
            return owners[0] if owners else ("?", name)
        raise ValidationError("no area data exists below district level")

    def area(self, level: RegionLevel, name: str, year: int) -> float:
        region = self._region(RegionLevel(level), name)
        by_year = self._totals.get(region, {})
        if year in by_year:
            return by_year[year]
        near = sorted((abs(y - year), y) for y in by_year if abs(y - year) <= self.tolerance)
        if not near:
            raise DataError(f"no gross cropped area for ({name or 'INDIA'}, {year})")
        used = near[0][1]
        if (region, year) not in self._warned:
            self._warned.add((region, year))
            logger.warning(f"No area for ({name or 'INDIA'}, {year}); using {used}")
        return by_year[used]


def load_area_table(path) -> AreaTable:
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read area table {path}: {e}")
    missing = [c for c in ("state", "district", "year", "gca_ha") if c not in df.columns]
    if missing:
        raise DataError(f"area table lacks columns: {', '.join(missing)}")
    rows = {}
    for r in df.itertuples(index=False):
        key = (canonical_region(str(r.state)), canonical_region(str(r.district)), int(r.year))
        if key in rows:
            raise DataError(f"duplicate area row {key}")
        rows[key] = float(r.gca_ha)
    logger.info(f"Loaded {len(rows)} area rows from {Path(path).name}")
    return AreaTable(rows)


# -----------------------------
# Series building
# -----------------------------
def _window(bin_: Bin, date_from=None, date_to=None) -> pd.DatetimeIndex:
    start = pd.Timestamp(date_from or config.DATE_FROM)
    end = pd.Timestamp(date_to or config.DATE_TO)
    if bin_ is Bin.MONTHLY:
        start = start.to_period("M").to_timestamp()
    return pd.date_range(start, end, freq=bin_.freq)


def _bin_floor(stamps: Iterable[datetime.datetime], bin_: Bin) -> pd.DatetimeIndex:
    idx = pd.DatetimeIndex(list(stamps))
    if bin_ is Bin.MONTHLY:
        return idx.to_period("M").to_timestamp()
    return idx.normalize()


def build_series(labelled: Labelled, key: SeriesKey, bin: Bin = Bin.MONTHLY,
                 date_from=None, date_to=None) -> FrequencySeries:
    """Count labelled records matching key per calendar bin, zero-filled over the window."""
    bin_ = Bin(bin)
    index = _window(bin_, date_from, date_to)
    stamps = [r.created_on for r, lab in labelled if key.matches(r, lab)]
    counts = pd.Series(1.0, index=_bin_floor(stamps, bin_)).groupby(level=0).sum()
    values = counts.reindex(index, fill_value=0.0)
    return FrequencySeries(key, bin_, index[0].date(), tuple(values.to_numpy(dtype=float)))


def _bin_areas(series: FrequencySeries, areas: AreaTable) -> np.ndarray:
    key = series.key
    if key.region_level is RegionLevel.BLOCK:
        raise ValidationError("block-level series cannot be area-normalized")
    years = series.dates.year
    cache = {y: areas.area(key.region_level, key.region_name, int(y)) for y in sorted(set(years))}
    return np.array([cache[y] for y in years]) / config.AREA_UNIT_HA


def normalize_by_area(series: FrequencySeries, areas: AreaTable) -> FrequencySeries:
    if series.normalized:
        raise ValidationError("series is already normalized")
    divisor = _bin_areas(series, areas)
    return series.with_values(series.array / divisor, normalized=True, unit=AREA_UNIT)


def denormalize_by_area(series: FrequencySeries, areas: AreaTable) -> FrequencySeries:
    if not series.normalized:
        raise ValidationError("series is not normalized")
    return series.with_values(series.array * _bin_areas(series, areas), normalized=False, unit=RAW_UNIT)


def monthly_profile(series: FrequencySeries) -> pd.Series:
    """Sum of values per calendar month (index 1..12) across all years."""
    by_month = pd.Series(series.array, index=series.dates.month).groupby(level=0).sum()
    return by_month.reindex(range(1, 13), fill_value=0.0).rename("value").rename_axis("month")


# -----------------------------
# Spatial exports
# -----------------------------
def _labelled_frame(labelled: Labelled, pest_id: Optional[str] = None) -> pd.DataFrame:
    rows = [(r.state, r.district, r.created_on) for r, lab in labelled
            if pest_id in (None, ALL_PESTS) or lab.pest_id == pest_id]
    df = pd.DataFrame(rows, columns=["state", "district", "created_on"])
    df["created_on"] = pd.to_datetime(df["created_on"])
    df["year"] = df["created_on"].dt.year
    return df


def choropleth_export(labelled: Labelled, pest_id: str, period: Tuple[datetime.date, datetime.date],
                      level: RegionLevel, areas: AreaTable) -> List[Tuple[str, float]]:
    """Per-region queries per 1000 ha over the period, highest first."""
    level = RegionLevel(level)
    if level not in (RegionLevel.STATE, RegionLevel.DISTRICT):
        raise ValidationError("choropleth level must be state or district")
    start, end = (pd.Timestamp(p) for p in period)
    if start > end:
        raise ValidationError(f"empty period {period}")
    df = _labelled_frame(labelled, pest_id)
    df = df.loc[(df["created_on"] >= start) & (df["created_on"] < end + pd.Timedelta(days=1))].copy()

    if level is RegionLevel.STATE:
        regions = {s: s for s in areas.states}
        df["region"] = df["state"]
    else:
        names = [d for _, d in areas.districts]
        regions = {f"{s}/{d}": (d if names.count(d) == 1 else f"{s}/{d}") for s, d in areas.districts}
        df["region"] = df["state"] + "/" + df["district"]

    counts = df.groupby(["region", "year"]).size()
    unknown = sorted(set(counts.index.get_level_values(0)) - set(regions))
    if unknown:
        raise DataError(f"no gross cropped area for ({unknown[0]}, {counts[unknown[0]].index[0]})")

    values = {}
    for region, label in regions.items():
        total = 0.0
        if region in counts.index.get_level_values(0):
            for year, n in counts[region].items():
                total += n / (areas.area(level, region, int(year)) / config.AREA_UNIT_HA)
        values[label] = total
    return sorted(values.items(), key=lambda kv: (-kv[1], kv[0]))


def state_year_table(labelled: Labelled, areas: AreaTable, pest_id: Optional[str] = None) -> pd.DataFrame:
    """States x calendar years, queries per 1000 ha."""
    df = _labelled_frame(labelled, pest_id)
    counts = df.groupby(["state", "year"]).size()
    years = sorted(set(areas.years) | set(int(y) for y in df["year"].unique()))
    table = pd.DataFrame(0.0, index=pd.Index(areas.states, name="state"), columns=years)
    for (state, year), n in counts.items():
        if state not in table.index:
            raise DataError(f"no gross cropped area for ({state}, {year})")
        table.loc[state, year] = n / (areas.area(RegionLevel.STATE, state, int(year)) / config.AREA_UNIT_HA)
    return table


def first_occurrence(labelled: Labelled, pest_id: str, level: RegionLevel) -> Dict[str, datetime.date]:
    """Earliest query date per region for one pest."""
    level = RegionLevel(level)
    firsts: Dict[str, datetime.date] = {}
    for record, lab in labelled:
        if pest_id != ALL_PESTS and lab.pest_id != pest_id:
            continue
        region = record.state if level is RegionLevel.STATE else record.district
        day = record.created_on.date()
        if region not in firsts or day < firsts[region]:
            firsts[region] = day
    return dict(sorted(firsts.items()))


def corpus_composition(records: Sequence[KccRecord], labelled: Labelled) -> Dict[str, pd.DataFrame]:
    """Query shares by sector and category (all queries) and by crop (pest queries)."""
    def shares(values: List[str]) -> pd.DataFrame:
        counts = pd.Series(values, dtype=object).value_counts()
        df = pd.DataFrame({"value": counts.index.astype(str), "count": counts.to_numpy()})
        df = df.sort_values(["count", "value"], ascending=[False, True], ignore_index=True)
        df["share"] = df["count"] / max(1, int(df["count"].sum()))
        return df
    return {
        "sector": shares([r.sector for r in records]),
        "category": shares([r.category for r in records]),
        "pest_crop": shares([r.crop for r, _ in labelled]),
    }
