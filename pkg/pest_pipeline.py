# pest_pipeline.py
"""
End-to-end pest forecasting run
- ingest -> label -> series (+ area normalization) -> stationarize -> 70/30 split
  -> grid search on train -> forecast over the test span -> evaluate
- Every intermediate is staged through RunWriter; a failing stage raises StageError
- Seeded synthetic KCC corpus with a planted seasonal pest signal (sample data)
"""

import csv
import dataclasses
import datetime
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

import config
from errors import DataError, StageError, ValidationError
from kcc_ingest import (
    IngestConfig, format_timestamp, parse_records, prepare_records, serialize_records,
)
from pest_aggregate import (
    AreaTable, Bin, FrequencySeries, RegionLevel, SeriesKey, build_series, load_area_table,
    normalize_by_area, series_from_frame,
)
from pest_exports import RunWriter
from pest_lexicon import label_corpus, load_lexicon, serialize_labelled
from sarima_engine import (
    Forecast, GridSpec, OptimizerConfig, SarimaModel, evaluate, fit, forecast, grid_search,
    leaderboard_frame, model_to_dict, train_test_split,
)
from series_diagnostics import LagPolicy, apply_transforms, seasonal_candidates, stationarize

logger = logging.getLogger(__name__)

GRID_PRESETS = {
    # d is fixed at 0: stationarize has already chosen the trend differencing
    "default": dict(p=config.GRID_P, d=(0,), q=config.GRID_Q, P=config.GRID_SP, D=config.GRID_SD, Q=config.GRID_SQ),
    "small": dict(p=(0, 1), d=(0,), q=(0, 1), P=(0, 1), D=(0, 1), Q=(0, 1)),
    "full": dict(p=config.GRID_P, d=config.GRID_D, q=config.GRID_Q, P=config.GRID_SP, D=config.GRID_SD, Q=config.GRID_SQ),
}


@dataclass(frozen=True)
class RunConfig:
    input: str
    lexicon: Optional[str] = None
    areas: Optional[str] = None
    pest: str = "aphid"
    level: RegionLevel = RegionLevel.NATIONAL
    region: str = ""
    bin: Bin = Bin.MONTHLY
    grid: str = "default"
    seasons: Tuple[int, ...] = ()
    horizon: int = 0
    interval_level: float = config.INTERVAL_LEVEL
    train_fraction: float = config.TRAIN_FRACTION
    lags: str = "auto"
    preprocessor: str = "normalize"
    columns: Mapping[str, str] = field(default_factory=dict)
    date_from: str = config.DATE_FROM
    date_to: str = config.DATE_TO
    threads: int = config.THREADS
    seed: int = config.SEED

    def __post_init__(self):
        object.__setattr__(self, "level", RegionLevel(self.level))
        object.__setattr__(self, "bin", Bin(self.bin))
        if self.grid not in GRID_PRESETS:
            raise ValidationError(f"unknown grid {self.grid!r}; choose from {sorted(GRID_PRESETS)}")
        if self.horizon < 0:
            raise ValidationError("horizon must be >= 0")

    def ingest_config(self) -> IngestConfig:
        base = IngestConfig(datetime.date.fromisoformat(self.date_from), datetime.date.fromisoformat(self.date_to))
        return base.with_renames(self.columns) if self.columns else base

    def echo(self) -> Dict:
        d = dataclasses.asdict(self)
        d["level"], d["bin"] = self.level.value, self.bin.value
        d["seasons"], d["columns"] = list(self.seasons), dict(self.columns)
        for name in ("input", "lexicon", "areas"):
            d[name] = Path(d[name]).name if d[name] else None
        d.pop("threads")
        return d


@dataclass
class PipelineResult:
    series: FrequencySeries
    model: SarimaModel
    leaderboard: List
    forecast: Forecast
    metrics: Dict[str, float]
    outputs: Dict[str, Path] = field(default_factory=dict)


def run_stage(name: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ValidationError:
        raise
    except Exception as e:
        logger.error(f"Stage {name} failed: {e}")
        raise StageError(name, e) from e


# -----------------------------
# Readers shared with the CLI
# -----------------------------
def read_records(path, cfg: IngestConfig):
    try:
        with open(path, "rb") as f:
            return parse_records(f, cfg)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}")


def read_series(path) -> FrequencySeries:
    try:
        return series_from_frame(pd.read_csv(path, keep_default_na=False, na_values=[]))
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read series {path}: {e}")


def future_dates(series: FrequencySeries, horizon: int) -> pd.DatetimeIndex:
    return pd.date_range(series.dates[-1], periods=horizon + 1, freq=series.bin.freq)[1:]


def choose_seasons(series, explicit=(), bin_: Bin = Bin.MONTHLY) -> Tuple[int, ...]:
    if explicit:
        return tuple(explicit)
    y = np.asarray(series.array if isinstance(series, FrequencySeries) else series)
    max_lag = min(len(y) // 3, 60 if bin_ is Bin.MONTHLY else 400)
    try:
        found = tuple(seasonal_candidates(y, max_lag))
    except DataError:
        found = ()
    logger.info(f"Seasonal candidates: {found or 'none'}")
    return found or config.DEFAULT_SEASONS


def grid_for(name: str, seasons) -> GridSpec:
    return GridSpec(**GRID_PRESETS[name], seasons=tuple(seasons))


# -----------------------------
# Pipeline
# -----------------------------
def run_pipeline(cfg: RunConfig, out_dir) -> PipelineResult:
    writer = RunWriter(out_dir, "pipeline", cfg.echo(), cfg.seed, [cfg.input, cfg.lexicon, cfg.areas])
    ingest_cfg = cfg.ingest_config()

    records, report = run_stage("ingest", read_records, cfg.input, ingest_cfg)
    records = prepare_records(records, cfg.preprocessor, report)
    writer.add_text("records.csv", serialize_records(records, ingest_cfg))
    writer.add_json("ingest_report.json", report.to_dict())

    lexicon = load_lexicon(cfg.lexicon) if cfg.lexicon else load_lexicon()
    labelled, stats = run_stage("label", label_corpus, records, lexicon, cfg.threads)
    writer.add_text("labelled.csv", serialize_labelled(labelled, ingest_cfg))
    writer.add_json("label_stats.json", stats.to_dict())

    def make_series():
        key = SeriesKey(cfg.level, cfg.region, cfg.pest)
        series = build_series(labelled, key, cfg.bin, cfg.date_from, cfg.date_to)
        if series.total == 0:
            raise DataError("empty series")
        if cfg.areas:
            series = normalize_by_area(series, load_area_table(cfg.areas))
        return series
    series = run_stage("series", make_series)
    writer.add_frame("series.csv", series.to_frame())

    policy = LagPolicy.parse(cfg.lags)
    stationary, record, adf = run_stage("stationarize", stationarize, series, policy)
    writer.add_json("adf.json", adf.to_dict())
    writer.add_json("transform.json", record.to_dict())

    def split():
        train, test = train_test_split(series, cfg.train_fraction)
        train_t, train_record = apply_transforms(train, record.log_applied, record.differences)
        return train, test, train_t, train_record
    train, test, train_t, train_record = run_stage("split", split)

    seasons = choose_seasons(stationary, cfg.seasons, cfg.bin)
    best, board = run_stage("fit", grid_search, train_t, grid_for(cfg.grid, seasons), OptimizerConfig(), cfg.threads)
    best = dataclasses.replace(best, transform=train_record)
    writer.add_json("model.json", model_to_dict(best))
    writer.add_frame("leaderboard.csv", leaderboard_frame(board))

    fc = run_stage("forecast", forecast, best, train_t, len(test), cfg.interval_level)
    writer.add_frame("forecast.csv", fc.to_frame(test.dates))
    metrics = run_stage("eval", evaluate, fc, test)
    writer.add_json("metrics.json", metrics)
    logger.info(f"Held-out rmse={metrics['rmse']:.4g} coverage={metrics['ci_coverage']:.2f}")

    if cfg.horizon:
        def outlook():
            full = fit(stationary, best.order, transform=record)
            return forecast(full, stationary, cfg.horizon, cfg.interval_level)
        ahead = run_stage("outlook", outlook)
        writer.add_frame("outlook.csv", ahead.to_frame(future_dates(series, cfg.horizon)))

    outputs = writer.commit()
    return PipelineResult(series, best, board, fc, metrics, outputs)


# -----------------------------
# Synthetic corpus
# -----------------------------
SAMPLE_YEARS = range(2015, 2021)
SAMPLE_AREAS = {                          # base gross cropped area (ha), grows 1% a year
    ("UTTAR PRADESH", "AGRA"): 180000,
    ("UTTAR PRADESH", "MEERUT"): 150000,
    ("PUNJAB", "LUDHIANA"): 300000,
    ("PUNJAB", "BATHINDA"): 290000,
    ("MAHARASHTRA", "NASHIK"): 820000,
    ("MAHARASHTRA", "PUNE"): 900000,
}
_PEST_QUERIES = ("how to control {} in {}", "{} attack on {} crop", "farmer asked about {} in {}")
_OTHER_PESTS = ("whitefly", "bollworm", "termite", "stem borer")
_APHID_NAMES = ("aphid", "aphid", "aphid", "aphids", "mahu", "aphis")
_CROPS = ("mustard", "wheat", "cotton", "paddy", "potato")
_OTHER_QUERIES = (
    ("Weather", "weather forecast for next week"),
    ("Market Information", "market price of wheat"),
    ("Government Schemes", "pm kisan scheme status"),
    ("Nutrient Management", "fertilizer dose for paddy"),
    ("Seeds", "seed variety of mustard"),
)
_ANSWERS = ("spray imidacloprid 0.3 ml per litre of water", "advised to spray neem oil 5 ml per litre")


def sample_area_frame() -> pd.DataFrame:
    rows = [(s, d, y, base * (100 + y - SAMPLE_YEARS[0]) // 100)
            for (s, d), base in SAMPLE_AREAS.items() for y in SAMPLE_YEARS]
    return pd.DataFrame(rows, columns=["state", "district", "year", "gca_ha"])


def sample_area_table() -> AreaTable:
    df = sample_area_frame()
    return AreaTable({(r.state, r.district, r.year): float(r.gca_ha) for r in df.itertuples(index=False)})


def _season_of(month: int) -> str:
    if 6 <= month <= 10:
        return "Kharif"
    return "Zaid" if month in (4, 5) else "Rabi"


def synthetic_corpus(rows: int = 5000, seed: int = config.SEED, aphid_share: float = 0.4,
                     period: int = 12, amplitude: float = 0.8) -> str:
    """KCC-shaped CSV text; aphid queries follow a period-`period` monthly cycle."""
    if rows < 1:
        raise ValidationError("rows must be >= 1")
    rng = np.random.default_rng(seed)
    months = pd.date_range(f"{SAMPLE_YEARS[0]}-01-01", f"{SAMPLE_YEARS[-1]}-12-01", freq="MS")
    phase = np.arange(len(months))
    seasonal = 1.0 + amplitude * np.cos(2.0 * np.pi * (phase - 1) / period)
    regions = list(SAMPLE_AREAS)
    cfg = IngestConfig()

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([cfg.columns[name] for name in cfg.columns])
    for _ in range(rows):
        u = rng.random()
        if u < aphid_share:
            month = months[rng.choice(len(months), p=seasonal / seasonal.sum())]
            crop = _CROPS[rng.integers(len(_CROPS))]
            query = _PEST_QUERIES[rng.integers(len(_PEST_QUERIES))].format(
                _APHID_NAMES[rng.integers(len(_APHID_NAMES))], crop)
            category, answer = "Plant Protection", _ANSWERS[rng.integers(len(_ANSWERS))]
        elif u < aphid_share + 0.3:
            month = months[rng.integers(len(months))]
            crop = _CROPS[rng.integers(len(_CROPS))]
            query = _PEST_QUERIES[rng.integers(len(_PEST_QUERIES))].format(
                _OTHER_PESTS[rng.integers(len(_OTHER_PESTS))], crop)
            category, answer = "Plant Protection", _ANSWERS[rng.integers(len(_ANSWERS))]
        else:
            month = months[rng.integers(len(months))]
            crop = _CROPS[rng.integers(len(_CROPS))]
            category, query = _OTHER_QUERIES[rng.integers(len(_OTHER_QUERIES))]
            answer = "information given to the farmer"
        state, district = regions[rng.integers(len(regions))]
        created = month.to_pydatetime() + datetime.timedelta(
            days=int(rng.integers(28)), seconds=int(rng.integers(86400)), milliseconds=int(rng.integers(1000)))
        sector = "HORTICULTURE" if crop == "potato" else "AGRICULTURE"
        values = {
            "season": _season_of(created.month), "sector": sector, "category": category, "crop": crop,
            "query_type": category, "query_text": query, "answer_text": answer, "state": state,
            "district": district, "block": f"{district} BLOCK {int(rng.integers(1, 3))}",
            "created_on": format_timestamp(created),
        }
        writer.writerow([values[name] for name in cfg.columns])
    return buf.getvalue()
