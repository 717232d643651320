"""
PestPulse command line.

    python app.py <subcommand> [options]

Every subcommand writes its outputs into --out (default: current directory)
together with manifest.json. Exit codes: 0 ok, 1 bad arguments, 2 data error.
"""

import argparse
import datetime
import json
import logging
import os
import sys
from typing import List, Optional

import pandas as pd

import config
from errors import DataError, ValidationError
from kcc_ingest import (
    IngestConfig, PREPROCESSORS, get_preprocessor, parse_column_map, prepare_records,
    preprocess_records, serialize_records,
)
from pest_aggregate import (
    AREA_UNIT, Bin, RegionLevel, SeriesKey, build_series, choropleth_export, first_occurrence,
    load_area_table, monthly_profile, normalize_by_area, state_year_table, corpus_composition,
)
from pest_exports import RunWriter, read_json
from pest_lexicon import label_corpus, load_lexicon, read_labelled, serialize_labelled
from pest_pipeline import (
    GRID_PRESETS, RunConfig, choose_seasons, future_dates, grid_for, read_records, read_series,
    run_pipeline, sample_area_frame, synthetic_corpus,
)
from sarima_engine import (
    OptimizerConfig, SarimaOrder, evaluate, fit, forecast, forecast_from_frame, grid_search,
    leaderboard_frame, model_from_dict, model_to_dict,
)
from series_diagnostics import (
    LagPolicy, TransformRecord, acf, adf_test, rolling_stats, seasonal_candidates, stationarize,
)

logger = logging.getLogger("pestpulse")

EXIT_OK, EXIT_VALIDATION, EXIT_DATA = 0, 1, 2


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


# -----------------------------
# Helpers
# -----------------------------
def _threads(args) -> int:
    return args.threads or int(os.getenv("PESTPULSE_THREADS", "0") or 0) or config.THREADS


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}")


def _date(text: str) -> datetime.date:
    try:
        return datetime.date.fromisoformat(text)
    except ValueError:
        raise ValidationError(f"bad date {text!r}; expected YYYY-MM-DD")


def _ingest_config(args) -> IngestConfig:
    cfg = IngestConfig(_date(args.date_from), _date(args.date_to))
    return cfg.with_renames(parse_column_map(args.columns)) if args.columns else cfg


def _writer(args, subcommand: str, inputs=()) -> RunWriter:
    settings = {k: v for k, v in vars(args).items()
                if k not in ("handler", "verbose", "threads", "out") and not callable(v)}
    settings = {k: (os.path.basename(v) if k in ("input", "lexicon", "areas", "model", "history",
                                                 "actual", "forecast", "transform") and v else v)
                for k, v in settings.items()}
    return RunWriter(args.out, subcommand, settings, args.seed, inputs)


def _read_labelled(args):
    cfg = _ingest_config(args)
    try:
        with open(args.input, encoding="utf-8", newline="") as f:
            return read_labelled(f, cfg)
    except OSError as e:
        raise DataError(f"cannot read {args.input}: {e}")


def _read_table(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"cannot read table {path}: {e}")


def _echo(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


# -----------------------------
# Subcommands
# -----------------------------
def cmd_ingest(args) -> int:
    cfg = _ingest_config(args)
    records, report = read_records(args.input, cfg)
    records = preprocess_records(records, get_preprocessor(args.preprocessor), report)
    writer = _writer(args, "ingest", [args.input])
    writer.add_text("records.csv", serialize_records(records, cfg))
    writer.add_json("ingest_report.json", report.to_dict())
    writer.commit()
    _echo(report.to_dict())
    return EXIT_OK


def cmd_label(args) -> int:
    cfg = _ingest_config(args)
    records, _ = read_records(args.input, cfg)
    records = prepare_records(records, args.preprocessor)
    lexicon = load_lexicon(args.lexicon) if args.lexicon else load_lexicon()
    labelled, stats = label_corpus(records, lexicon, _threads(args))
    composition = corpus_composition(records, labelled)
    writer = _writer(args, "label", [args.input, args.lexicon])
    writer.add_text("labelled.csv", serialize_labelled(labelled, cfg))
    writer.add_json("label_stats.json", stats.to_dict())
    writer.add_frame("composition.csv", pd.concat(
        [df.assign(dimension=name) for name, df in composition.items()], ignore_index=True
    )[["dimension", "value", "count", "share"]])
    writer.commit()
    _echo(stats.to_dict())
    return EXIT_OK


def cmd_series(args) -> int:
    labelled = _read_labelled(args)
    key = SeriesKey(RegionLevel(args.level), args.region, args.pest)
    series = build_series(labelled, key, Bin(args.bin), args.date_from, args.date_to)
    if args.normalize:
        if not args.areas:
            raise ValidationError("--normalize needs --areas")
        series = normalize_by_area(series, load_area_table(args.areas))
    writer = _writer(args, "series", [args.input, args.areas])
    writer.add_frame("series.csv", series.to_frame())
    writer.commit()
    logger.info(f"Series {key.pest_id}@{key.region_level.value} has {len(series)} bins, total {series.total:.4g}")
    return EXIT_OK


def cmd_map(args) -> int:
    labelled = _read_labelled(args)
    if args.period:
        start, _, end = args.period.partition(":")
    elif args.start:
        start, end = args.start, args.end
    else:
        raise ValidationError("map needs --period FROM:TO or --from/--to")
    period = (_date(start), _date(end or start))
    areas = load_area_table(args.areas)
    level = RegionLevel(args.level)
    values = choropleth_export(labelled, args.pest, period, level, areas)
    writer = _writer(args, "map", [args.input, args.areas])
    if args.format == "json":
        onset = first_occurrence(labelled, args.pest, level)
        writer.add_json("map.json", {
            "pest_id": args.pest, "level": level.value, "unit": AREA_UNIT,
            "period": [period[0].isoformat(), period[1].isoformat()],
            "regions": [{"region": name, "value": v,
                         "first_query": onset.get(name.split("/")[-1])} for name, v in values],
        })
    else:
        writer.add_frame("map.csv", pd.DataFrame(values, columns=["region", "value"]))
    if args.state_years:
        table = state_year_table(labelled, areas, args.pest)
        writer.add_frame("state_years.csv", table.reset_index())
    writer.commit()
    return EXIT_OK


def cmd_profile(args) -> int:
    profile = monthly_profile(read_series(args.input))
    writer = _writer(args, "profile", [args.input])
    writer.add_frame("profile.csv", profile.reset_index())
    writer.commit()
    return EXIT_OK


def cmd_acf(args) -> int:
    series = read_series(args.input)
    if args.normalized and not series.normalized:
        if not args.areas:
            raise ValidationError("--normalized needs --areas for a raw count series")
        series = normalize_by_area(series, load_area_table(args.areas))
    r = acf(series, args.max_lag)
    seasons = seasonal_candidates(series, args.max_lag)
    writer = _writer(args, "acf", [args.input, args.areas])
    writer.add_frame("acf.csv", pd.DataFrame({"lag": range(len(r)), "r": r}))
    writer.commit()
    print(f"seasonal candidates: {', '.join(map(str, seasons)) or 'none'}")
    return EXIT_OK


def cmd_adf(args) -> int:
    result = adf_test(read_series(args.input), LagPolicy.parse(args.lags))
    writer = _writer(args, "adf", [args.input])
    writer.add_json("adf.json", result.to_dict())
    writer.commit()
    _echo(result.to_dict())
    return EXIT_OK


def cmd_stationarize(args) -> int:
    series = read_series(args.input)
    writer = _writer(args, "stationarize", [args.input])
    if args.window:
        means, stds = rolling_stats(series, args.window)
        writer.add_frame("rolling.csv", pd.DataFrame({
            "date": [d.date().isoformat() for d in series.dates[args.window - 1:]], "mean": means, "std": stds}))
    stationary, record, result = stationarize(series, LagPolicy.parse(args.lags))
    writer.add_frame("stationary.csv", stationary.to_frame())
    writer.add_json("transform.json", record.to_dict())
    writer.add_json("adf.json", result.to_dict())
    writer.commit()
    _echo({"transform": record.to_dict(), "adf": result.to_dict()})
    return EXIT_OK


def cmd_fit(args) -> int:
    series = read_series(args.input)
    transform = TransformRecord.from_dict(read_json(args.transform)) if args.transform else None
    optimizer = OptimizerConfig(maxiter=args.maxiter)
    if args.order:
        model = fit(series, SarimaOrder.parse(args.order), optimizer, transform)
        board = [(model.order, model.aic)] if model.converged else []
    else:
        seasons = choose_seasons(series, _ints(args.seasons) if args.seasons else (), series.bin)
        model, board = grid_search(series, grid_for(args.grid, seasons), optimizer, _threads(args))
        if transform is not None:
            model = fit(series, model.order, optimizer, transform)
    writer = _writer(args, "fit", [args.input, args.transform])
    writer.add_json("model.json", model_to_dict(model))
    writer.add_frame("leaderboard.csv", leaderboard_frame(board))
    writer.commit()
    print(f"{model.order} aic={model.aic:.3f} converged={model.converged}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    model = model_from_dict(read_json(args.model))
    history = read_series(args.history)
    fc = forecast(model, history, args.horizon, args.level)
    writer = _writer(args, "forecast", [args.model, args.history])
    writer.add_frame("forecast.csv", fc.to_frame(future_dates(history, args.horizon)))
    writer.commit()
    return EXIT_OK


def cmd_eval(args) -> int:
    fc = forecast_from_frame(_read_table(args.forecast), args.level)
    actual = _read_table(args.actual)
    if "value" not in actual.columns:
        raise DataError(f"{args.actual} has no value column")
    try:
        values = actual["value"].to_numpy(float)
    except ValueError as e:
        raise DataError(f"{args.actual} has non-numeric values: {e}")
    metrics = evaluate(fc, values)
    writer = _writer(args, "eval", [args.forecast, args.actual])
    writer.add_json("metrics.json", metrics)
    writer.commit()
    _echo(metrics)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = RunConfig(
        input=args.input, lexicon=args.lexicon, areas=args.areas, pest=args.pest,
        level=RegionLevel(args.level), region=args.region, bin=Bin(args.bin), grid=args.grid,
        seasons=_ints(args.seasons) if args.seasons else (), horizon=args.horizon,
        interval_level=args.level_ci, train_fraction=args.train_fraction, lags=args.lags,
        preprocessor=args.preprocessor, columns=parse_column_map(args.columns) if args.columns else {},
        date_from=args.date_from, date_to=args.date_to, threads=_threads(args), seed=args.seed,
    )
    result = run_pipeline(cfg, args.out)
    print(f"{result.model.order} aic={result.model.aic:.3f}")
    _echo(result.metrics)
    return EXIT_OK


def cmd_sample(args) -> int:
    writer = _writer(args, "sample")
    writer.add_text("kcc_sample.csv", synthetic_corpus(args.rows, args.seed))
    writer.add_frame("gca_sample.csv", sample_area_frame())
    writer.commit()
    return EXIT_OK


# -----------------------------
# Parser
# -----------------------------
def build_parser() -> CliParser:
    common = CliParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=0, help="worker threads (env PESTPULSE_THREADS)")
    common.add_argument("--seed", type=int, default=config.SEED)
    common.add_argument("--verbose", "-v", action="store_true")

    window = CliParser(add_help=False)
    window.add_argument("--date-from", default=config.DATE_FROM)
    window.add_argument("--date-to", default=config.DATE_TO)
    window.add_argument("--columns-map", "--columns", dest="columns", default="",
                        help="header renames, e.g. KccAns=Answer,StateName=State")

    where = CliParser(add_help=False)
    where.add_argument("--pest", default="aphid")
    where.add_argument("--region-level", "--level", dest="level", choices=[l.value for l in RegionLevel],
                       default=RegionLevel.NATIONAL.value)
    where.add_argument("--region", default="")
    where.add_argument("--bin", choices=[b.value for b in Bin], default=Bin.MONTHLY.value)
    where.add_argument("--areas", help="gross cropped area CSV (state,district,year,gca_ha)")
    where.add_argument("--normalize", action="store_true", help="queries per 1000 ha (needs --areas)")

    parser = CliParser(prog="pestpulse", description="Pest surveillance from farmer helpline queries")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ingest", parents=[common, window], help="parse and clean a KCC dump")
    p.add_argument("--input", required=True)
    p.add_argument("--preprocessor", choices=sorted(PREPROCESSORS), default="normalize")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("label", parents=[common, window], help="label records with pest ids")
    p.add_argument("--input", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--preprocessor", choices=sorted(PREPROCESSORS), default="normalize",
                   help="applied before the normalizer that matching always runs")
    p.set_defaults(handler=cmd_label)

    p = sub.add_parser("series", parents=[common, window, where], help="build a frequency series")
    p.add_argument("--input", required=True)
    p.set_defaults(handler=cmd_series)

    p = sub.add_parser("map", parents=[common, window], help="choropleth table for one pest")
    p.add_argument("--input", required=True)
    p.add_argument("--areas", required=True)
    p.add_argument("--pest", required=True)
    p.add_argument("--period", help="FROM:TO as ISO dates")
    p.add_argument("--from", dest="start")
    p.add_argument("--to", dest="end")
    p.add_argument("--region-level", "--level", dest="level",
                   choices=[RegionLevel.STATE.value, RegionLevel.DISTRICT.value], default=RegionLevel.STATE.value)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--state-years", action="store_true", help="also write the state x year table")
    p.set_defaults(handler=cmd_map)

    p = sub.add_parser("profile", parents=[common], help="monthly profile of a series")
    p.add_argument("--input", required=True)
    p.set_defaults(handler=cmd_profile)

    p = sub.add_parser("acf", parents=[common], help="autocorrelation + seasonal candidates")
    p.add_argument("--input", required=True)
    p.add_argument("--max-lag", type=int, default=24)
    p.add_argument("--normalized", action="store_true", help="area-normalize a raw count series first")
    p.add_argument("--areas")
    p.set_defaults(handler=cmd_acf)

    p = sub.add_parser("adf", parents=[common], help="augmented Dickey-Fuller test")
    p.add_argument("--input", required=True)
    p.add_argument("--lags", default="auto")
    p.set_defaults(handler=cmd_adf)

    p = sub.add_parser("stationarize", parents=[common], help="log / difference until stationary")
    p.add_argument("--input", required=True)
    p.add_argument("--lags", default="auto")
    p.add_argument("--window", type=int, default=0, help="also write rolling mean/std over this window")
    p.set_defaults(handler=cmd_stationarize)

    p = sub.add_parser("fit", parents=[common], help="fit one order or grid-search")
    p.add_argument("--input", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--order", help="p,d,q,P,D,Q,s")
    group.add_argument("--grid", choices=sorted(GRID_PRESETS))
    p.add_argument("--seasons", help="comma-separated seasonal periods (default: ACF peaks)")
    p.add_argument("--transform", help="transform.json to store with the model")
    p.add_argument("--maxiter", type=int, default=config.OPTIMIZER_MAXITER)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("forecast", parents=[common], help="forecast from a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--history", required=True, help="series the model was fitted on")
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--level", type=float, default=config.INTERVAL_LEVEL)
    p.set_defaults(handler=cmd_forecast)

    p = sub.add_parser("eval", parents=[common], help="score a forecast against actuals")
    p.add_argument("--forecast", required=True)
    p.add_argument("--actual", required=True, help="CSV with a value column")
    p.add_argument("--level", type=float, default=config.INTERVAL_LEVEL)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("pipeline", parents=[common, window], help="ingest through evaluation")
    p.add_argument("--input", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--areas")
    p.add_argument("--pest", default="aphid")
    p.add_argument("--region-level", "--level", dest="level", choices=[l.value for l in RegionLevel],
                   default=RegionLevel.NATIONAL.value)
    p.add_argument("--region", default="")
    p.add_argument("--bin", choices=[b.value for b in Bin], default=Bin.MONTHLY.value)
    p.add_argument("--grid", choices=sorted(GRID_PRESETS), default="default")
    p.add_argument("--seasons")
    p.add_argument("--horizon", type=int, default=0, help="extra steps beyond the last observation")
    p.add_argument("--ci-level", dest="level_ci", type=float, default=config.INTERVAL_LEVEL)
    p.add_argument("--train-fraction", type=float, default=config.TRAIN_FRACTION)
    p.add_argument("--lags", default="auto")
    p.add_argument("--preprocessor", choices=sorted(PREPROCESSORS), default="normalize")
    p.set_defaults(handler=cmd_pipeline)

    p = sub.add_parser("sample", parents=[common], help="write a synthetic corpus and area table")
    p.add_argument("--rows", type=int, default=5000)
    p.set_defaults(handler=cmd_sample)
    return parser


def configure_logging(verbose: bool = False):
    level = logging.DEBUG if verbose else getattr(logging, config.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def run(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (None, 0) else EXIT_VALIDATION
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(run())
