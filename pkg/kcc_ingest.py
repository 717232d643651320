# kcc_ingest.py
"""
KCC call-center dump ingestion
- Streams the raw CSV row by row, never loading the dump into memory at once
- Validates location and timestamp fields, counting every rejected row by reason
- Applies a pluggable text preprocessor (identity or the built-in normalizer)
"""

import csv
import dataclasses
import datetime
import io
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, Mapping, Optional, TextIO, Tuple, Union, BinaryIO

import config
from errors import DataError, ValidationError

logger = logging.getLogger(__name__)

TextPreprocessor = Callable[[str], str]

RECORD_FIELDS = tuple(config.DEFAULT_COLUMNS)
REQUIRED_FIELDS = ("state", "district", "created_on")

# -----------------------------
# Data Structures
# -----------------------------
class Season(str, Enum):
    RABI = "Rabi"
    KHARIF = "Kharif"
    ZAID = "Zaid"
    UNKNOWN = "Unknown"

    @classmethod
    def parse(cls, raw: str) -> "Season":
        value = (raw or "").strip().lower()
        for season in cls:
            if season.value.lower() == value:
                return season
        return cls.UNKNOWN


@dataclass(frozen=True)
class KccRecord:
    season: Season
    sector: str
    category: str
    crop: str
    query_type: str
    query_text: str
    answer_text: str
    state: str
    district: str
    block: str
    created_on: Optional[datetime.datetime]


@dataclass
class IngestReport:
    total_rows: int = 0
    accepted: int = 0
    rejected_missing_field: int = 0
    rejected_bad_timestamp: int = 0
    rejected_out_of_window: int = 0
    rejected_malformed: int = 0
    preprocess_failed: int = 0          # flagged, not rejected

    @property
    def rejected(self) -> int:
        return (self.rejected_missing_field + self.rejected_bad_timestamp
                + self.rejected_out_of_window + self.rejected_malformed)

    def is_balanced(self) -> bool:
        return self.total_rows == self.accepted + self.rejected

    def merge(self, other: "IngestReport") -> "IngestReport":
        """Combine reports of two shards of the same dump."""
        return IngestReport(**{
            f.name: getattr(self, f.name) + getattr(other, f.name)
            for f in dataclasses.fields(self)
        })

    def to_dict(self) -> Dict[str, int]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class IngestConfig:
    date_from: datetime.date = datetime.date.fromisoformat(config.DATE_FROM)
    date_to: datetime.date = datetime.date.fromisoformat(config.DATE_TO)
    columns: Mapping[str, str] = field(default_factory=lambda: dict(config.DEFAULT_COLUMNS))

    def __post_init__(self):
        if self.date_from > self.date_to:
            raise ValidationError(f"date window is empty: {self.date_from} > {self.date_to}")
        missing = [f for f in RECORD_FIELDS if f not in self.columns]
        if missing:
            raise ValidationError(f"column map lacks fields: {', '.join(missing)}")

    def with_renames(self, renames: Mapping[str, str]) -> "IngestConfig":
        """Apply a header rename mapping, keyed by default header or by field name."""
        columns = dict(self.columns)
        by_header = {header: name for name, header in columns.items()}
        for source, target in renames.items():
            name = by_header.get(source, source)
            if name not in columns:
                raise ValidationError(f"unknown column in rename mapping: {source}")
            columns[name] = target
        return dataclasses.replace(self, columns=columns)

    def in_window(self, ts: datetime.datetime) -> bool:
        return self.date_from <= ts.date() <= self.date_to


def parse_column_map(spec: str) -> Dict[str, str]:
    """'KccAns=Answer,StateName=State' -> {'KccAns': 'Answer', 'StateName': 'State'}"""
    renames = {}
    for pair in filter(None, (p.strip() for p in spec.split(","))):
        if "=" not in pair:
            raise ValidationError(f"bad column mapping entry: {pair!r}")
        source, target = (s.strip() for s in pair.split("=", 1))
        renames[source] = target
    return renames


# -----------------------------
# Text Preprocessing
# -----------------------------
_NON_WORD = re.compile(r"[\W_]+")


def normalize_text(text: str) -> str:
    """Lowercase, turn punctuation into spaces and collapse whitespace."""
    return _NON_WORD.sub(" ", text.lower()).strip()


def identity_text(text: str) -> str:
    return text


PREPROCESSORS: Dict[str, TextPreprocessor] = {
    "identity": identity_text,
    "normalize": normalize_text,
}


def get_preprocessor(name: str) -> TextPreprocessor:
    try:
        return PREPROCESSORS[name]
    except KeyError:
        raise ValidationError(f"unknown preprocessor {name!r}; choose from {sorted(PREPROCESSORS)}")


def preprocess_text(record: KccRecord, preprocessor: TextPreprocessor,
                    report: Optional[IngestReport] = None) -> KccRecord:
    try:
        query = preprocessor(record.query_text)
        answer = preprocessor(record.answer_text)
        if not isinstance(query, str) or not isinstance(answer, str):
            raise TypeError("preprocessor must return str")
    except Exception as e:
        logger.warning(f"Preprocessor failed, record kept unmodified: {e}")
        if report is not None:
            report.preprocess_failed += 1
        return record
    if query == record.query_text and answer == record.answer_text:
        return record
    return dataclasses.replace(record, query_text=query, answer_text=answer)


def preprocess_records(records: Iterable[KccRecord], preprocessor: TextPreprocessor,
                       report: Optional[IngestReport] = None) -> List[KccRecord]:
    return [preprocess_text(r, preprocessor, report) for r in records]


def prepare_records(records: Iterable[KccRecord], name: str = "normalize",
                    report: Optional[IngestReport] = None) -> List[KccRecord]:
    """Named preprocessor, then the built-in normalizer that pest matching expects."""
    records = preprocess_records(records, get_preprocessor(name), report)
    if name != "normalize":
        records = preprocess_records(records, normalize_text)
    return records


# -----------------------------
# Parsing
# -----------------------------
def parse_timestamp(raw: str) -> Optional[datetime.datetime]:
    for fmt in config.TIMESTAMP_FORMATS:
        try:
            ts = datetime.datetime.strptime(raw, fmt)
        except ValueError:
            continue
        # millisecond precision
        return ts.replace(microsecond=ts.microsecond // 1000 * 1000)
    return None


def format_timestamp(ts: datetime.datetime) -> str:
    return ts.strftime("%Y-%m-%d %H:%M:%S.") + f"{ts.microsecond // 1000:03d}"


def canonical_region(name: str) -> str:
    return " ".join(name.split()).upper()


def _as_text(stream: Union[BinaryIO, TextIO]) -> TextIO:
    if isinstance(stream, io.TextIOBase):
        return stream
    # bad bytes survive decoding as lone surrogates so only their row is rejected
    return io.TextIOWrapper(stream, encoding="utf-8", errors="surrogateescape", newline="")


_UNDECODABLE = re.compile("[\udc80-\udcff]")


def _undecodable(row: List[str]) -> bool:
    return any(_UNDECODABLE.search(cell) for cell in row)


def _read_header(reader, columns: Mapping[str, str]) -> Tuple[Dict[str, int], int]:
    try:
        header = next(reader)
    except (StopIteration, csv.Error, UnicodeDecodeError) as e:
        raise DataError(f"unreadable CSV header: {str(e) or 'empty input'}")
    header = [h.strip().lstrip("\ufeff") for h in header]
    missing = [h for h in columns.values() if h not in header]
    if missing:
        raise DataError(f"CSV header lacks columns: {', '.join(missing)}")
    return {name: header.index(col) for name, col in columns.items()}, len(header)


def record_from_values(values: Mapping[str, str],
                       created_on: Optional[datetime.datetime] = None) -> KccRecord:
    """Build a record from field-keyed strings (no validation)."""
    if created_on is None and values.get("created_on"):
        created_on = parse_timestamp(values["created_on"])
    return KccRecord(
        season=Season.parse(values["season"]),
        sector=values["sector"],
        category=values["category"],
        crop=values["crop"],
        query_type=values["query_type"],
        query_text=values["query_text"],
        answer_text=values["answer_text"],
        state=canonical_region(values["state"]),
        district=canonical_region(values["district"]),
        block=canonical_region(values["block"]),
        created_on=created_on,
    )


def _row_to_record(row: List[str], index: Mapping[str, int], cfg: IngestConfig,
                   report: IngestReport) -> Optional[KccRecord]:
    values = {name: row[pos].strip() for name, pos in index.items()}
    if any(not values[name] for name in REQUIRED_FIELDS):
        report.rejected_missing_field += 1
        return None
    created_on = parse_timestamp(values["created_on"])
    if created_on is None:
        report.rejected_bad_timestamp += 1
        return None
    if not cfg.in_window(created_on):
        report.rejected_out_of_window += 1
        return None
    report.accepted += 1
    return record_from_values(values, created_on)


def parse_records(csv_stream: Union[BinaryIO, TextIO],
                  cfg: Optional[IngestConfig] = None) -> Tuple[List[KccRecord], IngestReport]:
    """
    Parse a KCC CSV dump. Rows that fail validation are counted in the report
    by reason; the returned records keep file order.
    """
    cfg = cfg or IngestConfig()
    reader = csv.reader(_as_text(csv_stream), strict=True)
    index, width = _read_header(reader, cfg.columns)
    report = IngestReport()
    records: List[KccRecord] = []

    while True:
        try:
            row = next(reader)
        except StopIteration:
            break
        except (csv.Error, UnicodeDecodeError) as e:
            report.total_rows += 1
            report.rejected_malformed += 1
            logger.debug(f"Malformed CSV row near line {reader.line_num}: {e}")
            continue
        if not row:
            continue
        report.total_rows += 1
        if len(row) != width or _undecodable(row):
            report.rejected_malformed += 1
            continue
        record = _row_to_record(row, index, cfg, report)
        if record is not None:
            records.append(record)

    logger.info(f"Parsed {report.total_rows} rows: {report.accepted} accepted, {report.rejected} rejected")
    return records, report


def clean(records: Iterable[KccRecord]) -> List[KccRecord]:
    """Drop records without a state, a district or a creation time."""
    return [
        r for r in records
        if r.state.strip() and r.district.strip() and r.created_on is not None
    ]


# -----------------------------
# Serialization
# -----------------------------
def record_to_row(record: KccRecord) -> List[str]:
    values = dataclasses.asdict(record)
    values["season"] = record.season.value
    values["created_on"] = format_timestamp(record.created_on) if record.created_on else ""
    return [values[name] for name in RECORD_FIELDS]


def record_header(cfg: Optional[IngestConfig] = None) -> List[str]:
    cfg = cfg or IngestConfig()
    return [cfg.columns[name] for name in RECORD_FIELDS]


def serialize_records(records: Iterable[KccRecord], cfg: Optional[IngestConfig] = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(record_header(cfg))
    writer.writerows(record_to_row(r) for r in records)
    return buf.getvalue()
