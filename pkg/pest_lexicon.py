# pest_lexicon.py
"""
Pest vocabulary + query labelling
- Lexicon of canonical pest names with aliases (JSON or TSV)
- One-character-error matching (Damerau-Levenshtein <= 1) over token windows
- Question text is scanned before the answer; one best label per record
"""

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import config
from errors import DataError, ValidationError
from kcc_ingest import (
    KccRecord, RECORD_FIELDS, IngestConfig, normalize_text, record_from_values,
    record_header, record_to_row,
)

logger = logging.getLogger(__name__)

REFERENCE_LEXICON = Path(__file__).parent / "data" / "pests.json"
LABEL_COLUMNS = ("pest_id", "matched_text", "source", "distance")

# -----------------------------
# Data Structures
# -----------------------------
class LabelSource(str, Enum):
    QUESTION = "question"
    ANSWER = "answer"


@dataclass(frozen=True)
class PestEntry:
    pest_id: str
    canonical_name: str
    aliases: Tuple[str, ...] = ()

    @property
    def names(self) -> Tuple[str, ...]:
        return (self.canonical_name,) + tuple(a for a in self.aliases if a != self.canonical_name)


@dataclass(frozen=True)
class PestLabel:
    pest_id: str
    matched_text: str
    source: LabelSource
    distance: int


@dataclass(frozen=True)
class LabelStats:
    labelled: int
    total: int
    per_pest: Dict[str, int] = field(default_factory=dict)

    @property
    def fraction(self) -> float:
        return self.labelled / self.total if self.total else 0.0

    def to_dict(self) -> Dict:
        return {"labelled": self.labelled, "total": self.total,
                "fraction": self.fraction, "per_pest": dict(sorted(self.per_pest.items()))}


@dataclass(frozen=True)
class PestLexicon:
    entries: Tuple[PestEntry, ...] = ()
    # token count -> [(lexicon order, pest_id, name)]
    _by_size: Dict[int, List[Tuple[int, str, str]]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        self._validate()
        by_size: Dict[int, List[Tuple[int, str, str]]] = {}
        order = 0
        for entry in self.entries:
            for name in entry.names:
                by_size.setdefault(len(name.split()), []).append((order, entry.pest_id, name))
                order += 1
        object.__setattr__(self, "_by_size", by_size)

    def _validate(self):
        seen_ids = set()
        owner: Dict[str, str] = {}
        for entry in self.entries:
            if entry.pest_id in seen_ids:
                raise ValidationError(f"duplicate pest id {entry.pest_id!r}")
            seen_ids.add(entry.pest_id)
            for name in entry.names:
                if not name or normalize_text(name) != name:
                    raise ValidationError(f"pest name {name!r} ({entry.pest_id}) is not normalized")
                if len(name.split()) > config.MAX_NAME_TOKENS:
                    raise ValidationError(f"pest name {name!r} has more than {config.MAX_NAME_TOKENS} tokens")
                other = owner.setdefault(name, entry.pest_id)
                if other != entry.pest_id:
                    raise ValidationError(f"alias {name!r} is listed under both {other!r} and {entry.pest_id!r}")

    @property
    def pest_ids(self) -> List[str]:
        return [e.pest_id for e in self.entries]

    @property
    def window_sizes(self) -> List[int]:
        return sorted(self._by_size)

    def names_of_size(self, size: int) -> List[Tuple[int, str, str]]:
        return self._by_size.get(size, [])

    def __len__(self):
        return len(self.entries)

    def __contains__(self, pest_id: str) -> bool:
        return pest_id in self.pest_ids


# -----------------------------
# Loading
# -----------------------------
def _entries_from_json(text: str) -> List[PestEntry]:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"lexicon is not valid JSON: {e}")
    if not isinstance(raw, list):
        raise ValidationError("lexicon JSON must be an array of entries")
    entries = []
    for item in raw:
        try:
            entries.append(PestEntry(str(item["id"]), str(item["name"]),
                                     tuple(str(a) for a in item.get("aliases", []))))
        except (KeyError, TypeError) as e:
            raise ValidationError(f"bad lexicon entry {item!r}: {e}")
    return entries


def _entries_from_tsv(text: str) -> List[PestEntry]:
    rows = [r for r in csv.reader(io.StringIO(text), delimiter="\t") if r]
    if rows and [c.strip().lower() for c in rows[0][:2]] == ["id", "name"]:
        rows = rows[1:]
    entries = []
    for row in rows:
        if len(row) < 2:
            raise ValidationError(f"bad lexicon row {row!r}")
        aliases = tuple(a.strip() for a in row[2].split("|") if a.strip()) if len(row) > 2 else ()
        entries.append(PestEntry(row[0].strip(), row[1].strip(), aliases))
    return entries


def load_lexicon(path=REFERENCE_LEXICON) -> PestLexicon:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ValidationError(f"cannot read lexicon {path}: {e}")
    entries = _entries_from_tsv(text) if path.suffix.lower() in (".tsv", ".txt") else _entries_from_json(text)
    lexicon = PestLexicon(tuple(entries))
    logger.info(f"Loaded lexicon {path.name}: {len(lexicon)} pests")
    return lexicon


# -----------------------------
# Matching
# -----------------------------
def match_distance(candidate: str, name: str) -> Optional[int]:
    """Damerau-Levenshtein distance if it is 0 or 1, else None."""
    a, b = candidate.lower(), name.lower()
    if a == b:
        return 0
    la, lb = len(a), len(b)
    if abs(la - lb) > 1:
        return None
    if la == lb:
        diffs = [i for i in range(la) if a[i] != b[i]]
        if len(diffs) == 1:
            return 1
        if (len(diffs) == 2 and diffs[1] == diffs[0] + 1
                and a[diffs[0]] == b[diffs[1]] and a[diffs[1]] == b[diffs[0]]):
            return 1
        return None
    short, long_ = (a, b) if la < lb else (b, a)
    i = 0
    while i < len(short) and short[i] == long_[i]:
        i += 1
    return 1 if short[i:] == long_[i + 1:] else None


def _window_distance(window: str, name: str) -> Optional[int]:
    d = match_distance(window, name)
    if d == 1:
        # an edit may only touch tokens long enough for fuzzy matching
        changed = [(a, b) for a, b in zip(window.split(" "), name.split(" ")) if a != b]
        if any(min(len(a), len(b)) < config.FUZZY_MIN_TOKEN_LEN for a, b in changed):
            return None
    return d


def _best_in_text(tokens: Sequence[str], lexicon: PestLexicon):
    best = None   # (distance, position, order, pest_id, window)
    for pos in range(len(tokens)):
        for size in lexicon.window_sizes:
            if pos + size > len(tokens):
                break
            window = " ".join(tokens[pos:pos + size])
            for order, pest_id, name in lexicon.names_of_size(size):
                d = _window_distance(window, name)
                if d is None:
                    continue
                key = (d, pos, order, pest_id, window)
                if best is None or key[:3] < best[:3]:
                    best = key
        if best is not None and best[0] == 0:
            break
    return best


def label_query(record: KccRecord, lexicon: PestLexicon) -> Optional[PestLabel]:
    best_label, best_key = None, None
    for rank, (source, text) in enumerate(((LabelSource.QUESTION, record.query_text),
                                           (LabelSource.ANSWER, record.answer_text))):
        hit = _best_in_text(normalize_text(text).split(), lexicon)
        if hit is None:
            continue
        distance, pos, order, pest_id, window = hit
        key = (distance, rank, pos, order)
        if best_key is None or key < best_key:
            best_key = key
            best_label = PestLabel(pest_id, window, source, distance)
        if distance == 0:
            break
    return best_label


def _label_chunk(chunk: Sequence[KccRecord], lexicon: PestLexicon) -> List[Optional[PestLabel]]:
    return [label_query(r, lexicon) for r in chunk]


def label_corpus(records: Sequence[KccRecord], lexicon: PestLexicon,
                 threads: int = 1) -> Tuple[List[Tuple[KccRecord, PestLabel]], LabelStats]:
    """Label every record; returns the labelled pairs in input order plus stats."""
    records = list(records)
    threads = max(1, min(threads, len(records) or 1))
    size = -(-len(records) // threads) if records else 1
    chunks = [records[i:i + size] for i in range(0, len(records), size)]
    if threads == 1:
        labels = [lab for chunk in chunks for lab in _label_chunk(chunk, lexicon)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            labels = [lab for part in pool.map(_label_chunk, chunks, [lexicon] * len(chunks)) for lab in part]

    labelled = [(r, lab) for r, lab in zip(records, labels) if lab is not None]
    per_pest: Dict[str, int] = {}
    for _, lab in labelled:
        per_pest[lab.pest_id] = per_pest.get(lab.pest_id, 0) + 1
    stats = LabelStats(len(labelled), len(records), per_pest)
    logger.info(f"Labelled {stats.labelled}/{stats.total} queries ({stats.fraction:.2%})")
    return labelled, stats


# -----------------------------
# Labelled CSV
# -----------------------------
def serialize_labelled(labelled: Iterable[Tuple[KccRecord, PestLabel]],
                       cfg: Optional[IngestConfig] = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(record_header(cfg) + list(LABEL_COLUMNS))
    for record, lab in labelled:
        writer.writerow(record_to_row(record) + [lab.pest_id, lab.matched_text, lab.source.value, str(lab.distance)])
    return buf.getvalue()


def read_labelled(stream: TextIO, cfg: Optional[IngestConfig] = None) -> List[Tuple[KccRecord, PestLabel]]:
    cfg = cfg or IngestConfig()
    reader = csv.DictReader(stream)
    missing = [c for c in list(cfg.columns.values()) + list(LABEL_COLUMNS) if c not in (reader.fieldnames or [])]
    if missing:
        raise DataError(f"labelled CSV lacks columns: {', '.join(missing)}")
    out = []
    for row in reader:
        record = record_from_values({name: row[cfg.columns[name]] for name in RECORD_FIELDS})
        if record.created_on is None:
            raise DataError(f"labelled CSV has a bad timestamp near line {reader.line_num}")
        out.append((record, PestLabel(row["pest_id"], row["matched_text"],
                                      LabelSource(row["source"]), int(row["distance"]))))
    return out
