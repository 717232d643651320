import csv
import datetime
import io

import pytest

import config
from kcc_ingest import KccRecord, Season
from pest_lexicon import load_lexicon

HEADER = list(config.DEFAULT_COLUMNS.values())

TABLE_ROW = {
    "Season": "Rabi", "Sector": "AGRICULTURE", "Category": "Pulses", "Crop": "Black Gram (urd bean)",
    "QueryType": "Plant Protection", "QueryText": "pod borer in black gram",
    "KccAns": "spray profenophos 2ml per litre", "StateName": "TAMILNADU",
    "DistrictName": "TIRUCHIRAPPALLI", "BlockName": "MANACHANALLUR", "CreatedOn": "2015-03-14 15:35:05.087",
}


def csv_text(rows, header=HEADER) -> str:
    """CSV text from dict rows keyed by header names; missing keys become blank."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([row.get(h, "") for h in header])
    return buf.getvalue()


def make_record(query="", answer="", state="PUNJAB", district="LUDHIANA",
                created_on=datetime.datetime(2016, 5, 1, 10, 0), **kw) -> KccRecord:
    fields = dict(season=Season.RABI, sector="AGRICULTURE", category="Plant Protection", crop="wheat",
                  query_type="Plant Protection", query_text=query, answer_text=answer, state=state,
                  district=district, block="", created_on=created_on)
    fields.update(kw)
    return KccRecord(**fields)


@pytest.fixture
def table_row():
    return dict(TABLE_ROW)


@pytest.fixture(scope="session")
def lexicon():
    return load_lexicon()
