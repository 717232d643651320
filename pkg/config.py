import os

ARTIFACT_VERSION = "0.3.0"

# Runtime knobs (override via env)
THREADS = int(os.getenv("PESTPULSE_THREADS", "0")) or (os.cpu_count() or 1)
LOG_LEVEL = os.getenv("PESTPULSE_LOG_LEVEL", "INFO")
SEED = int(os.getenv("PESTPULSE_SEED", "7"))

# Ingest
DATE_FROM = os.getenv("PESTPULSE_DATE_FROM", "2015-01-01")
DATE_TO = os.getenv("PESTPULSE_DATE_TO", "2020-12-31")
TIMESTAMP_FORMATS = ("%Y-%m-%d %H:%M:%S.%f", "%Y-%m-%d")
DEFAULT_COLUMNS = {                             # record field -> CSV header
    "season": "Season",
    "sector": "Sector",
    "category": "Category",
    "crop": "Crop",
    "query_type": "QueryType",
    "query_text": "QueryText",
    "answer_text": "KccAns",
    "state": "StateName",
    "district": "DistrictName",
    "block": "BlockName",
    "created_on": "CreatedOn",
}

# Lexicon
FUZZY_MIN_TOKEN_LEN = 4                         # shorter names must match exactly
MAX_NAME_TOKENS = 4

# Aggregation
AREA_UNIT_HA = 1000.0                           # values reported per 1000 ha
AREA_YEAR_TOLERANCE = 2

# Modelling
TRAIN_FRACTION = 0.7
INTERVAL_LEVEL = 0.95
MAX_DIFF_PASSES = 2
GRID_P = GRID_Q = GRID_SP = GRID_SQ = (0, 1, 2)
GRID_D = GRID_SD = (0, 1)
DEFAULT_SEASONS = (12,)
OPTIMIZER_FATOL = 1e-8
OPTIMIZER_XATOL = 1e-6
OPTIMIZER_MAXITER = 4000
