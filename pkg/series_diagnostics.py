# series_diagnostics.py
"""
Stationarity + seasonality toolkit
- Autocorrelation and ACF-peak season candidates
- Shifted log transform and lag-n differencing with an exact inverse
- Augmented Dickey-Fuller test (constant, no trend) with MacKinnon p-values / critical values
- Rolling mean / std and the iterative stationarize pipeline
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from statsmodels.regression.linear_model import OLS
from statsmodels.tsa.adfvalues import mackinnoncrit, mackinnonp
from statsmodels.tsa.stattools import acf as _sm_acf
from statsmodels.tsa.tsatools import lagmat

import config
from errors import DataError, ValidationError
from pest_aggregate import FrequencySeries

logger = logging.getLogger(__name__)

SeriesLike = Union[FrequencySeries, Sequence[float], np.ndarray]

# -----------------------------
# Data Structures
# -----------------------------
@dataclass(frozen=True)
class AdfResult:
    statistic: float
    p_value: float
    lags_used: int
    n_obs: int
    critical_values: Dict[str, float]
    log_transform_applied: bool = False
    ic_best: Optional[float] = None

    @property
    def stationary_at_5pct(self) -> bool:
        return self.statistic < self.critical_values["5%"]

    def to_dict(self) -> Dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "lags_used": self.lags_used,
            "n_obs": self.n_obs,
            "critical_values": dict(self.critical_values),
            "log_transform_applied": self.log_transform_applied,
            "stationary_at_5pct": self.stationary_at_5pct,
            "ic_best": self.ic_best,
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "AdfResult":
        return cls(float(d["statistic"]), float(d["p_value"]), int(d["lags_used"]), int(d["n_obs"]),
                   {k: float(v) for k, v in d["critical_values"].items()},
                   bool(d.get("log_transform_applied", False)), d.get("ic_best"))


@dataclass
class TransformRecord:
    log_applied: bool = False
    differences: List[int] = field(default_factory=list)
    initial_values: List[List[float]] = field(default_factory=list)

    @property
    def total_lag(self) -> int:
        return sum(self.differences)

    def integrate(self, values: SeriesLike) -> np.ndarray:
        """Undo the recorded differencing only; the result stays on the log scale if one was taken."""
        out = as_array(values)
        for lag, head in zip(reversed(self.differences), reversed(self.initial_values)):
            out = _undifference(out, lag, np.asarray(head, dtype=float))
        return out

    def invert(self, values: SeriesLike) -> np.ndarray:
        """Rebuild the untransformed series from its transformed form."""
        out = self.integrate(values)
        return np.expm1(out) if self.log_applied else out

    def to_dict(self) -> Dict:
        return {"log_applied": self.log_applied, "differences": list(self.differences),
                "initial_values": [list(map(float, v)) for v in self.initial_values]}

    @classmethod
    def from_dict(cls, d: Dict) -> "TransformRecord":
        return cls(bool(d.get("log_applied", False)), [int(x) for x in d.get("differences", [])],
                   [[float(v) for v in head] for head in d.get("initial_values", [])])


@dataclass(frozen=True)
class LagPolicy:
    kind: str = "aic"                 # "aic" | "fixed"
    k: Optional[int] = None           # fixed lag, or the aic search ceiling

    @classmethod
    def fixed(cls, k: int) -> "LagPolicy":
        if k < 0:
            raise ValidationError("ADF lag must be >= 0")
        return cls("fixed", k)

    @classmethod
    def aic_auto(cls, max_k: Optional[int] = None) -> "LagPolicy":
        return cls("aic", max_k)

    @classmethod
    def parse(cls, text: str) -> "LagPolicy":
        text = str(text).strip().lower()
        if text == "auto":
            return cls.aic_auto()
        try:
            return cls.fixed(int(text))
        except ValueError:
            raise ValidationError(f"--lags must be 'auto' or a non-negative integer, got {text!r}")

    def max_lag(self, n: int) -> int:
        if self.k is not None:
            return self.k
        return int(math.floor(12.0 * (n / 100.0) ** 0.25))


class NonStationaryError(DataError):
    def __init__(self, result: AdfResult, record: TransformRecord):
        super().__init__(f"series still non-stationary after {len(record.differences)} differencing passes "
                         f"(ADF {result.statistic:.3f}, p={result.p_value:.3f})")
        self.result = result
        self.record = record


# -----------------------------
# Helpers
# -----------------------------
def as_array(series: SeriesLike) -> np.ndarray:
    if isinstance(series, FrequencySeries):
        return series.array
    return np.asarray(series, dtype=float).copy()


def _rewrap(original: SeriesLike, values: np.ndarray, shift: int = 0, unit: Optional[str] = None):
    if not isinstance(original, FrequencySeries):
        return values
    start = original.dates[shift].date() if shift else original.start
    return original.with_values(values, start=start, unit=unit or original.unit)


def _undifference(values: np.ndarray, lag: int, head: np.ndarray) -> np.ndarray:
    out = np.empty(len(values) + lag)
    out[:lag] = head
    for t in range(lag, len(out)):
        out[t] = values[t - lag] + out[t - lag]
    return out


# -----------------------------
# Seasonality
# -----------------------------
def acf(series: SeriesLike, max_lag: int) -> np.ndarray:
    """Sample autocorrelation r[0..max_lag] (biased estimator, r[0] = 1)."""
    y = as_array(series)
    if max_lag < 1 or len(y) <= max_lag:
        raise DataError(f"need 1 <= max_lag < length, got max_lag={max_lag}, length={len(y)}")
    if np.var(y) == 0.0:
        raise DataError("autocorrelation undefined for a constant series")
    return _sm_acf(y, nlags=max_lag, adjusted=False, fft=False, missing="none")


def seasonal_candidates(series: SeriesLike, max_lag: int, top: int = 2) -> List[int]:
    """Lags where the ACF has a local maximum above the 2/sqrt(n) band, strongest first."""
    y = as_array(series)
    max_lag = min(max_lag, len(y) - 1)
    if max_lag < 3:
        return []
    r = acf(y, max_lag)
    band = 2.0 / math.sqrt(len(y))
    peaks = [k for k in range(2, max_lag) if r[k] > r[k - 1] and r[k] >= r[k + 1] and r[k] > band]
    peaks.sort(key=lambda k: (-r[k], k))
    return peaks[:top]


# -----------------------------
# Transforms
# -----------------------------
def log_transform(series: SeriesLike, record: Optional[TransformRecord] = None):
    y = as_array(series)
    if np.any(y < 0):
        raise DataError("log transform needs non-negative values")
    if record is not None:
        if record.differences:
            raise ValidationError("log transform must precede differencing")
        record.log_applied = True
    return _rewrap(series, np.log1p(y), unit="log1p")


def difference(series: SeriesLike, n: int = 1, record: Optional[TransformRecord] = None):
    """out[t] = y[t] - y[t-n]."""
    y = as_array(series)
    if n < 1:
        raise ValidationError("difference lag must be >= 1")
    if n >= len(y):
        raise DataError(f"difference lag {n} needs a series longer than {len(y)}")
    if record is not None:
        record.differences.append(n)
        record.initial_values.append(y[:n].tolist())
    return _rewrap(series, y[n:] - y[:-n], shift=n)


def apply_transforms(series: SeriesLike, log: bool, lags: Sequence[int]):
    record = TransformRecord()
    out = log_transform(series, record) if log else series
    for n in lags:
        out = difference(out, n, record)
    return out, record


def invert_transforms(series: SeriesLike, record: TransformRecord) -> np.ndarray:
    return record.invert(series)


def rolling_stats(series: SeriesLike, window: int) -> Tuple[np.ndarray, np.ndarray]:
    """Trailing-window mean and population std, length - window + 1 entries each."""
    y = pd.Series(as_array(series))
    if window < 1 or window > len(y):
        raise DataError(f"window {window} must be in 1..{len(y)}")
    rolled = y.rolling(window)
    means = rolled.mean().iloc[window - 1:].to_numpy()
    stds = rolled.std(ddof=0).iloc[window - 1:].to_numpy()
    return means, stds


# -----------------------------
# Dickey-Fuller
# -----------------------------
def _adf_regression(y: np.ndarray, dy: np.ndarray, k: int, nobs: int):
    level = y[-nobs - 1:-1]
    cols = [np.ones(nobs), level]
    if k:
        # column j holds dy lagged j+1
        cols.append(lagmat(dy, k, trim="both", original="ex")[-nobs:])
    X = np.column_stack(cols)
    try:
        singular = np.linalg.matrix_rank(X) < X.shape[1]
    except np.linalg.LinAlgError as e:
        raise DataError(f"ADF regression matrix is degenerate: {e}")
    if singular:
        raise DataError("singular ADF regression matrix")
    return OLS(dy[-nobs:], X).fit()


def adf_test(series: SeriesLike, lag_policy: Optional[LagPolicy] = None,
             log_transform_applied: bool = False) -> AdfResult:
    """Dickey-Fuller t-test on dy_t = a + g*y_{t-1} + sum b_i*dy_{t-i} + e_t."""
    policy = lag_policy or LagPolicy.aic_auto()
    y = as_array(series)
    n = len(y)
    max_k = policy.max_lag(n)
    if n < 20 + max_k:
        raise DataError(f"ADF needs at least {20 + max_k} observations, got {n}")
    if not np.all(np.isfinite(y)):
        raise DataError("ADF input contains NaN or inf")
    dy = np.diff(y)

    ic_best = None
    if policy.kind == "aic":
        # common sample so the information criteria are comparable
        nobs = len(dy) - max_k
        scores = [(_adf_regression(y, dy, k, nobs).aic, k) for k in range(max_k + 1)]
        ic_best, k = min(scores)
    else:
        k = max_k

    res = _adf_regression(y, dy, k, len(dy) - k)
    stat = float(res.tvalues[1])
    if not np.isfinite(stat):
        raise DataError("ADF statistic is not finite (perfect fit)")
    nobs = int(res.nobs)
    crit = mackinnoncrit(N=1, regression="c", nobs=nobs)
    return AdfResult(
        statistic=stat,
        p_value=float(mackinnonp(stat, regression="c", N=1)),
        lags_used=k,
        n_obs=nobs,
        critical_values={"1%": float(crit[0]), "5%": float(crit[1]), "10%": float(crit[2])},
        log_transform_applied=log_transform_applied,
        ic_best=None if ic_best is None else float(ic_best),
    )


def stationarize(series: SeriesLike, lag_policy: Optional[LagPolicy] = None,
                 max_passes: int = config.MAX_DIFF_PASSES):
    """
    ADF on the raw series; if it keeps a unit root, log (counts only) and retest,
    then first-difference up to max_passes times, stopping at the first stationary result.
    """
    y = as_array(series)
    if len(y) < 30:
        raise DataError(f"stationarize needs at least 30 observations, got {len(y)}")
    record = TransformRecord()
    current = series
    result = adf_test(current, lag_policy)
    if result.stationary_at_5pct:
        return current, record, result

    if np.all(y >= 0):
        current = log_transform(current, record)
        result = adf_test(current, lag_policy, log_transform_applied=True)
        if result.stationary_at_5pct:
            logger.info("Stationary after log transform")
            return current, record, result

    for _ in range(max_passes):
        current = difference(current, 1, record)
        result = adf_test(current, lag_policy, log_transform_applied=record.log_applied)
        if result.stationary_at_5pct:
            logger.info(f"Stationary after {len(record.differences)} difference(s), log={record.log_applied}")
            return current, record, result
    raise NonStationaryError(result, record)
