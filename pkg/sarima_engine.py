# sarima_engine.py
"""
Seasonal ARIMA engine
Features:
- Conditional-sum-of-squares Gaussian likelihood with sigma^2 profiled out
- Stationary / invertible polynomials by construction (partial-autocorrelation reparameterization)
- Nelder-Mead fits from three fixed starts, AIC grid search over orders
- Forecasts with psi-weight standard errors and per-step intervals
- Seeded process simulator, error metrics, chronological train/test split

Polynomials follow the Box-Jenkins sign convention:
    (1 - sum phi_i B^i)(1 - sum Phi_j B^js) (w_t - mu) = (1 - sum theta_i B^i)(1 - sum Theta_j B^js) e_t
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.signal import lfilter
from scipy.stats import norm

import config
from errors import DataError, ValidationError
from pest_aggregate import FrequencySeries
from series_diagnostics import SeriesLike, TransformRecord, as_array

logger = logging.getLogger(__name__)

_PACF_BOUND = 1.0 - 1e-6
ORDER_FIELDS = ("p", "d", "q", "P", "D", "Q", "s")

# -----------------------------
# Data Structures
# -----------------------------
@dataclass(frozen=True, order=True)
class SarimaOrder:
    p: int = 0
    d: int = 0
    q: int = 0
    P: int = 0
    D: int = 0
    Q: int = 0
    s: int = 0

    def __post_init__(self):
        values = self.as_tuple()
        if any(not isinstance(v, int) or v < 0 for v in values):
            raise ValidationError(f"orders must be non-negative integers, got {values}")
        if self.d + self.D > 3:
            raise ValidationError(f"d + D must be <= 3, got {self.d} + {self.D}")
        if self.is_seasonal:
            if self.s < 2:
                raise ValidationError(f"seasonal period must be >= 2, got {self.s}")
        else:
            object.__setattr__(self, "s", 0)

    @property
    def is_seasonal(self) -> bool:
        return bool(self.P or self.D or self.Q)

    @property
    def n_arma(self) -> int:
        return self.p + self.q + self.P + self.Q

    @property
    def n_conditioning(self) -> int:
        """Leading residuals that depend on zero pre-sample values."""
        return self.p + self.P * self.s

    @property
    def min_length(self) -> int:
        s = self.s
        return 10 + self.p + self.q + self.P * s + self.Q * s + self.d + self.D * s

    def as_tuple(self) -> Tuple[int, ...]:
        return (self.p, self.d, self.q, self.P, self.D, self.Q, self.s)

    def to_dict(self) -> Dict[str, int]:
        return dict(zip(ORDER_FIELDS, self.as_tuple()))

    @classmethod
    def parse(cls, text: str) -> "SarimaOrder":
        """'1,0,1,1,0,1,12' -> (1,0,1)(1,0,1)_12; six numbers mean a non-seasonal period."""
        try:
            values = [int(v) for v in str(text).replace(" ", "").split(",") if v != ""]
        except ValueError:
            raise ValidationError(f"bad order {text!r}; expected p,d,q,P,D,Q,s")
        if len(values) == 6:
            values.append(0)
        if len(values) != 7:
            raise ValidationError(f"bad order {text!r}; expected p,d,q,P,D,Q,s")
        return cls(*values)

    def __str__(self):
        base = f"({self.p},{self.d},{self.q})"
        return base + (f"({self.P},{self.D},{self.Q})_{self.s}" if self.is_seasonal else "")


@dataclass(frozen=True)
class SarimaParams:
    ar: Tuple[float, ...] = ()
    ma: Tuple[float, ...] = ()
    sar: Tuple[float, ...] = ()
    sma: Tuple[float, ...] = ()
    intercept: float = 0.0

    def __post_init__(self):
        for name in ("ar", "ma", "sar", "sma"):
            object.__setattr__(self, name, tuple(float(c) for c in getattr(self, name)))
        object.__setattr__(self, "intercept", float(self.intercept))

    def check(self, order: SarimaOrder):
        lengths = (len(self.ar), len(self.ma), len(self.sar), len(self.sma))
        if lengths != (order.p, order.q, order.P, order.Q):
            raise ValidationError(f"coefficient counts {lengths} do not match order {order}")


@dataclass(frozen=True)
class OptimizerConfig:
    fatol: float = config.OPTIMIZER_FATOL
    xatol: float = config.OPTIMIZER_XATOL
    maxiter: int = config.OPTIMIZER_MAXITER


@dataclass(frozen=True)
class SarimaModel:
    order: SarimaOrder
    ar: Tuple[float, ...]
    ma: Tuple[float, ...]
    sar: Tuple[float, ...]
    sma: Tuple[float, ...]
    intercept: float
    sigma2: float
    loglik: float
    aic: float
    n_fit: int
    converged: bool
    transform: Optional[TransformRecord] = field(default=None, compare=False)

    @property
    def params(self) -> SarimaParams:
        return SarimaParams(self.ar, self.ma, self.sar, self.sma, self.intercept)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


@dataclass(frozen=True)
class Forecast:
    horizon: int
    point: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float

    def to_frame(self, dates: Optional[Sequence] = None) -> pd.DataFrame:
        df = pd.DataFrame({
            "step": np.arange(1, self.horizon + 1),
            "date": [pd.Timestamp(d).date().isoformat() for d in dates] if dates is not None else "",
            "point": self.point,
            "se": self.se,
            "lower": self.lower,
            "upper": self.upper,
        })
        return df


FORECAST_COLUMNS = ("point", "se", "lower", "upper")


def forecast_from_frame(df: pd.DataFrame, level: float = config.INTERVAL_LEVEL) -> Forecast:
    missing = [c for c in FORECAST_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"forecast table lacks columns: {', '.join(missing)}")
    try:
        point, se, lower, upper = (df[c].to_numpy(float) for c in FORECAST_COLUMNS)
    except ValueError as e:
        raise DataError(f"forecast table has non-numeric values: {e}")
    return Forecast(len(df), point, se, lower, upper, level)


@dataclass(frozen=True)
class GridSpec:
    p: Tuple[int, ...] = config.GRID_P
    d: Tuple[int, ...] = config.GRID_D
    q: Tuple[int, ...] = config.GRID_Q
    P: Tuple[int, ...] = config.GRID_SP
    D: Tuple[int, ...] = config.GRID_SD
    Q: Tuple[int, ...] = config.GRID_SQ
    seasons: Tuple[int, ...] = config.DEFAULT_SEASONS

    @classmethod
    def single(cls, order: SarimaOrder) -> "GridSpec":
        return cls((order.p,), (order.d,), (order.q,), (order.P,), (order.D,), (order.Q,),
                   (order.s,) if order.is_seasonal else (2,))

    def orders(self) -> List[SarimaOrder]:
        if not self.seasons:
            raise ValidationError("grid needs at least one seasonal period")
        out = set()
        for p, d, q, P, D, Q in itertools.product(self.p, self.d, self.q, self.P, self.D, self.Q):
            if d + D > 3:
                continue
            for s in (self.seasons if (P or D or Q) else (0,)):
                out.add(SarimaOrder(p, d, q, P, D, Q, s))
        return sorted(out)


# -----------------------------
# Polynomials
# -----------------------------
def constrain_coefficients(x: Sequence[float]) -> np.ndarray:
    """Unconstrained reals -> coefficients of a stationary 1 - sum c_i B^i (Durbin-Levinson on tanh(x))."""
    r = np.clip(np.tanh(np.asarray(x, dtype=float)), -_PACF_BOUND, _PACF_BOUND)
    c = np.zeros(len(r))
    for k in range(len(r)):
        prev = c[:k].copy()
        c[:k] = prev - r[k] * prev[::-1]
        c[k] = r[k]
    return c


def unconstrain_coefficients(coefs: Sequence[float]) -> np.ndarray:
    c = np.asarray(coefs, dtype=float).copy()
    r = np.zeros(len(c))
    for k in range(len(c) - 1, -1, -1):
        r[k] = c[k]
        if abs(r[k]) >= 1.0:
            raise ValidationError(f"coefficients {list(coefs)} are not stationary / invertible")
        if k:
            c[:k] = (c[:k] + r[k] * c[:k][::-1]) / (1.0 - r[k] ** 2)
    return np.arctanh(r)


def lag_polynomial(coefs: Sequence[float], step: int = 1) -> np.ndarray:
    """[1, -c_1 at lag step, -c_2 at lag 2*step, ...]"""
    poly = np.zeros(len(coefs) * step + 1)
    poly[0] = 1.0
    for i, c in enumerate(coefs, start=1):
        poly[i * step] = -c
    return poly


def ar_polynomial(params: SarimaParams, s: int) -> np.ndarray:
    return np.convolve(lag_polynomial(params.ar), lag_polynomial(params.sar, max(s, 1)))


def ma_polynomial(params: SarimaParams, s: int) -> np.ndarray:
    return np.convolve(lag_polynomial(params.ma), lag_polynomial(params.sma, max(s, 1)))


def differencing_polynomial(order: SarimaOrder) -> np.ndarray:
    poly = np.array([1.0])
    for _ in range(order.d):
        poly = np.convolve(poly, [1.0, -1.0])
    for _ in range(order.D):
        poly = np.convolve(poly, lag_polynomial([1.0], order.s))
    return poly


def polynomial_roots_ok(coefs: Sequence[float]) -> bool:
    """True if 1 - sum c_i z^i has every root strictly outside the unit circle."""
    poly = np.trim_zeros(lag_polynomial(coefs), "b")
    if len(poly) <= 1:
        return True
    return bool(np.all(np.abs(np.roots(poly[::-1])) > 1.0))


def params_valid(params: SarimaParams) -> bool:
    return all(polynomial_roots_ok(c) for c in (params.ar, params.ma, params.sar, params.sma))


def _apply_differencing(y: np.ndarray, order: SarimaOrder) -> np.ndarray:
    for _ in range(order.d):
        y = y[1:] - y[:-1]
    for _ in range(order.D):
        y = y[order.s:] - y[:-order.s]
    return y


# -----------------------------
# Likelihood
# -----------------------------
def _split_vector(x: np.ndarray, order: SarimaOrder) -> SarimaParams:
    bounds = np.cumsum([0, order.p, order.q, order.P, order.Q])
    blocks = [constrain_coefficients(x[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
    return SarimaParams(*blocks, intercept=x[-1])


def _pack_vector(params: SarimaParams) -> np.ndarray:
    parts = [unconstrain_coefficients(c) for c in (params.ar, params.ma, params.sar, params.sma)]
    return np.concatenate(parts + [np.array([params.intercept])])


def css_residuals(params: SarimaParams, w: np.ndarray, order: SarimaOrder) -> np.ndarray:
    """Residuals of the differenced series, conditioning residuals dropped."""
    a = ar_polynomial(params, order.s)
    m = ma_polynomial(params, order.s)
    e = lfilter(a, m, np.asarray(w, dtype=float) - params.intercept)
    return e[order.n_conditioning:]


def _gaussian_loglik(e: np.ndarray) -> Tuple[float, float]:
    n = len(e)
    sigma2 = float(np.dot(e, e)) / n
    if not np.isfinite(sigma2) or sigma2 <= 0.0:
        return -math.inf, sigma2
    return -0.5 * n * (math.log(2.0 * math.pi * sigma2) + 1.0), sigma2


def css_objective(x: Sequence[float], series: SeriesLike, order: SarimaOrder) -> float:
    """Profiled conditional log-likelihood at unconstrained params x (-inf when residuals blow up)."""
    w = as_array(series)
    params = _split_vector(np.asarray(x, dtype=float), order)
    with np.errstate(all="ignore"):
        e = css_residuals(params, w, order)
        if len(e) == 0 or not np.all(np.isfinite(e)):
            return -math.inf
        return _gaussian_loglik(e)[0]


# -----------------------------
# Fitting
# -----------------------------
def _starts(order: SarimaOrder, mu: float) -> List[np.ndarray]:
    def vec(ar, ma):
        return np.concatenate([np.full(order.p, ar), np.full(order.q, ma),
                               np.full(order.P, ar), np.full(order.Q, ma), [mu]])
    starts = []
    for ar, ma in ((0.0, 0.0), (math.atanh(0.1), 0.0), (0.0, math.atanh(-0.1))):
        x = vec(ar, ma)
        if not any(np.array_equal(x, other) for other in starts):
            starts.append(x)
    return starts


def _simplex(x0: np.ndarray, mu_step: float) -> np.ndarray:
    steps = np.full(len(x0), 0.3)
    steps[-1] = mu_step
    return np.vstack([x0] + [x0 + np.eye(len(x0))[i] * steps[i] for i in range(len(x0))])


def _build_model(order: SarimaOrder, params: SarimaParams, w: np.ndarray, converged: bool,
                 transform: Optional[TransformRecord]) -> SarimaModel:
    e = css_residuals(params, w, order)
    loglik, sigma2 = _gaussian_loglik(e)
    if not np.isfinite(loglik):
        raise DataError(f"degenerate fit for {order}: residual variance {sigma2}")
    k = order.n_arma + 2
    return SarimaModel(order, params.ar, params.ma, params.sar, params.sma, params.intercept,
                       sigma2, loglik, -2.0 * loglik + 2.0 * k, len(e), converged, transform)


def fit(series: SeriesLike, order: SarimaOrder, optimizer: Optional[OptimizerConfig] = None,
        transform: Optional[TransformRecord] = None) -> SarimaModel:
    optimizer = optimizer or OptimizerConfig()
    y = as_array(series)
    if len(y) < order.min_length:
        raise DataError(f"order {order} needs at least {order.min_length} observations, got {len(y)}")
    w = _apply_differencing(y, order)
    mu = float(np.mean(w))

    if order.n_arma == 0:
        return _build_model(order, SarimaParams(intercept=mu), w, True, transform)

    def negloglik(x):
        return -css_objective(x, w, order)

    mu_step = 0.5 * float(np.std(w)) or 0.1
    results = []
    for x0 in _starts(order, mu):
        res = minimize(negloglik, x0, method="Nelder-Mead",
                       options={"fatol": optimizer.fatol, "xatol": optimizer.xatol,
                                "maxiter": optimizer.maxiter, "maxfev": 2 * optimizer.maxiter,
                                "initial_simplex": _simplex(x0, mu_step)})
        if np.isfinite(res.fun):
            results.append(res)
    if not results:
        logger.warning(f"Every start diverged for {order}; returning it unconverged")
        start = _split_vector(_starts(order, mu)[0], order)
        return SarimaModel(order, start.ar, start.ma, start.sar, start.sma, start.intercept,
                           math.nan, -math.inf, math.inf, len(w), False, transform)

    finished = [r for r in results if r.success]
    best = min(finished or results, key=lambda r: r.fun)
    if not best.success:
        logger.warning(f"Fit of {order} did not converge: {best.message}")
    return _build_model(order, _split_vector(best.x, order), w, bool(best.success), transform)


def _fit_or_reason(series, order, optimizer):
    try:
        return fit(series, order, optimizer), None
    except DataError as e:
        return None, str(e)


def grid_search(series: SeriesLike, grid: Optional[GridSpec] = None,
                optimizer: Optional[OptimizerConfig] = None,
                threads: int = 1) -> Tuple[SarimaModel, List[Tuple[SarimaOrder, float]]]:
    """Fit every order in the grid and rank converged fits by (aic, order)."""
    grid = grid or GridSpec()
    y = as_array(series)
    orders = grid.orders()
    threads = max(1, min(threads, len(orders)))
    logger.info(f"Grid search over {len(orders)} orders with {threads} thread(s)")

    if threads == 1:
        outcomes = [_fit_or_reason(y, o, optimizer) for o in orders]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_fit_or_reason, [y] * len(orders), orders, [optimizer] * len(orders)))

    fitted, failures = [], {}
    for order, (model, reason) in zip(orders, outcomes):
        if model is None:
            failures[str(order)] = reason
        elif not model.converged:
            failures[str(order)] = "did not converge"
        else:
            fitted.append(model)
    if not fitted:
        log = "; ".join(f"{o}: {r}" for o, r in failures.items())
        raise DataError(f"no order converged ({log})")

    fitted.sort(key=lambda m: (m.aic, m.order.as_tuple()))
    best = fitted[0]
    logger.info(f"Selected {best.order} AIC={best.aic:.3f} ({len(fitted)} converged, {len(failures)} skipped)")
    return best, [(m.order, m.aic) for m in fitted]


def leaderboard_frame(leaderboard: Sequence[Tuple[SarimaOrder, float]]) -> pd.DataFrame:
    rows = [{"rank": i, "order": str(o), **o.to_dict(), "aic": aic} for i, (o, aic) in enumerate(leaderboard, 1)]
    return pd.DataFrame(rows, columns=["rank", "order", *ORDER_FIELDS, "aic"])


# -----------------------------
# Forecasting
# -----------------------------
def psi_weights(model: SarimaModel, n: int, extra_differences: Sequence[int] = ()) -> np.ndarray:
    """First n coefficients of the MA(inf) expansion, differencing included."""
    params, order = model.params, model.order
    denom = np.convolve(ar_polynomial(params, order.s), differencing_polynomial(order))
    for lag in extra_differences:
        denom = np.convolve(denom, lag_polynomial([1.0], lag))
    impulse = np.zeros(n)
    impulse[0] = 1.0
    return lfilter(ma_polynomial(params, order.s), denom, impulse)


def _integrate_forward(history: np.ndarray, future_w: np.ndarray, delta: np.ndarray) -> np.ndarray:
    y = np.concatenate([history, np.zeros(len(future_w))])
    t0 = len(history)
    for j, wv in enumerate(future_w):
        t = t0 + j
        y[t] = wv - sum(delta[k] * y[t - k] for k in range(1, len(delta)))
    return y[t0:]


def forecast(model: SarimaModel, history: SeriesLike, horizon: int,
             level: float = config.INTERVAL_LEVEL,
             transform: Optional[TransformRecord] = None) -> Forecast:
    """
    Point forecasts iterate the ARMA recursion with future shocks at zero, then
    undo the model's differencing. With a TransformRecord (default: the one stored
    on the model) the recorded differences are folded into the psi-weights, so se
    and the interval are those of the undifferenced series; a recorded log is
    undone last, on the point and each interval endpoint, leaving se on the log scale.
    """
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    if not 0.0 < level < 1.0:
        raise ValidationError(f"interval level must be in (0, 1), got {level}")
    params, order = model.params, model.order
    y = as_array(history)
    w = _apply_differencing(y, order)
    if len(w) == 0:
        raise DataError("history is too short for the model's differencing")

    a = ar_polynomial(params, order.s)
    m = ma_polynomial(params, order.s)
    mu = params.intercept
    t0 = len(w)
    z = np.concatenate([w - mu, np.zeros(horizon)])
    e = np.concatenate([lfilter(a, m, w - mu), np.zeros(horizon)])
    for t in range(t0, t0 + horizon):
        acc = 0.0
        for k in range(1, min(len(a), t + 1)):
            acc -= a[k] * z[t - k]
        for k in range(1, min(len(m), t + 1)):
            acc += m[k] * e[t - k]
        z[t] = acc
    point = _integrate_forward(y, z[t0:] + mu, differencing_polynomial(order))

    transform = transform if transform is not None else model.transform
    extra = transform.differences if transform is not None else ()
    psi = psi_weights(model, horizon, extra)
    se = model.sigma * np.sqrt(np.cumsum(psi ** 2))
    if transform is not None:
        point = transform.integrate(np.concatenate([y, point]))[-horizon:]
    half = float(norm.ppf(0.5 * (1.0 + level))) * se
    lower, upper = point - half, point + half
    if transform is not None and transform.log_applied:
        point, lower, upper = np.expm1(point), np.expm1(lower), np.expm1(upper)
    return Forecast(horizon, point, se, lower, upper, level)


# -----------------------------
# Evaluation / Simulation
# -----------------------------
def evaluate(fc: Forecast, actual: SeriesLike) -> Dict[str, float]:
    a = as_array(actual)
    if len(a) != fc.horizon:
        raise DataError(f"forecast has {fc.horizon} steps but {len(a)} actual values were given")
    err = fc.point - a
    mse = float(np.mean(err ** 2))
    inside = (a >= fc.lower) & (a <= fc.upper)
    return {"rmse": math.sqrt(mse), "mse": mse, "mean_se": float(np.mean(fc.se)),
            "ci_coverage": float(np.mean(inside))}


def simulate(order: SarimaOrder, params: SarimaParams, sigma: float, n: int,
             seed: int = config.SEED) -> np.ndarray:
    """Seeded SARIMA path: ARMA recursion after burn-in, then seasonal and trend integration."""
    params.check(order)
    if n < 1:
        raise ValidationError("simulate needs n >= 1")
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    if not params_valid(params):
        raise ValidationError("coefficients are explosive or non-invertible")
    burn = 10 * (order.s + order.p + order.q)
    eps = np.random.default_rng(seed).normal(0.0, sigma, n + burn)
    x = lfilter(ma_polynomial(params, order.s), ar_polynomial(params, order.s), eps)[burn:]
    x = x + params.intercept
    delta = differencing_polynomial(order)
    if len(delta) > 1:
        x = lfilter([1.0], delta, x)
    return x


def train_test_split(series: SeriesLike, train_fraction: float = config.TRAIN_FRACTION):
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train fraction must be in (0, 1), got {train_fraction}")
    y = as_array(series)
    k = int(math.floor(len(y) * train_fraction))
    if k < 1 or k >= len(y):
        raise DataError(f"degenerate split of {len(y)} points at fraction {train_fraction}")
    if isinstance(series, FrequencySeries):
        return (series.with_values(y[:k]),
                series.with_values(y[k:], start=series.dates[k].date()))
    return y[:k], y[k:]


# -----------------------------
# Model JSON
# -----------------------------
def model_to_dict(model: SarimaModel) -> Dict:
    return {
        "version": config.ARTIFACT_VERSION,
        "order": model.order.to_dict(),
        "coefficients": {"ar": list(model.ar), "ma": list(model.ma),
                         "sar": list(model.sar), "sma": list(model.sma)},
        "intercept": model.intercept,
        "sigma2": model.sigma2,
        "loglik": model.loglik,
        "aic": model.aic,
        "n_fit": model.n_fit,
        "converged": model.converged,
        "transform": model.transform.to_dict() if model.transform else None,
    }


def model_from_dict(d: Dict) -> SarimaModel:
    try:
        order = SarimaOrder(**{k: int(v) for k, v in d["order"].items()})
        coefs = d["coefficients"]
        params = SarimaParams(coefs.get("ar", ()), coefs.get("ma", ()), coefs.get("sar", ()),
                              coefs.get("sma", ()), d["intercept"])
        params.check(order)
        transform = TransformRecord.from_dict(d["transform"]) if d.get("transform") else None
        return SarimaModel(order, params.ar, params.ma, params.sar, params.sma, params.intercept,
                           float(d["sigma2"]), float(d["loglik"]), float(d["aic"]),
                           int(d["n_fit"]), bool(d["converged"]), transform)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise
        raise ValidationError(f"bad model file: {e}")
