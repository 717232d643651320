import json
import logging
import math

import numpy as np
import pytest

import sarima_engine
from errors import DataError, ValidationError
from sarima_engine import (
    Forecast, GridSpec, SarimaModel, SarimaOrder, SarimaParams, constrain_coefficients, css_objective,
    css_residuals, evaluate, fit, forecast, grid_search, leaderboard_frame, model_from_dict, model_to_dict,
    params_valid, polynomial_roots_ok, psi_weights, simulate, train_test_split, unconstrain_coefficients,
)
from series_diagnostics import TransformRecord, apply_transforms

Z95 = 1.959963984540054


def model(order=SarimaOrder(), ar=(), ma=(), sar=(), sma=(), intercept=0.0, sigma2=1.0, transform=None):
    return SarimaModel(order, tuple(ar), tuple(ma), tuple(sar), tuple(sma), intercept, sigma2,
                       0.0, 0.0, 100, True, transform)


# -----------------------------
# orders / grids
# -----------------------------
def test_order_validation_and_text():
    order = SarimaOrder.parse("1,0,1,1,0,1,12")
    assert order == SarimaOrder(1, 0, 1, 1, 0, 1, 12)
    assert str(order) == "(1,0,1)(1,0,1)_12"
    assert SarimaOrder.parse("2,1,0,0,0,0").s == 0
    assert SarimaOrder(1, 0, 0, 0, 0, 0, 12).s == 0
    with pytest.raises(ValidationError):
        SarimaOrder(0, 2, 0, 0, 2, 0, 12)
    with pytest.raises(ValidationError):
        SarimaOrder(0, 0, 0, 1, 0, 0, 1)
    with pytest.raises(ValidationError):
        SarimaOrder.parse("1,0")


def test_default_grid_size():
    orders = GridSpec().orders()
    assert len(orders) == 18 + 18 * 17
    assert orders == sorted(set(orders))
    assert len(GridSpec(seasons=(7, 12)).orders()) == 18 + 2 * 18 * 17
    with pytest.raises(ValidationError):
        GridSpec(seasons=()).orders()


# -----------------------------
# reparameterization
# -----------------------------
def test_coefficient_transform_round_trip():
    rng = np.random.default_rng(0)
    for k in range(1, 5):
        x = rng.uniform(-2.0, 2.0, k)
        c = constrain_coefficients(x)
        np.testing.assert_allclose(unconstrain_coefficients(c), x, atol=1e-10)
        np.testing.assert_allclose(constrain_coefficients(unconstrain_coefficients(c)), c, atol=1e-10)


def test_constrained_coefficients_are_stationary():
    rng = np.random.default_rng(1)
    for _ in range(200):
        c = constrain_coefficients(rng.uniform(-3.0, 3.0, rng.integers(1, 5)))
        assert polynomial_roots_ok(c)
    assert not polynomial_roots_ok([1.2])
    with pytest.raises(ValidationError):
        unconstrain_coefficients([1.5])


# -----------------------------
# likelihood
# -----------------------------
def test_intercept_only_loglik_is_closed_form():
    y = np.random.default_rng(2).normal(5.0, 2.0, 150)
    expected = -0.5 * len(y) * (math.log(2 * math.pi * np.var(y)) + 1.0)
    assert css_objective([y.mean()], y, SarimaOrder()) == pytest.approx(expected, rel=1e-12)


def test_ar1_residual_variance_matches_innovations():
    order = SarimaOrder(1)
    params = SarimaParams(ar=(0.5,))
    y = simulate(order, params, 1.5, 5000, seed=3)
    e = css_residuals(params, y, order)
    assert len(e) == 4999
    assert np.mean(e ** 2) == pytest.approx(2.25, rel=0.05)


def test_non_finite_residuals_give_minus_infinity():
    assert css_objective([0.0], [1.0, math.nan, 2.0], SarimaOrder()) == -math.inf


# -----------------------------
# fit
# -----------------------------
def test_intercept_only_fit_is_the_sample_mean():
    y = np.random.default_rng(4).normal(3.0, 1.0, 40)
    m = fit(y, SarimaOrder())
    assert m.intercept == y.mean() and m.converged
    assert m.sigma2 == pytest.approx(np.var(y))
    assert m.aic == pytest.approx(-2 * m.loglik + 4)


def test_arma11_coefficients_are_recovered():
    order = SarimaOrder(1, 0, 1)
    # theta = 0.3 written in the 1 + theta*B form
    y = simulate(order, SarimaParams(ar=(0.6,), ma=(-0.3,), intercept=2.0), 1.0, 2000, seed=11)
    m = fit(y, order)
    assert m.converged
    assert m.ar[0] == pytest.approx(0.6, abs=0.1)
    assert m.ma[0] == pytest.approx(-0.3, abs=0.1)
    assert m.intercept == pytest.approx(2.0, abs=0.3)
    assert params_valid(m.params)
    assert m.aic == pytest.approx(-2 * m.loglik + 2 * 4)


def test_fit_rejects_short_series():
    with pytest.raises(DataError):
        fit(np.zeros(20), SarimaOrder(1, 0, 0, 1, 0, 0, 12))


def test_fit_returns_unconverged_model_when_every_start_diverges(monkeypatch, caplog):
    monkeypatch.setattr(sarima_engine, "css_objective", lambda *args: -math.inf)
    y = simulate(SarimaOrder(1), SarimaParams(ar=(0.5,)), 1.0, 200, seed=3)
    with caplog.at_level(logging.WARNING, logger="sarima_engine"):
        m = fit(y, SarimaOrder(1))
    assert not m.converged and m.aic == math.inf
    assert m.ar == (0.0,) and m.intercept == pytest.approx(np.mean(y))
    assert "diverged" in caplog.text
    with pytest.raises(DataError, match="no order converged"):
        grid_search(y, GridSpec.single(SarimaOrder(1)))


@pytest.mark.slow
@pytest.mark.parametrize("order,params", [
    (SarimaOrder(1, 0, 1), SarimaParams(ar=(0.6,), ma=(-0.3,))),
    (SarimaOrder(1, 0, 0, 1, 0, 0, 12), SarimaParams(ar=(0.5,), sar=(0.6,))),
])
def test_simulate_fit_round_trip_across_seeds(order, params):
    for seed in range(20):
        m = fit(simulate(order, params, 1.0, 2000, seed=seed), order)
        assert params_valid(m.params)
        for got, want in ((m.ar, params.ar), (m.ma, params.ma), (m.sar, params.sar), (m.sma, params.sma)):
            np.testing.assert_allclose(got, want, atol=0.1)


# -----------------------------
# grid search
# -----------------------------
SMALL_GRID = GridSpec(p=(0, 1), d=(0,), q=(0, 1), P=(0, 1), D=(0,), Q=(0, 1), seasons=(12,))


def seasonal_data(seed, n=600):
    order = SarimaOrder(1, 0, 1, 1, 0, 1, 12)
    params = SarimaParams(ar=(0.6,), ma=(-0.3,), sar=(0.5,), sma=(-0.4,), intercept=1.0)
    return order, simulate(order, params, 1.0, n, seed=seed)


def test_singleton_grid_returns_that_fit():
    order = SarimaOrder(1)
    y = simulate(order, SarimaParams(ar=(0.4,)), 1.0, 300, seed=5)
    best, board = grid_search(y, GridSpec.single(order))
    assert best.order == order and [o for o, _ in board] == [order]
    assert best == fit(y, order)


def test_grid_search_is_ordered_and_repeatable():
    _, y = seasonal_data(1, n=300)
    best, board = grid_search(y, SMALL_GRID)
    again, board_again = grid_search(y, SMALL_GRID, threads=4)
    assert board == board_again and best == again
    keys = [(aic, o.as_tuple()) for o, aic in board]
    assert keys == sorted(keys) and best.order == board[0][0]
    se = forecast(best, y, 24).se
    assert np.all(np.diff(se) >= -1e-12)
    frame = leaderboard_frame(board)
    assert list(frame.columns) == ["rank", "order", "p", "d", "q", "P", "D", "Q", "s", "aic"]
    assert frame["rank"].tolist() == list(range(1, len(board) + 1))


def test_grid_search_with_nothing_fittable():
    with pytest.raises(DataError, match="no order converged"):
        grid_search(np.arange(15.0), GridSpec.single(SarimaOrder(0, 0, 0, 1, 0, 0, 12)))


@pytest.mark.slow
def test_true_order_ranks_in_top_three():
    hits = 0
    for seed in range(100):
        order, y = seasonal_data(seed)
        _, board = grid_search(y, SMALL_GRID)
        hits += order in [o for o, _ in board[:3]]
    assert hits >= 60


@pytest.mark.slow
def test_best_model_beats_mean_forecast_on_seasonal_data():
    order = SarimaOrder(1, 0, 0, 1, 0, 0, 12)
    y = simulate(order, SarimaParams(ar=(0.5,), sar=(0.9,), intercept=10.0), 1.0, 360, seed=21)
    train, test = train_test_split(y, 0.7)
    best, _ = grid_search(train, SMALL_GRID)
    mean_model = fit(train, SarimaOrder())
    rmse = evaluate(forecast(best, train, len(test)), test)["rmse"]
    baseline = evaluate(forecast(mean_model, train, len(test)), test)["rmse"]
    assert rmse <= baseline


# -----------------------------
# forecast
# -----------------------------
def test_intercept_only_forecast_is_flat():
    fc = forecast(model(intercept=4.0, sigma2=2.25), np.ones(20), 5)
    np.testing.assert_allclose(fc.point, 4.0)
    np.testing.assert_allclose(fc.se, 1.5)
    np.testing.assert_allclose(fc.upper - fc.point, Z95 * 1.5)


def test_ar1_standard_errors_follow_psi_weights():
    m = model(SarimaOrder(1), ar=(0.5,))
    np.testing.assert_allclose(psi_weights(m, 3), [1.0, 0.5, 0.25])
    fc = forecast(m, np.random.default_rng(0).standard_normal(50), 3)
    np.testing.assert_allclose(fc.se, [1.0, math.sqrt(1.25), math.sqrt(1.3125)])
    assert np.all(fc.lower <= fc.point) and np.all(fc.point <= fc.upper)


def test_stationary_forecast_reverts_to_mean():
    m = model(SarimaOrder(1), ar=(0.5,), intercept=3.0)
    fc = forecast(m, np.array([0.0, 5.0, 10.0]), 200)
    assert fc.point[0] == pytest.approx(3.0 + 0.5 * 7.0)
    assert fc.point[-1] == pytest.approx(3.0, abs=1e-3)


def test_random_walk_forecast_integrates_differencing():
    m = model(SarimaOrder(0, 1, 0), intercept=0.5)
    fc = forecast(m, np.array([1.0, 2.0, 2.5, 4.0]), 3)
    np.testing.assert_allclose(fc.point, [4.5, 5.0, 5.5])
    np.testing.assert_allclose(fc.se, np.sqrt([1.0, 2.0, 3.0]))


def test_forecast_inverts_the_transform_record():
    record = TransformRecord(differences=[1], initial_values=[[0.0]])
    history = np.ones(59)                       # differences of 0..59
    m = model(intercept=1.0, transform=record)
    fc = forecast(m, history, 3)
    np.testing.assert_allclose(fc.point, [60.0, 61.0, 62.0])
    np.testing.assert_allclose(fc.se, np.sqrt([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(fc.point - fc.lower, Z95 * fc.se)
    np.testing.assert_allclose(fc.upper - fc.point, Z95 * fc.se)


def test_forecast_undoes_log_on_interval_endpoints():
    record = TransformRecord(log_applied=True, differences=[1], initial_values=[[math.log1p(9.0)]])
    m = model(intercept=0.0, sigma2=0.04, transform=record)
    fc = forecast(m, np.zeros(30), 4)
    np.testing.assert_allclose(fc.point, 9.0)
    np.testing.assert_allclose(fc.se, 0.2 * np.sqrt([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_allclose(np.log1p(fc.upper) - np.log1p(fc.point), Z95 * fc.se)
    np.testing.assert_allclose(np.log1p(fc.point) - np.log1p(fc.lower), Z95 * fc.se)


def test_forecast_rejects_bad_arguments():
    with pytest.raises(ValidationError):
        forecast(model(), np.ones(10), 0)
    with pytest.raises(ValidationError):
        forecast(model(), np.ones(10), 3, level=1.0)


# -----------------------------
# evaluate / simulate / split
# -----------------------------
def test_evaluate_metrics():
    fc = Forecast(2, np.zeros(2), np.array([1.0, 2.0]), np.array([-5.0, -1.0]), np.array([5.0, 1.0]), 0.95)
    metrics = evaluate(fc, [3.0, 4.0])
    assert metrics["rmse"] == pytest.approx(math.sqrt(12.5))
    assert metrics["mse"] == pytest.approx(12.5)
    assert metrics["mean_se"] == 1.5 and metrics["ci_coverage"] == 0.5
    perfect = evaluate(fc, fc.point)
    assert perfect["rmse"] == 0.0 and perfect["ci_coverage"] == 1.0
    with pytest.raises(DataError):
        evaluate(fc, [1.0])


def test_simulate_white_noise_is_the_seeded_stream():
    y = simulate(SarimaOrder(), SarimaParams(), 1.0, 100, seed=42)
    np.testing.assert_array_equal(y, np.random.default_rng(42).normal(0.0, 1.0, 100))
    np.testing.assert_array_equal(y, simulate(SarimaOrder(), SarimaParams(), 1.0, 100, seed=42))
    walk = simulate(SarimaOrder(0, 1, 0), SarimaParams(), 1.0, 100, seed=42)
    np.testing.assert_allclose(walk, np.cumsum(y))


def test_simulated_ar1_autocorrelation():
    y = simulate(SarimaOrder(1), SarimaParams(ar=(0.9,)), 1.0, 10000, seed=8)
    assert np.corrcoef(y[:-1], y[1:])[0, 1] == pytest.approx(0.9, abs=0.02)


def test_simulate_rejects_explosive_coefficients():
    with pytest.raises(ValidationError):
        simulate(SarimaOrder(1), SarimaParams(ar=(1.2,)), 1.0, 100)
    with pytest.raises(ValidationError):
        simulate(SarimaOrder(1), SarimaParams(), 1.0, 100)


def test_train_test_split():
    y = np.arange(100.0)
    train, test = train_test_split(y, 0.7)
    assert (len(train), len(test)) == (70, 30)
    np.testing.assert_array_equal(np.concatenate([train, test]), y)
    assert tuple(map(len, train_test_split(np.arange(10.0), 0.5))) == (5, 5)
    with pytest.raises(ValidationError):
        train_test_split(y, 1.0)
    with pytest.raises(DataError):
        train_test_split(np.arange(1.0), 0.5)


# -----------------------------
# model file
# -----------------------------
def test_model_json_round_trip():
    order = SarimaOrder(1, 0, 1)
    y = simulate(order, SarimaParams(ar=(0.5,), ma=(0.2,)), 1.0, 400, seed=6)
    m = fit(y, order, transform=TransformRecord(log_applied=True, differences=[1], initial_values=[[0.5]]))
    again = model_from_dict(json.loads(json.dumps(model_to_dict(m))))
    assert again == m
    assert again.transform == m.transform


def test_bad_model_file_is_a_validation_error():
    d = model_to_dict(model(SarimaOrder(1), ar=(0.5,)))
    d["coefficients"]["ar"] = []
    with pytest.raises(ValidationError):
        model_from_dict(d)
    with pytest.raises(ValidationError):
        model_from_dict({"order": {}})


@pytest.mark.slow
def test_interval_coverage_on_simulated_data():
    order = SarimaOrder(1)
    params = SarimaParams(ar=(0.5,), intercept=1.0)
    inside = total = 0
    for seed in range(200):
        y = simulate(order, params, 1.0, 310, seed=seed)
        m = fit(y[:300], order)
        fc = forecast(m, y[:300], 10)
        inside += int(np.sum((y[300:] >= fc.lower) & (y[300:] <= fc.upper)))
        total += 10
    assert inside / total == pytest.approx(0.95, abs=0.03)


@pytest.mark.slow
def test_interval_coverage_through_recorded_differencing():
    rng = np.random.default_rng(21)
    inside = 0
    for _ in range(200):
        walk = np.cumsum(rng.standard_normal(120))
        diffs, record = apply_transforms(walk[:100], log=False, lags=[1])
        m = fit(diffs, SarimaOrder(), transform=record)
        fc = forecast(m, diffs, 20)
        np.testing.assert_allclose(fc.upper - fc.point, Z95 * fc.se)
        inside += int(fc.lower[-1] <= walk[-1] <= fc.upper[-1])
    assert inside / 200 == pytest.approx(0.95, abs=0.04)
