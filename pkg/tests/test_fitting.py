import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anosov.errors import FitError
from anosov.fitting import (CountRecord, count_series, default_window, dumps,
                            fit_exponential_polynomial, float_repr, reliable_t_max, t_grid)


def synthetic(delta, beta, lo, hi, scale=100.0):
    T = t_grid(hi)
    T = T[T >= lo]
    N = np.round(scale * np.exp(delta * T) * T ** beta)
    return CountRecord(T, N)


def test_pure_exponential_rate():
    fit = fit_exponential_polynomial(synthetic(2.0, 0.0, 5.0, 15.0), fit_beta=False)
    assert fit.delta == pytest.approx(2.0, abs=1e-3)
    assert fit.beta_frozen and fit.beta == 0.0


def test_exponential_polynomial_fit():
    fit = fit_exponential_polynomial(synthetic(1.5, -0.5, 10.0, 30.0))
    assert fit.delta == pytest.approx(1.5, abs=1e-2)
    assert fit.beta == pytest.approx(-0.5, abs=1e-2)
    assert fit.n_points == 201


def test_frozen_beta_is_used():
    fit = fit_exponential_polynomial(synthetic(1.5, -0.5, 10.0, 30.0), beta=-0.5)
    assert fit.delta == pytest.approx(1.5, abs=1e-4) and fit.beta == -0.5


def test_degenerate_window_raises():
    rec = synthetic(1.0, 0.0, 1.0, 10.0)
    with pytest.raises(FitError):
        fit_exponential_polynomial(rec, window=(5.0, 5.3))
    with pytest.raises(FitError):
        fit_exponential_polynomial(rec, min_count=10**9)


def test_count_series_counts_inclusive():
    rec = count_series(np.array([0.0, 0.1, 0.1, 0.35, 2.0]), t_grid(0.4))
    assert rec.N.tolist() == [1, 3, 3, 3, 4]


def test_window_helpers():
    assert reliable_t_max(10, 2.0) == pytest.approx(16.0)
    assert default_window(10.0) == (4.0, 10.0)
    assert t_grid(0.35).tolist() == [0.0, 0.1, 0.2, 0.3]


def test_csv_and_json_round_trip(tmp_path):
    rec = count_series(np.array([0.05, 0.3]), t_grid(0.3))
    rec.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "T,N,logN" and lines[1] == "0.0,0,-inf"
    data = json.loads(dumps({"x": np.float64(0.1), "n": np.int64(3), "bad": np.inf}))
    assert data == {"x": 0.1, "n": 3, "bad": "inf"}


@settings(max_examples=100)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_repr_round_trips(x):
    assert float(float_repr(x)) == x


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(-1.5, 1.5))
def test_noiseless_fit_recovers_parameters(delta, beta):
    T = np.linspace(5.0, 20.0, 151)
    N = np.exp(delta * T + beta * np.log(T) + 8.0)
    fit = fit_exponential_polynomial(CountRecord(T, N))
    assert fit.delta == pytest.approx(delta, abs=1e-8)
    assert fit.beta == pytest.approx(beta, abs=1e-7)
