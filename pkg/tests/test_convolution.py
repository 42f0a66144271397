import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from decoherence.convolution import (
    ConvolutionParams,
    convolution_numeric,
    convolution_value,
    decoherence_time,
    default_window,
    exponential_model,
    fit_all,
    fit_model,
    gaussian_model,
    model_curve,
    scaling_exponent,
)
from decoherence.errors import FitError, NotCrossedError

# 30-digit adaptive quadrature of the defining integral
FROZEN = [
    (1.0, 1.0, 0.5, 0.96117602500467643),
    (1.0, 1.0, 2.0, 0.58369245312184685),
    (0.1, 2.0, 3.0, 0.87822418984265032),
    (10.0, 0.5, 1.0, 0.8846051433830262),
    (10.0, 0.5, 8.0, 0.00039540510457993476),
]

gammas = st.floats(1e-3, 50.0)
sigmas = st.floats(1e-2, 20.0)


@pytest.mark.parametrize("g,s,t,expected", FROZEN)
def test_frozen_values(g, s, t, expected):
    assert convolution_value(g, s, t) == pytest.approx(expected, rel=1e-13)
    assert convolution_numeric(g, s, t) == pytest.approx(expected, rel=1e-10)


def test_normalized_at_origin():
    assert convolution_value(3.0, 0.7, 0.0) == pytest.approx(1.0, rel=1e-15)


def test_gamma_zero_is_flat():
    # a flat exponential factor convolved with any Gaussian stays flat
    t = np.linspace(0, 5, 50)
    np.testing.assert_allclose(convolution_value(0.0, 1.3, t), 1.0, rtol=1e-14)
    assert convolution_numeric(0.0, 1.3, 2.0) == 1.0


def test_invalid_arguments():
    for args in [(1.0, 0.0, 1.0), (1.0, -1.0, 1.0), (-1.0, 1.0, 1.0)]:
        with pytest.raises(ValueError):
            convolution_value(*args)
    with pytest.raises(ValueError):
        convolution_numeric(1.0, 0.0, 1.0)


def test_vectorized_and_scalar():
    out = convolution_value(np.array([0.1, 1.0, 10.0])[:, None], 2.0, np.linspace(0, 10, 7))
    assert out.shape == (3, 7)
    assert isinstance(convolution_value(1.0, 1.0, 1.0), float)


def test_no_overflow_extreme_arguments():
    vals = convolution_value(1e4, 1e-3, np.array([0.0, 1e-3, 1.0, 1e3, 1e6]))
    assert np.all(np.isfinite(vals)) and np.all(vals >= 0)
    vals = convolution_value(1e-6, 1e3, np.array([0.0, 1e-3, 1.0, 50.0]))
    assert np.all(np.isfinite(vals))


@settings(max_examples=60, deadline=None)
@given(gammas, sigmas, st.floats(0, 30))
def test_even_in_time(g, s, t):
    assert convolution_value(g, s, -t) == convolution_value(g, s, t)


@settings(max_examples=60, deadline=None)
@given(gammas, sigmas)
def test_monotone_decreasing_and_bounded(g, s):
    t = np.linspace(0, 10 / min(g, s), 400)
    c = convolution_value(g, s, t)
    assert np.all(c <= 1 + 1e-14) and np.all(c >= 0)
    assert np.all(np.diff(c) <= 1e-14)


@settings(max_examples=60, deadline=None)
@given(gammas, sigmas, st.floats(1e-3, 30))
def test_bounded_by_each_factor_tail(g, s, t):
    # convolution decays no faster than either pure factor would along its own slowest tail
    c = convolution_value(g, s, t)
    assert c >= min(exponential_model(t, g), gaussian_model(t, s)) - 1e-12


@settings(max_examples=40, deadline=None)
@given(gammas, sigmas, st.floats(0, 10))
def test_closed_form_matches_quadrature(g, s, t):
    ref = convolution_numeric(g, s, t)
    assume(ref > 1e-250)
    assert convolution_value(g, s, t) == pytest.approx(ref, rel=1e-9)


def test_limits_ordering():
    t = np.linspace(0, 3, 61)
    np.testing.assert_allclose(convolution_value(100.0, 1.0, t), gaussian_model(t, 1.0), rtol=0.02)
    t = np.linspace(5, 500, 200)
    np.testing.assert_allclose(convolution_value(0.01, 1.0, t), exponential_model(t, 0.01), rtol=0.01)


def test_model_curve_dispatch():
    p = ConvolutionParams(gamma=0.4, sigma=1.2, amplitude=0.5)
    t = np.linspace(0, 4, 9)
    np.testing.assert_allclose(model_curve("exponential", p, t), 0.5 * np.exp(-0.2 * t))
    np.testing.assert_allclose(model_curve("gaussian", p, t), 0.5 * np.exp(-0.72 * t * t))
    np.testing.assert_allclose(model_curve("convolution", p, t), 0.5 * convolution_value(0.4, 1.2, t))
    with pytest.raises(ValueError):
        model_curve("lorentz", p, t)


@pytest.mark.parametrize("kind,params", [
    ("exponential", ConvolutionParams(gamma=0.8)),
    ("gaussian", ConvolutionParams(sigma=1.7)),
    ("convolution", ConvolutionParams(gamma=0.6, sigma=0.9)),
])
def test_fit_recovers_synthetic(kind, params):
    t = np.linspace(0, 12, 300)
    fit = fit_model(t, model_curve(kind, params, t), kind)
    for name in ("gamma", "sigma"):
        assert getattr(fit.params, name) == pytest.approx(getattr(params, name), rel=1e-6, abs=1e-9)
    assert fit.r_squared > 1 - 1e-10 and fit.rms_residual < 1e-8


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.05, 5.0))
def test_convolution_fit_never_worse_than_single_models(g, s):
    t = np.linspace(0, 8 / min(g, s), 200)
    y = convolution_value(g, s, t) + 0.002 * np.cos(7.3 * t)
    fits = fit_all(t, y, floor=0.0)
    best_single = min(fits["exponential"].rms_residual, fits["gaussian"].rms_residual)
    assert fits["convolution"].rms_residual <= best_single * (1 + 1e-6)


def test_fit_selection_on_clean_mixture():
    t = np.linspace(0, 10, 300)
    fits = fit_all(t, convolution_value(1.0, 1.0, t))
    assert fits["convolution"].rms_residual < fits["exponential"].rms_residual
    assert fits["convolution"].rms_residual < fits["gaussian"].rms_residual


def test_fit_amplitude_when_window_starts_late():
    t = np.linspace(1, 20, 100)
    fit = fit_model(t, 0.3 * np.exp(-0.25 * t), "exponential")
    assert fit.params.amplitude == pytest.approx(0.3, rel=1e-8)
    assert fit.params.gamma == pytest.approx(0.5, rel=1e-8)


def test_fit_window_tuple_and_too_few_points():
    t = np.linspace(0, 10, 100)
    y = np.exp(-t)
    fit = fit_model(t, y, "exponential", window=(0.0, 3.0))
    assert fit.fit_window[1] <= 3.0 and fit.n_points == 30
    with pytest.raises(FitError):
        fit_model(t, y, "exponential", window=(0.0, 0.5))
    with pytest.raises(ValueError):
        fit_model(t, y, "power")


def test_default_window_stops_at_floor():
    mask = default_window(np.arange(5.0), [1.0, 0.5, 1e-4, 0.2, 0.1], floor=1e-3)
    np.testing.assert_array_equal(mask, [True, True, False, False, False])


def test_fit_reduces_complex_to_modulus():
    t = np.linspace(0, 5, 100)
    fit = fit_model(t, np.exp(-t) * np.exp(3j * t), "exponential")
    assert fit.params.gamma == pytest.approx(2.0, rel=1e-8)


def test_fit_result_dict():
    t = np.linspace(0, 5, 100)
    d = fit_model(t, np.exp(-t), "exponential").to_dict()
    assert d["model"] == "exponential" and set(d["params"]) == {"gamma", "sigma", "e_r", "amplitude"}


def test_decoherence_time_interpolates():
    t = np.linspace(0, 4, 4001)
    assert decoherence_time(t, np.exp(-t)) == pytest.approx(1.0, abs=1e-6)
    assert decoherence_time([0.0, 1.0], [1.0, 0.0], threshold=0.25) == pytest.approx(0.75)
    with pytest.raises(NotCrossedError):
        decoherence_time(t, np.ones_like(t))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-2, 2))
def test_scaling_exponent_power_law(slope, logc):
    x = np.geomspace(0.1, 10, 6)
    fit = scaling_exponent(x, math.exp(logc) * x**slope)
    assert fit.slope == pytest.approx(slope, abs=1e-9)
    assert fit.intercept == pytest.approx(logc, abs=1e-9)


def test_scaling_exponent_validation():
    with pytest.raises(ValueError):
        scaling_exponent([1, 2, 3], [1, 2, 3])
    with pytest.raises(ValueError):
        scaling_exponent([1, 2, 3, -4], [1, 2, 3, 4])
