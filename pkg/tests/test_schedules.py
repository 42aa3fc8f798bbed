import numpy as np
import pytest
from hypothesis import given, strategies as st

from marginalflow.errors import ConfigError, ConstructionError
from marginalflow.schedules import Schedule

times = st.floats(0.0, 2.0)


@given(times)
def test_polynomial_value_and_derivative(t):
    s = Schedule.polynomial([1.0, -2.0, 0.5])
    assert s.value(t) == pytest.approx(1 - 2 * t + 0.5 * t * t, abs=1e-12)
    assert s.deriv(t) == pytest.approx(-2 + t, abs=1e-12)


def test_polynomial_matrix_valued():
    eye = np.eye(2)
    s = Schedule.polynomial([eye, 3 * eye])
    np.testing.assert_allclose(s.value(0.5), 2.5 * eye)
    np.testing.assert_allclose(s.deriv(0.5), 3 * eye)
    assert s.shape == (2, 2)


def test_constant_has_zero_derivative():
    s = Schedule.constant([1.0, 2.0])
    np.testing.assert_array_equal(s.deriv(0.3), [0.0, 0.0])


@given(times)
def test_spline_derivative_matches_finite_difference(t):
    s = Schedule.spline([0.0, 0.5, 1.0, 2.0], [1.0, 1.3, 2.0, 2.1])
    h = 1e-6
    fd = (s.value(t + h) - s.value(t - h)) / (2 * h)
    assert s.deriv(t) == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_spline_interpolates_knots():
    s = Schedule.spline([0.0, 1.0, 2.0], [3.0, -1.0, 4.0])
    assert [float(s.value(k)) for k in (0.0, 1.0, 2.0)] == pytest.approx([3.0, -1.0, 4.0])


def test_power_schedule():
    s = Schedule.power(2.0, 0.5)
    assert s.value(4.0) == pytest.approx(4.0)
    assert s.deriv(4.0) == pytest.approx(0.5)
    assert np.isnan(s.value(-1.0))


@pytest.mark.parametrize("knots", [[0.0], [0.0, 0.0, 1.0], [1.0, 0.0]])
def test_spline_rejects_bad_knots(knots):
    with pytest.raises(ConstructionError):
        Schedule.spline(knots, np.zeros(len(knots)))


def test_from_config():
    assert Schedule.from_config(2.0).value(0.7) == 2.0
    s = Schedule.from_config({"kind": "poly", "coeffs": [0.0, 1.0]})
    assert s.value(0.25) == pytest.approx(0.25)
    with pytest.raises(ConfigError) as err:
        Schedule.from_config({"kind": "spline", "knots": [0, 1]})
    assert err.value.code == "CONFIG_MISSING"
    with pytest.raises(ConfigError):
        Schedule.from_config({"kind": "cosine"})
