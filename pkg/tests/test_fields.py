import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from marginalflow import fields
from marginalflow.errors import ConstructionError, NotPSDError, RoleError
from marginalflow.grid import RegularGrid

from conftest import linear_skew

mats = arrays(float, (3, 3), elements=st.floats(-2, 2))


@given(mats)
def test_psd_sqrt_squares_back(A):
    M = A @ A.T
    S = fields.psd_sqrt(M)
    np.testing.assert_allclose(S @ S, M, atol=1e-9 * max(1, np.abs(M).max()))
    np.testing.assert_allclose(S, S.T, atol=1e-12)
    assert np.linalg.eigvalsh(S).min() >= -1e-9


def test_psd_sqrt_clamps_roundoff_and_rejects_negative():
    M = np.diag([1.0, -5e-11])
    np.testing.assert_allclose(fields.psd_sqrt(M), np.diag([1.0, 0.0]))
    with pytest.raises(NotPSDError):
        fields.psd_sqrt(np.diag([1.0, -1e-6]))


def test_role_validation():
    with pytest.raises(NotPSDError):
        fields.make_constant_field(np.diag([1.0, -1.0]), "psd")
    with pytest.raises(ConstructionError):
        fields.make_constant_field(np.eye(2), "skew")  # symmetric, declared skew
    with pytest.raises(ConstructionError):
        fields.make_constant_field([[1.0, 2.0], [0.0, 1.0]], "psd")
    with pytest.raises(RoleError):
        fields.require_role(fields.zero_field(2, "skew"), "psd")


@given(arrays(float, (4, 3), elements=st.floats(-3, 3)))
def test_radial_divergence_matches_finite_difference(x):
    f = fields.make_radial_isotropic_field(0.7, 0.2, 3)
    np.testing.assert_allclose(f.divergence(x, 0.0), f.divergence_fd(x, 0.0), atol=1e-6)


@given(arrays(float, (4, 3), elements=st.floats(-3, 3)))
def test_linear_skew_divergence_and_skewness(x):
    f = linear_skew(3)
    np.testing.assert_allclose(f.divergence(x, 0.0), f.divergence_fd(x, 0.0), atol=1e-7)
    np.testing.assert_allclose(f.divergence(x, 0.0)[0], [0.3, -0.2, 0.0])
    Q = f.value(x, 0.0)
    np.testing.assert_allclose(Q, -np.swapaxes(Q, -1, -2), atol=0)


def test_linear_field_cannot_be_psd():
    with pytest.raises(ConstructionError):
        fields.LinearField(np.eye(2), np.zeros((2, 2, 2)), "psd")


def test_linear_skew_rejects_symmetric_slopes():
    L = np.zeros((2, 2, 2))
    L[0, 1, 0] = L[1, 0, 0] = 1.0
    with pytest.raises(ConstructionError):
        fields.make_linear_skew_field(L)


def test_table_field_matches_source_and_uses_fd_divergence():
    g = RegularGrid.cube(2, 2.0, 32)
    X, Y = g.mesh()
    vals = np.zeros((2, 2) + g.shape)
    vals[0, 0] = 1 + 0.1 * X**2
    vals[1, 1] = 1 + 0.1 * X**2
    f = fields.TableField(g, vals, "psd")
    assert f.divergence_mode == "finite-difference"
    x = np.array([[0.5, 0.25]])
    assert f.value(x, 0.0)[0, 0, 0] == pytest.approx(1.025, abs=2e-3)
    assert f.divergence(x, 0.0)[0, 0] == pytest.approx(0.1, abs=2e-2)
    with pytest.raises(ValueError):
        f.divergence(x, 0.0, "analytic")


def test_scaled_and_time_reversed_fields():
    base = fields.make_constant_field(np.eye(2), "psd")
    sc = fields.ScaledField(base, lambda t: t**2)
    np.testing.assert_allclose(sc.value(np.zeros(2), 3.0), 9 * np.eye(2))
    with pytest.raises(NotPSDError):
        fields.ScaledField(base, lambda t: -1.0).value(np.zeros(2), 0.0)
    rad = fields.make_radial_isotropic_field(1.0, 0.5, 2)
    rev = fields.time_reversed(rad, 2.0)
    assert fields.time_reversed(rev, 2.0) is rad
    x = np.array([[1.0, 2.0]])
    np.testing.assert_allclose(rev.divergence(x, 0.5), rad.divergence(x, 1.5))
