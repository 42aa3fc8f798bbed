import numpy as np
import pytest
from hypothesis import settings

from marginalflow import fields
from marginalflow.density import (EdmScheduleParams, GaussianPathParams, MixturePathParams,
                                  heat_flow_path, make_edm_path, make_mixture_path,
                                  stationary_gaussian_path)
from marginalflow.schedules import Schedule

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def moving_mixture(dim):
    """Two Gaussians whose means drift apart in different directions and whose
    covariances grow at different rates."""
    eye = np.eye(dim)
    m1, v1 = np.zeros(dim), np.zeros(dim)
    m2, v2 = np.zeros(dim), np.zeros(dim)
    m1[0], m2[0] = -1.5, 1.5
    v1[:2] = [0.5, 0.3]
    v2[1] = -0.4
    if dim == 3:
        v2[2] = 0.2
    comps = [GaussianPathParams(Schedule.polynomial([m1, v1]), Schedule.polynomial([eye, 0.2 * eye])),
             GaussianPathParams(Schedule.polynomial([m2, v2]),
                                Schedule.polynomial([0.8 * eye, 0.3 * eye]))]
    return make_mixture_path(MixturePathParams(comps, [0.4, 0.6]))


def edm_params(dim=3, t_range=(0.05, 1.0)):
    return EdmScheduleParams(Schedule.constant(1.0), Schedule.power(1.0, 1.0),
                             np.zeros((1, dim)), t_range=t_range)


def builtin_paths(dim):
    return {
        "heat-flow": heat_flow_path(dim),
        "mixture": moving_mixture(dim),
        "stationary": stationary_gaussian_path(dim),
        "edm": make_edm_path(edm_params(dim)),
    }


def rotation(dim, rate=1.0):
    J = np.zeros((dim, dim))
    J[0, 1], J[1, 0] = rate, -rate
    return fields.make_constant_field(J, "skew")


def linear_skew(dim):
    # entries vary along x1 and x2, so div Q = (0.3, -0.2, 0, ...) is nonzero
    L = np.zeros((dim, dim, dim))
    L[0, 1, 1], L[1, 0, 1] = 0.3, -0.3
    L[0, 1, 0], L[1, 0, 0] = 0.2, -0.2
    return fields.make_linear_skew_field(L)


def builtin_D(dim):
    return {"0": fields.zero_field(dim, "psd"),
            "I": fields.make_constant_field(np.eye(dim), "psd"),
            "radial": fields.make_radial_isotropic_field(0.5, 0.05, dim)}


def builtin_Q(dim):
    return {"0": fields.zero_field(dim, "skew"), "constant": rotation(dim),
            "linear": linear_skew(dim)}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
