import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import builtin_D, builtin_Q, moving_mixture, rotation
from marginalflow import decomp, fields, verify
from marginalflow.density import fit_grid, heat_flow_path, stationary_gaussian_path
from marginalflow.errors import DomainError, RoleError
from marginalflow.grid import RegularGrid


def test_stationary_ou_residual_uses_flux_normalization():
    path = stationary_gaussian_path(2)
    grid = RegularGrid.cube(2, 8.0, 128)
    rep = verify.fokker_planck_residual(decomp.ou_sde(2), path, grid, 0.5, tolerance=1e-2)
    assert rep.normalization == "flux"
    assert rep.passed and rep.rel_l2 < 1e-2
    d = rep.to_dict()
    assert d["interior_ring"] == 2 and d["passed"] is True


def test_heat_flow_bundle_residual_and_ablation():
    path = heat_flow_path(2)
    grid = fit_grid(path, 0.5, 128)
    bnd = decomp.DecompositionBundle(path, decomp.AnalyticPhi.constant(-0.5),
                                     fields.make_constant_field(np.eye(2), "psd"), rotation(2))
    good = verify.fokker_planck_residual(decomp.assemble_drift(bnd), path, grid, 0.5)
    assert good.normalization == "dtp" and good.rel_l2 < 1e-2
    bad = verify.fokker_planck_residual(decomp.assemble_drift(bnd, ["phi_score"]), path, grid, 0.5)
    assert bad.rel_l2 > 10 * good.rel_l2


def test_mixture_grid_phi_residual():
    path = moving_mixture(2)
    grid = fit_grid(path, 0.5, 128)
    phi = decomp.grid_phi_from_path(path, grid, [0.5])
    bnd = decomp.DecompositionBundle(path, phi, builtin_D(2)["radial"], builtin_Q(2)["linear"])
    rep = verify.fokker_planck_residual(decomp.assemble_drift(bnd), path, grid, 0.5)
    assert rep.rel_l2 < 1e-2
    for term in ("grad_phi", "div_d", "q_score", "div_q"):
        abl = verify.fokker_planck_residual(decomp.assemble_drift(bnd, [term]), path, grid, 0.5)
        assert abl.rel_l2 > 10 * rep.rel_l2, term


def test_dimension_mismatch():
    with pytest.raises(DomainError):
        verify.fokker_planck_residual(decomp.ou_sde(2), stationary_gaussian_path(2),
                                      RegularGrid.cube(3, 4.0, 8), 0.0)


@pytest.mark.parametrize("name", ["0", "constant", "linear"])
def test_skew_flux_is_divergence_free(name):
    path = moving_mixture(2)
    grid = fit_grid(path, 0.5, 128)
    assert verify.dq_preservation_check(builtin_Q(2)[name], path, grid, 0.5) < 1e-10


@pytest.mark.parametrize("name", ["I", "radial"])
def test_psd_flux_identity(name):
    path = heat_flow_path(2)
    grid = fit_grid(path, 0.5, 128)
    assert verify.dq_preservation_check(builtin_D(2)[name], path, grid, 0.5) < 1e-2


def test_general_role_rejected():
    f = fields.make_constant_field(np.array([[1.0, 2.0], [0.0, 1.0]]), "general")
    with pytest.raises(RoleError):
        verify.dq_preservation_check(f, heat_flow_path(2), RegularGrid.cube(2, 4.0, 16), 0.5)


# --- distances ----------------------------------------------------------------

def test_identical_sets_have_zero_distance(rng):
    x = rng.normal(size=(500, 3))
    assert verify.sliced_w1(x, x) == 0.0
    assert verify.energy_distance(x, x) == pytest.approx(0.0, abs=1e-12)


def _sphere_mean_abs_first_coordinate(n=400):
    # midpoint rule in polar angle: E|cos theta| with density sin(theta)/2
    th = (np.arange(n) + 0.5) * np.pi / n
    return float(np.sum(np.abs(np.cos(th)) * np.sin(th) / 2) * np.pi / n)


def test_shifted_gaussian_sliced_w1_matches_sphere_average():
    oracle = _sphere_mean_abs_first_coordinate()
    assert oracle == pytest.approx(0.5, abs=1e-5)
    r = np.random.default_rng(3)
    a = r.standard_normal((100_000, 3))
    b = r.standard_normal((100_000, 3)) + np.array([1.0, 0, 0])
    for seed in range(3):
        assert verify.sliced_w1(a, b, 128, seed) == pytest.approx(oracle, abs=0.02)


def test_exact_vs_exact_floor():
    path = stationary_gaussian_path(3)
    a, b = path.sample(0.0, 20_000, 1), path.sample(0.0, 20_000, 2)
    assert verify.sliced_w1(a, b) <= 0.02


@given(st.integers(0, 2**32 - 1))
def test_distances_symmetric_and_nonnegative(seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(120, 2)), r.normal(0.3, 1.2, size=(150, 2))
    assert verify.sliced_w1(a, b, 16, seed) == pytest.approx(verify.sliced_w1(b, a, 16, seed))
    assert verify.energy_distance(a, b) == pytest.approx(verify.energy_distance(b, a))
    assert verify.sliced_w1(a, b, 16, seed) >= 0 and verify.energy_distance(a, b) >= 0


def test_sample_validation(rng):
    with pytest.raises(DomainError, match="at least 100"):
        verify.marginal_distance(rng.normal(size=(50, 2)), rng.normal(size=(200, 2)))
    bad = rng.normal(size=(200, 2))
    bad[3, 1] = np.nan
    with pytest.raises(DomainError):
        verify.marginal_distance(bad, rng.normal(size=(200, 2)))


def test_verdict_stable_under_projection_seed():
    path = heat_flow_path(3)
    good = path.sample(1.0, 5000, 21)
    shifted = good * 1.15
    for seed in range(4):
        exact = path.sample(1.0, 5000, [seed, 5])
        assert verify.marginal_distance(good, exact, 64, seed, path, 1.0).passed
        assert not verify.marginal_distance(shifted, exact, 64, seed, path, 1.0).passed


def test_invariance_suite_small(tmp_path):
    from marginalflow.sim import SimConfig

    path = heat_flow_path(2)
    phi = decomp.AnalyticPhi.constant(-0.5)
    bundles = [decomp.DecompositionBundle(path, phi, fields.zero_field(2), fields.zero_field(2, "skew")),
               decomp.DecompositionBundle(path, phi, fields.make_constant_field(np.eye(2), "psd"),
                                          rotation(2))]
    cfg = SimConfig(dt=1e-2, t0=0.0, t1=1.0, n_paths=4000, seed=3)
    reps = verify.marginal_invariance_suite(path, bundles, cfg, [1.0], n_proj=64, labels=["ode", "sde"])
    assert [r.label for r in reps] == ["ode@t=1.0", "sde@t=1.0"]
    assert all(r.passed for r in reps)
    text = verify.reports_to_json(reps, tmp_path / "r.json", seed=3)
    assert json.loads(text)["all_passed"] is True


def test_stationary_rotation_is_judged_against_gross_divergence():
    path = stationary_gaussian_path(2)
    grid = fit_grid(path, 0.5, 128)
    bnd = decomp.DecompositionBundle(path, decomp.AnalyticPhi.constant(0.0), fields.zero_field(2),
                                     rotation(2))
    rep = verify.fokker_planck_residual(decomp.assemble_drift(bnd), path, grid, 0.5)
    assert rep.normalization == "flux" and rep.denominator > 0.1
    assert rep.rel_l2 < 1e-3
