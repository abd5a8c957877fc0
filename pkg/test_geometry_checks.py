"""
捻れ積・調和射への持ち上げと Hopf 写像の検証のテスト
"""

import math

import numpy as np
import pytest

from elliptic_core import ProblemParams
from geometry_checks import (harmonic_morphism_params, hopf_commutation_error, hopf_projection,
                             verify_gamma_lift, warped_base_params, warped_base_residual, warped_lift_residual)
from manifold import build_flat_torus, build_surface_of_revolution, profile_from_spec
from utils import DomainError

F_SPEC = "2 + cos(x)"
BETA_SPEC = "2 + 0.5*sin(y)"


def analytic_fields(grid):
    u = 1.0 + 0.5 * np.cos(grid.x1) * np.cos(grid.x2)
    v = 0.3 + 0.1 * np.sin(grid.x1)
    return u, v


def test_unit_warping_reduces_to_plain_problem(torus):
    warped = warped_base_params(torus, 1.0, BETA_SPEC, epsilon=0.2)
    plain = ProblemParams.from_specs(torus, BETA_SPEC, 1.0, 1.0, epsilon=0.2)
    assert np.allclose(warped.a, plain.a) and np.allclose(warped.b, 1.0) and np.allclose(warped.c, 1.0)
    u, v = analytic_fields(torus)
    assert warped_base_residual(torus, warped, u, v) == warped_base_residual(torus, plain, u, v)


def test_warping_validated(torus):
    with pytest.raises(DomainError):
        warped_base_params(torus, "cos(x)", BETA_SPEC)
    with pytest.raises(DomainError):
        harmonic_morphism_params(torus, BETA_SPEC, mu_spec="sin(x)")


def test_zero_pair_has_zero_residual(torus):
    params = warped_base_params(torus, F_SPEC, BETA_SPEC, epsilon=0.2, omega=0.5)
    zero = np.zeros(torus.n_nodes)
    assert warped_base_residual(torus, params, zero, zero)['sup'] == 0.0
    report = warped_lift_residual(torus, params, F_SPEC, zero, zero)
    assert report.lift_residual == 0.0 and report.base_residual == 0.0 and report.bound_ok


def test_lift_is_fiber_constant_and_bounded(torus):
    params = warped_base_params(torus, F_SPEC, BETA_SPEC, epsilon=0.2, omega=0.5)
    u, v = analytic_fields(torus)
    report = warped_lift_residual(torus, params, F_SPEC, u, v)
    assert report.fiber_derivative == 0.0
    assert report.bound_ok
    assert report.subcritical_base
    payload = report.to_dict()
    assert payload['bound_ok'] is True and payload['n_fiber'] == 8


def test_lift_exponent_classification(torus):
    params = warped_base_params(torus, F_SPEC, BETA_SPEC, k=2, epsilon=0.2, p=6.0)
    u, v = analytic_fields(torus)
    report = warped_lift_residual(torus, params, F_SPEC, u, v, k=2)
    # 2次元の底では p = 6 は劣臨界、4次元の全空間 (2* = 4) では優臨界
    assert report.subcritical_base and report.supercritical_lift


def test_lift_floor_is_second_order():
    floors = []
    for n in (32, 64):
        grid = build_flat_torus(2 * math.pi, n)
        params = warped_base_params(grid, F_SPEC, BETA_SPEC, epsilon=0.5)
        u, v = analytic_fields(grid)
        floors.append(warped_lift_residual(grid, params, F_SPEC, u, v).floor)
    assert 3.0 < floors[0] / floors[1] < 5.0


def test_lift_needs_flat_base():
    grid = build_surface_of_revolution(profile_from_spec("2 + cos(t)"), 16, 16)
    params = ProblemParams.from_specs(grid, 1.0, 1.0, 1.0, epsilon=0.2)
    zero = np.zeros(grid.n_nodes)
    with pytest.raises(DomainError):
        warped_lift_residual(grid, params, 1.0, zero, zero)


def test_hopf_projection_chart():
    polar, azimuth = hopf_projection(np.array([0.0, math.pi / 4]), np.array([1.0, 2.0]), np.array([0.5, 2.0]))
    assert np.allclose(polar, [math.pi, math.pi / 2])
    assert np.allclose(azimuth, [0.5, 0.0])


def test_hopf_constant_function():
    report = hopf_commutation_error('constant', samples=50)
    assert report.max_error < 1e-10
    assert report.samples_used + report.excluded == 50


@pytest.mark.parametrize("name", ["height", "quadratic"])
def test_hopf_error_is_second_order(name):
    coarse = hopf_commutation_error(name, samples=100, h_fd=2e-2)
    fine = hopf_commutation_error(name, samples=100, h_fd=1e-2)
    assert fine.max_error < 0.1
    assert 3.0 < coarse.max_error / fine.max_error < 5.0


def test_hopf_rejects_bad_inputs():
    with pytest.raises(DomainError):
        hopf_commutation_error('cubic')
    with pytest.raises(DomainError):
        hopf_commutation_error('height', h_fd=0.2, margin=0.1)


@pytest.mark.parametrize("n", [2, 3])
def test_gamma_lift_warped(torus, n):
    report = verify_gamma_lift(torus, 'warped', BETA_SPEC, f_spec=F_SPEC, n=n)
    assert report['max_relative_difference'] < 1e-12
    assert report['concentration_set'].startswith("fiber over (")


@pytest.mark.parametrize("n", [2, 3])
def test_gamma_lift_harmonic_morphism(torus, n):
    report = verify_gamma_lift(torus, 'harmonic_morphism', BETA_SPEC, mu_spec="1 + 0.5*cos(x)", n=n)
    assert report['max_relative_difference'] < 1e-12
    assert "Hopf circle" in report['concentration_set']


def test_gamma_lift_argmax_of_warping(torus):
    report = verify_gamma_lift(torus, 'warped', 1.0, f_spec=F_SPEC)
    # Γ = f β なので f = 2 + cos x の最大（x = 0）
    assert report['argmax'][0] == pytest.approx(0.0, abs=1e-12)
    assert report['gamma_max'] == pytest.approx(3.0, rel=1e-12)


def test_gamma_lift_needs_warping(torus):
    with pytest.raises(DomainError):
        verify_gamma_lift(torus, 'warped', BETA_SPEC)
    with pytest.raises(DomainError):
        verify_gamma_lift(torus, 'conformal', BETA_SPEC)
