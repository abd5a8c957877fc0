"""
汎関数 J_ε, G_ε, I_ε と勾配のテスト
"""

import math

import numpy as np
import pytest

from ansatz import AnsatzSpec, build_W
from elliptic_core import ProblemParams, inner_product_eps, norm_eps, smooth_random_field
from energy import coupling_g, g_energy, i_energy, i_gradient, j_energy
from manifold import build_flat_torus, build_surface_of_revolution, profile_from_spec
from psi_solver import compute_psi
from reduction import scaling_exponent


def constant_params(grid, epsilon=1.0, omega=0.0, a=1.0):
    return ProblemParams.from_specs(grid, a, 1.0, 1.0, epsilon=epsilon, q=1.0, omega=omega, p=4.0)


@pytest.fixture(scope="module")
def small_torus():
    return build_flat_torus(2 * math.pi, 32)


@pytest.fixture(scope="module")
def surface():
    return build_surface_of_revolution(profile_from_spec("2 + cos(t)"), 32, 32)


def test_j_of_constant(torus):
    params = constant_params(torus)
    assert j_energy(torus, params, np.ones(torus.n_nodes)) == pytest.approx(math.pi ** 2, rel=1e-12)


def test_j_of_nonpositive_field_is_quadratic(torus):
    params = constant_params(torus, epsilon=0.3)
    u = -np.abs(smooth_random_field(torus, np.random.default_rng(10)))
    assert j_energy(torus, params, u) == pytest.approx(0.5 * norm_eps(torus, params, u) ** 2, rel=1e-12)


def test_g_and_i_of_constant(torus):
    params = constant_params(torus, omega=0.5)
    ones = np.ones(torus.n_nodes)
    assert g_energy(torus, params, ones) == pytest.approx(2 * math.pi ** 2, rel=1e-12)
    assert i_energy(torus, params, ones) == pytest.approx(0.75 * math.pi ** 2, rel=1e-12)


def test_i_equals_j_without_coupling(torus):
    params = constant_params(torus, epsilon=0.2)
    u = smooth_random_field(torus, np.random.default_rng(11))
    assert i_energy(torus, params, u) == j_energy(torus, params, u)


def test_j_scales_with_epsilon_on_constants(torus):
    ones = np.ones(torus.n_nodes)
    coarse = j_energy(torus, constant_params(torus, epsilon=0.2), 1.5 * ones)
    fine = j_energy(torus, constant_params(torus, epsilon=0.1), 1.5 * ones)
    assert fine == pytest.approx(4.0 * coarse, rel=1e-12)


def test_gradient_of_zero(torus):
    params = constant_params(torus, epsilon=0.2, omega=0.5)
    assert np.all(i_gradient(torus, params, np.zeros(torus.n_nodes)) == 0.0)


def test_gradient_of_constant(torus):
    params = constant_params(torus, epsilon=0.2, omega=0.5)
    u0 = 1.2
    psi0 = u0 ** 2 / (1 + u0 ** 2)
    expected = (0.75 * u0 + 0.25 * psi0 * (2 - psi0) * u0 - u0 ** 3) / 0.75
    gradient = i_gradient(torus, params, np.full(torus.n_nodes, u0))
    assert np.max(np.abs(gradient - expected)) < 1e-10


@pytest.mark.parametrize("grid_name", ["small_torus", "surface"])
def test_gradient_matches_central_difference(grid_name, request):
    grid = request.getfixturevalue(grid_name)
    params = ProblemParams.from_specs(grid, "2 + 0.5*cos(x)", "1 + 0.3*sin(y)", "1 + 0.2*cos(x)",
                                      epsilon=0.3, q=1.0, omega=0.5, p=4.0)
    rng = np.random.default_rng(12)
    t = 1e-4
    for _ in range(10):
        u = smooth_random_field(grid, rng)
        h = smooth_random_field(grid, rng, offset=0.0)
        difference = (i_energy(grid, params, u + t * h) - i_energy(grid, params, u - t * h)) / (2 * t)
        exact = inner_product_eps(grid, params, i_gradient(grid, params, u), h)
        assert abs(difference - exact) <= 1e-5 * max(abs(exact), 1.0)


def test_coupling_sign(torus):
    params = constant_params(torus, epsilon=0.2, omega=0.5)
    rng = np.random.default_rng(13)
    for _ in range(5):
        u = np.abs(smooth_random_field(torus, rng))
        psi = compute_psi(torus, params, u)
        assert np.all(coupling_g(u, psi, params.q) <= 0.0)
        assert g_energy(torus, params, u, psi) >= 0.0
        assert i_energy(torus, params, u, psi) >= j_energy(torus, params, u)


def test_coupling_energy_small_on_ansatz():
    grid = build_flat_torus(2 * math.pi, 128)
    values = []
    epsilons = (0.2, 0.1)
    for eps in epsilons:
        params = ProblemParams.from_specs(grid, 2.0, 1.0, 1.0, epsilon=eps, q=1.0, omega=0.5, p=4.0)
        W = build_W(grid, params, AnsatzSpec.for_grid(grid, (math.pi, math.pi), eps))
        values.append(g_energy(grid, params, W))
    exponent = math.log(values[0] / values[1]) / math.log(epsilons[0] / epsilons[1])
    assert exponent >= 0.5


@pytest.mark.slow
def test_coupling_energy_exponent_on_ansatz(profile):
    grid = build_flat_torus(2 * math.pi, 512)
    epsilons = (0.2, 0.1, 0.05)
    values = []
    for eps in epsilons:
        params = ProblemParams.from_specs(grid, 2.0, 1.0, 1.0, epsilon=eps, q=1.0, omega=0.5, p=4.0)
        W = build_W(grid, params, AnsatzSpec.for_grid(grid, (math.pi, math.pi), eps), profile)
        values.append(g_energy(grid, params, W))
    assert values[0] > values[1] > values[2] > 0.0
    assert scaling_exponent(epsilons, values) >= 0.5
