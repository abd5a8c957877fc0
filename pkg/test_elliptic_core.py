"""
楕円型作用素・内積・随伴作用素のテスト
"""

import math

import numpy as np
import pytest

from elliptic_core import (ProblemParams, SPDSolver, adjoint_istar, assemble_operator, embedding_constant,
                           inner_product_eps, istar_constant, lebesgue_norm_eps, norm_eps, smallest_ritz_value,
                           smooth_random_field, standard_norm)
from utils import DomainError


def constant_params(grid, epsilon=1.0, a=1.0, b=1.0, c=1.0, omega=0.0, q=1.0, p=4.0):
    return ProblemParams.from_specs(grid, a, b, c, epsilon=epsilon, q=q, omega=omega, p=p)


def test_params_validation(torus):
    with pytest.raises(DomainError):
        constant_params(torus, omega=1.0)
    with pytest.raises(DomainError):
        constant_params(torus, epsilon=0.0)
    with pytest.raises(DomainError):
        constant_params(torus, p=2.0)
    with pytest.raises(DomainError):
        constant_params(torus, c=0.0)
    params = constant_params(torus, a=2.0, b=1.0, omega=0.5)
    assert np.allclose(params.d, 1.75)


def test_operator_on_fourier_mode(torus):
    params = constant_params(torus, epsilon=0.5)
    u = np.cos(torus.x1)
    Au = assemble_operator(torus, params).apply(u)
    assert np.max(np.abs(Au - 1.25 * u)) < 1e-3


def test_operator_on_constant_is_potential(torus):
    params = ProblemParams.from_specs(torus, "2 + sin(x)", 1.0, "1 + 0.5*cos(y)", epsilon=0.3, omega=0.5)
    u0 = np.full(torus.n_nodes, 1.7)
    Au = assemble_operator(torus, params).apply(u0)
    assert np.max(np.abs(Au - params.d * 1.7)) < 1e-12


def test_operator_symmetry(torus):
    params = ProblemParams.from_specs(torus, "2 + sin(x)", 1.0, "1 + 0.5*cos(y)", epsilon=0.3)
    operator = assemble_operator(torus, params)
    rng = np.random.default_rng(1)
    for _ in range(10):
        u = rng.normal(size=torus.n_nodes)
        v = rng.normal(size=torus.n_nodes)
        left, right = operator.energy(u, v), operator.energy(v, u)
        assert abs(left - right) <= 1e-12 * max(abs(left), 1.0)


def test_operator_cached_per_params(torus):
    params = constant_params(torus)
    assert assemble_operator(torus, params) is assemble_operator(torus, params)
    assert assemble_operator(torus, params.with_epsilon(0.5)) is not assemble_operator(torus, params)


def test_positive_definite(torus):
    params = ProblemParams.from_specs(torus, "1 + 0.5*cos(x)*cos(y)", 1.0, 1.0, epsilon=0.1)
    assert smallest_ritz_value(torus, params) > 0


@pytest.mark.parametrize("epsilon, expected", [(1.0, 16 * math.pi ** 2), (0.5, 64 * math.pi ** 2)])
def test_inner_product_of_constants(torus, epsilon, expected):
    params = constant_params(torus, epsilon=epsilon)
    u = np.full(torus.n_nodes, 2.0)
    assert inner_product_eps(torus, params, u, u) == pytest.approx(expected, rel=1e-12)
    assert norm_eps(torus, params, u) == pytest.approx(math.sqrt(expected), rel=1e-12)


def test_inner_product_symmetric(torus):
    params = constant_params(torus, epsilon=0.2)
    rng = np.random.default_rng(2)
    u, v = smooth_random_field(torus, rng), smooth_random_field(torus, rng)
    assert inner_product_eps(torus, params, u, v) == pytest.approx(inner_product_eps(torus, params, v, u), rel=1e-14)


def test_lebesgue_norm(torus):
    assert lebesgue_norm_eps(torus, np.ones(torus.n_nodes), 2.0, 1.0) == pytest.approx(2 * math.pi, rel=1e-12)
    assert lebesgue_norm_eps(torus, np.zeros(torus.n_nodes), 3.0, 0.1) == 0.0


def test_standard_norm_of_constant(torus):
    assert standard_norm(torus, np.ones(torus.n_nodes)) == pytest.approx(2 * math.pi, rel=1e-12)


def test_istar_of_constant(torus):
    params = constant_params(torus, a=2.0, epsilon=0.3)
    u = adjoint_istar(torus, params, np.full(torus.n_nodes, 2.0 * 3.0))
    assert np.max(np.abs(u - 3.0)) < 1e-10


def test_istar_of_fourier_mode(torus):
    params = constant_params(torus)
    u = adjoint_istar(torus, params, 2.0 * np.cos(torus.x1))
    assert np.max(np.abs(u - np.cos(torus.x1))) < 1e-3


def test_istar_defining_property(torus):
    params = ProblemParams.from_specs(torus, "1 + 0.5*cos(x)*cos(y)", 1.0, 1.0, epsilon=0.2, omega=0.5)
    rng = np.random.default_rng(3)
    for _ in range(5):
        v = smooth_random_field(torus, rng)
        phi = rng.normal(size=torus.n_nodes)
        u = adjoint_istar(torus, params, v)
        lhs = inner_product_eps(torus, params, u, phi)
        rhs = float(np.sum(torus.measure * v * phi)) / params.epsilon ** 2
        assert abs(lhs - rhs) < 1e-8 * norm_eps(torus, params, phi)


def test_iterative_solver_matches_direct(torus):
    params = ProblemParams.from_specs(torus, "1 + 0.5*cos(x)*cos(y)", 1.0, 1.0, epsilon=0.2)
    operator = assemble_operator(torus, params)
    rhs = torus.measure * smooth_random_field(torus, np.random.default_rng(4))
    direct = SPDSolver(operator.matrix).solve(rhs)
    iterative = SPDSolver(operator.matrix, direct_limit=0).solve(rhs)
    assert np.max(np.abs(direct - iterative)) < 1e-7 * np.max(np.abs(direct))


@pytest.mark.parametrize("s", [2.0, 4.0])
def test_embedding_constant_non_increasing(torus, s):
    values = [embedding_constant(torus, constant_params(torus, epsilon=eps), s) for eps in (0.1, 0.05, 0.025)]
    for earlier, later in zip(values, values[1:]):
        assert later <= earlier * (1 + 1e-10)


def test_istar_constant_stable_under_halving(torus):
    values = [istar_constant(torus, constant_params(torus, epsilon=eps)) for eps in (0.2, 0.1)]
    assert 0.5 < values[1] / values[0] < 2.0
