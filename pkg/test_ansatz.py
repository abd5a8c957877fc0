"""
近似解 W、核の場 Z、Gram 行列のテスト
"""

import math

import numpy as np
import pytest

from ansatz import AnsatzSpec, ansatz_scalings, build_W, build_Z, cutoff, gram_limit_constant, gram_matrix
from elliptic_core import ProblemParams
from manifold import build_flat_torus
from utils import DomainError

CENTER = (math.pi, math.pi)


def params_for(grid, epsilon, a=2.0, omega=0.0):
    return ProblemParams.from_specs(grid, a, 1.0, 1.0, epsilon=epsilon, q=1.0, omega=omega, p=4.0)


def minimal_distance(grid, xi):
    L1, L2 = grid.periods
    dx = (grid.x1 - xi[0] + L1 / 2) % L1 - L1 / 2
    dy = (grid.x2 - xi[1] + L2 / 2) % L2 - L2 / 2
    return np.hypot(dx, dy)


def test_cutoff_shape():
    rho = np.array([0.0, 0.25, 0.5, 0.75, 1.0, 2.0])
    values = cutoff(rho, 1.0)
    assert values[0] == 1.0 and values[1] == 1.0 and values[2] == 1.0
    assert 0.0 < values[3] < 1.0
    assert values[4] == 0.0 and values[5] == 0.0


def test_peak_value(torus, profile):
    params = params_for(torus, 0.2)
    W = build_W(torus, params, AnsatzSpec.for_grid(torus, CENTER, 0.2), profile)
    # A = a/c = 2, B = b/c = 1 から γ = √2
    assert W[torus.node_index(CENTER)] == pytest.approx(math.sqrt(2.0) * profile.peak, rel=1e-10)
    assert np.argmax(W) == torus.node_index(CENTER)


def test_support_inside_cutoff_ball(torus, profile):
    params = params_for(torus, 0.2)
    spec = AnsatzSpec.for_grid(torus, CENTER, 0.2)
    W = build_W(torus, params, spec, profile)
    outside = minimal_distance(torus, spec.xi) >= spec.cutoff_radius
    assert np.any(outside)
    assert np.all(W[outside] == 0.0)
    assert np.all(W >= 0.0)


def test_kernel_fields_vanish_at_center(torus, profile):
    params = params_for(torus, 0.2)
    spec = AnsatzSpec.for_grid(torus, CENTER, 0.2)
    center = torus.node_index(CENTER)
    for i in (1, 2):
        assert build_Z(torus, params, spec, i, profile)[center] == 0.0


def test_first_kernel_field_is_odd(torus, profile):
    params = params_for(torus, 0.2)
    spec = AnsatzSpec.for_grid(torus, CENTER, 0.2)
    Z1 = build_Z(torus, params, spec, 1, profile)
    hx, hy = torus.spacing
    for k in range(1, 6):
        for j in (-2, 0, 3):
            right = torus.node_index((CENTER[0] + k * hx, CENTER[1] + j * hy))
            left = torus.node_index((CENTER[0] - k * hx, CENTER[1] + j * hy))
            assert Z1[right] == pytest.approx(-Z1[left], abs=1e-12)


def test_kernel_index_validated(torus, profile):
    params = params_for(torus, 0.2)
    with pytest.raises(DomainError):
        build_Z(torus, params, AnsatzSpec.for_grid(torus, CENTER, 0.2), 3, profile)


def test_gram_symmetric_with_equal_diagonal(torus, profile):
    params = params_for(torus, 0.2)
    gram = gram_matrix(torus, params, AnsatzSpec.for_grid(torus, CENTER, 0.2), profile)
    assert gram[0, 1] == pytest.approx(gram[1, 0], rel=1e-12, abs=1e-14)
    assert gram[0, 0] == pytest.approx(gram[1, 1], rel=1e-8)
    assert abs(gram[0, 1]) < 1e-8 * gram[0, 0]


def test_epsilon_too_large(torus):
    # r = π/2 なので ε ≤ π/8
    with pytest.raises(DomainError):
        AnsatzSpec.for_grid(torus, CENTER, 0.5)


def test_epsilon_mismatch(torus, profile):
    params = params_for(torus, 0.1)
    with pytest.raises(DomainError):
        build_W(torus, params, AnsatzSpec.for_grid(torus, CENTER, 0.2), profile)


def test_mass_scaling(profile):
    # h ≈ ε/2
    grid = build_flat_torus(2 * math.pi, 256)
    params = params_for(grid, 0.05, a=1.0)
    values = ansatz_scalings(grid, params, AnsatzSpec.for_grid(grid, CENTER, 0.05), profile)
    assert values['W_sq'] == pytest.approx(values['W_sq_limit'], rel=0.05)
    assert values['W_p'] == pytest.approx(values['W_p_limit'], rel=0.05)


def test_gram_diagonal_limit(profile):
    grid = build_flat_torus(4.0, 256)
    params = params_for(grid, 0.1, omega=0.5)
    gram = gram_matrix(grid, params, AnsatzSpec.for_grid(grid, (2.0, 2.0), 0.1), profile)
    limit = gram_limit_constant(2.0, 1.0, 1.0, 0.5, 4.0, profile)
    assert gram[0, 0] == pytest.approx(limit, rel=0.05)
    assert gram[1, 1] == pytest.approx(limit, rel=0.05)
    values = ansatz_scalings(grid, params, AnsatzSpec.for_grid(grid, (2.0, 2.0), 0.1), profile)
    assert values['grad_W_sq'] == pytest.approx(values['grad_W_sq_limit'], rel=0.05)


@pytest.mark.slow
def test_gram_approaches_limit_for_constant_coefficients(profile):
    grid = build_flat_torus(4.0, 512)
    limit = gram_limit_constant(1.0, 1.0, 1.0, 0.0, 4.0, profile)
    ratios = []
    for eps in (0.2, 0.1, 0.05):
        gram = gram_matrix(grid, params_for(grid, eps, a=1.0), AnsatzSpec.for_grid(grid, (2.0, 2.0), eps), profile)
        ratios.append(abs(gram[0, 1]) / gram[0, 0])
    assert gram[0, 0] == pytest.approx(limit, rel=0.05)
    assert gram[1, 1] == pytest.approx(limit, rel=0.05)
    assert max(ratios) < 0.05
    for earlier, later in zip(ratios, ratios[1:]):
        assert later <= earlier + 1e-10


@pytest.mark.slow
def test_gram_off_diagonal_decays_with_variable_coefficients(profile):
    grid = build_flat_torus(2 * math.pi, 512)
    ratios = []
    for eps in (0.2, 0.1, 0.05):
        params = ProblemParams.from_specs(grid, "2 + 0.5*cos(x)*cos(y)", 1.0, 1.0, epsilon=eps)
        gram = gram_matrix(grid, params, AnsatzSpec.for_grid(grid, (1.0, 0.5), eps), profile)
        ratios.append(abs(gram[0, 1]) / gram[0, 0])
    assert ratios[-1] < 0.05
    assert ratios[-1] <= ratios[0] + 1e-12
