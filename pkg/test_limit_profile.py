"""
基底状態ソルバーのテスト
"""

import math

import numpy as np
import pytest

from limit_profile import (ProfileScaling, critical_exponent, laplacian_square_integral, linearized_profile,
                           profile_integrals, scaled_profile, solve_ground_state)
from utils import DomainError


def soliton(r, p):
    """1次元の厳密解 (p/2)^{1/(p−2)} sech^{2/(p−2)}((p−2)r/2)"""
    return (p / 2.0) ** (1.0 / (p - 2.0)) / np.cosh(0.5 * (p - 2.0) * r) ** (2.0 / (p - 2.0))


@pytest.mark.parametrize("p, peak", [(4.0, math.sqrt(2.0)), (3.0, 1.5)])
def test_one_dimensional_peak_matches_soliton(p, peak):
    profile = solve_ground_state(1, p)
    assert abs(profile.peak - peak) < 1e-8


def test_one_dimensional_shape_matches_soliton():
    profile = solve_ground_state(1, 4.0)
    r = np.array([0.5, 1.0, 2.0, 4.0])
    assert np.max(np.abs(profile(r) - soliton(r, 4.0))) < 1e-6


def test_two_dimensional_nehari_identity(profile):
    int_up, int_grad, int_sq = profile_integrals(profile)
    assert abs(int_grad + int_sq - int_up) / int_up < 1e-6


def test_profile_positive_and_decreasing(profile):
    assert np.all(profile.values > 0)
    assert np.all(np.diff(profile.values) <= 1e-14)
    assert profile.residual < 1e-8


def test_profile_vanishes_beyond_truncation(profile):
    assert profile(profile.truncation_radius + 1.0) == 0.0
    assert profile.slope(profile.truncation_radius + 1.0) == 0.0
    assert profile(profile.truncation_radius) < 1e-8


def test_frame_columns(profile):
    frame = profile.to_frame()
    assert list(frame.columns) == ['r', 'U', 'Uprime']
    assert frame['r'].iloc[0] == 0.0


def test_laplacian_square_integral_positive(profile):
    assert laplacian_square_integral(profile) > 0


@pytest.mark.parametrize("dim, p", [(3, 6.0), (3, 7.0), (2, 2.0), (4, 3.0), (1, 1.5)])
def test_invalid_exponent_rejected(dim, p):
    with pytest.raises(DomainError):
        solve_ground_state(dim, p)


def test_critical_exponent():
    assert critical_exponent(3) == 6.0
    assert critical_exponent(2) == math.inf
    assert critical_exponent(1) == math.inf


def test_scaling_from_coefficients():
    unit = ProfileScaling.from_coefficients(1.0, 1.0, 1.0, 4.0)
    assert (unit.A, unit.B, unit.gamma) == (1.0, 1.0, 1.0)
    scaled = ProfileScaling.from_coefficients(4.0, 1.0, 1.0, 4.0)
    assert scaled.A == 4.0 and scaled.B == 1.0
    assert abs(scaled.gamma - 2.0) < 1e-15
    assert abs(ProfileScaling.from_coefficients(2.0, 1.0, 1.0, 4.0).gamma - math.sqrt(2.0)) < 1e-15
    assert abs(ProfileScaling.from_coefficients(2.0, 2.0, 1.0, 3.0).gamma - 1.0) < 1e-15
    with pytest.raises(DomainError):
        ProfileScaling.from_coefficients(0.0, 1.0, 1.0, 4.0)


def test_scaled_and_linearized_profile(profile):
    scaling = ProfileScaling.from_coefficients(2.0, 1.0, 1.0, 4.0)
    assert abs(scaled_profile(scaling, profile, [0.0, 0.0]) - scaling.gamma * profile.peak) < 1e-12
    z = np.array([[0.3, -0.2], [1.0, 0.5]])
    assert np.allclose(linearized_profile(scaling, profile, 1, -z), -linearized_profile(scaling, profile, 1, z))
    assert linearized_profile(scaling, profile, 2, [0.0, 0.0]) == 0.0
    with pytest.raises(DomainError):
        linearized_profile(scaling, profile, 3, z)


def test_linearized_profile_solves_linearized_equation(profile):
    # −Δψ + Aψ − (p−1)BV^{p−2}ψ = 0 を4次精度の差分で確かめる
    scaling = ProfileScaling.from_coefficients(1.0, 1.0, 1.0, 4.0)
    h = 0.02
    axis = np.arange(-6.0, 6.0 + h / 2, h)
    z = np.stack(np.meshgrid(axis, axis, indexing='ij'), axis=-1)
    psi = linearized_profile(scaling, profile, 1, z)
    V = scaled_profile(scaling, profile, z)
    inner = (slice(2, -2), slice(2, -2))
    lap = np.zeros_like(psi[inner])
    for ax in (0, 1):
        def shift(k):
            return np.roll(psi, -k, axis=ax)[inner]
        lap += (-shift(2) + 16 * shift(1) - 30 * psi[inner] + 16 * shift(-1) - shift(-2)) / (12 * h ** 2)
    residual = -lap + scaling.A * psi[inner] - 3.0 * scaling.B * V[inner] ** 2 * psi[inner]
    assert np.max(np.abs(residual)) < 1e-4


@pytest.mark.parametrize("dim, tolerance", [(1, 0.05), (2, 0.10)])
def test_exponential_tail(dim, tolerance):
    profile = solve_ground_state(dim, 4.0)
    tail = (profile.values > 1e-7) & (profile.values < 1e-6)
    assert np.count_nonzero(tail) > 10
    slope = np.polyfit(profile.radii[tail], np.log(profile.values[tail]), 1)[0]
    assert slope == pytest.approx(-1.0, rel=tolerance)


def test_two_dimensional_profile_matches_finer_shooting(profile):
    finer = solve_ground_state(2, 4.0, step=5e-4)
    assert abs(finer.peak - profile.peak) < 1e-6
    r = np.array([0.0, 0.5, 1.0, 2.0, 4.0])
    assert np.max(np.abs(finer(r) - profile(r))) < 1e-6
    # 2次元3乗非線形の基底状態 U(0) ≈ 2.2062
    assert profile.peak == pytest.approx(2.2062, abs=1e-3)
