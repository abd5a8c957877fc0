"""
近似解モジュール

点ξに集中する近似解 W_{ε,ξ}、核の場 Z^i_{ε,ξ}、切断関数 χ、Gram 行列
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from loguru import logger

from elliptic_core import ProblemParams, inner_product_eps, stiffness_for
from limit_profile import (ProfileScaling, RadialProfile, laplacian_square_integral,
                           linearized_profile, profile_integrals, scaled_profile, solve_ground_state)
from manifold import ManifoldGrid, normal_coordinates
from utils import DomainError


@dataclass(frozen=True)
class AnsatzSpec:
    """集中点ξ、スケールε、切断半径 r"""
    xi: Tuple[float, float]
    epsilon: float
    cutoff_radius: float

    @classmethod
    def for_grid(cls, grid: ManifoldGrid, xi, epsilon: float) -> "AnsatzSpec":
        """格子の既定の切断半径で作る（ξ は最寄り節点に寄せる）"""
        snapped = grid.snap(xi)
        spec = cls(xi=(float(snapped[0]), float(snapped[1])), epsilon=float(epsilon),
                   cutoff_radius=grid.ansatz_radius)
        spec.validate(grid)
        return spec

    def validate(self, grid: ManifoldGrid):
        if self.cutoff_radius >= grid.injectivity_radius:
            raise DomainError(f"Cutoff radius {self.cutoff_radius:.4f} not below injectivity radius "
                              f"{grid.injectivity_radius:.4f}")
        if self.epsilon > self.cutoff_radius / 4.0:
            raise DomainError(f"epsilon={self.epsilon} too large for cutoff radius {self.cutoff_radius:.4f} "
                              f"(need epsilon <= r/4 = {self.cutoff_radius / 4.0:.4f})")


def _smooth_ramp(t: np.ndarray) -> np.ndarray:
    """e^{−1/t} から作る C^∞ のステップ（t ≤ 0 で 0、t ≥ 1 で 1）"""
    t = np.asarray(t, dtype=float)

    def bump(s):
        return np.where(s > 0.0, np.exp(-1.0 / np.where(s > 0.0, s, 1.0)), 0.0)

    left, right = bump(t), bump(1.0 - t)
    return left / (left + right)


def cutoff(rho: np.ndarray, radius: float) -> np.ndarray:
    """χ: |y| ≤ r/2 で 1、|y| ≥ r で 0"""
    return _smooth_ramp(2.0 - 2.0 * np.asarray(rho, dtype=float) / radius)


def local_scaling(grid: ManifoldGrid, params: ProblemParams, xi) -> ProfileScaling:
    """ξ の最寄り節点の係数からスケーリングを作る"""
    a, b, c = params.at_node(grid.node_index(xi))
    return ProfileScaling.from_coefficients(a, b, c, params.p)


def _prepare(grid: ManifoldGrid, params: ProblemParams, spec: AnsatzSpec,
             profile: Optional[RadialProfile]):
    spec.validate(grid)
    if not math.isclose(spec.epsilon, params.epsilon, rel_tol=1e-12):
        raise DomainError(f"Ansatz epsilon {spec.epsilon} differs from problem epsilon {params.epsilon}")
    profile = profile or solve_ground_state(2, params.p)
    scaling = local_scaling(grid, params, spec.xi)
    y, inside = normal_coordinates(grid, spec.xi, spec.cutoff_radius)
    return profile, scaling, y, inside


def build_W(grid: ManifoldGrid, params: ProblemParams, spec: AnsatzSpec,
            profile: Optional[RadialProfile] = None) -> np.ndarray:
    """
    W_{ε,ξ}(x) = V^ξ(exp_ξ^{−1}(x)/ε)·χ(exp_ξ^{−1}(x))

    Returns:
        np.ndarray: B_g(ξ, r) の外で厳密に 0 の場

    Raises:
        DomainError: ε が切断半径に対して大きすぎる
    """
    profile, scaling, y, inside = _prepare(grid, params, spec, profile)
    W = np.zeros(grid.n_nodes)
    yi = y[inside]
    rho = np.hypot(yi[:, 0], yi[:, 1])
    W[inside] = scaled_profile(scaling, profile, yi / spec.epsilon) * cutoff(rho, spec.cutoff_radius)
    return W


def build_Z(grid: ManifoldGrid, params: ProblemParams, spec: AnsatzSpec, i: int,
            profile: Optional[RadialProfile] = None) -> np.ndarray:
    """Z^i_{ε,ξ}(x) = ψ^i(exp_ξ^{−1}(x)/ε)·χ(exp_ξ^{−1}(x))"""
    if i not in (1, 2):
        raise DomainError(f"Kernel index must be 1 or 2, got {i}")
    profile, scaling, y, inside = _prepare(grid, params, spec, profile)
    Z = np.zeros(grid.n_nodes)
    yi = y[inside]
    rho = np.hypot(yi[:, 0], yi[:, 1])
    Z[inside] = linearized_profile(scaling, profile, i, yi / spec.epsilon) * cutoff(rho, spec.cutoff_radius)
    return Z


def gram_matrix(grid: ManifoldGrid, params: ProblemParams, spec: AnsatzSpec,
                profile: Optional[RadialProfile] = None) -> np.ndarray:
    """⟨Z^h, Z^k⟩_ε の 2×2 行列"""
    Z = [build_Z(grid, params, spec, i, profile) for i in (1, 2)]
    gram = np.array([[inner_product_eps(grid, params, Z[h], Z[k]) for k in range(2)] for h in range(2)])
    logger.debug(f"Gram matrix at xi={spec.xi}, eps={spec.epsilon}: {gram.tolist()}")
    return gram


def gram_limit_constant(a: float, b: float, c: float, omega: float, p: float,
                        profile: Optional[RadialProfile] = None) -> float:
    """
    ε→0 での Gram 対角成分 c∫|∇ψ¹|² + d∫(ψ¹)²

    ∫|∇ψ¹|² = γ²A/2·∫(ΔU)²、∫(ψ¹)² = γ²/2·∫|∇U|² を使う
    """
    profile = profile or solve_ground_state(2, p)
    scaling = ProfileScaling.from_coefficients(a, b, c, p)
    _, int_grad, _ = profile_integrals(profile)
    gradient_part = 0.5 * scaling.gamma ** 2 * scaling.A * laplacian_square_integral(profile)
    mass_part = 0.5 * scaling.gamma ** 2 * int_grad
    return c * gradient_part + (a - omega ** 2 * b) * mass_part


def ansatz_scalings(grid: ManifoldGrid, params: ProblemParams, spec: AnsatzSpec,
                    profile: Optional[RadialProfile] = None) -> Dict[str, float]:
    """
    W の積分量と ε→0 での極限値

    Returns:
        dict: ε^{−2}∫W^p, ε^{−2}∫W², ∫|∇W|² とそれぞれの極限
    """
    profile = profile or solve_ground_state(2, params.p)
    W = build_W(grid, params, spec, profile)
    scaling = local_scaling(grid, params, spec.xi)
    int_up, int_grad, int_sq = profile_integrals(profile)
    eps2 = spec.epsilon ** 2
    unit = stiffness_for(grid, ProblemParams(a=np.ones(grid.n_nodes), b=np.ones(grid.n_nodes),
                                             c=np.ones(grid.n_nodes), epsilon=1.0))
    g, A, p = scaling.gamma, scaling.A, params.p
    return {
        'W_p': float(np.sum(grid.measure * W ** p)) / eps2,
        'W_p_limit': g ** p / A * int_up,
        'W_sq': float(np.sum(grid.measure * W ** 2)) / eps2,
        'W_sq_limit': g ** 2 / A * int_sq,
        'grad_W_sq': float(W @ (unit @ W)),
        'grad_W_sq_limit': g ** 2 * int_grad,
    }
