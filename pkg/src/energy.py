"""
エネルギー汎関数モジュール

J_ε, G_ε, I_ε = J_ε + (ω²/2)G_ε と勾配 u − i*_ε[b f(u) + ω² b g(u)]。
内積と同じ求積で評価するので、離散勾配は離散汎関数の厳密な双対になる
"""

from typing import Optional

import numpy as np

from elliptic_core import ProblemParams, adjoint_istar, assemble_operator
from manifold import ManifoldGrid
from psi_solver import compute_psi


def positive_part_power(u: np.ndarray, s: float) -> np.ndarray:
    """(u⁺)^s"""
    return np.power(np.maximum(u, 0.0), s)


def nonlinearity_f(u: np.ndarray, p: float) -> np.ndarray:
    """f(u) = (u⁺)^{p−1}"""
    return positive_part_power(u, p - 1.0)


def nonlinearity_f_prime(u: np.ndarray, p: float) -> np.ndarray:
    """f′(u) = (p−1)(u⁺)^{p−2}"""
    return (p - 1.0) * positive_part_power(u, p - 2.0)


def coupling_g(u: np.ndarray, psi: np.ndarray, q: float) -> np.ndarray:
    """g(u) = (q²Ψ² − 2qΨ)u（u ≥ 0 なら非正）"""
    return (q ** 2 * psi ** 2 - 2.0 * q * psi) * u


def source_term(params: ProblemParams, u: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """N(u) = b f(u) + ω² b g(u)"""
    return params.b * (nonlinearity_f(u, params.p) + params.omega ** 2 * coupling_g(u, psi, params.q))


def j_energy(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray) -> float:
    """J_ε(u) = (2ε²)^{−1}∫[ε²c|∇u|² + du²] − (pε²)^{−1}∫b(u⁺)^p"""
    u = grid.check_field(u, "u")
    operator = assemble_operator(grid, params)
    eps2 = params.epsilon ** 2
    quadratic = operator.energy(u, u) / (2.0 * eps2)
    potential = float(np.sum(grid.measure * params.b * positive_part_power(u, params.p)))
    return quadratic - potential / (params.p * eps2)


def g_energy(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray,
             psi: Optional[np.ndarray] = None) -> float:
    """G_ε(u) = (q/ε²)∫bΨ(u)u²"""
    u = grid.check_field(u, "u")
    if psi is None:
        psi = compute_psi(grid, params, u)
    return params.q / params.epsilon ** 2 * float(np.sum(grid.measure * params.b * psi * u ** 2))


def i_energy(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray,
             psi: Optional[np.ndarray] = None) -> float:
    """I_ε = J_ε + (ω²/2)G_ε"""
    value = j_energy(grid, params, u)
    if params.omega == 0.0:
        return value
    return value + 0.5 * params.omega ** 2 * g_energy(grid, params, u, psi)


def weighted_residual(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray,
                      psi: Optional[np.ndarray] = None) -> np.ndarray:
    """方程式 (p) の重み付き残差 S u − μ N(u)"""
    u = grid.check_field(u, "u")
    if psi is None:
        psi = compute_psi(grid, params, u) if params.omega != 0.0 else np.zeros(grid.n_nodes)
    operator = assemble_operator(grid, params)
    return operator.matrix @ u - grid.measure * source_term(params, u, psi)


def i_gradient(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray,
               psi: Optional[np.ndarray] = None) -> np.ndarray:
    """
    ⟨·,·⟩_ε に関する I_ε の勾配 u − i*_ε[b f(u) + ω² b g(u)]
    """
    u = grid.check_field(u, "u")
    if psi is None:
        psi = compute_psi(grid, params, u) if params.omega != 0.0 else np.zeros(grid.n_nodes)
    return u - adjoint_istar(grid, params, source_term(params, u, psi))
