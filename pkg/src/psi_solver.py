"""
補助写像モジュール

第2方程式 −div_g(c∇Ψ) + b(1+q²u²)Ψ = b q u² の解 Ψ(u)、その微分 Ψ′(u)[h]、
汎関数 Θ(u) = ½∫b(1−qΨ(u))u²

Proca 質量 0 の退化した場合は v ≡ 1/q が第2方程式を解くため、ここでは扱わない
"""

from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp
from loguru import logger

from elliptic_core import ProblemParams, SPDSolver, stiffness_for
from manifold import ManifoldGrid


LOWER_TOL_FLAT = 1e-9
LOWER_TOL_WARPED = 1e-6


def psi_operator(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray) -> sp.csr_matrix:
    """L_u = K_c + diag(μ b (1+q²u²))"""
    u = grid.check_field(u, "u")
    potential = grid.measure * params.b * (1.0 + params.q ** 2 * u ** 2)
    return (stiffness_for(grid, params) + sp.diags(potential)).tocsr()


def psi_solver_for(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray) -> SPDSolver:
    """u を固定した L_u のソルバー（Ψ′ の繰り返し計算で再利用）"""
    return SPDSolver(psi_operator(grid, params, u), label="psi-operator")


def compute_psi(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray,
                solver: Optional[SPDSolver] = None) -> np.ndarray:
    """
    Ψ(u) を一回の線形解法で計算

    Args:
        grid: 格子
        params: 係数
        u: 場
        solver: 同じ u の L_u ソルバー（省略時は新規作成）

    Returns:
        np.ndarray: 0 ≤ Ψ < 1/q を満たす場

    Raises:
        ConvergenceError: 線形ソルバーの非収束
    """
    u = grid.check_field(u, "u")
    if not np.any(u):
        return np.zeros(grid.n_nodes)
    solver = solver or psi_solver_for(grid, params, u)
    psi = solver.solve(grid.measure * params.b * params.q * u ** 2)
    report = check_psi_bounds(grid, params, psi)
    if not report['ok']:
        logger.warning(f"Psi bounds violated on {grid.kind}: min={report['min']:.3e}, "
                       f"max*q={report['max'] * params.q:.6f}")
    return psi


def psi_derivative(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray, h: np.ndarray,
                   psi: Optional[np.ndarray] = None, solver: Optional[SPDSolver] = None) -> np.ndarray:
    """
    Ψ′(u)[h]: L_u V = 2 b q u (1 − qΨ) h の解
    """
    u = grid.check_field(u, "u")
    h = grid.check_field(h, "h")
    if not np.any(h) or not np.any(u):
        return np.zeros(grid.n_nodes)
    solver = solver or psi_solver_for(grid, params, u)
    if psi is None:
        psi = compute_psi(grid, params, u, solver=solver)
    rhs = grid.measure * 2.0 * params.b * params.q * u * (1.0 - params.q * psi) * h
    return solver.solve(rhs)


def theta(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray,
          psi: Optional[np.ndarray] = None) -> float:
    """Θ(u) = ½∫b(1 − qΨ(u))u²"""
    u = grid.check_field(u, "u")
    if psi is None:
        psi = compute_psi(grid, params, u)
    return 0.5 * float(np.sum(grid.measure * params.b * (1.0 - params.q * psi) * u ** 2))


def theta_prime(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray, h: np.ndarray,
                psi: Optional[np.ndarray] = None) -> float:
    """Θ′(u)[h] = ∫b(1 − qΨ(u))²uh"""
    u = grid.check_field(u, "u")
    h = grid.check_field(h, "h")
    if psi is None:
        psi = compute_psi(grid, params, u)
    return float(np.sum(grid.measure * params.b * (1.0 - params.q * psi) ** 2 * u * h))


def check_psi_bounds(grid: ManifoldGrid, params: ProblemParams, psi: np.ndarray,
                     tol: Optional[float] = None) -> Dict:
    """
    0 ≤ Ψ < 1/q の検査

    回転面の離散化は M 行列とは限らないため下限の許容値を緩める

    Returns:
        dict: 最小値・最大値・違反数
    """
    if tol is None:
        tol = LOWER_TOL_FLAT if grid.kind == 'flat_torus' else LOWER_TOL_WARPED
    lower = int(np.sum(psi < -tol))
    upper = int(np.sum(psi >= 1.0 / params.q))
    return {
        'min': float(np.min(psi)),
        'max': float(np.max(psi)),
        'lower_violations': lower,
        'upper_violations': upper,
        'ok': lower == 0 and upper == 0,
    }
