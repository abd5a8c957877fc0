"""
非線形ソルバーモジュール

方程式 (p) を近似解から Newton–Krylov で解き、組 (u, Ψ(u)) を復元し、
ε→0 での集中点を追跡する
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from loguru import logger
from scipy.optimize import brentq
from scipy.sparse.linalg import LinearOperator, gmres

from ansatz import AnsatzSpec, build_W
from elliptic_core import SPDSolver, ProblemParams, adjoint_istar, assemble_operator, norm_eps, stiffness_for
from energy import coupling_g, i_energy, nonlinearity_f, nonlinearity_f_prime, weighted_residual
from limit_profile import RadialProfile, solve_ground_state
from manifold import ManifoldGrid, geodesic_distance
from psi_solver import compute_psi, psi_derivative, psi_solver_for
from reduction import gamma, limit_constant
from utils import ConfigurationError, ConvergenceError, DomainError


INNER_RTOL = 1e-3
BACKTRACK_FACTOR = 0.5
MAX_BACKTRACKS = 20
TIE_TOLERANCE = 1e-10
RESOLUTION_FACTOR = 4.0
TRIVIAL_TOLERANCE = 1e-8
POLISH_FACTOR = 10.0


@dataclass
class NewtonResult:
    """Newton 反復の結果"""
    u: np.ndarray
    psi: np.ndarray
    iterations: int
    residual_norm: float
    history: List[Dict] = field(default_factory=list)
    trivial: bool = False
    spurious: bool = False

    @property
    def positive(self) -> bool:
        """全節点で u > 0（許容値 0）"""
        return bool(np.all(self.u > 0.0))

    @property
    def min_value(self) -> float:
        return float(np.min(self.u))

    @property
    def peak_value(self) -> float:
        return float(np.max(self.u))


def _jacobian(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray, psi: np.ndarray) -> LinearOperator:
    """h ↦ S h − μ(b f′(u)h + ω² b g′(u)[h])"""
    operator = assemble_operator(grid, params)
    weight = grid.measure * params.b * nonlinearity_f_prime(u, params.p)
    q, omega = params.q, params.omega
    coupled = omega != 0.0 and np.any(u)
    psi_solver = psi_solver_for(grid, params, u) if coupled else None

    def matvec(h):
        h = np.ravel(h)
        value = operator.matrix @ h - weight * h
        if coupled:
            dpsi = psi_derivative(grid, params, u, h, psi=psi, solver=psi_solver)
            dg = -q * (psi * (2.0 - q * psi) * h + (2.0 - 2.0 * q * psi) * u * dpsi)
            value = value - grid.measure * omega ** 2 * params.b * dg
        return value

    return LinearOperator((grid.n_nodes, grid.n_nodes), matvec=matvec, dtype=float)


def _state(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """(Ψ(u), 重み付き残差 F, ‖I′(u)‖_ε)"""
    psi = compute_psi(grid, params, u) if params.omega != 0.0 else np.zeros(grid.n_nodes)
    residual = weighted_residual(grid, params, u, psi)
    operator = assemble_operator(grid, params)
    gradient = operator.solver.solve(residual)
    norm = float(np.sqrt(max(gradient @ residual, 0.0))) / params.epsilon
    return psi, residual, norm


def newton_solve(grid: ManifoldGrid, params: ProblemParams, u0: np.ndarray, tol: float = 1e-8,
                 max_iter: int = 30) -> NewtonResult:
    """
    方程式 (p) を非厳密 Newton 法（内部 GMRES 相対許容 1e−3、前処理 S^{−1}）で解く

    Args:
        u0: 初期値（通常は Γ 最大点の W_{ε,ξ*}）
        tol: ‖I′_ε(u)‖_ε の許容値
        max_iter: 最大反復回数

    Returns:
        NewtonResult: max u ≤ 1e−8（自明解）なら trivial=True、
            正でない節点が残る非自明解は spurious=True

    Raises:
        ConvergenceError: 直線探索の停滞または反復上限
    """
    u = grid.check_field(u0, "u0").astype(float).copy()
    operator = assemble_operator(grid, params)
    preconditioner = LinearOperator((grid.n_nodes, grid.n_nodes), matvec=operator.solver.solve, dtype=float)

    psi, residual, norm = _state(grid, params, u)
    history: List[Dict] = [{'iteration': 0, 'residual_norm': norm, 'step': 0.0, 'krylov_info': 0}]
    logger.info(f"Newton start: eps={params.epsilon}, omega={params.omega}, residual={norm:.3e}")

    iteration = 0
    while norm >= tol:
        if iteration >= max_iter:
            logger.error(f"Newton reached max_iter={max_iter} with residual {norm:.3e}")
            raise ConvergenceError(f"Newton did not converge in {max_iter} iterations", history)
        iteration += 1
        jacobian = _jacobian(grid, params, u, psi)
        delta, info = gmres(jacobian, -residual, rtol=INNER_RTOL, atol=0.0, restart=50, maxiter=10,
                            M=preconditioner)
        if info != 0:
            logger.warning(f"Inner GMRES stopped with info={info} at Newton iteration {iteration}")

        step = 1.0
        for _ in range(MAX_BACKTRACKS + 1):
            candidate = u + step * delta
            c_psi, c_residual, c_norm = _state(grid, params, candidate)
            if c_norm < norm:
                break
            step *= BACKTRACK_FACTOR
        else:
            logger.error(f"Newton stagnated at iteration {iteration} (residual {norm:.3e})")
            raise ConvergenceError("Newton line search stagnated", history)

        u, psi, residual, norm = candidate, c_psi, c_residual, c_norm
        history.append({'iteration': iteration, 'residual_norm': norm, 'step': step, 'krylov_info': int(info)})
        logger.debug(f"Newton iteration {iteration}: residual={norm:.3e}, step={step}")

    trivial = float(np.max(u)) <= TRIVIAL_TOLERANCE
    spurious = False
    if trivial:
        logger.warning(f"Newton converged to the trivial branch (max u = {np.max(u):.3e})")
    elif np.min(u) <= 0.0:
        logger.debug(f"Iterate has non-positive nodes (min u = {np.min(u):.3e}), applying maximum principle step")
        polished = _maximum_principle_step(grid, params, u, psi)
        p_psi, p_residual, p_norm = _state(grid, params, polished)
        if p_norm < POLISH_FACTOR * tol and np.min(polished) > 0.0:
            u, psi, residual, norm = polished, p_psi, p_residual, p_norm
        else:
            spurious = True
            logger.error(f"Converged solution not positive everywhere (min u = {np.min(u):.3e})")
    logger.info(f"Newton converged in {iteration} iterations, residual={norm:.3e}, peak={np.max(u):.6f}")
    return NewtonResult(u=u, psi=psi, iterations=iteration, residual_norm=norm, history=history,
                        trivial=trivial, spurious=spurious)


def _maximum_principle_step(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray,
                            psi: np.ndarray) -> np.ndarray:
    """
    不動点形 (S + μω²qbΨ(2−qΨ)) u = μ b f(u) を一回解く

    左辺は M 行列、右辺は非負。直接法の前進・後退代入は同符号の和だけになるので、
    丸め誤差があっても解は節点ごとに非負
    """
    operator = assemble_operator(grid, params)
    shift = grid.measure * params.omega ** 2 * params.q * params.b * psi * (2.0 - params.q * psi)
    matrix = operator.matrix + sp.diags(shift)
    rhs = grid.measure * params.b * nonlinearity_f(u, params.p)
    return SPDSolver(matrix, "maximum principle", direct_limit=grid.n_nodes).solve(rhs)


@dataclass
class PeakLocation:
    """集中点の推定値"""
    point: Tuple[float, float]
    value: float
    node: int
    ties: List[int] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return len(self.ties) > 1


def concentration_point(grid: ManifoldGrid, u: np.ndarray) -> PeakLocation:
    """
    最大節点を 3×3 近傍の二次曲面当てはめで補正した集中点

    同値の最大（1e−10 以内）はすべて ties に入れ、辞書順で最初の節点を使う
    """
    u = grid.check_field(u, "u")
    top = float(np.max(u))
    ties = np.nonzero(u >= top - TIE_TOLERANCE)[0].tolist()
    node = int(ties[0])
    if len(ties) > 1:
        logger.warning(f"Concentration point ambiguous: {len(ties)} nodes within {TIE_TOLERANCE} of the max")

    n1, n2 = grid.shape
    h1, h2 = grid.spacing
    i, j = divmod(node, n2)
    offsets = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)]
    design = np.array([[1.0, di * h1, dj * h2, (di * h1) ** 2, di * dj * h1 * h2, (dj * h2) ** 2]
                       for di, dj in offsets])
    values = np.array([u[((i + di) % n1) * n2 + (j + dj) % n2] for di, dj in offsets])
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    hessian = np.array([[2 * coef[3], coef[4]], [coef[4], 2 * coef[5]]])

    base = np.array([grid.x1[node], grid.x2[node]])
    point = base
    value = top
    if len(ties) == 1 and np.all(np.linalg.eigvalsh(hessian) < 0):
        shift = np.linalg.solve(hessian, -coef[1:3])
        if abs(shift[0]) <= h1 and abs(shift[1]) <= h2:
            point = grid.wrap(base + shift)
            value = float(coef[0] + coef[1:3] @ shift + 0.5 * shift @ hessian @ shift)
    return PeakLocation(point=(float(point[0]), float(point[1])), value=value, node=node, ties=ties)


@dataclass
class ContinuationReport:
    """ε 継続の記録（失敗時は部分的）"""
    xi_star: Tuple[float, float]
    rows: List[Dict] = field(default_factory=list)
    failure: Optional[Dict] = None
    solutions: List[NewtonResult] = field(default_factory=list)
    tolerance: float = 1e-12

    @property
    def completed(self) -> bool:
        return self.failure is None

    @property
    def table(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=['epsilon', 'xi1', 'xi2', 'distance', 'peak', 'residual',
                                                'energy', 'energy_ratio', 'proxy', 'iterations',
                                                'min_u', 'equation_u', 'equation_v'])

    @property
    def monotone(self) -> bool:
        """距離列が（節点間隔の丸めを除き）非増加か"""
        distances = [row['distance'] for row in self.rows]
        return all(later <= earlier + self.tolerance for earlier, later in zip(distances, distances[1:]))

    def summary(self) -> Dict:
        return {'xi_star': list(self.xi_star), 'stages': len(self.rows), 'completed': self.completed,
                'monotone': self.monotone, 'failure': self.failure, 'rows': self.rows}


def continuation_run(grid: ManifoldGrid, params: ProblemParams, epsilons, xi_star, tol: float = 1e-8,
                     max_iter: int = 30, profile: Optional[RadialProfile] = None) -> ContinuationReport:
    """
    ε を減らしながら解き、集中点と ξ* の距離を記録する

    各段は一つ前の集中点に置いた W_{ε,ξ̂} から始める

    Raises:
        ConfigurationError: ε が減少列でない、または ε < 4h
    """
    epsilons = [float(e) for e in epsilons]
    if any(later >= earlier for earlier, later in zip(epsilons, epsilons[1:])):
        raise ConfigurationError(f"epsilon list must be strictly decreasing, got {epsilons}")
    limit = RESOLUTION_FACTOR * grid.min_spacing
    if min(epsilons) < limit:
        raise ConfigurationError(f"epsilon={min(epsilons)} below the resolution limit 4h={limit:.4f}")

    profile = profile or solve_ground_state(2, params.p)
    constant = limit_constant(params.p, profile)
    xi_star = tuple(float(x) for x in grid.snap(xi_star))
    # 二次当てはめの位置は Newton 許容誤差ぶん揺れる
    report = ContinuationReport(xi_star=xi_star, tolerance=1e-3 * grid.min_spacing)
    start = xi_star

    for eps in epsilons:
        stage = params.with_epsilon(eps)
        logger.info(f"Continuation stage eps={eps} from xi={start}")
        try:
            spec = AnsatzSpec.for_grid(grid, start, eps)
            result = newton_solve(grid, stage, build_W(grid, stage, spec, profile), tol=tol, max_iter=max_iter)
            peak = concentration_point(grid, result.u)
            hat = AnsatzSpec.for_grid(grid, peak.point, eps)
            proxy = norm_eps(grid, stage, result.u - build_W(grid, stage, hat, profile))
        except (ConvergenceError, DomainError) as e:
            logger.error(f"Continuation failed at eps={eps}: {e}")
            report.failure = {'epsilon': eps, 'error': type(e).__name__, 'message': str(e)}
            break

        energy = i_energy(grid, stage, result.u, result.psi)
        g = gamma(*stage.at_node(peak.node), 2, stage.p)
        residuals = system_residuals(grid, stage, result.u, result.psi)
        report.rows.append({
            'epsilon': eps,
            'xi1': peak.point[0],
            'xi2': peak.point[1],
            'distance': geodesic_distance(grid, peak.point, xi_star),
            'peak': result.peak_value,
            'residual': result.residual_norm,
            'energy': energy,
            'energy_ratio': energy / (constant * g),
            'proxy': proxy,
            'iterations': result.iterations,
            'min_u': result.min_value,
            'equation_u': residuals['equation_u'],
            'equation_v': residuals['equation_v'],
        })
        report.solutions.append(result)
        if result.trivial or result.spurious:
            logger.error(f"Continuation stage eps={eps} left the positive branch (min u = {result.min_value:.3e})")
            report.failure = {'epsilon': eps, 'error': 'NonPositiveSolution',
                              'message': f"min u = {result.min_value:.3e}, max u = {result.peak_value:.3e}"}
            break
        start = peak.point

    if report.completed and not report.monotone:
        logger.warning("Concentration distances are not monotone in epsilon")
    return report


def system_residuals(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray, v: np.ndarray) -> Dict[str, float]:
    """
    組 (u, v) を連立系の両方程式に代入した離散残差

    Returns:
        dict: 'equation_u'（i*_ε を通した双対ノルム）、'equation_v'（相対最大ノルム）
    """
    u = grid.check_field(u, "u")
    v = grid.check_field(v, "v")
    # ((qv−1)² − 1)u = g(u) の形
    source = params.b * (nonlinearity_f(u, params.p) + params.omega ** 2 * coupling_g(u, v, params.q))
    first = u - adjoint_istar(grid, params, source)
    rhs = grid.measure * params.b * params.q * u ** 2
    second = stiffness_for(grid, params) @ v + grid.measure * params.b * (1.0 + params.q ** 2 * u ** 2) * v - rhs
    scale = float(np.max(np.abs(rhs)))
    return {
        'equation_u': norm_eps(grid, params, first),
        'equation_v': float(np.max(np.abs(second))) / scale if scale > 0 else float(np.max(np.abs(second))),
    }


def constant_solution(params: ProblemParams) -> float:
    """
    全係数一定の問題の定数解 u₀ > 0
    d + ω²qbΨ₀(2 − qΨ₀) = b u₀^{p−2}, Ψ₀ = qu₀²/(1+q²u₀²)

    Raises:
        DomainError: 係数が一定でない
    """
    for name in ('a', 'b', 'c'):
        values = np.atleast_1d(getattr(params, name))
        if np.ptp(values) > 1e-14 * max(1.0, np.max(np.abs(values))):
            raise DomainError(f"constant_solution requires constant coefficients ({name} varies)")
    a = float(np.atleast_1d(params.a)[0])
    b = float(np.atleast_1d(params.b)[0])
    q, omega, p = params.q, params.omega, params.p
    d = a - omega ** 2 * b

    def balance(u):
        psi = q * u ** 2 / (1.0 + q ** 2 * u ** 2)
        return d + omega ** 2 * q * b * psi * (2.0 - q * psi) - b * u ** (p - 2.0)

    hi = 1.0
    while balance(hi) > 0:
        hi *= 2.0
    u0 = brentq(balance, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    logger.debug(f"Constant branch: u0={u0:.15f} (d={d}, omega={omega})")
    return float(u0)
