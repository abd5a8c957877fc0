"""
縮約モジュール

核 K = span{Z¹, Z²} への射影、補正項 φ_{ε,ξ}、縮約エネルギー Ĩ_ε(ξ)、
係数から閉じた形で決まる Γ(ξ) とその持ち上げ版、ξ格子上のランドスケープ走査
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy.sparse.linalg import LinearOperator, gmres

from ansatz import AnsatzSpec, build_W, build_Z
from elliptic_core import ProblemParams, adjoint_istar, assemble_operator, standard_norm
from energy import coupling_g, i_energy, nonlinearity_f, nonlinearity_f_prime
from limit_profile import RadialProfile, profile_integrals, solve_ground_state
from manifold import ManifoldGrid, geodesic_distance
from psi_solver import compute_psi
from utils import ConvergenceError, DomainError, get_worker_count


GRAM_CONDITION_LIMIT = 1e12
GROWTH_WINDOW = 5
DAMPED_STEP = 0.5
KRYLOV_TOL = 1e-10
COERCIVITY_FLOOR = 1e-6


@dataclass(eq=False)
class KernelBasis:
    """Z¹, Z² と ε内積の Gram 行列"""
    fields: np.ndarray
    gram: np.ndarray
    weighted: np.ndarray
    epsilon: float

    @classmethod
    def build(cls, grid: ManifoldGrid, params: ProblemParams, spec: AnsatzSpec,
              profile: Optional[RadialProfile] = None) -> "KernelBasis":
        Z = np.vstack([build_Z(grid, params, spec, i, profile) for i in (1, 2)])
        operator = assemble_operator(grid, params)
        # S Z^k（⟨Z^k, φ⟩_ε = ε^{−2}(S Z^k)·φ）
        weighted = np.vstack([operator.matrix @ z for z in Z])
        gram = (weighted @ Z.T) / params.epsilon ** 2
        gram = 0.5 * (gram + gram.T)
        condition = np.linalg.cond(gram)
        if not np.isfinite(condition) or condition > GRAM_CONDITION_LIMIT:
            raise DomainError(f"Gram matrix numerically singular (cond={condition:.3e}); "
                              f"epsilon={params.epsilon} too large for the grid?")
        return cls(fields=Z, gram=gram, weighted=weighted, epsilon=params.epsilon)

    def coefficients(self, phi: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.gram, (self.weighted @ phi) / self.epsilon ** 2)

    def project(self, phi: np.ndarray) -> np.ndarray:
        """Π^⊥φ = φ − Σ Z^h (G^{−1})_{hk} ⟨Z^k, φ⟩_ε"""
        return phi - self.coefficients(phi) @ self.fields


def kernel_basis(grid: ManifoldGrid, params: ProblemParams, spec: AnsatzSpec,
                 profile: Optional[RadialProfile] = None) -> KernelBasis:
    return KernelBasis.build(grid, params, spec, profile)


def project_orthogonal(grid: ManifoldGrid, params: ProblemParams, spec: AnsatzSpec, phi: np.ndarray,
                       basis: Optional[KernelBasis] = None) -> np.ndarray:
    """
    ⟨·,·⟩_ε に関する K^⊥ への直交射影

    Raises:
        DomainError: Gram 行列が数値的に特異
    """
    phi = grid.check_field(phi, "phi")
    basis = basis or kernel_basis(grid, params, spec)
    return basis.project(phi)


class CorrectorProblem:
    """
    補正方程式 Π^⊥{W+φ − i*_ε[b f(W+φ) + ω² b g(W+φ)]} = 0 の作業領域

    L(φ) = Π^⊥{φ − i*_ε[b f′(W)φ]} と N + S + R をまとめて扱う
    """

    def __init__(self, grid: ManifoldGrid, params: ProblemParams, spec: AnsatzSpec,
                 base: Optional[np.ndarray] = None, profile: Optional[RadialProfile] = None):
        self.grid = grid
        self.params = params
        self.spec = spec
        self.base = build_W(grid, params, spec, profile) if base is None else grid.check_field(base, "base")
        self.basis = kernel_basis(grid, params, spec, profile)
        self.operator = assemble_operator(grid, params)
        self.linear_weight = params.b * nonlinearity_f_prime(self.base, params.p)
        self._linear = LinearOperator((grid.n_nodes, grid.n_nodes), matvec=self.apply_linear, dtype=float)

    def norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(self.operator.energy(u, u), 0.0))) / self.params.epsilon

    def apply_linear(self, x: np.ndarray) -> np.ndarray:
        x = self.basis.project(np.ravel(x))
        return self.basis.project(x - adjoint_istar(self.grid, self.params, self.linear_weight * x))

    def source(self, u: np.ndarray) -> np.ndarray:
        """b f(u) + ω² b g(u)"""
        params = self.params
        value = params.b * nonlinearity_f(u, params.p)
        if params.omega != 0.0:
            psi = compute_psi(self.grid, params, u)
            value = value + params.omega ** 2 * params.b * coupling_g(u, psi, params.q)
        return value

    def right_hand_side(self, phi: np.ndarray) -> np.ndarray:
        """N(φ) + S(φ) + R を一回の i* で"""
        u = self.base + phi
        inner = self.source(u) - self.linear_weight * phi
        return self.basis.project(adjoint_istar(self.grid, self.params, inner) - self.base)

    def residual(self, phi: np.ndarray) -> np.ndarray:
        u = self.base + phi
        return self.basis.project(u - adjoint_istar(self.grid, self.params, self.source(u)))

    def remainder(self) -> np.ndarray:
        """R = Π^⊥{i*_ε[b f(W)] − W}"""
        value = self.params.b * nonlinearity_f(self.base, self.params.p)
        return self.basis.project(adjoint_istar(self.grid, self.params, value) - self.base)

    def solve_linear(self, rhs: np.ndarray) -> np.ndarray:
        x, info = gmres(self._linear, rhs, rtol=KRYLOV_TOL, atol=0.0, restart=60, maxiter=20)
        if info != 0:
            logger.warning(f"GMRES on K-perp stopped with info={info}")
        return self.basis.project(x)

    def coercivity_estimate(self, steps: int = 20, seed: int = 0) -> float:
        """
        K^⊥ 上の ‖L(φ)‖_ε ≥ C‖φ‖_ε の C を L² の Lanczos（Ritz 値）で推定
        """
        rng = np.random.default_rng(seed)
        start = self.basis.project(rng.normal(size=self.grid.n_nodes))

        def inner(x, y):
            return float(x @ (self.operator.matrix @ y)) / self.params.epsilon ** 2

        start /= np.sqrt(inner(start, start))
        basis = [start]
        alphas, betas = [], []
        for _ in range(steps):
            v = basis[-1]
            w = self.apply_linear(self.apply_linear(v))
            alpha = inner(w, v)
            alphas.append(alpha)
            for b in basis:
                w = w - inner(w, b) * b
            beta = np.sqrt(max(inner(w, w), 0.0))
            if beta < 1e-12:
                break
            betas.append(beta)
            basis.append(w / beta)
        m = len(alphas)
        tri = np.diag(alphas) + np.diag(betas[:m - 1], 1) + np.diag(betas[:m - 1], -1)
        return float(np.sqrt(max(np.min(np.linalg.eigvalsh(tri)), 0.0)))


def solve_corrector(grid: ManifoldGrid, params: ProblemParams, spec: AnsatzSpec, max_iter: int = 50,
                    tol: float = 1e-8, base: Optional[np.ndarray] = None,
                    profile: Optional[RadialProfile] = None,
                    check_invertibility: bool = True) -> Tuple[np.ndarray, List[Dict]]:
    """
    補正項 φ_{ε,ξ} ∈ K^⊥ を不動点反復 φ ← L^{−1}(N(φ)+S(φ)+R) で求める

    発散したら刻み 0.5 の減衰反復に切り替える

    Args:
        base: W_{ε,ξ} の代わりに使う場（省略時は build_W）

    Returns:
        Tuple: (φ, 反復ごとの {'iteration', 'phi_norm', 'residual_norm', 'step'})

    Raises:
        DomainError: L が K^⊥ 上で可逆とみなせない
        ConvergenceError: 5回連続でノルムが増大（減衰後も）
    """
    problem = CorrectorProblem(grid, params, spec, base=base, profile=profile)
    if check_invertibility:
        coercivity = problem.coercivity_estimate()
        logger.debug(f"Coercivity estimate of L on K-perp: {coercivity:.4e}")
        if coercivity < COERCIVITY_FLOOR:
            raise DomainError(f"Linearized operator not invertible on K-perp (estimate {coercivity:.3e})")

    phi = np.zeros(grid.n_nodes)
    history: List[Dict] = []
    step = 1.0
    residual_norm = problem.norm(problem.residual(phi))
    history.append({'iteration': 0, 'phi_norm': 0.0, 'residual_norm': residual_norm, 'step': step})
    best = (residual_norm, phi.copy())
    growth = 0

    for iteration in range(1, max_iter + 1):
        if residual_norm < tol:
            break
        target = problem.solve_linear(problem.right_hand_side(phi))
        phi = (1.0 - step) * phi + step * target
        new_norm = problem.norm(problem.residual(phi))
        history.append({'iteration': iteration, 'phi_norm': problem.norm(phi),
                        'residual_norm': new_norm, 'step': step})
        logger.debug(f"Corrector iteration {iteration}: residual={new_norm:.3e}, step={step}")

        growth = growth + 1 if new_norm > residual_norm else 0
        residual_norm = new_norm
        if new_norm < best[0]:
            best = (new_norm, phi.copy())
        if growth >= GROWTH_WINDOW:
            if step == DAMPED_STEP:
                logger.error(f"Corrector diverged at eps={params.epsilon}, xi={spec.xi}")
                raise ConvergenceError("Corrector fixed point diverged (damped)", history)
            logger.warning(f"Corrector diverging at eps={params.epsilon}; switching to damped step {DAMPED_STEP}")
            step = DAMPED_STEP
            growth = 0
            residual_norm, phi = best[0], best[1].copy()

    if residual_norm >= tol:
        logger.error(f"Corrector not converged after {max_iter} iterations (residual {residual_norm:.3e})")
        raise ConvergenceError(f"Corrector not converged after {max_iter} iterations", history)
    return phi, history


def remainder_norm(grid: ManifoldGrid, params: ProblemParams, spec: AnsatzSpec,
                   profile: Optional[RadialProfile] = None) -> float:
    """‖R_{ε,ξ}‖_ε"""
    problem = CorrectorProblem(grid, params, spec, profile=profile)
    return problem.norm(problem.remainder())


def corrector_diagnostics(grid: ManifoldGrid, params: ProblemParams, spec: AnsatzSpec,
                          max_iter: int = 50, tol: float = 1e-8,
                          profile: Optional[RadialProfile] = None) -> Dict[str, float]:
    """
    補正項の大きさの診断

    Returns:
        dict: ‖φ‖_ε, ‖R‖_ε, ‖Ψ(W+φ)‖_g, 可逆性推定, 反復回数
    """
    problem = CorrectorProblem(grid, params, spec, profile=profile)
    coercivity = problem.coercivity_estimate()
    phi, history = solve_corrector(grid, params, spec, max_iter=max_iter, tol=tol,
                                   profile=profile, check_invertibility=False)
    psi = compute_psi(grid, params, problem.base + phi)
    return {
        'epsilon': params.epsilon,
        'phi_norm': problem.norm(phi),
        'remainder_norm': problem.norm(problem.remainder()),
        'psi_norm': standard_norm(grid, psi),
        'coercivity': coercivity,
        'iterations': len(history) - 1,
        'orthogonality': float(np.max(np.abs(problem.basis.weighted @ phi))) / params.epsilon ** 2,
    }


def reduced_energy(grid: ManifoldGrid, params: ProblemParams, spec: AnsatzSpec,
                   with_corrector: bool = False, profile: Optional[RadialProfile] = None,
                   max_iter: int = 50, tol: float = 1e-8) -> float:
    """Ĩ_ε(ξ) = I_ε(W+φ)（with_corrector=False なら I_ε(W)）"""
    W = build_W(grid, params, spec, profile)
    if not with_corrector:
        return i_energy(grid, params, W)
    phi, _ = solve_corrector(grid, params, spec, max_iter=max_iter, tol=tol, base=W, profile=profile)
    return i_energy(grid, params, W + phi)


def gamma(a, b, c, n: int, p: float):
    """Γ = c^{n/2} a^{p/(p−2)−n/2} / b^{2/(p−2)}（配列可）"""
    a, b, c = (np.asarray(x, dtype=float) for x in (a, b, c))
    if np.any(a <= 0) or np.any(b <= 0) or np.any(c <= 0):
        raise DomainError("gamma requires a, b, c > 0")
    value = c ** (n / 2.0) * a ** (p / (p - 2.0) - n / 2.0) / b ** (2.0 / (p - 2.0))
    return float(value) if value.ndim == 0 else value


def gamma_lifted(kind: str, n: int, p: float, beta, f=None, k: int = 1, mu=None):
    """
    持ち上げた問題の Γ

    Args:
        kind: 'warped'（Γ = f^k β^{p/(p−2)−n/2}）または
              'harmonic_morphism'（Γ = β^{p/(p−2)−n/2} μ^{n/2−1}）
    """
    beta = np.asarray(beta, dtype=float)
    exponent = p / (p - 2.0) - n / 2.0
    if kind == 'warped':
        f = np.asarray(f, dtype=float)
        if np.any(f <= 0):
            raise DomainError("Warping function must be positive")
        value = f ** k * beta ** exponent
    elif kind == 'harmonic_morphism':
        mu = np.asarray(1.0 if mu is None else mu, dtype=float)
        if np.any(mu <= 0):
            raise DomainError("Dilation data mu must be positive")
        value = beta ** exponent * mu ** (n / 2.0 - 1.0)
    else:
        raise DomainError(f"Unknown lift kind {kind!r}")
    return float(value) if np.ndim(value) == 0 else value


def limit_constant(p: float, profile: Optional[RadialProfile] = None) -> float:
    """C = (1/2 − 1/p)∫_{ℝ²}U^p"""
    profile = profile or solve_ground_state(2, p)
    int_up, _, _ = profile_integrals(profile)
    return (0.5 - 1.0 / p) * int_up


def scaling_exponent(epsilons, values) -> float:
    """log–log 回帰の傾き"""
    return float(np.polyfit(np.log(np.asarray(epsilons, dtype=float)),
                            np.log(np.abs(np.asarray(values, dtype=float))), 1)[0])


def xi_grid(grid: ManifoldGrid, n: int = 16) -> np.ndarray:
    """PDE 格子とは独立の粗い一様 ξ 格子（節点に寄せる）、形状 (n, n, 2)"""
    axis1 = np.arange(n) * grid.periods[0] / n
    axis2 = np.arange(n) * grid.periods[1] / n
    points = np.empty((n, n, 2))
    for i, s in enumerate(axis1):
        for j, t in enumerate(axis2):
            points[i, j] = grid.snap((s, t))
    return points


@dataclass
class LandscapeResult:
    """ランドスケープ走査の結果"""
    table: pd.DataFrame
    fitted_constant: float
    max_deviation: float
    reference_constant: float
    reference_deviation: float
    argmax_xi: Tuple[float, float]
    gamma_argmax_xi: Tuple[float, float]
    argmax_gap: float
    gradient_gap: Optional[float] = None
    summary: Dict = field(default_factory=dict)


def landscape_scan(grid: ManifoldGrid, params: ProblemParams, epsilon: float, xi_points,
                   with_corrector: bool = False, profile: Optional[RadialProfile] = None,
                   workers: Optional[int] = None) -> LandscapeResult:
    """
    ξ 格子上で Ĩ_ε(ξ), Γ(ξ), 比を表にする（ξ ごとに並列）

    Args:
        xi_points: 形状 (m, 2) または格子状 (n1, n2, 2)
    """
    points = np.asarray(xi_points, dtype=float)
    lattice = points.shape[:2] if points.ndim == 3 else None
    flat_points = points.reshape(-1, 2)
    params = params.with_epsilon(epsilon)
    profile = profile or solve_ground_state(2, params.p)
    operator = assemble_operator(grid, params)
    _ = operator.solver
    workers = get_worker_count(workers)
    logger.info(f"Landscape scan: {len(flat_points)} points, eps={epsilon}, "
                f"corrector={with_corrector}, workers={workers}")

    def evaluate(index: int) -> Tuple[int, Dict]:
        xi = flat_points[index]
        spec = AnsatzSpec.for_grid(grid, xi, epsilon)
        value = reduced_energy(grid, params, spec, with_corrector=with_corrector, profile=profile)
        a, b, c = params.at_node(grid.node_index(xi))
        g = gamma(a, b, c, 2, params.p)
        return index, {'xi1': spec.xi[0], 'xi2': spec.xi[1], 'I_tilde': value, 'Gamma': g, 'ratio': value / g}

    rows: Dict[int, Dict] = {}
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(evaluate, i) for i in range(len(flat_points))]
        for future in as_completed(futures):
            index, row = future.result()
            rows[index] = row
    table = pd.DataFrame([rows[i] for i in range(len(flat_points))],
                         columns=['xi1', 'xi2', 'I_tilde', 'Gamma', 'ratio'])

    fitted = float(table['ratio'].mean())
    reference = limit_constant(params.p, profile)
    deviation = float(np.max(np.abs(table['ratio'] - fitted))) / abs(fitted)
    ref_deviation = float(np.max(np.abs(table['ratio'] - reference))) / reference

    best = int(table['I_tilde'].values.argmax())
    argmax_xi = (float(table['xi1'].iloc[best]), float(table['xi2'].iloc[best]))
    gamma_values = table['Gamma'].values
    ties = np.nonzero(gamma_values >= gamma_values.max() - 1e-12)[0]
    gaps = [geodesic_distance(grid, argmax_xi, (table['xi1'].iloc[k], table['xi2'].iloc[k])) for k in ties]
    nearest = int(ties[int(np.argmin(gaps))])
    gamma_argmax = (float(table['xi1'].iloc[nearest]), float(table['xi2'].iloc[nearest]))

    gradient_gap = None
    if lattice is not None:
        gradient_gap = _gradient_gap(table, lattice, fitted, grid)

    result = LandscapeResult(
        table=table, fitted_constant=fitted, max_deviation=deviation,
        reference_constant=reference, reference_deviation=ref_deviation,
        argmax_xi=argmax_xi, gamma_argmax_xi=gamma_argmax, argmax_gap=float(min(gaps)),
        gradient_gap=gradient_gap,
    )
    result.summary = {
        'epsilon': epsilon, 'with_corrector': with_corrector, 'points': len(table),
        'fitted_constant': fitted, 'max_deviation': deviation,
        'reference_constant': reference, 'reference_deviation': ref_deviation,
        'argmax_xi': list(argmax_xi), 'gamma_argmax_xi': list(gamma_argmax),
        'argmax_gap': result.argmax_gap, 'gradient_gap': gradient_gap,
    }
    logger.info(f"Landscape eps={epsilon}: C_fit={fitted:.6f}, max deviation={deviation:.3e}, "
                f"argmax={argmax_xi}")
    return result


def _gradient_gap(table: pd.DataFrame, lattice: Tuple[int, int], constant: float,
                  grid: ManifoldGrid) -> float:
    """ξ 格子上の周期中心差分で ∇Ĩ と C∇Γ を比べる"""
    n1, n2 = lattice
    energy = table['I_tilde'].values.reshape(n1, n2)
    landscape = constant * table['Gamma'].values.reshape(n1, n2)
    h1, h2 = grid.periods[0] / n1, grid.periods[1] / n2
    gaps, scales = [], []
    for axis, h in ((0, h1), (1, h2)):
        d_energy = (np.roll(energy, -1, axis) - np.roll(energy, 1, axis)) / (2 * h)
        d_land = (np.roll(landscape, -1, axis) - np.roll(landscape, 1, axis)) / (2 * h)
        gaps.append(np.max(np.abs(d_energy - d_land)))
        scales.append(np.max(np.abs(d_land)))
    scale = max(scales)
    return float(max(gaps) / scale) if scale > 0 else float(max(gaps))


def refine_critical_point(grid: ManifoldGrid, params: ProblemParams, xi0, with_corrector: bool = False,
                          max_steps: int = 50, profile: Optional[RadialProfile] = None) -> Dict:
    """
    走査の最大点から PDE 節点上で Ĩ_ε を山登りする局所精密化

    Returns:
        dict: 'xi', 'value', 'steps'
    """
    profile = profile or solve_ground_state(2, params.p)
    h1, h2 = grid.spacing
    cache: Dict[int, float] = {}

    def value_at(point) -> float:
        k = grid.node_index(point)
        if k not in cache:
            spec = AnsatzSpec.for_grid(grid, point, params.epsilon)
            cache[k] = reduced_energy(grid, params, spec, with_corrector=with_corrector, profile=profile)
        return cache[k]

    current = grid.snap(xi0)
    current_value = value_at(current)
    steps = 0
    for steps in range(1, max_steps + 1):
        neighbours = [grid.snap(current + np.array([di * h1, dj * h2]))
                      for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]
        values = [value_at(x) for x in neighbours]
        k = int(np.argmax(values))
        if values[k] <= current_value:
            break
        current, current_value = neighbours[k], values[k]
    logger.debug(f"Refined critical point to {current.tolist()} after {steps} steps")
    return {'xi': (float(current[0]), float(current[1])), 'value': float(current_value), 'steps': steps}
