"""
楕円型作用素モジュール

発散形作用素 −ε²div_g(c∇u) + d·u の保存型離散化、ε重み付き内積・ノルム、
随伴作用素 i*_ε、SPD 線形ソルバー
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from loguru import logger
from scipy.sparse.linalg import LinearOperator, cg, splu

from manifold import ManifoldGrid, field_from_spec
from utils import ConvergenceError, DomainError


SOLVER_TOL = 1e-10
DIRECT_LIMIT = 128 * 128


@dataclass(eq=False)
class ProblemParams:
    """
    係数と物理パラメータ

    係数場は構築後に書き換えない（作用素のキャッシュを共有するため）
    """
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    epsilon: float
    q: float = 1.0
    omega: float = 0.0
    p: float = 4.0
    _cache: Dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.epsilon <= 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if self.q <= 0:
            raise DomainError(f"q must be positive, got {self.q}")
        if self.p <= 2:
            raise DomainError(f"p must exceed 2, got {self.p}")
        if np.any(self.b <= 0) or np.any(self.c <= 0):
            raise DomainError("Coefficients b and c must be strictly positive")
        if np.any(self.d <= 0):
            worst = float(np.min(self.d))
            raise DomainError(f"a > omega^2 b violated (min a - omega^2 b = {worst:.3e})")

    @property
    def d(self) -> np.ndarray:
        return self.a - self.omega ** 2 * self.b

    @classmethod
    def from_specs(cls, grid: ManifoldGrid, a_spec=1.0, b_spec=1.0, c_spec=1.0, epsilon: float = 1.0,
                   q: float = 1.0, omega: float = 0.0, p: float = 4.0) -> "ProblemParams":
        """係数指定（数値または式）から構築"""
        return cls(a=field_from_spec(grid, a_spec), b=field_from_spec(grid, b_spec),
                   c=field_from_spec(grid, c_spec), epsilon=epsilon, q=q, omega=omega, p=p)

    def with_epsilon(self, epsilon: float) -> "ProblemParams":
        return replace(self, epsilon=float(epsilon), _cache={})

    def at_node(self, k: int) -> Tuple[float, float, float]:
        """節点 k での (a, b, c)"""
        return float(self.a[k]), float(self.b[k]), float(self.c[k])


class SPDSolver:
    """
    対称正定値系のソルバー

    節点数が DIRECT_LIMIT 以下なら疎LU分解を再利用し、それ以上は
    対角前処理付き CG（tol 1e−10、最大 10·n 反復）
    """

    def __init__(self, matrix: sp.spmatrix, label: str = "spd", tol: float = SOLVER_TOL,
                 direct_limit: int = DIRECT_LIMIT):
        self.matrix = sp.csr_matrix(matrix)
        self.label = label
        self.tol = tol
        self.n = self.matrix.shape[0]
        self.direct = self.n <= direct_limit
        if self.direct:
            self._lu = splu(sp.csc_matrix(self.matrix))
        else:
            diag = self.matrix.diagonal()
            self._jacobi = LinearOperator(self.matrix.shape, matvec=lambda x: x / diag, dtype=float)

    def solve(self, rhs: np.ndarray, x0: Optional[np.ndarray] = None) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if not np.any(rhs):
            return np.zeros_like(rhs)
        if self.direct:
            return self._lu.solve(rhs)

        history: List[Dict] = []
        scale = float(np.linalg.norm(rhs))

        def monitor(xk):
            history.append({'iteration': len(history) + 1,
                            'relative_residual': float(np.linalg.norm(rhs - self.matrix @ xk)) / scale})

        x, info = cg(self.matrix, rhs, x0=x0, rtol=self.tol, atol=0.0, maxiter=10 * self.n,
                     M=self._jacobi, callback=monitor)
        if info != 0:
            logger.error(f"CG did not converge for {self.label} after {len(history)} iterations")
            raise ConvergenceError(f"CG did not converge for {self.label}", history)
        return x


def assemble_stiffness(grid: ManifoldGrid, coefficient: np.ndarray) -> sp.csr_matrix:
    """
    ∫ coefficient·g(∇u, ∇v) dμ_g の保存型離散化

    面の係数は coefficient の算術平均と |g|^{1/2}g^{ii} の積。対称で、
    非対角成分が非正（M行列）
    """
    n1, n2 = grid.shape
    h1, h2 = grid.spacing
    idx = np.arange(grid.n_nodes).reshape(n1, n2)
    coef = np.asarray(coefficient, dtype=float).reshape(n1, n2)

    rows, cols, vals = [], [], []
    for axis, ratio in ((0, h2 / h1), (1, h1 / h2)):
        neighbour = np.roll(idx, -1, axis=axis)
        face_coef = 0.5 * (coef + np.roll(coef, -1, axis=axis))
        kappa = ratio * face_coef * grid.face_flux[axis].reshape(n1, n2)
        k, m, w = idx.ravel(), neighbour.ravel(), kappa.ravel()
        rows += [k, m, k, m]
        cols += [k, m, m, k]
        vals += [w, w, -w, -w]
    matrix = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(grid.n_nodes, grid.n_nodes))
    return matrix.tocsr()


@dataclass(eq=False)
class DiscreteOperator:
    """u ↦ −ε²div_g(c∇u) + d·u の重み付き行列表現 S = ε²K + diag(μ d)"""
    stiffness: sp.csr_matrix
    measure: np.ndarray
    potential: np.ndarray
    epsilon: float

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return (self.epsilon ** 2 * self.stiffness + sp.diags(self.measure * self.potential)).tocsr()

    @cached_property
    def solver(self) -> SPDSolver:
        return SPDSolver(self.matrix, label="eps-operator")

    def apply(self, u: np.ndarray) -> np.ndarray:
        """節点値としての A u"""
        return (self.matrix @ u) / self.measure

    def energy(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(u @ (self.matrix @ v))


def assemble_operator(grid: ManifoldGrid, params: ProblemParams) -> DiscreteOperator:
    """
    ε作用素を組み立てる（params ごと・grid ごとにキャッシュ）

    Args:
        grid: 格子
        params: 係数

    Returns:
        DiscreteOperator: 対称正定値の作用素
    """
    cached = params._cache.get('operator')
    if cached is not None and cached[0] is grid:
        return cached[1]
    for name in ('a', 'b', 'c'):
        grid.check_field(getattr(params, name), name)
    operator = DiscreteOperator(stiffness=stiffness_for(grid, params),
                                measure=grid.measure, potential=params.d, epsilon=params.epsilon)
    params._cache['operator'] = (grid, operator)
    logger.debug(f"Assembled operator on {grid.kind} {grid.shape}, eps={params.epsilon}")
    return operator


def stiffness_for(grid: ManifoldGrid, params: ProblemParams) -> sp.csr_matrix:
    """係数 c の剛性行列（params にキャッシュ）"""
    cached = params._cache.get('stiffness')
    if cached is not None and cached[0] is grid:
        return cached[1]
    stiffness = assemble_stiffness(grid, params.c)
    params._cache['stiffness'] = (grid, stiffness)
    return stiffness


def inner_product_eps(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray, v: np.ndarray) -> float:
    """⟨u,v⟩_ε = ε^{−2}∫(ε²c∇u·∇v + d uv)"""
    operator = assemble_operator(grid, params)
    return operator.energy(u, v) / params.epsilon ** 2


def norm_eps(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray) -> float:
    return float(np.sqrt(max(inner_product_eps(grid, params, u, u), 0.0)))


def lebesgue_norm_eps(grid: ManifoldGrid, u: np.ndarray, s: float, epsilon: float) -> float:
    """|u|_{s,ε} = (ε^{−2}∫|u|^s)^{1/s}"""
    u = grid.check_field(u)
    return float((np.sum(grid.measure * np.abs(u) ** s) / epsilon ** 2) ** (1.0 / s))


def adjoint_istar(grid: ManifoldGrid, params: ProblemParams, v: np.ndarray) -> np.ndarray:
    """
    i*_ε(v): ⟨i*_ε(v), φ⟩_ε = ε^{−2}∫vφ を満たす場（S u = μ v を解く）

    Raises:
        ConvergenceError: 線形ソルバーの非収束（残差履歴付き）
    """
    v = grid.check_field(v)
    operator = assemble_operator(grid, params)
    return operator.solver.solve(grid.measure * v)


def standard_norm(grid: ManifoldGrid, u: np.ndarray) -> float:
    """H¹_g ノルム (∫|∇u|² + ∫u²)^{1/2}"""
    u = grid.check_field(u)
    stiffness = assemble_stiffness(grid, np.ones(grid.n_nodes))
    return float(np.sqrt(u @ (stiffness @ u) + np.sum(grid.measure * u ** 2)))


def smooth_random_field(grid: ManifoldGrid, rng: np.random.Generator, offset: float = 1.5,
                        modes: int = 3, max_wavenumber: int = 3) -> np.ndarray:
    """offset + 低周波フーリエモードの和（係数・位相は rng から）"""
    k1 = 2 * np.pi / grid.periods[0]
    k2 = 2 * np.pi / grid.periods[1]
    waves = rng.integers(0, max_wavenumber + 1, size=(modes, 2))
    amps = rng.normal(size=modes)
    phases = rng.uniform(0, 2 * np.pi, size=modes)
    return offset + sum(a * np.cos(m[0] * k1 * grid.x1 + m[1] * k2 * grid.x2 + ph)
                        for a, m, ph in zip(amps, waves, phases))


def _sample_fields(grid: ManifoldGrid, samples: int, seed: int) -> List[np.ndarray]:
    """定数場と低周波のランダム場"""
    rng = np.random.default_rng(seed)
    return [np.ones(grid.n_nodes)] + [smooth_random_field(grid, rng) for _ in range(samples)]


def embedding_constant(grid: ManifoldGrid, params: ProblemParams, s: float,
                       samples: int = 20, seed: int = 0) -> float:
    """|u|_{s,ε} ≤ C‖u‖_ε の定数 C の標本推定"""
    ratios = [lebesgue_norm_eps(grid, u, s, params.epsilon) / norm_eps(grid, params, u)
              for u in _sample_fields(grid, samples, seed)]
    return float(max(ratios))


def istar_constant(grid: ManifoldGrid, params: ProblemParams, samples: int = 20, seed: int = 0) -> float:
    """‖i*_ε(v)‖_ε ≤ C|v|_{p′,ε} の定数 C の標本推定"""
    conjugate = params.p / (params.p - 1.0)
    ratios = []
    for v in _sample_fields(grid, samples, seed):
        u = adjoint_istar(grid, params, v)
        ratios.append(norm_eps(grid, params, u) / lebesgue_norm_eps(grid, v, conjugate, params.epsilon))
    return float(max(ratios))


def smallest_ritz_value(grid: ManifoldGrid, params: ProblemParams, steps: int = 30, seed: int = 0) -> float:
    """μ重み付き対称作用素 A の最小固有値の Lanczos 推定"""
    operator = assemble_operator(grid, params)
    rng = np.random.default_rng(seed)
    # D^{1/2} A D^{−1/2} = D^{−1/2} S D^{−1/2} はユークリッド内積で対称
    root = np.sqrt(operator.measure)
    sym = LinearOperator(operator.matrix.shape, dtype=float,
                         matvec=lambda x: (operator.matrix @ (x / root)) / root)
    v = rng.normal(size=grid.n_nodes)
    v /= np.linalg.norm(v)
    basis = [v]
    alphas, betas = [], []
    previous = np.zeros_like(v)
    beta = 0.0
    for _ in range(min(steps, grid.n_nodes)):
        w = sym @ basis[-1] - beta * previous
        alpha = float(w @ basis[-1])
        w -= alpha * basis[-1]
        for b in basis:
            w -= (w @ b) * b
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))
        if beta < 1e-14:
            break
        betas.append(beta)
        previous = basis[-1]
        basis.append(w / beta)
    m = len(alphas)
    tridiagonal = np.diag(alphas) + np.diag(betas[:m - 1], 1) + np.diag(betas[:m - 1], -1)
    return float(np.min(np.linalg.eigvalsh(tridiagonal)))
