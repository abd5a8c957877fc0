"""
幾何検証モジュール

持ち上げの二つの方法を検証する
- 捻れ積 M ×_{f²} S¹: 底空間の重み付き問題の解を持ち上げたときの残差
- Hopf ファイブレーション S³ → S²(1/2): ラプラシアンの可換性
- Γ の直接計算と持ち上げ公式の一致
"""

from dataclasses import asdict, dataclass
from typing import Callable, Dict

import numpy as np
from loguru import logger

from elliptic_core import ProblemParams, assemble_operator, stiffness_for
from energy import nonlinearity_f
from limit_profile import critical_exponent
from manifold import ManifoldGrid, field_from_spec
from reduction import gamma, gamma_lifted
from utils import DomainError


HOPF_RADIUS = 0.5
FIBER_NODES = 8


def warped_base_params(grid: ManifoldGrid, f_spec, beta_spec, k: int = 1, epsilon: float = 0.1,
                       q: float = 1.0, omega: float = 0.0, p: float = 4.0) -> ProblemParams:
    """捻れ積の底空間の問題を a = f^kβ, b = c = f^k の連立系として組む"""
    f = field_from_spec(grid, f_spec)
    beta = field_from_spec(grid, beta_spec)
    if np.any(f <= 0):
        raise DomainError("Warping function f must be positive")
    weight = f ** k
    return ProblemParams(a=weight * beta, b=weight, c=weight.copy(), epsilon=epsilon, q=q, omega=omega, p=p)


def harmonic_morphism_params(grid: ManifoldGrid, beta_spec, mu_spec=1.0, epsilon: float = 0.1,
                             q: float = 1.0, omega: float = 0.0, p: float = 4.0) -> ProblemParams:
    """調和射の底空間の問題 a = β/μ, b = 1/μ, c = 1"""
    beta = field_from_spec(grid, beta_spec)
    mu = field_from_spec(grid, mu_spec)
    if np.any(mu <= 0):
        raise DomainError("Dilation data mu must be positive")
    return ProblemParams(a=beta / mu, b=1.0 / mu, c=np.ones(grid.n_nodes), epsilon=epsilon, q=q, omega=omega, p=p)


def _base_residual_fields(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray, v: np.ndarray):
    """保存型ステンシルでの両方程式の節点残差"""
    u = grid.check_field(u, "u")
    v = grid.check_field(v, "v")
    operator = assemble_operator(grid, params)
    m = grid.measure
    first = (operator.matrix @ u) / m + params.omega ** 2 * params.b * u \
        - params.b * nonlinearity_f(u, params.p) - params.omega ** 2 * params.b * (params.q * v - 1.0) ** 2 * u
    second = (stiffness_for(grid, params) @ v) / m + params.b * (1.0 + params.q ** 2 * u ** 2) * v \
        - params.b * params.q * u ** 2
    return first, second


def warped_base_residual(grid: ManifoldGrid, params: ProblemParams, u: np.ndarray, v: np.ndarray) -> Dict[str, float]:
    """
    重み付き底空間の問題の両方程式の最大ノルム残差

    Returns:
        dict: 'equation_u', 'equation_v', 'sup'
    """
    first, second = _base_residual_fields(grid, params, u, v)
    report = {'equation_u': float(np.max(np.abs(first))), 'equation_v': float(np.max(np.abs(second)))}
    report['sup'] = max(report.values())
    return report


def _central(field: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(field, -1, axis) - np.roll(field, 1, axis)) / (2.0 * h)


def _second(field: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(field, -1, axis) - 2.0 * field + np.roll(field, 1, axis)) / (h * h)


@dataclass
class LiftReport:
    """捻れ積への持ち上げの検証結果"""
    base_residual: float
    lift_residual: float
    floor: float
    fiber_derivative: float
    n_fiber: int
    k: int
    subcritical_base: bool
    supercritical_lift: bool

    @property
    def bound_ok(self) -> bool:
        return self.lift_residual <= 10.0 * self.base_residual + self.floor

    def to_dict(self) -> Dict:
        payload = asdict(self)
        payload['bound_ok'] = self.bound_ok
        return payload


def warped_lift_residual(grid: ManifoldGrid, params: ProblemParams, f_spec, u: np.ndarray, v: np.ndarray,
                         k: int = 1, n_fiber: int = FIBER_NODES) -> LiftReport:
    """
    底空間の (u, v) をファイバー方向に一定に延ばし、M ×_{f²} S¹ の 3次元格子で
    捻れ積側の方程式の残差を測る

    ラプラシアンは Δ_M F + k∇ln f·∇F + f^{−2}∂²_θF を中心差分で評価する。
    床 = sup|R_lift − R_base/f^k| は二つのステンシルの差（O(h²)）
    """
    if grid.kind != 'flat_torus':
        raise DomainError("Warped lift check expects a flat torus base")
    f = field_from_spec(grid, f_spec)
    if np.any(f <= 0):
        raise DomainError("Warping function f must be positive")
    u = grid.check_field(u, "u")
    v = grid.check_field(v, "v")
    h1, h2 = grid.spacing
    h_theta = 2.0 * np.pi / n_fiber
    weight = f ** k
    beta = params.a / weight
    eps2, q, omega, p = params.epsilon ** 2, params.q, params.omega, params.p

    # ファイバー方向へ複製（axis=2 が θ）
    U = np.repeat(grid.reshape(u)[:, :, None], n_fiber, axis=2)
    V = np.repeat(grid.reshape(v)[:, :, None], n_fiber, axis=2)
    F = np.repeat(grid.reshape(f)[:, :, None], n_fiber, axis=2)
    B = np.repeat(grid.reshape(beta)[:, :, None], n_fiber, axis=2)
    log_f = np.log(F)

    def laplacian(field):
        value = _second(field, 0, h1) + _second(field, 1, h2) + _second(field, 2, h_theta) / F ** 2
        return value + k * (_central(log_f, 0, h1) * _central(field, 0, h1)
                            + _central(log_f, 1, h2) * _central(field, 1, h2))

    lifted_first = -eps2 * laplacian(U) + B * U - np.power(np.maximum(U, 0.0), p - 1.0) \
        - omega ** 2 * (q * V - 1.0) ** 2 * U
    lifted_second = -laplacian(V) + (1.0 + q ** 2 * U ** 2) * V - q * U ** 2

    first, second = _base_residual_fields(grid, params, u, v)
    base_first = np.repeat((grid.reshape(first) / grid.reshape(weight))[:, :, None], n_fiber, axis=2)
    base_second = np.repeat((grid.reshape(second) / grid.reshape(weight))[:, :, None], n_fiber, axis=2)

    base = max(float(np.max(np.abs(base_first))), float(np.max(np.abs(base_second))))
    lifted = max(float(np.max(np.abs(lifted_first))), float(np.max(np.abs(lifted_second))))
    floor = max(float(np.max(np.abs(lifted_first - base_first))), float(np.max(np.abs(lifted_second - base_second))))
    fiber = float(max(np.max(np.abs(np.diff(U, axis=2))), np.max(np.abs(np.diff(V, axis=2)))))

    report = LiftReport(base_residual=base, lift_residual=lifted, floor=floor, fiber_derivative=fiber,
                        n_fiber=n_fiber, k=k,
                        subcritical_base=p < critical_exponent(2),
                        supercritical_lift=p > critical_exponent(2 + k))
    logger.info(f"Warped lift: base={base:.3e}, lift={lifted:.3e}, floor={floor:.3e}, bound_ok={report.bound_ok}")
    return report


# ---- Hopf ファイブレーション ----

def _sphere_test_function(name: str) -> Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]:
    """S²(1/2) 上の試験関数（直交座標の関数）"""
    functions = {
        'constant': lambda x, y, z: np.ones_like(x),
        'height': lambda x, y, z: z,
        'quadratic': lambda x, y, z: x * y,
    }
    if name not in functions:
        raise DomainError(f"Unknown test function {name!r}; valid: {sorted(functions)}")
    return functions[name]


def _on_sphere(u: Callable, polar: np.ndarray, azimuth: np.ndarray) -> np.ndarray:
    r = HOPF_RADIUS
    return u(r * np.sin(polar) * np.cos(azimuth), r * np.sin(polar) * np.sin(azimuth), r * np.cos(polar))


def hopf_projection(eta: np.ndarray, theta1: np.ndarray, theta2: np.ndarray):
    """Hopf 写像のチャート表示: (η, θ₁, θ₂) ↦ 極角 π − 2η、方位角 θ₁ − θ₂"""
    return np.pi - 2.0 * eta, theta1 - theta2


def _laplacian_s2(u: Callable, polar: np.ndarray, azimuth: np.ndarray, h: float) -> np.ndarray:
    """S²(R) の Laplace–Beltrami（球座標の保存型差分）"""
    center = _on_sphere(u, polar, azimuth)
    up = _on_sphere(u, polar + h, azimuth)
    down = _on_sphere(u, polar - h, azimuth)
    radial = (np.sin(polar + 0.5 * h) * (up - center) - np.sin(polar - 0.5 * h) * (center - down)) \
        / (h * h * np.sin(polar))
    angular = (_on_sphere(u, polar, azimuth + h) - 2.0 * center + _on_sphere(u, polar, azimuth - h)) \
        / (h * h * np.sin(polar) ** 2)
    return (radial + angular) / HOPF_RADIUS ** 2


def _laplacian_s3(u: Callable, eta: np.ndarray, theta1: np.ndarray, theta2: np.ndarray, h: float) -> np.ndarray:
    """Hopf チャート dη² + sin²η dθ₁² + cos²η dθ₂² での S³ の Laplace–Beltrami"""
    def lifted(e, t1, t2):
        return _on_sphere(u, *hopf_projection(e, t1, t2))

    def weight(e):
        return np.sin(e) * np.cos(e)

    center = lifted(eta, theta1, theta2)
    radial = (weight(eta + 0.5 * h) * (lifted(eta + h, theta1, theta2) - center)
              - weight(eta - 0.5 * h) * (center - lifted(eta - h, theta1, theta2))) / (h * h * weight(eta))
    first = (lifted(eta, theta1 + h, theta2) - 2.0 * center + lifted(eta, theta1 - h, theta2)) \
        / (h * h * np.sin(eta) ** 2)
    second = (lifted(eta, theta1, theta2 + h) - 2.0 * center + lifted(eta, theta1, theta2 - h)) \
        / (h * h * np.cos(eta) ** 2)
    return radial + first + second


@dataclass
class HopfReport:
    """Hopf 写像でのラプラシアン可換性の誤差"""
    test_function: str
    max_error: float
    h_fd: float
    samples_used: int
    excluded: int

    def to_dict(self) -> Dict:
        return asdict(self)


def hopf_commutation_error(test_function: str = 'height', samples: int = 200, h_fd: float = 1e-2,
                           seed: int = 0, margin: float = 0.1) -> HopfReport:
    """
    max |Δ_{S³}(u∘π) − (Δ_{S²}u)∘π| を標本点で評価

    η が 0 または π/2 から margin 以内の標本は除外して件数を報告する
    """
    if h_fd <= 0 or h_fd >= margin:
        raise DomainError(f"h_fd={h_fd} must lie in (0, margin={margin})")
    u = _sphere_test_function(test_function)
    rng = np.random.default_rng(seed)
    eta = rng.uniform(0.0, 0.5 * np.pi, samples)
    theta1 = rng.uniform(0.0, 2.0 * np.pi, samples)
    theta2 = rng.uniform(0.0, 2.0 * np.pi, samples)
    keep = (eta > margin) & (eta < 0.5 * np.pi - margin)
    excluded = int(samples - np.sum(keep))
    if excluded:
        logger.debug(f"Hopf check: excluded {excluded} samples near chart degeneracy")
    eta, theta1, theta2 = eta[keep], theta1[keep], theta2[keep]

    upstairs = _laplacian_s3(u, eta, theta1, theta2, h_fd)
    polar, azimuth = hopf_projection(eta, theta1, theta2)
    downstairs = _laplacian_s2(u, polar, azimuth, h_fd)
    error = float(np.max(np.abs(upstairs - downstairs))) if len(eta) else 0.0
    logger.info(f"Hopf commutation ({test_function}, h={h_fd}): max error {error:.3e} over {len(eta)} samples")
    return HopfReport(test_function=test_function, max_error=error, h_fd=h_fd,
                      samples_used=int(len(eta)), excluded=excluded)


def verify_gamma_lift(grid: ManifoldGrid, kind: str, beta_spec, f_spec=None, mu_spec=1.0, k: int = 1,
                      p: float = 4.0, n: int = 2) -> Dict:
    """
    底空間の重み付き問題に対する Γ（直接）と持ち上げ公式の Γ を全節点で比べる

    Returns:
        dict: 最大差、最大点、持ち上げた集中集合の説明
    """
    beta = field_from_spec(grid, beta_spec)
    if kind == 'warped':
        if f_spec is None:
            raise DomainError("Warped lift needs f_spec")
        params = warped_base_params(grid, f_spec, beta_spec, k=k, p=p)
        f = field_from_spec(grid, f_spec)
        lifted = gamma_lifted('warped', n, p, beta, f=f, k=k)
        fiber = "fiber over {x}: (N, f^2 h)"
    elif kind == 'harmonic_morphism':
        params = harmonic_morphism_params(grid, beta_spec, mu_spec, p=p)
        mu = field_from_spec(grid, mu_spec)
        lifted = gamma_lifted('harmonic_morphism', n, p, beta, mu=mu)
        fiber = "fiber over {x} (Hopf circle when mu = 1)"
    else:
        raise DomainError(f"Unknown lift kind {kind!r}")

    direct = gamma(params.a, params.b, params.c, n, p)
    difference = float(np.max(np.abs(direct - lifted)))
    best = int(np.argmax(lifted))
    point = (float(grid.x1[best]), float(grid.x2[best]))
    report = {
        'kind': kind,
        'max_abs_difference': float(difference),
        'max_relative_difference': float(np.max(np.abs(direct - lifted) / np.abs(lifted))),
        'gamma_max': float(lifted[best]),
        'argmax': list(point),
        'concentration_set': fiber.replace('{x}', f"({point[0]:.6g}, {point[1]:.6g})"),
    }
    logger.info(f"Gamma lift ({kind}): max |direct - lifted| = {difference:.3e}, argmax={point}")
    return report
