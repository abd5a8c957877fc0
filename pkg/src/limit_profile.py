"""
極限問題モジュール

ℝ^n 上の −ΔU + U = U^{p−1} の正値球対称解（基底状態）を射撃法で求め、
局所係数でスケールしたプロファイル V と線形化プロファイル ψ^i を提供する
"""

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy.integrate import simpson
from scipy.interpolate import CubicHermiteSpline
from scipy.special import kve

from utils import ConvergenceError, DomainError


SERIES_START = 1e-6
DEFAULT_STEP = 1e-3
COARSE_STEP = 4e-3
DEFAULT_RMAX = 20.0
TAIL_LEVEL = 1e-8
MAX_BISECTIONS = 200
CANDIDATES = 64
# 上下の射撃解がこの差を超えたら数値解を打ち切り、漸近解に接続する
SPLIT_TOLERANCE = 1e-10


def critical_exponent(dim: int) -> float:
    """臨界Sobolev指数 2* = 2n/(n−2)（n ≤ 2 では無限大）"""
    if dim <= 2:
        return math.inf
    return 2.0 * dim / (dim - 2)


def sphere_area(dim: int) -> float:
    """単位球面 S^{n−1} の面積（n=1 は2点）"""
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


@dataclass(frozen=True, eq=False)
class RadialProfile:
    """動径方向の基底状態 U のサンプル"""
    dim: int
    exponent_p: float
    radii: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    truncation_radius: float
    residual: float = 0.0

    @cached_property
    def _spline(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.radii, self.values, self.derivative, extrapolate=False)

    @cached_property
    def _slope_spline(self):
        return self._spline.derivative()

    @property
    def peak(self) -> float:
        return float(self.values[0])

    def __call__(self, r) -> np.ndarray:
        """U(r)、打ち切り半径より外は0"""
        r = np.abs(np.asarray(r, dtype=float))
        out = self._spline(np.minimum(r, self.truncation_radius))
        return np.where(r > self.truncation_radius, 0.0, out)

    def slope(self, r) -> np.ndarray:
        """U′(r)、打ち切り半径より外は0"""
        r = np.abs(np.asarray(r, dtype=float))
        out = self._slope_spline(np.minimum(r, self.truncation_radius))
        return np.where(r > self.truncation_radius, 0.0, out)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'r': self.radii, 'U': self.values, 'Uprime': self.derivative})


@dataclass(frozen=True)
class ProfileScaling:
    """点ξでの係数から決まるスケーリング A, B, γ"""
    A: float
    B: float
    gamma: float

    @classmethod
    def from_coefficients(cls, a: float, b: float, c: float, p: float) -> "ProfileScaling":
        if min(a, b, c) <= 0:
            raise DomainError(f"Coefficients must be positive: a={a}, b={b}, c={c}")
        A = a / c
        B = b / c
        return cls(A=A, B=B, gamma=(A / B) ** (1.0 / (p - 2.0)))


def _rhs(r: float, U: np.ndarray, V: np.ndarray, dim: int, p: float) -> Tuple[np.ndarray, np.ndarray]:
    """U″ = U − U^{p−1} − ((n−1)/r)U′ を一階系で"""
    source = U - np.sign(U) * np.abs(U) ** (p - 1.0)
    if dim > 1:
        source = source - (dim - 1) / r * V
    return V, source


def _series_start(u0: np.ndarray, dim: int, p: float, r0: float) -> Tuple[np.ndarray, np.ndarray]:
    curvature = (u0 - u0 ** (p - 1.0)) / dim
    return u0 + 0.5 * curvature * r0 ** 2, curvature * r0


def _rk4_step(r, U, V, h, dim, p):
    k1u, k1v = _rhs(r, U, V, dim, p)
    k2u, k2v = _rhs(r + 0.5 * h, U + 0.5 * h * k1u, V + 0.5 * h * k1v, dim, p)
    k3u, k3v = _rhs(r + 0.5 * h, U + 0.5 * h * k2u, V + 0.5 * h * k2v, dim, p)
    k4u, k4v = _rhs(r + h, U + h * k3u, V + h * k3v, dim, p)
    U_new = U + h / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
    V_new = V + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return U_new, V_new


def _classify(u0: np.ndarray, dim: int, p: float, step: float, r_limit: float) -> np.ndarray:
    """
    射撃の判定

    Returns:
        np.ndarray: +1 = 零点を横切る（初期値が大きすぎ）、−1 = 正のまま反転（小さすぎ）
    """
    U, V = _series_start(u0, dim, p, SERIES_START)
    r = SERIES_START
    verdict = np.zeros(u0.shape, dtype=int)
    h = step - SERIES_START
    while r < r_limit:
        U, V = _rk4_step(r, U, V, h, dim, p)
        r += h
        h = step
        undecided = verdict == 0
        verdict[undecided & (U < 0.0)] = 1
        verdict[undecided & (U > 0.0) & (V > 0.0)] = -1
        if np.all(verdict != 0):
            return verdict
    # 未決定は成長モードの符号で判定
    pending = verdict == 0
    verdict[pending] = np.where(V[pending] + U[pending] < 0.0, 1, -1)
    return verdict


def _multisection(lo: float, hi: float, dim: int, p: float, step: float,
                  r_limit: float, width: float, budget: int) -> Tuple[float, float, int]:
    """区間を分割して一括積分する多分割二分法"""
    steps_per_sweep = math.log2(CANDIDATES - 1)
    used = 0
    while hi - lo > width and used < budget:
        candidates = np.linspace(lo, hi, CANDIDATES)
        verdict = _classify(candidates, dim, p, step, r_limit)
        flips = np.nonzero((verdict[:-1] < 0) & (verdict[1:] > 0))[0]
        if flips.size == 0:
            raise ConvergenceError(
                f"Shooting bracket [{lo:.17g}, {hi:.17g}] does not enclose a decaying solution",
                [{'lo': lo, 'hi': hi, 'bisections': used}],
            )
        k = int(flips[0])
        new_lo, new_hi = float(candidates[k]), float(candidates[k + 1])
        used += int(math.ceil(steps_per_sweep))
        if new_lo == lo and new_hi == hi:
            break
        lo, hi = new_lo, new_hi
    return lo, hi, used


def _bessel_tail(r: np.ndarray, r_join: float, u_join: float, dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """線形化方程式の減衰解 r^{−ν}K_ν(r) による裾"""
    nu = (dim - 2) / 2.0
    # kve(ν, r) = K_ν(r)e^r で桁あふれを避ける
    base = r_join ** (-nu) * kve(nu, r_join)
    shape = r ** (-nu) * kve(nu, r) * np.exp(r_join - r)
    slope = -r ** (-nu) * kve(nu + 1.0, r) * np.exp(r_join - r)
    return u_join * shape / base, u_join * slope / base


def _fd_residual(radii: np.ndarray, U: np.ndarray, V: np.ndarray, dim: int, p: float,
                 skip: np.ndarray) -> float:
    """サンプル上の常微分方程式残差（U″はU′の4次中心差分）"""
    h = radii[2] - radii[1]
    Upp = (-V[4:] + 8 * V[3:-1] - 8 * V[1:-3] + V[:-4]) / (12.0 * h)
    r = radii[2:-2]
    res = Upp + (dim - 1) / r * V[2:-2] - U[2:-2] + U[2:-2] ** (p - 1.0)
    mask = ~skip[2:-2]
    return float(np.max(np.abs(res[mask]))) if np.any(mask) else 0.0


@lru_cache(maxsize=16)
def _solve_cached(dim: int, p: float, tol: float, step: float) -> RadialProfile:
    # 上限ブラケット: 零点を横切るまで倍々に
    hi = 2.0
    for _ in range(60):
        if _classify(np.array([hi]), dim, p, COARSE_STEP, 2 * DEFAULT_RMAX)[0] > 0:
            break
        hi *= 2.0
    else:
        raise ConvergenceError(f"No overshooting initial value found for dim={dim}, p={p}")
    lo = 1.0 + 1e-6

    lo, hi, used = _multisection(lo, hi, dim, p, COARSE_STEP, 2 * DEFAULT_RMAX, 1e-9 * hi, MAX_BISECTIONS)
    margin = max(1e-8, 4 * (hi - lo))
    lo, hi = lo - margin, hi + margin
    lo, hi, more = _multisection(lo, hi, dim, p, step, 2 * DEFAULT_RMAX,
                                 4 * np.spacing(hi), MAX_BISECTIONS - used)
    logger.debug(f"Shooting bracket dim={dim} p={p}: [{lo:.17g}, {hi:.17g}] after {used + more} bisections")

    u_peak = 0.5 * (lo + hi)
    r_max = DEFAULT_RMAX
    while True:
        n_samples = int(round(r_max / step)) + 1
        radii = np.arange(n_samples) * step
        trio = np.array([lo, u_peak, hi])
        U_all = np.empty((n_samples, 3))
        V_all = np.empty((n_samples, 3))
        U_all[0], V_all[0] = trio, 0.0
        U, V = _series_start(trio, dim, p, SERIES_START)
        r, h = SERIES_START, step - SERIES_START
        split = n_samples
        for k in range(1, n_samples):
            U, V = _rk4_step(r, U, V, h, dim, p)
            r, h = radii[k], step
            U_all[k], V_all[k] = U, V
            if abs(U[2] - U[0]) > SPLIT_TOLERANCE or U[1] <= 0.0 or V[1] >= 0.0:
                split = k
                break
        join = max(split - 1, 1)

        values = np.empty(n_samples)
        slopes = np.empty(n_samples)
        values[:join + 1] = U_all[:join + 1, 1]
        slopes[:join + 1] = V_all[:join + 1, 1]
        if join + 1 < n_samples:
            tail_u, tail_v = _bessel_tail(radii[join + 1:], radii[join], values[join], dim)
            values[join + 1:] = tail_u
            slopes[join + 1:] = tail_v
        if values[-1] < TAIL_LEVEL or r_max >= 60.0:
            break
        r_max += 5.0
        logger.debug(f"Extending truncation radius to {r_max} (tail {values[-1]:.3e})")

    skip = np.zeros(n_samples, dtype=bool)
    skip[max(join - 2, 0):join + 3] = True
    residual = _fd_residual(radii, values, slopes, dim, p, skip)
    if residual > tol:
        raise ConvergenceError(
            f"Ground state residual {residual:.3e} exceeds tol={tol:.1e} (dim={dim}, p={p})",
            [{'lo': lo, 'hi': hi, 'residual': residual}],
        )
    slopes[0] = 0.0
    logger.info(f"Ground state dim={dim} p={p}: U(0)={u_peak:.12f}, R_max={r_max}, residual={residual:.2e}")
    return RadialProfile(dim=dim, exponent_p=p, radii=radii, values=values, derivative=slopes,
                         truncation_radius=float(radii[-1]), residual=residual)


def solve_ground_state(dim: int, p: float, tol: float = 1e-8, step: float = DEFAULT_STEP) -> RadialProfile:
    """
    基底状態を射撃法で計算

    Args:
        dim: 空間次元（1, 2, 3）
        p: 非線形指数（2 < p < 2*_dim）
        tol: 常微分方程式残差の許容値（sup ノルム）
        step: RK4 のステップ幅

    Returns:
        RadialProfile: 正値単調減少のプロファイル

    Raises:
        DomainError: 次元・指数が範囲外
        ConvergenceError: 射撃ブラケットが減衰解を挟まない
    """
    if dim not in (1, 2, 3):
        raise DomainError(f"dim must be 1, 2 or 3, got {dim}")
    if not (2.0 < p < critical_exponent(dim)):
        raise DomainError(f"Exponent p={p} outside (2, {critical_exponent(dim)}) for dim={dim}")
    if tol <= 0:
        raise DomainError("tol must be positive")
    logger.info(f"Solving ground state dim={dim} p={p}")
    return _solve_cached(int(dim), float(p), float(tol), float(step))


def profile_integrals(profile: RadialProfile) -> Tuple[float, float, float]:
    """
    ℝ^n 上の積分

    Returns:
        Tuple: (∫U^p, ∫|∇U|², ∫U²)
    """
    weight = sphere_area(profile.dim) * profile.radii ** (profile.dim - 1)
    r = profile.radii
    int_up = simpson(weight * profile.values ** profile.exponent_p, x=r)
    int_grad = simpson(weight * profile.derivative ** 2, x=r)
    int_sq = simpson(weight * profile.values ** 2, x=r)
    return float(int_up), float(int_grad), float(int_sq)


def laplacian_square_integral(profile: RadialProfile) -> float:
    """∫(ΔU)² = ∫(U − U^{p−1})²"""
    weight = sphere_area(profile.dim) * profile.radii ** (profile.dim - 1)
    lap = profile.values - profile.values ** (profile.exponent_p - 1.0)
    return float(simpson(weight * lap ** 2, x=profile.radii))


def ground_state_residual(profile: RadialProfile) -> float:
    """構築時に測った常微分方程式残差"""
    return profile.residual


def scaled_profile(scaling: ProfileScaling, profile: RadialProfile, z) -> np.ndarray:
    """
    V(z) = γU(√A|z|)

    Args:
        z: 形状 (..., 2) の点（配列可）
    """
    z = np.asarray(z, dtype=float)
    rho = np.sqrt(np.sum(z ** 2, axis=-1))
    return scaling.gamma * profile(math.sqrt(scaling.A) * rho)


def linearized_profile(scaling: ProfileScaling, profile: RadialProfile, i: int, z) -> np.ndarray:
    """
    ψ^i(z) = ∂V/∂z_i = γ√A U′(√A|z|) z_i/|z|

    Args:
        i: 軸番号（1 または 2）
    """
    if i not in (1, 2):
        raise DomainError(f"Axis index must be 1 or 2, got {i}")
    z = np.asarray(z, dtype=float)
    rho = np.sqrt(np.sum(z ** 2, axis=-1))
    root_a = math.sqrt(scaling.A)
    direction = np.divide(z[..., i - 1], rho, out=np.zeros_like(rho), where=rho > 0)
    return scaling.gamma * root_a * profile.slope(root_a * rho) * direction
