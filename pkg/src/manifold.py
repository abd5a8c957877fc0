"""
多様体モジュール

周期チャート上の閉曲面（平坦トーラス、回転面）の離散化、
指数写像・正規座標、測地距離、係数式の評価
"""

import ast
import math
import operator
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from loguru import logger
from scipy.integrate import solve_ivp
from scipy.interpolate import CloughTocher2DInterpolator
from scipy.sparse.csgraph import dijkstra

from utils import ConfigurationError, DomainError


MIN_NODES = 16
FAN_ANGLES = 256
FAN_RADII = 48
# Dijkstra グラフの近傍（16近傍）
GRAPH_OFFSETS = [(1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1)]

Point = Tuple[float, float]


@dataclass(eq=False)
class ManifoldGrid:
    """
    単一周期チャート上の格子

    節点の並びは C 順（index = i * n2 + j、i が第1座標）
    """
    kind: str
    shape: Tuple[int, int]
    periods: Tuple[float, float]
    x1: np.ndarray
    x2: np.ndarray
    metric: np.ndarray
    metric_inv: np.ndarray
    sqrt_det: np.ndarray
    weights: np.ndarray
    # 面 (i+1/2, j) と (i, j+1/2) における |g|^{1/2} g^{ii}（下側節点で添字付け）
    face_flux: Tuple[np.ndarray, np.ndarray]
    warp: Optional[Callable[[np.ndarray], np.ndarray]] = None
    warp_slope: Optional[Callable[[np.ndarray], np.ndarray]] = None
    description: Dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def spacing(self) -> Tuple[float, float]:
        return self.periods[0] / self.shape[0], self.periods[1] / self.shape[1]

    @property
    def min_spacing(self) -> float:
        """最も細かい方向の物理的な格子幅"""
        h1, h2 = self.spacing
        if self.warp is None:
            return min(h1, h2)
        return min(h1, h2 * float(np.min(self.warp(self.x1))))

    @property
    def measure(self) -> np.ndarray:
        """節点ごとの体積要素（重み × |g|^{1/2}）"""
        return self.weights * self.sqrt_det

    @property
    def area(self) -> float:
        return float(np.sum(self.measure))

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.x1, self.x2])

    @property
    def shortest_period(self) -> float:
        """最短の閉測地線の長さ（チャートの周期方向）"""
        if self.warp is None:
            return min(self.periods)
        return min(self.periods[0], self.periods[1] * float(np.min(self.warp(self.x1))))

    @property
    def injectivity_radius(self) -> float:
        return 0.5 * self.shortest_period

    @property
    def ansatz_radius(self) -> float:
        """切断関数の半径 r"""
        if self.kind == 'flat_torus':
            return min(self.periods[0], 2.0 * math.pi) / 4.0
        return self.shortest_period / 4.0

    def check_field(self, u: np.ndarray, name: str = "field") -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_nodes,):
            raise DomainError(f"{name} has shape {u.shape}, grid expects ({self.n_nodes},)")
        return u

    def wrap(self, point) -> np.ndarray:
        return np.mod(np.asarray(point, dtype=float), self.periods)

    def node_index(self, point) -> int:
        """最も近い節点の番号"""
        h1, h2 = self.spacing
        x = self.wrap(point)
        i = int(np.round(x[0] / h1)) % self.shape[0]
        j = int(np.round(x[1] / h2)) % self.shape[1]
        return i * self.shape[1] + j

    def snap(self, point) -> np.ndarray:
        k = self.node_index(point)
        return np.array([self.x1[k], self.x2[k]])

    def chart_displacement(self, point) -> np.ndarray:
        """点から各節点へのチャート変位（最小像、各成分は (−L/2, L/2]）"""
        x = self.wrap(point)
        d = self.points - x
        periods = np.asarray(self.periods)
        return d - periods * np.round(d / periods)

    def reshape(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u).reshape(self.shape)

    @cached_property
    def _distance_graph(self) -> sp.csr_matrix:
        return _build_distance_graph(self)


def _finite_slope(f: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    """f′ の中心差分近似"""
    step = 1e-5

    def slope(t):
        t = np.asarray(t, dtype=float)
        return (f(t + step) - f(t - step)) / (2.0 * step)

    return slope


def build_flat_torus(L: float, N: int) -> ManifoldGrid:
    """
    平坦トーラス [0,L)² の格子

    Args:
        L: 一辺の長さ
        N: 一辺あたりの節点数（16以上）

    Returns:
        ManifoldGrid: 一様重み (L/N)² の格子

    Raises:
        ConfigurationError: 節点数が少なすぎる
    """
    if N < MIN_NODES:
        raise ConfigurationError(f"N={N} below minimum {MIN_NODES}")
    if L <= 0:
        raise ConfigurationError(f"Side length must be positive, got {L}")

    h = L / N
    axis = np.arange(N) * h
    x1, x2 = np.meshgrid(axis, axis, indexing='ij')
    n = N * N
    identity = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    ones = np.ones(n)
    grid = ManifoldGrid(
        kind='flat_torus',
        shape=(N, N),
        periods=(float(L), float(L)),
        x1=x1.ravel(),
        x2=x2.ravel(),
        metric=identity,
        metric_inv=identity.copy(),
        sqrt_det=ones,
        weights=np.full(n, h * h),
        face_flux=(ones.copy(), ones.copy()),
        description={'kind': 'flat_torus', 'L': float(L), 'N': int(N)},
    )
    logger.debug(f"Built flat torus L={L} N={N}")
    return grid


def build_surface_of_revolution(f: Callable[[np.ndarray], np.ndarray], N_t: int, N_phi: int,
                                f_slope: Optional[Callable] = None, f_spec: Optional[str] = None) -> ManifoldGrid:
    """
    回転面 S¹ ×_{f²} S¹（計量 dt² + f(t)²dφ²）の格子

    Args:
        f: 2π周期の正値プロファイル関数（配列対応）
        N_t: t方向の節点数
        N_phi: φ方向の節点数
        f_slope: f′（省略時は中心差分）
        f_spec: 設定ファイル上の式（記録用）

    Raises:
        ConfigurationError: 節点数が少なすぎる
        DomainError: f が正でない点がある
    """
    if min(N_t, N_phi) < MIN_NODES:
        raise ConfigurationError(f"N_t={N_t}, N_phi={N_phi} below minimum {MIN_NODES}")

    period = 2.0 * math.pi
    h_t, h_phi = period / N_t, period / N_phi
    t_axis = np.arange(N_t) * h_t
    warp_nodes = np.asarray(f(t_axis), dtype=float) * np.ones(N_t)
    warp_faces = np.asarray(f(t_axis + 0.5 * h_t), dtype=float) * np.ones(N_t)
    if np.any(warp_nodes <= 0) or np.any(warp_faces <= 0):
        raise DomainError("Surface of revolution profile f must be positive everywhere")

    t, phi = np.meshgrid(t_axis, np.arange(N_phi) * h_phi, indexing='ij')
    n = N_t * N_phi
    w = np.repeat(warp_nodes, N_phi)
    metric = np.zeros((n, 2, 2))
    metric[:, 0, 0] = 1.0
    metric[:, 1, 1] = w ** 2
    metric_inv = np.zeros((n, 2, 2))
    metric_inv[:, 0, 0] = 1.0
    metric_inv[:, 1, 1] = 1.0 / w ** 2

    grid = ManifoldGrid(
        kind='surface_of_revolution',
        shape=(N_t, N_phi),
        periods=(period, period),
        x1=t.ravel(),
        x2=phi.ravel(),
        metric=metric,
        metric_inv=metric_inv,
        sqrt_det=w,
        weights=np.full(n, h_t * h_phi),
        face_flux=(np.repeat(warp_faces, N_phi), 1.0 / w),
        warp=f,
        warp_slope=f_slope or _finite_slope(f),
        description={'kind': 'surface_of_revolution', 'f_spec': f_spec, 'N_t': int(N_t), 'N_phi': int(N_phi)},
    )
    logger.debug(f"Built surface of revolution N_t={N_t} N_phi={N_phi}, area={grid.area:.6f}")
    return grid


def _geodesic_rhs(f, df):
    """dt² + f(t)²dφ² の測地線方程式"""
    def rhs(s, state):
        t, phi, vt, vphi = np.split(state, 4)
        ft, dft = f(t), df(t)
        return np.concatenate([vt, vphi, ft * dft * vphi ** 2, -2.0 * dft / ft * vt * vphi])
    return rhs


def exp_map(grid: ManifoldGrid, xi: Point, y) -> np.ndarray:
    """
    指数写像 exp_ξ(y)

    Args:
        xi: 基点（チャート座標）
        y: 正規直交枠 (∂_1, |g_22|^{-1/2}∂_2) での接ベクトル

    Raises:
        DomainError: |y| が単射半径以上
    """
    y = np.asarray(y, dtype=float)
    norm = float(np.hypot(y[0], y[1]))
    if norm >= grid.injectivity_radius:
        raise DomainError(f"|y|={norm:.4f} exceeds injectivity radius {grid.injectivity_radius:.4f}")
    xi = np.asarray(xi, dtype=float)
    if grid.warp is None or norm == 0.0:
        return grid.wrap(xi + np.array([y[0], y[1] / _warp_at(grid, xi[0])]))

    f0 = float(_warp_at(grid, xi[0]))
    state0 = np.array([xi[0], xi[1], y[0], y[1] / f0])
    sol = solve_ivp(_geodesic_rhs(grid.warp, grid.warp_slope), (0.0, 1.0), state0,
                    method='DOP853', rtol=1e-11, atol=1e-13)
    return grid.wrap(sol.y[:2, -1])


def _warp_at(grid: ManifoldGrid, t) -> np.ndarray:
    if grid.warp is None:
        return np.ones_like(np.asarray(t, dtype=float))
    return np.asarray(grid.warp(np.asarray(t, dtype=float)), dtype=float)


def normal_coordinates(grid: ManifoldGrid, xi: Point, radius: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    各節点の正規座標 y = exp_ξ^{-1}(x)

    平坦トーラスでは平行移動そのもの。回転面では ξ から測地線の扇を一度だけ
    積分して表を作り、チャート変位から補間する

    Returns:
        Tuple: (y: (n, 2), inside: |y| < radius の節点マスク)
    """
    if radius >= grid.injectivity_radius:
        raise DomainError(f"Radius {radius:.4f} not below injectivity radius {grid.injectivity_radius:.4f}")
    disp = grid.chart_displacement(xi)
    if grid.warp is None:
        y = disp
    else:
        y = _tabulated_inverse_exp(grid, np.asarray(xi, dtype=float), radius, disp)
    rho = np.hypot(y[:, 0], y[:, 1])
    inside = np.isfinite(rho) & (rho < radius)
    y = np.where(inside[:, None], y, np.nan)
    return y, inside


def _tabulated_inverse_exp(grid: ManifoldGrid, xi: np.ndarray, radius: float,
                           disp: np.ndarray) -> np.ndarray:
    reach = 1.1 * radius
    angles = np.linspace(0.0, 2.0 * math.pi, FAN_ANGLES, endpoint=False)
    f0 = float(_warp_at(grid, xi[0]))
    n = angles.size
    state0 = np.concatenate([np.full(n, xi[0]), np.full(n, xi[1]),
                             np.cos(angles), np.sin(angles) / f0])
    radii = np.linspace(0.0, reach, FAN_RADII + 1)[1:]
    sol = solve_ivp(_geodesic_rhs(grid.warp, grid.warp_slope), (0.0, reach), state0,
                    t_eval=radii, method='DOP853', rtol=1e-10, atol=1e-12)
    t_end = sol.y[:n] - xi[0]
    phi_end = sol.y[n:2 * n] - xi[1]

    chart = np.vstack([[0.0, 0.0], np.column_stack([t_end.ravel(), phi_end.ravel()])])
    tangent = np.vstack([[0.0, 0.0], np.column_stack([
        (np.cos(angles)[:, None] * radii[None, :]).ravel(),
        (np.sin(angles)[:, None] * radii[None, :]).ravel(),
    ])])
    interpolant = CloughTocher2DInterpolator(chart, tangent, fill_value=np.nan)
    near = np.abs(disp[:, 0]) <= reach
    near &= np.abs(disp[:, 1]) * float(np.min(grid.warp(grid.x1))) <= reach
    y = np.full(disp.shape, np.nan)
    if np.any(near):
        y[near] = interpolant(disp[near])
    return y


def _build_distance_graph(grid: ManifoldGrid) -> sp.csr_matrix:
    """16近傍の重み付きグラフ（辺長は中点の計量で測る）"""
    n1, n2 = grid.shape
    h1, h2 = grid.spacing
    idx = np.arange(grid.n_nodes).reshape(n1, n2)
    rows, cols, lengths = [], [], []
    for di, dj in GRAPH_OFFSETS:
        target = np.roll(np.roll(idx, -di, axis=0), -dj, axis=1)
        dt, dphi = di * h1, dj * h2
        mid_t = grid.x1.reshape(n1, n2) + 0.5 * dt
        warp = _warp_at(grid, mid_t)
        length = np.sqrt(dt ** 2 + (warp * dphi) ** 2)
        rows.append(idx.ravel())
        cols.append(target.ravel())
        lengths.append(length.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    lengths = np.concatenate(lengths)
    graph = sp.coo_matrix((lengths, (rows, cols)), shape=(grid.n_nodes, grid.n_nodes)).tocsr()
    return graph.maximum(graph.T)


def distance_field(grid: ManifoldGrid, xi: Point) -> np.ndarray:
    """ξ から全節点までの測地距離"""
    if grid.warp is None:
        disp = grid.chart_displacement(xi)
        return np.hypot(disp[:, 0], disp[:, 1])
    source = grid.node_index(xi)
    return dijkstra(grid._distance_graph, directed=False, indices=source)


def geodesic_distance(grid: ManifoldGrid, x: Point, xi: Point) -> float:
    """
    測地距離 d_g(x, ξ)

    平坦トーラスでは周期ユークリッド距離（厳密）、回転面では格子グラフ上の
    Dijkstra 距離（両点とも最寄り節点に寄せる、精度 O(h)）
    """
    if grid.warp is None:
        d = np.asarray(x, dtype=float) - np.asarray(xi, dtype=float)
        periods = np.asarray(grid.periods)
        d = d - periods * np.round(d / periods)
        return float(np.hypot(d[0], d[1]))
    distances = distance_field(grid, xi)
    return float(distances[grid.node_index(x)])


# ---- 係数式 ----

_BINARY = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCTIONS = {'cos': np.cos, 'sin': np.sin, 'exp': np.exp}
_ALIASES = {'t': 'x', 'phi': 'y'}


def parse_expression(text: str) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """
    係数式を関数に変換

    使える要素: 数値、x, y（回転面では t, phi も可）、pi、+ − * / **、cos, sin, exp

    Raises:
        ConfigurationError: 文法外の要素を含む
    """
    try:
        tree = ast.parse(str(text), mode='eval')
    except SyntaxError as e:
        raise ConfigurationError(f"Cannot parse coefficient expression {text!r}: {e}") from e

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            value = float(node.value)
            return lambda x, y: value
        if isinstance(node, ast.Name):
            name = _ALIASES.get(node.id, node.id)
            if name == 'x':
                return lambda x, y: x
            if name == 'y':
                return lambda x, y: y
            if name == 'pi':
                return lambda x, y: math.pi
            raise ConfigurationError(f"Unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINARY:
            op = _BINARY[type(node.op)]
            left, right = build(node.left), build(node.right)
            return lambda x, y: op(left(x, y), right(x, y))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            op = _UNARY[type(node.op)]
            inner = build(node.operand)
            return lambda x, y: op(inner(x, y))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCTIONS and len(node.args) == 1 and not node.keywords):
            func = _FUNCTIONS[node.func.id]
            arg = build(node.args[0])
            return lambda x, y: func(arg(x, y))
        raise ConfigurationError(f"Unsupported element {ast.dump(node)} in {text!r}")

    return build(tree)


def field_from_spec(grid: ManifoldGrid, spec: Union[str, float, int]) -> np.ndarray:
    """係数指定（数値または式）を節点上の場に評価"""
    if isinstance(spec, (int, float)):
        return np.full(grid.n_nodes, float(spec))
    func = parse_expression(spec)
    values = func(grid.x1, grid.x2)
    return np.broadcast_to(np.asarray(values, dtype=float), (grid.n_nodes,)).copy()


def profile_from_spec(spec: Union[str, float, int]) -> Callable[[np.ndarray], np.ndarray]:
    """回転面のプロファイル f(t) を式から作る"""
    if isinstance(spec, (int, float)):
        value = float(spec)
        return lambda t: np.full(np.shape(t), value)
    func = parse_expression(spec)
    return lambda t: np.asarray(func(np.asarray(t, dtype=float), 0.0), dtype=float) * np.ones(np.shape(t))
