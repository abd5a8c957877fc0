"""
実験実行モジュール

設定の解決（ExperimentConfig）と、名前付き実験の実行・成果物の書き出し
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from ansatz import AnsatzSpec, build_W, gram_limit_constant, gram_matrix
from elliptic_core import ProblemParams, embedding_constant, inner_product_eps, istar_constant, smooth_random_field
from energy import i_energy, i_gradient
from geometry_checks import (hopf_commutation_error, verify_gamma_lift, warped_base_params,
                             warped_base_residual, warped_lift_residual)
from limit_profile import profile_integrals, solve_ground_state
from manifold import (ManifoldGrid, build_flat_torus, build_surface_of_revolution, parse_expression,
                      profile_from_spec)
from nonlinear_solver import RESOLUTION_FACTOR, concentration_point, continuation_run, newton_solve, system_residuals
from psi_solver import check_psi_bounds, compute_psi, psi_derivative, theta, theta_prime
from reduction import (corrector_diagnostics, gamma, landscape_scan, refine_critical_point,
                       scaling_exponent, xi_grid)
from reporter import ArtifactWriter, generate_summary_report
from utils import ConfigurationError, ConvergenceError


DEFAULT_MANIFOLD = {'kind': 'flat_torus', 'L': 2 * math.pi, 'N': 512}
DEFAULT_COEFFICIENTS = {'a_spec': 1.0, 'b_spec': 1.0, 'c_spec': 1.0}
DEFAULT_PHYSICS = {'p': 4.0, 'q': 1.0, 'omega': 0.0}
DEFAULT_SOLVER = {'tol': 1e-8, 'max_iter': 30}


@dataclass
class ExperimentConfig:
    """解決済みの実験設定"""
    experiment: str
    manifold: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_MANIFOLD))
    coefficients: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_COEFFICIENTS))
    physics: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_PHYSICS))
    epsilon_list: List[float] = field(default_factory=lambda: [0.2, 0.1, 0.05])
    solver: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_SOLVER))
    output_dir: str = "results"
    options: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, mapping: Dict[str, Any]) -> "ExperimentConfig":
        """
        設定ファイルの辞書から構築（欠けた項目は既定値）

        Raises:
            ConfigurationError: 必須項目の欠落・型の不一致
        """
        if 'experiment' not in mapping:
            raise ConfigurationError("Configuration must name an experiment")
        known = {'experiment', 'manifold', 'coefficients', 'physics', 'epsilon_list', 'solver',
                 'output_dir', 'options'}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigurationError(f"Unknown configuration keys: {unknown}")

        def merged(key, default):
            value = mapping.get(key) or {}
            if not isinstance(value, dict):
                raise ConfigurationError(f"'{key}' must be a mapping")
            return {**default, **value}

        epsilons = mapping.get('epsilon_list', [0.2, 0.1, 0.05])
        try:
            epsilons = [float(e) for e in epsilons]
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"epsilon_list must be a list of numbers: {epsilons!r}") from e
        if not epsilons or min(epsilons) <= 0:
            raise ConfigurationError(f"epsilon_list must be non-empty and positive: {epsilons}")

        config = cls(
            experiment=str(mapping['experiment']),
            manifold=merged('manifold', DEFAULT_MANIFOLD),
            coefficients=merged('coefficients', DEFAULT_COEFFICIENTS),
            physics=merged('physics', DEFAULT_PHYSICS),
            epsilon_list=epsilons,
            solver=merged('solver', DEFAULT_SOLVER),
            output_dir=str(mapping.get('output_dir', 'results')),
            options=dict(mapping.get('options') or {}),
        )
        config.manifold['L'] = _length(config.manifold.get('L', 2 * math.pi))
        return config

    def with_overrides(self, overrides: Dict[str, Any]) -> "ExperimentConfig":
        """CLI フラグの上書き（None は無視、'physics.p' のような点区切りキー）"""
        data = asdict(self)
        for key, value in overrides.items():
            if value is None:
                continue
            section, _, name = key.partition('.')
            if name:
                data.setdefault(section, {})[name] = value
            else:
                data[section] = value
        return ExperimentConfig.from_mapping(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _length(value) -> float:
    """数値または '2*pi' のような式"""
    if isinstance(value, (int, float)):
        return float(value)
    return float(parse_expression(value)(0.0, 0.0))


def build_grid(manifold: Dict[str, Any]) -> ManifoldGrid:
    kind = manifold.get('kind', 'flat_torus')
    if kind == 'flat_torus':
        return build_flat_torus(_length(manifold.get('L', 2 * math.pi)), int(manifold.get('N', 512)))
    if kind == 'surface_of_revolution':
        f_spec = manifold.get('f_spec', '2 + cos(t)')
        return build_surface_of_revolution(profile_from_spec(f_spec), int(manifold.get('N_t', 128)),
                                           int(manifold.get('N_phi', 128)), f_spec=str(f_spec))
    raise ConfigurationError(f"Unknown manifold kind {kind!r}; valid: ['flat_torus', 'surface_of_revolution']")


class ExperimentRunner:
    """名前付き実験の実行"""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.resolved = config.to_dict()
        self.writer = ArtifactWriter(config.output_dir, self.resolved)
        self.options = config.options
        self._grid: Optional[ManifoldGrid] = None

    @property
    def grid(self) -> ManifoldGrid:
        if self._grid is None:
            self._grid = build_grid(self.config.manifold)
        return self._grid

    def params(self, epsilon: float) -> ProblemParams:
        physics = self.config.physics
        coefficients = self.config.coefficients
        limit = RESOLUTION_FACTOR * self.grid.min_spacing
        if epsilon < limit:
            logger.warning(f"epsilon={epsilon} is below the resolution limit 4h={limit:.4f}; "
                           f"ansatz integrals are under-resolved")
        return ProblemParams.from_specs(self.grid, coefficients['a_spec'], coefficients['b_spec'],
                                        coefficients['c_spec'], epsilon=epsilon, q=float(physics['q']),
                                        omega=float(physics['omega']), p=float(physics['p']))

    def xi_star(self, params: ProblemParams):
        """options.xi が無ければ Γ の最大節点"""
        if 'xi' in self.options:
            return tuple(float(x) for x in self.options['xi'])
        values = gamma(params.a, params.b, params.c, 2, params.p)
        k = int(np.argmax(values))
        return float(self.grid.x1[k]), float(self.grid.x2[k])

    def run(self) -> Dict:
        """
        実験を実行して要約を返す

        Raises:
            ConfigurationError: 未知の実験名
            ConvergenceError: 数値的非収束（部分的な成果物は書き出し済み）
        """
        name = self.config.experiment
        if name not in EXPERIMENTS:
            raise ConfigurationError(f"Unknown experiment {name!r}; valid: {sorted(EXPERIMENTS)}")
        logger.info(f"Running experiment '{name}' -> {self.config.output_dir}")
        results = EXPERIMENTS[name](self)
        self.writer.save_summary(generate_summary_report(name, results, self.resolved))
        return results

    # ---- 各実験 ----

    def ground_state(self) -> Dict:
        dim = int(self.options.get('dim', 2))
        p = float(self.config.physics['p'])
        profile = solve_ground_state(dim, p, tol=float(self.options.get('tol', 1e-8)))
        int_up, int_grad, int_sq = profile_integrals(profile)
        self.writer.save_table(profile.to_frame(), "ground_state.csv")
        results = {
            'dim': dim, 'p': p, 'U0': profile.peak, 'truncation_radius': profile.truncation_radius,
            'residual': profile.residual, 'int_Up': int_up, 'int_grad_sq': int_grad, 'int_U_sq': int_sq,
            'nehari_gap': abs(int_grad + int_sq - int_up) / int_up,
        }
        self.writer.save_json(results, "ground_state.json")
        return results

    def psi_check(self) -> Dict:
        samples = int(self.options.get('samples', 100))
        rng = np.random.default_rng(int(self.options.get('seed', 0)))
        params = self.params(self.config.epsilon_list[0])
        worst = {'psi_min': np.inf, 'psi_max_q': -np.inf, 'derivative_min': np.inf, 'derivative_max_q': -np.inf}
        violations = 0
        for _ in range(samples):
            u = smooth_random_field(self.grid, rng, offset=0.0) * float(self.options.get('amplitude', 2.0))
            psi = compute_psi(self.grid, params, u)
            report = check_psi_bounds(self.grid, params, psi)
            derivative = psi_derivative(self.grid, params, u, u, psi=psi)
            violations += report['lower_violations'] + report['upper_violations']
            worst['psi_min'] = min(worst['psi_min'], report['min'])
            worst['psi_max_q'] = max(worst['psi_max_q'], report['max'] * params.q)
            worst['derivative_min'] = min(worst['derivative_min'], float(np.min(derivative)))
            worst['derivative_max_q'] = max(worst['derivative_max_q'], float(np.max(derivative)) * params.q)
        results = {'samples': samples, 'violations': violations, **worst,
                   'embedding_constant_p': embedding_constant(self.grid, params, params.p),
                   'istar_constant': istar_constant(self.grid, params)}
        self.writer.save_json(results, "psi_check.json")
        return results

    def gradient_check(self) -> Dict:
        pairs = int(self.options.get('pairs', 10))
        t = float(self.options.get('t', 1e-4))
        rng = np.random.default_rng(int(self.options.get('seed', 0)))
        params = self.params(self.config.epsilon_list[0])
        rows = []
        for index in range(pairs):
            u = smooth_random_field(self.grid, rng)
            h = smooth_random_field(self.grid, rng, offset=0.0)
            central = (i_energy(self.grid, params, u + t * h) - i_energy(self.grid, params, u - t * h)) / (2 * t)
            exact = inner_product_eps(self.grid, params, i_gradient(self.grid, params, u), h)
            theta_fd = (theta(self.grid, params, u + t * h) - theta(self.grid, params, u)) / t
            theta_exact = theta_prime(self.grid, params, u, h)
            rows.append({'pair': index, 'central_difference': central, 'gradient_pairing': exact,
                         'relative_error': abs(central - exact) / max(abs(exact), 1e-300),
                         'theta_error': abs(theta_fd - theta_exact)})
        table = pd.DataFrame(rows)
        self.writer.save_table(table, "gradient_check.csv")
        results = {'pairs': pairs, 't': t, 'max_relative_error': float(table['relative_error'].max()),
                   'max_theta_error': float(table['theta_error'].max())}
        self.writer.save_json(results, "gradient_check.json")
        return results

    def gram(self) -> Dict:
        rows = []
        profile = solve_ground_state(2, float(self.config.physics['p']))
        for eps in self.config.epsilon_list:
            params = self.params(eps)
            spec = AnsatzSpec.for_grid(self.grid, self.xi_star(params), eps)
            matrix = gram_matrix(self.grid, params, spec, profile)
            a, b, c = params.at_node(self.grid.node_index(spec.xi))
            limit = gram_limit_constant(a, b, c, params.omega, params.p, profile)
            diagonal = float(np.mean(np.diag(matrix)))
            rows.append({'epsilon': eps, 'G11': matrix[0, 0], 'G12': matrix[0, 1], 'G22': matrix[1, 1],
                         'off_diagonal_ratio': abs(matrix[0, 1]) / diagonal, 'limit': limit,
                         'diagonal_gap': float(np.max(np.abs(np.diag(matrix) - limit))) / limit})
        table = pd.DataFrame(rows)
        self.writer.save_table(table, "gram.csv")
        results = {'rows': rows}
        self.writer.save_json(results, "gram.json")
        return results

    def corrector(self) -> Dict:
        rows = []
        profile = solve_ground_state(2, float(self.config.physics['p']))
        solver = self.config.solver
        for eps in self.config.epsilon_list:
            params = self.params(eps)
            spec = AnsatzSpec.for_grid(self.grid, self.xi_star(params), eps)
            try:
                diagnostics = corrector_diagnostics(self.grid, params, spec, max_iter=int(solver['max_iter']),
                                                    tol=float(solver['tol']), profile=profile)
            except ConvergenceError:
                self._flush_partial("corrector", rows)
                raise
            diagnostics['phi_over_eps'] = diagnostics['phi_norm'] / eps
            rows.append(diagnostics)
        table = pd.DataFrame(rows)
        self.writer.save_table(table, "corrector.csv")
        results = {'rows': rows}
        if len(rows) >= 2:
            results['phi_exponent'] = scaling_exponent(table['epsilon'], table['phi_norm'])
            results['remainder_exponent'] = scaling_exponent(table['epsilon'], table['remainder_norm'])
        self.writer.save_json(results, "corrector.json")
        return results

    def landscape(self) -> Dict:
        n = int(self.options.get('xi_grid', 16))
        with_corrector = bool(self.options.get('with_corrector', False))
        profile = solve_ground_state(2, float(self.config.physics['p']))
        points = xi_grid(self.grid, n)
        summaries = []
        result = None
        for eps in self.config.epsilon_list:
            params = self.params(eps)
            result = landscape_scan(self.grid, params, eps, points, with_corrector=with_corrector, profile=profile)
            self.writer.save_table(result.table, f"landscape_eps{eps:g}.csv")
            summaries.append(result.summary)
        self.writer.save_table(result.table, "landscape.csv")
        results = {'fitted_constant': result.fitted_constant, 'max_deviation': result.max_deviation,
                   'reference_constant': result.reference_constant,
                   'reference_deviation': result.reference_deviation,
                   'argmax_gap': result.argmax_gap, 'stages': summaries}
        if self.options.get('refine', False):
            params = self.params(self.config.epsilon_list[-1])
            results['refined'] = refine_critical_point(self.grid, params, result.argmax_xi,
                                                       with_corrector=with_corrector, profile=profile)
        self.writer.save_json(results, "landscape.json")
        return results

    def solve(self) -> Dict:
        eps = self.config.epsilon_list[-1]
        params = self.params(eps)
        profile = solve_ground_state(2, params.p)
        xi = self.xi_star(params)
        spec = AnsatzSpec.for_grid(self.grid, xi, eps)
        solver = self.config.solver
        try:
            result = newton_solve(self.grid, params, build_W(self.grid, params, spec, profile),
                                  tol=float(solver['tol']), max_iter=int(solver['max_iter']))
        except ConvergenceError as e:
            self.writer.save_json({'history': e.history, 'error': str(e)}, "solve.json")
            raise
        peak = concentration_point(self.grid, result.u)
        self.writer.save_field(self.grid, result.u, result.psi, "solution.csv")
        results = {
            'epsilon': eps, 'xi_star': list(spec.xi), 'concentration_point': list(peak.point),
            'ties': len(peak.ties), 'peak': result.peak_value, 'min_u': result.min_value,
            'iterations': result.iterations, 'residual': result.residual_norm, 'trivial': result.trivial,
            'positive': result.positive, 'spurious': result.spurious,
            'energy': i_energy(self.grid, params, result.u, result.psi),
            'system_residuals': system_residuals(self.grid, params, result.u, result.psi),
            'history': result.history,
        }
        self.writer.save_json(results, "solve.json")
        return results

    def continuation(self) -> Dict:
        params = self.params(self.config.epsilon_list[0])
        solver = self.config.solver
        report = continuation_run(self.grid, params, self.config.epsilon_list, self.xi_star(params),
                                  tol=float(solver['tol']), max_iter=int(solver['max_iter']))
        self.writer.save_table(report.table, "continuation.csv")
        if report.solutions:
            last = report.solutions[-1]
            self.writer.save_field(self.grid, last.u, last.psi, "solution.csv")
        results = report.summary()
        self.writer.save_json(results, "continuation.json")
        if not report.completed:
            raise ConvergenceError(f"Continuation stopped at eps={report.failure['epsilon']}")
        return results

    def lift_check(self) -> Dict:
        if self.grid.kind != 'flat_torus':
            raise ConfigurationError("lift-check runs on a flat torus base")
        f_spec = self.options.get('f_spec', '2 + cos(x)')
        beta_spec = self.options.get('beta_spec', 1.0)
        k = int(self.options.get('k', 1))
        physics = self.config.physics
        eps = self.config.epsilon_list[-1]
        params = warped_base_params(self.grid, f_spec, beta_spec, k=k, epsilon=eps, q=float(physics['q']),
                                    omega=float(physics['omega']), p=float(physics['p']))
        xi = self.xi_star(params)
        profile = solve_ground_state(2, params.p)
        spec = AnsatzSpec.for_grid(self.grid, xi, eps)
        solver = self.config.solver
        result = newton_solve(self.grid, params, build_W(self.grid, params, spec, profile),
                              tol=float(solver['tol']), max_iter=int(solver['max_iter']))
        base = warped_base_residual(self.grid, params, result.u, result.psi)
        lift = warped_lift_residual(self.grid, params, f_spec, result.u, result.psi, k=k,
                                    n_fiber=int(self.options.get('n_fiber', 8)))
        results = {
            'base_residual': base,
            'lift': lift.to_dict(),
            'gamma_warped': verify_gamma_lift(self.grid, 'warped', beta_spec, f_spec=f_spec, k=k, p=params.p),
            'gamma_harmonic_morphism': verify_gamma_lift(self.grid, 'harmonic_morphism', beta_spec,
                                                         mu_spec=self.options.get('mu_spec', 1.0), p=params.p),
        }
        self.writer.save_json(results, "lift_check.json")
        return results

    def hopf_check(self) -> Dict:
        functions = self.options.get('test_functions', ['constant', 'height', 'quadratic'])
        steps = [float(h) for h in self.options.get('h_fd', [2e-2, 1e-2, 5e-3])]
        samples = int(self.options.get('samples', 200))
        seed = int(self.options.get('seed', 0))
        rows = []
        for name in functions:
            previous = None
            for h in steps:
                report = hopf_commutation_error(name, samples=samples, h_fd=h, seed=seed)
                row = report.to_dict()
                row['reduction'] = previous / report.max_error if previous and report.max_error > 0 else np.nan
                previous = report.max_error
                rows.append(row)
        table = pd.DataFrame(rows)
        self.writer.save_table(table, "hopf.csv")
        results = {'rows': rows}
        self.writer.save_json(results, "hopf.json")
        return results

    def _flush_partial(self, name: str, rows: List[Dict]):
        if rows:
            self.writer.save_table(pd.DataFrame(rows), f"{name}_partial.csv")


EXPERIMENTS: Dict[str, Callable[[ExperimentRunner], Dict]] = {
    'ground-state': ExperimentRunner.ground_state,
    'psi-check': ExperimentRunner.psi_check,
    'gradient-check': ExperimentRunner.gradient_check,
    'gram': ExperimentRunner.gram,
    'corrector': ExperimentRunner.corrector,
    'landscape': ExperimentRunner.landscape,
    'solve': ExperimentRunner.solve,
    'continuation': ExperimentRunner.continuation,
    'lift-check': ExperimentRunner.lift_check,
    'hopf-check': ExperimentRunner.hopf_check,
}
