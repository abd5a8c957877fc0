"""
実験設定の解決と実験ランナーのテスト
"""

import glob
import math
import os

import pytest

from experiments import EXPERIMENTS, ExperimentConfig, ExperimentRunner, build_grid
from nonlinear_solver import RESOLUTION_FACTOR
from utils import ConfigurationError, load_config

CONFIG_FILES = sorted(glob.glob(os.path.join(os.path.dirname(__file__), "config", "*.yaml")))


def test_defaults_filled():
    config = ExperimentConfig.from_mapping({'experiment': 'gram'})
    assert config.manifold['kind'] == 'flat_torus'
    assert config.manifold['L'] == pytest.approx(2 * math.pi)
    assert config.physics == {'p': 4.0, 'q': 1.0, 'omega': 0.0}
    assert config.epsilon_list == [0.2, 0.1, 0.05]


def test_length_expression():
    config = ExperimentConfig.from_mapping({'experiment': 'gram', 'manifold': {'L': '2*pi', 'N': 32}})
    assert config.manifold['L'] == pytest.approx(2 * math.pi, rel=1e-15)
    assert config.manifold['N'] == 32


@pytest.mark.parametrize("mapping", [
    {},
    {'experiment': 'gram', 'extra': 1},
    {'experiment': 'gram', 'epsilon_list': []},
    {'experiment': 'gram', 'epsilon_list': [0.1, -0.05]},
    {'experiment': 'gram', 'epsilon_list': ['small']},
    {'experiment': 'gram', 'physics': [4.0]},
])
def test_invalid_mappings(mapping):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_mapping(mapping)


def test_overrides_use_dotted_keys_and_skip_none():
    config = ExperimentConfig.from_mapping({'experiment': 'gram', 'physics': {'p': 3.0}})
    updated = config.with_overrides({'physics.omega': 0.5, 'manifold.N': 64, 'physics.q': None,
                                     'epsilon_list': [0.3, 0.2], 'output_dir': 'out'})
    assert updated.physics == {'p': 3.0, 'q': 1.0, 'omega': 0.5}
    assert updated.manifold['N'] == 64
    assert updated.epsilon_list == [0.3, 0.2]
    assert updated.output_dir == 'out'
    assert config.physics['omega'] == 0.0


def test_build_grid_kinds():
    surface = build_grid({'kind': 'surface_of_revolution', 'f_spec': '2 + cos(t)', 'N_t': 16, 'N_phi': 24})
    assert surface.kind == 'surface_of_revolution' and surface.shape == (16, 24)
    with pytest.raises(ConfigurationError):
        build_grid({'kind': 'klein_bottle'})


def test_xi_star_defaults_to_gamma_maximum():
    config = ExperimentConfig.from_mapping({
        'experiment': 'gram', 'manifold': {'N': 32},
        'coefficients': {'a_spec': '2 + cos(x)*cos(y)'},
    })
    runner = ExperimentRunner(config)
    assert runner.xi_star(runner.params(0.2)) == (0.0, 0.0)
    runner.options['xi'] = [1.0, 2.0]
    assert runner.xi_star(runner.params(0.2)) == (1.0, 2.0)


def test_unknown_experiment_rejected(tmp_path):
    config = ExperimentConfig.from_mapping({'experiment': 'warp-drive', 'output_dir': str(tmp_path)})
    with pytest.raises(ConfigurationError):
        ExperimentRunner(config).run()


def test_every_experiment_is_registered():
    assert sorted(EXPERIMENTS) == sorted(['ground-state', 'psi-check', 'gradient-check', 'gram', 'corrector',
                                          'landscape', 'solve', 'continuation', 'lift-check', 'hopf-check'])


def test_hopf_experiment_writes_artifacts(tmp_path):
    config = ExperimentConfig.from_mapping({
        'experiment': 'hopf-check', 'output_dir': str(tmp_path),
        'options': {'test_functions': ['height'], 'h_fd': [2e-2, 1e-2], 'samples': 50},
    })
    results = ExperimentRunner(config).run()
    assert len(results['rows']) == 2
    assert 3.0 < results['rows'][1]['reduction'] < 5.0
    for name in ('hopf.csv', 'hopf.json', 'summary.txt'):
        assert (tmp_path / name).exists()


@pytest.mark.parametrize("path", CONFIG_FILES, ids=os.path.basename)
def test_shipped_configs_resolve_every_epsilon(path):
    config = ExperimentConfig.from_mapping(load_config(path))
    assert config.experiment in EXPERIMENTS
    if config.experiment in ('ground-state', 'hopf-check'):
        return
    grid = build_grid(config.manifold)
    assert min(config.epsilon_list) >= RESOLUTION_FACTOR * grid.min_spacing


def test_default_grid_resolves_default_epsilons():
    config = ExperimentConfig.from_mapping({'experiment': 'continuation'})
    grid = build_grid(config.manifold)
    assert min(config.epsilon_list) >= RESOLUTION_FACTOR * grid.min_spacing
