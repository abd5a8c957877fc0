"""
メインエントリーポイント
"""

import argparse
import os
import sys
from typing import Dict, List, Optional

from dotenv import load_dotenv
from loguru import logger

from experiments import EXPERIMENTS, ExperimentConfig, ExperimentRunner
from reporter import emit_plots, generate_summary_report
from utils import ConfigurationError, ConvergenceError, DomainError, setup_logging, load_config


EXIT_OK = 0
EXIT_CONVERGENCE = 1
EXIT_CONFIG = 2
EXIT_INTERRUPTED = 130


class KGMPLab:
    """KGMP 数値実験ランナー"""

    def __init__(self, config_path: Optional[str] = None, experiment: Optional[str] = None,
                 overrides: Optional[Dict] = None, log_level: str = "INFO"):
        """
        初期化
        - 環境変数読み込み
        - ログ設定
        - 設定ファイル読み込みとフラグによる上書き
        """
        # 環境変数読み込み
        load_dotenv()

        # ログ設定
        setup_logging(os.getenv("KGMP_LOG_LEVEL", log_level))

        # 設定ファイル読み込み
        mapping = load_config(config_path) if config_path else {}
        if experiment and experiment != 'run':
            mapping['experiment'] = experiment
        self.config = ExperimentConfig.from_mapping(mapping).with_overrides(overrides or {})
        self.runner = ExperimentRunner(self.config)

        logger.info(f"KGMPLab initialized for experiment '{self.config.experiment}'")

    def run(self) -> Dict:
        return self.runner.run()

    def generate_report(self, results: Dict) -> str:
        return generate_summary_report(self.config.experiment, results, self.config.to_dict())


def _common_arguments() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--config', help='設定ファイルパス（YAML/JSON）')
    parent.add_argument('--output-dir', dest='output_dir', help='成果物の出力ディレクトリ')
    parent.add_argument('--L', type=float, help='平坦トーラスの一辺')
    parent.add_argument('--N', type=int, help='一辺あたりの節点数')
    parent.add_argument('--a-spec', dest='a_spec', help='係数 a の式')
    parent.add_argument('--b-spec', dest='b_spec', help='係数 b の式')
    parent.add_argument('--c-spec', dest='c_spec', help='係数 c の式')
    parent.add_argument('--p', type=float, help='非線形指数')
    parent.add_argument('--q', type=float, help='結合定数')
    parent.add_argument('--omega', type=float, help='位相の周波数')
    parent.add_argument('--epsilon', type=float, nargs='+', help='ε のリスト（減少順）')
    parent.add_argument('--tol', type=float, help='ソルバー許容値')
    parent.add_argument('--max-iter', dest='max_iter', type=int, help='最大反復回数')
    parent.add_argument('--log-level', dest='log_level', default='INFO', help='ログレベル')
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='KGMP 系の半古典解の数値実験ツール')
    subparsers = parser.add_subparsers(dest='command', required=True)
    parent = _common_arguments()

    run = subparsers.add_parser('run', parents=[parent], help='設定ファイルの実験を実行')
    run.set_defaults(config_required=True)
    for name in EXPERIMENTS:
        sub = subparsers.add_parser(name, parents=[parent], help=f'{name} 実験')
        if name == 'ground-state':
            sub.add_argument('--dim', type=int, help='空間次元')
        if name == 'landscape':
            sub.add_argument('--xi-grid', dest='xi_grid', type=int, help='ξ 格子の一辺の点数')
            sub.add_argument('--with-corrector', dest='with_corrector', action='store_true', default=None,
                             help='補正項込みの縮約エネルギー')
        if name in ('psi-check', 'hopf-check'):
            sub.add_argument('--samples', type=int, help='標本数')

    plots = subparsers.add_parser('plots', help='成果物ディレクトリから SVG 図を作る')
    plots.add_argument('artifact_dir', help='成果物ディレクトリ')
    plots.add_argument('--log-level', dest='log_level', default='INFO', help='ログレベル')
    return parser


def _overrides(args: argparse.Namespace) -> Dict:
    mapping = {
        'output_dir': 'output_dir', 'L': 'manifold.L', 'N': 'manifold.N',
        'a_spec': 'coefficients.a_spec', 'b_spec': 'coefficients.b_spec', 'c_spec': 'coefficients.c_spec',
        'p': 'physics.p', 'q': 'physics.q', 'omega': 'physics.omega', 'epsilon': 'epsilon_list',
        'tol': 'solver.tol', 'max_iter': 'solver.max_iter', 'dim': 'options.dim',
        'xi_grid': 'options.xi_grid', 'with_corrector': 'options.with_corrector', 'samples': 'options.samples',
    }
    return {target: getattr(args, name) for name, target in mapping.items() if hasattr(args, name)}


def main(argv: Optional[List[str]] = None) -> int:
    """
    メイン実行関数

    Returns:
        int: 終了コード（0 成功、1 非収束、2 設定エラー）
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == 'plots':
        setup_logging(args.log_level)
        written = emit_plots(args.artifact_dir)
        print(f"{len(written)} plots written")
        return EXIT_OK

    try:
        if getattr(args, 'config_required', False) and not args.config:
            raise ConfigurationError("'run' needs --config")
        lab = KGMPLab(args.config, args.command, _overrides(args), args.log_level)
        results = lab.run()

        # レポート生成・表示
        print(lab.generate_report(results))
        return EXIT_OK

    except (ConfigurationError, DomainError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except ConvergenceError as e:
        logger.error(f"Numerical non-convergence: {e} ({len(e.history)} history entries)")
        return EXIT_CONVERGENCE
    except KeyboardInterrupt:
        logger.info("Execution interrupted by user")
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
