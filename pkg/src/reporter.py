"""
成果物出力モジュール

CSV / JSON の書き出し、テキストのサマリーレポート、SVG 図の生成
"""

import json
import os
from pathlib import Path
from typing import Dict, List

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from loguru import logger

from manifold import ManifoldGrid
from utils import CSV_FLOAT_FORMAT, SCHEMA_VERSION, artifact_header, dump_json, ensure_directory, safe_divide


# SVG の id 生成を固定し、日付メタデータを書かない
plt.rcParams['svg.hashsalt'] = 'kgmp'
SVG_METADATA = {'Date': None}


class ArtifactWriter:
    """実験成果物の書き出し（すべてにスキーマ版数と解決済み設定を埋め込む）"""

    def __init__(self, output_dir: str, config: Dict):
        """
        初期化

        Args:
            output_dir: 出力ディレクトリ
            config: 解決済みの設定
        """
        self.output_dir = Path(output_dir)
        self.config = config
        self.written: List[str] = []

    def _path(self, name: str) -> str:
        return str(self.output_dir / name)

    def save_table(self, frame: pd.DataFrame, name: str) -> str:
        """
        CSV出力（先頭の # 行にヘッダー、17桁）

        Args:
            frame: 表
            name: ファイル名
        """
        filepath = self._path(name)
        ensure_directory(filepath)
        with open(filepath, 'w', encoding='utf-8', newline='') as f:
            f.write(f"# schema_version: {SCHEMA_VERSION}\n")
            f.write(f"# config: {json.dumps(self.config, sort_keys=True, default=str)}\n")
            frame.to_csv(f, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')
        self.written.append(filepath)
        logger.info(f"Table saved to {filepath}")
        return filepath

    def save_json(self, payload: Dict, name: str) -> str:
        filepath = self._path(name)
        dump_json({**artifact_header(self.config), **payload}, filepath)
        self.written.append(filepath)
        logger.info(f"Report saved to {filepath}")
        return filepath

    def save_field(self, grid: ManifoldGrid, u: np.ndarray, psi: np.ndarray, name: str) -> str:
        """場のスナップショット (x, y, u, psi)"""
        frame = pd.DataFrame({'x': grid.x1, 'y': grid.x2, 'u': u, 'psi': psi})
        return self.save_table(frame, name)

    def save_summary(self, text: str, name: str = "summary.txt") -> str:
        filepath = self._path(name)
        ensure_directory(filepath)
        with open(filepath, 'w', encoding='utf-8') as f:
            f.write(text + "\n")
        self.written.append(filepath)
        return filepath


def read_table(filepath: str) -> pd.DataFrame:
    """ヘッダーの # 行を飛ばして CSV 成果物を読む"""
    return pd.read_csv(filepath, comment='#')


def generate_summary_report(experiment: str, results: Dict, config: Dict) -> str:
    """
    サマリーレポート生成

    Args:
        experiment: 実験名
        results: 実験の要約値（入れ子の辞書は一段だけ展開）
        config: 解決済みの設定

    Returns:
        str: レポート文字列
    """
    lines = []
    lines.append("=" * 60)
    lines.append(f"KGMP 数値実験レポート: {experiment}")
    lines.append("=" * 60)
    lines.append("")

    lines.append("【設定】")
    manifold = config.get('manifold', {})
    physics = config.get('physics', {})
    lines.append(f"多様体: {manifold.get('kind', '-')} {_describe_manifold(manifold)}")
    lines.append(f"係数: a={config.get('coefficients', {}).get('a_spec', '-')}, "
                 f"b={config.get('coefficients', {}).get('b_spec', '-')}, "
                 f"c={config.get('coefficients', {}).get('c_spec', '-')}")
    lines.append(f"物理: p={physics.get('p', '-')}, q={physics.get('q', '-')}, omega={physics.get('omega', '-')}")
    lines.append(f"ε: {config.get('epsilon_list', [])}")
    lines.append("")

    lines.append("【結果】")
    for key in sorted(results):
        value = results[key]
        if isinstance(value, dict):
            for sub in sorted(value):
                lines.append(f"{key}.{sub}: {_format(value[sub])}")
        elif isinstance(value, list) and value and isinstance(value[0], dict):
            lines.append(f"{key}: {len(value)} 件")
        else:
            lines.append(f"{key}: {_format(value)}")
    lines.append("")
    lines.append("=" * 60)
    return "\n".join(lines)


def _describe_manifold(manifold: Dict) -> str:
    if manifold.get('kind') == 'surface_of_revolution':
        return f"f={manifold.get('f_spec')}, N_t={manifold.get('N_t')}, N_phi={manifold.get('N_phi')}"
    return f"L={manifold.get('L')}, N={manifold.get('N')}"


def _format(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


# ---- 図 ----

def plot_landscape(table: pd.DataFrame, output_file: str):
    """Γ と Ĩ_ε のヒートマップを並べる"""
    gamma_map = table.pivot(index='xi2', columns='xi1', values='Gamma')
    energy_map = table.pivot(index='xi2', columns='xi1', values='I_tilde')
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, data, title in ((axes[0], gamma_map, 'Gamma'), (axes[1], energy_map, 'reduced energy')):
        extent = [data.columns.min(), data.columns.max(), data.index.min(), data.index.max()]
        image = ax.imshow(data.values, origin='lower', extent=extent, aspect='auto', cmap='viridis')
        ax.set_title(title)
        ax.set_xlabel('xi1')
        ax.set_ylabel('xi2')
        fig.colorbar(image, ax=ax)
    fig.tight_layout()
    fig.savefig(output_file, format='svg', metadata=SVG_METADATA)
    plt.close(fig)
    logger.info(f"Landscape plot saved to {output_file}")


def plot_continuation(table: pd.DataFrame, output_file: str):
    """集中点の距離と ε の両対数グラフ"""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(table['epsilon'], table['distance'], marker='o')
    ax.plot(table['epsilon'], 2.0 * table['epsilon'], linestyle='--', color='gray', label='2 eps')
    ax.set_xscale('log')
    if (table['distance'] > 0).all():
        ax.set_yscale('log')
    else:
        ax.set_yscale('symlog', linthresh=1e-3)
    ax.set_xlabel('epsilon')
    ax.set_ylabel('distance to argmax Gamma')
    ax.legend()
    ax.grid(True)
    fig.tight_layout()
    fig.savefig(output_file, format='svg', metadata=SVG_METADATA)
    plt.close(fig)
    logger.info(f"Continuation plot saved to {output_file}")


def plot_cross_section(table: pd.DataFrame, output_file: str):
    """解の最大点を通る断面（x 方向）"""
    peak = table.loc[table['u'].idxmax()]
    row = table[np.isclose(table['y'], peak['y'])].sort_values('x')
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(row['x'], row['u'], label='u')
    ax.plot(row['x'], row['psi'], label='Psi(u)')
    ax.set_xlabel('x')
    ax.set_title(f"cross-section at y = {peak['y']:.4f}")
    ax.legend()
    ax.grid(True)
    fig.tight_layout()
    fig.savefig(output_file, format='svg', metadata=SVG_METADATA)
    plt.close(fig)
    logger.info(f"Cross-section plot saved to {output_file}")


def plot_profile(table: pd.DataFrame, output_file: str):
    """基底状態 U(r)"""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(table['r'], table['U'])
    ax.set_xlabel('r')
    ax.set_ylabel('U')
    ax.set_xlim(0.0, float(table['r'].max()))
    ax.grid(True)
    fig.tight_layout()
    fig.savefig(output_file, format='svg', metadata=SVG_METADATA)
    plt.close(fig)


PLOTTERS = {
    'landscape.csv': ('landscape.svg', plot_landscape),
    'continuation.csv': ('continuation.svg', plot_continuation),
    'solution.csv': ('cross_section.svg', plot_cross_section),
    'ground_state.csv': ('ground_state.svg', plot_profile),
}


def emit_plots(artifact_dir: str) -> List[str]:
    """
    成果物ディレクトリの CSV から SVG 図を作る

    無い成果物は警告して飛ばす

    Returns:
        List[str]: 書き出した SVG のパス
    """
    written: List[str] = []
    if not os.path.isdir(artifact_dir):
        logger.warning(f"Artifact directory not found: {artifact_dir}")
        return written
    missing = []
    for source, (target, plotter) in PLOTTERS.items():
        source_path = os.path.join(artifact_dir, source)
        if not os.path.exists(source_path):
            missing.append(source)
            continue
        output_file = os.path.join(artifact_dir, target)
        plotter(read_table(source_path), output_file)
        written.append(output_file)
    if not written:
        logger.warning(f"No plottable artifacts in {artifact_dir}")
    elif missing:
        logger.debug(f"Skipped missing artifacts: {missing}")
    coverage = safe_divide(len(written), len(PLOTTERS))
    logger.info(f"Emitted {len(written)} plots ({coverage:.0%} of known artifact kinds)")
    return written