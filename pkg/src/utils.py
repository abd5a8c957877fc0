"""
ユーティリティ関数

ログ設定、設定ファイル読み込み、例外クラス、成果物書き出しの共通処理
"""

import os
import sys
import json
from datetime import datetime
from typing import Dict, Any, List, Optional

import yaml
from dotenv import load_dotenv
from loguru import logger


SCHEMA_VERSION = 1
CSV_FLOAT_FORMAT = "%.17g"


class KGMPError(Exception):
    """数値実験全般の基底例外"""


class ConfigurationError(KGMPError):
    """設定ファイル・サイズ条件の不備（CLI終了コード2）"""


class DomainError(KGMPError, ValueError):
    """数学的な前提条件の違反"""


class ConvergenceError(KGMPError):
    """
    反復解法の非収束（CLI終了コード1）

    Args:
        message: エラーメッセージ
        history: 反復ごとの診断情報
    """

    def __init__(self, message: str, history: Optional[List[Dict[str, Any]]] = None):
        super().__init__(message)
        self.history = list(history or [])


def setup_logging(log_level: str = "INFO", log_file: str = None):
    """
    ログ設定

    Args:
        log_level: ログレベル
        log_file: ログファイルパス（Noneの場合は自動生成）
    """
    # 既存のログハンドラーをクリア
    logger.remove()

    # コンソール出力設定
    logger.add(
        sys.stderr,
        level=log_level,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
        colorize=True
    )

    # ファイル出力設定
    if log_file is None:
        log_dir = "data/logs"
        os.makedirs(log_dir, exist_ok=True)
        log_file = os.path.join(log_dir, f"kgmp_{datetime.now().strftime('%Y%m%d')}.log")

    logger.add(
        log_file,
        level=log_level,
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
        rotation="1 day",
        retention="7 days",
        encoding="utf-8"
    )

    logger.info(f"Logging initialized. Level: {log_level}, File: {log_file}")


def load_config(config_path: str) -> Dict[str, Any]:
    """
    設定ファイル読み込み（YAML、JSONも可）

    Args:
        config_path: 設定ファイルパス

    Returns:
        Dict: 設定辞書

    Raises:
        ConfigurationError: ファイルが存在しない、または解析できない
    """
    if not os.path.exists(config_path):
        logger.error(f"Configuration file not found: {config_path}")
        raise ConfigurationError(f"Configuration file not found: {config_path}")

    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            config = yaml.safe_load(f)
    except yaml.YAMLError as e:
        logger.error(f"Error parsing configuration file {config_path}: {e}")
        raise ConfigurationError(f"Cannot parse {config_path}: {e}") from e

    if not isinstance(config, dict):
        raise ConfigurationError(f"Configuration root must be a mapping: {config_path}")

    logger.info(f"Configuration loaded from {config_path}")
    return config


def get_worker_count(default: Optional[int] = None) -> int:
    """
    並列ワーカー数を取得（環境変数 KGMP_THREADS で上限指定）

    Returns:
        int: ワーカー数（1以上）
    """
    load_dotenv()
    cpu = os.cpu_count() or 1
    limit = default if default is not None else cpu
    value = os.getenv("KGMP_THREADS")
    if value:
        try:
            limit = min(limit, int(value))
        except ValueError:
            logger.warning(f"Ignoring invalid KGMP_THREADS value: {value!r}")
    return max(1, limit)


def ensure_directory(filepath: str):
    """
    ディレクトリ存在確認・作成

    Args:
        filepath: ファイルパス
    """
    directory = os.path.dirname(filepath)
    if directory and not os.path.exists(directory):
        os.makedirs(directory, exist_ok=True)
        logger.debug(f"Created directory: {directory}")


def artifact_header(config: Dict[str, Any]) -> Dict[str, Any]:
    """成果物に埋め込むヘッダー（スキーマ版数と解決済み設定）"""
    return {'schema_version': SCHEMA_VERSION, 'config': config}


def dump_json(payload: Dict[str, Any], filepath: str):
    """
    JSONを決定的な形式で保存

    Args:
        payload: 保存する辞書
        filepath: 出力パス
    """
    ensure_directory(filepath)
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False, default=_json_default)
        f.write("\n")


def _json_default(value):
    """numpy型などをJSON化"""
    if hasattr(value, 'tolist'):
        return value.tolist()
    if hasattr(value, 'item'):
        return value.item()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def safe_divide(numerator: float, denominator: float, default: float = 0.0) -> float:
    """
    安全な除算（ゼロ除算回避）

    Args:
        numerator: 分子
        denominator: 分母
        default: 分母が0の場合のデフォルト値

    Returns:
        float: 除算結果
    """
    if denominator == 0:
        return default
    return numerator / denominator
