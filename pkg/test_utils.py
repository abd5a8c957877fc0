"""
ユーティリティのテスト
"""

import os

import pytest

from utils import ConvergenceError, get_worker_count, safe_divide


@pytest.fixture
def no_thread_env(monkeypatch):
    monkeypatch.delenv("KGMP_THREADS", raising=False)


def test_worker_count_defaults(no_thread_env):
    assert get_worker_count() == max(1, os.cpu_count() or 1)
    assert get_worker_count(3) == 3
    assert get_worker_count(0) == 1


def test_worker_count_capped_by_environment(monkeypatch):
    monkeypatch.setenv("KGMP_THREADS", "2")
    assert get_worker_count(8) == 2
    assert get_worker_count(1) == 1
    assert get_worker_count() == min(2, os.cpu_count() or 1)


def test_worker_count_ignores_invalid_environment(monkeypatch):
    monkeypatch.setenv("KGMP_THREADS", "many")
    assert get_worker_count(5) == 5


def test_safe_divide():
    assert safe_divide(1.0, 4.0) == 0.25
    assert safe_divide(1.0, 0.0) == 0.0
    assert safe_divide(1.0, 0.0, default=-1.0) == -1.0


def test_convergence_error_keeps_history():
    history = [{'iteration': 1, 'residual_norm': 0.5}]
    error = ConvergenceError("stagnated", history)
    history.append({'iteration': 2})
    assert error.history == [{'iteration': 1, 'residual_norm': 0.5}]
    assert ConvergenceError("no history").history == []
