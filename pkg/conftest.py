import math
import os
import sys

import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from limit_profile import solve_ground_state  # noqa: E402
from manifold import build_flat_torus  # noqa: E402


@pytest.fixture(scope="session")
def profile():
    """2次元 p=4 の基底状態"""
    return solve_ground_state(2, 4.0)


@pytest.fixture(scope="session")
def torus():
    """一辺 2π、64×64 の平坦トーラス"""
    return build_flat_torus(2 * math.pi, 64)
