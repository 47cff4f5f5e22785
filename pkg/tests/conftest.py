import sys
from functools import lru_cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sbrwave.filters import make_filter  # noqa: E402
from sbrwave.mpinterval import PrecisionContext  # noqa: E402


@lru_cache(maxsize=None)
def bank(family: str, N: int, bits: int = 256):
    return make_filter(family, N, PrecisionContext(bits))


@pytest.fixture(scope="session")
def get_bank():
    return bank


@pytest.fixture
def data_dir():
    return Path(__file__).parent / "data"
