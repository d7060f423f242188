"""
Shared fixtures for the speclora test suite
"""

import numpy as np
import pytest

from speclora.config import ConfigManager


@pytest.fixture
def rng():
    """Seeded generator so every test is reproducible"""
    return np.random.default_rng(20240611)


@pytest.fixture
def no_wall_time(monkeypatch):
    """Record wall_time_s as 0.0 so result files compare byte-for-byte"""
    monkeypatch.setitem(ConfigManager._config, "SPECLORA_RECORD_WALL_TIME", "0")


def orthogonal(rng, size):
    """Random orthogonal matrix from the QR of a Gaussian matrix"""
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    return q * np.sign(np.diag(r))
