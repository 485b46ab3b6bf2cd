"""
File: conftest.py

Overview:
Shared pytest fixtures for the decoy-state simulator: link parameters, protocol configurations at
the intensity sets used throughout the test suite, and observations generated by the channel model.
Expensive observations are computed once per session; every test starts from fresh settings.
"""

import pytest

from app.dependencies import get_settings
from app.schemas.optics_schemas import DetectionModel
from app.schemas.protocol_schemas import REFERENCE_SYSTEM, SystemParams, symmetric_config
from app.services.optics_service import ALL_TAGS, build_fock_yield_table, observed_statistics

THREE_DECOYS = (0.0, 0.01)
FOUR_DECOYS = (0.0, 0.01, 0.02)
FIVE_DECOYS = (0.0, 0.01, 0.02, 0.03)
SIGNAL = 0.3


@pytest.fixture(autouse=True)
def fresh_settings():
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def reference_system():
    return REFERENCE_SYSTEM


@pytest.fixture
def ideal_system():
    """No dark counts, lossless fiber, perfect detectors."""
    return SystemParams(dark_count=0.0, det_efficiency=1.0, fiber_loss=0.0, recon_efficiency=1.0)


@pytest.fixture
def ideal_detection():
    return DetectionModel(dark_count=0.0, transmittance_alice=1.0, transmittance_bob=1.0)


@pytest.fixture
def five_intensity_config():
    return symmetric_config(FIVE_DECOYS, SIGNAL).at_distance(10.0)


@pytest.fixture(scope="session")
def observed_10km():
    config = symmetric_config(FIVE_DECOYS, SIGNAL).at_distance(10.0)
    return observed_statistics(config, ALL_TAGS)


@pytest.fixture(scope="session")
def oracle_10km():
    config = symmetric_config(FIVE_DECOYS, SIGNAL).at_distance(10.0)
    return build_fock_yield_table(config, 1)


@pytest.fixture
def run_file_text():
    return "\n".join(
        [
            "# five intensities, asymptotic",
            "protocol=chsh-mdi",
            "decoys=0,0.01,0.02,0.03",
            "dark_count=6e-6",
            "det_efficiency=0.145",
            "fiber_loss_db_km=0.2",
            "f=1.16",
            "distances=0:20:10",
            "out=results.csv",
        ]
    ) + "\n"
