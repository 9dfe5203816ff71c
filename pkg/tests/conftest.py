import math
from pathlib import Path

import pytest

from vvcopf import load_feeder
from vvcopf.network import VoltageState

FEEDER_DIR = Path(__file__).resolve().parents[1] / "src" / "vvcopf" / "feeders"

FEEDER_NAMES = ("twobus", "fourbus", "feeder30")


def feeder_path(name: str) -> Path:
    return FEEDER_DIR / f"{name}.json"


@pytest.fixture(scope="session")
def twobus():
    return load_feeder(feeder_path("twobus"))


@pytest.fixture(scope="session")
def fourbus():
    return load_feeder(feeder_path("fourbus"))


@pytest.fixture(scope="session")
def feeder30():
    return load_feeder(feeder_path("feeder30"))


def random_state(feeder, rng, mag_lo=0.9, mag_hi=1.1, ang_spread=0.1):
    """Voltage state with uniform magnitudes and nominal-shifted angles."""
    from vvcopf.network import PHASE_SHIFT

    mag = {}
    ang = {}
    for node in feeder.nodes:
        mag[node] = rng.uniform(mag_lo, mag_hi)
        ang[node] = PHASE_SHIFT[node.phase] + rng.uniform(-ang_spread, ang_spread)
    return VoltageState(mag, ang)
