from pathlib import Path

import numpy as np
import pytest

from src.config import REALWORLD_QUAD, SIM_BATTERY, SIM_QUAD, BatteryConfig, PhysicalParams
from src.scenario import ScenarioConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def sim_params():
    return PhysicalParams(**SIM_QUAD)


@pytest.fixture
def realworld_params():
    return PhysicalParams(**REALWORLD_QUAD)


@pytest.fixture
def sim_battery():
    return BatteryConfig(**SIM_BATTERY)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def configs_dir():
    return CONFIGS


@pytest.fixture
def short_scenario():
    """Factory for short hovering flights; keyword arguments override scenario fields."""
    def make(**changes):
        fields = {"name": "short", "mission": "hovering", "hover_time": 2.0, "time_limit": 4.0, "seed": 7}
        fields.update(changes)
        return ScenarioConfig(**fields)
    return make
