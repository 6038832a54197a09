import sys
from dataclasses import replace
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from specplan.scenario import ScenarioConfig, validate


@pytest.fixture(scope="session")
def cfg() -> ScenarioConfig:
    return validate(ScenarioConfig())


@pytest.fixture(scope="session")
def fast_cfg() -> ScenarioConfig:
    """Default scenario with few reward samples (safety is sample-free)."""
    return validate(replace(ScenarioConfig(), n_samples=10))


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels(fast_cfg):
    """Compile the numba kernels once up front."""
    from specplan.harness import run_episode

    run_episode(fast_cfg, "spap", 12345)
    run_episode(fast_cfg, "mpc", 12345)
