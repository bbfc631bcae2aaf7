import json
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from paintbec.config import RunConfig, load_config
from paintbec.evaporation import TrapSetup, reference_beams

ACCEPTANCE_LINES = []


def data_path(name):
    return Path(str(resources.files("paintbec") / "data" / name))


@pytest.fixture(scope="session")
def ref_cfg() -> RunConfig:
    return load_config(data_path("reference_schedule.json"))


@pytest.fixture(scope="session")
def fast_cfg() -> RunConfig:
    return load_config(data_path("fast_sequence.json"))


@pytest.fixture(scope="session")
def regimes_cfg() -> RunConfig:
    return load_config(data_path("painting_regimes.json"))


@pytest.fixture(scope="session")
def setup():
    return TrapSetup(reference_beams())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2))
