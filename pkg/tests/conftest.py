from pathlib import Path

import pytest

from scaleprompt.backbone import BackboneConfig, init_backbone
from scaleprompt.sape import SapeConfig, init_sape
from scaleprompt.scene import gen_scene

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def golden():
    return GOLDEN


@pytest.fixture(scope="session")
def bcfg():
    return BackboneConfig()


@pytest.fixture(scope="session")
def scfg():
    return SapeConfig()


@pytest.fixture(scope="session")
def backbone(bcfg):
    return init_backbone(bcfg)


@pytest.fixture(scope="session")
def sape_params(bcfg, scfg):
    return init_sape(bcfg, scfg)


@pytest.fixture(scope="session")
def scene():
    return gen_scene(1, 32, 32, 3)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
