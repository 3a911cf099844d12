import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from flexgrid.fixtures import network_path  # noqa: E402
from flexgrid.grid_model import load_network, to_per_unit  # noqa: E402


@pytest.fixture(scope="session")
def two_bus():
    return to_per_unit(load_network(network_path("two_bus")))


@pytest.fixture(scope="session")
def five_bus():
    return to_per_unit(load_network(network_path("five_bus")))


@pytest.fixture(scope="session")
def overvoltage():
    return to_per_unit(load_network(network_path("two_bus_overvoltage")))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
