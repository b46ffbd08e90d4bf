import pytest

from greenfronthaul.engine import Simulator
from greenfronthaul.dataplane import DataPlane
from greenfronthaul.topology import build_reference_topology


@pytest.fixture
def topo():
    return build_reference_topology()


@pytest.fixture
def sim():
    return Simulator(seed=7)


@pytest.fixture
def dp(topo, sim):
    return DataPlane(topo, sim, tap_node="L2SW")


def scenario_doc(**over):
    """Minimal valid scenario document; keyword arguments replace top-level keys."""
    doc = {
        "schema": "greenfronthaul/scenario-1",
        "name": "t",
        "seed": 3,
        "t_end": 1.0,
        "topology": "reference",
        "flows": [],
    }
    doc.update(over)
    return doc


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
