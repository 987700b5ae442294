import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from cybergas.gas_network import GasNode, Pipe, RawGasNetwork, Scaling, nondimensionalize  # noqa: E402
from cybergas.io import PSI  # noqa: E402

DESK = os.path.join(os.path.dirname(__file__), "..", "src", "cybergas", "data", "desk")
DESK_MANIFEST = os.path.abspath(os.path.join(DESK, "manifest.yaml"))


def rho_psi(psi, c=377.0):
    return psi * PSI / c ** 2


def line_network(demand_kg_s=60.0, alpha_max=2.0, slack_psi=700.0, length=60e3, diameter=0.6):
    """Slack -> compressor pipe -> middle node -> pipe -> far node."""
    sc = Scaling(rho0=40.0, c=377.0, length=1e4, area=1.0)
    lo, hi = rho_psi(500), rho_psi(1000)
    nodes = (GasNode("s", lo, hi, slack=True, slack_density=rho_psi(slack_psi)),
             GasNode("m", lo, hi, d_min=0.0, d_max=500.0),
             GasNode("f", lo, hi, d_min=0.0, d_max=500.0, withdrawal=demand_kg_s))
    pipes = (Pipe("C1", "s", "m", length, diameter, 0.01, compressor=alpha_max > 1, alpha_max=alpha_max),
             Pipe("P2", "m", "f", length, diameter, 0.01))
    return nondimensionalize(RawGasNetwork(nodes, pipes, sc))


@pytest.fixture(scope="session")
def desk_config():
    from cybergas.io import load_manifest
    return load_manifest(DESK_MANIFEST)


@pytest.fixture(scope="session")
def desk_baseline(desk_config):
    from cybergas.scenario import run_baseline
    return run_baseline(desk_config)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
