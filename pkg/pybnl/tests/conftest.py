import json
import os
import tempfile

import numpy as np
import pytest

from pybnl import network


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true",
                     default=False, help="run slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full scale runs, skipped unless --runslow is given")


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--runslow"):
        # --runslow not given in cli: skip slow tests
        skip_slow = pytest.mark.skip(reason="need --runslow option to run")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip_slow)


THREE_NODE_START = [[0.0, 0.0], [2.0, 0.0], [4.0, -3.0]]
MESH_RADIUS = np.sqrt(2) / 2


def make_three_node_scenario(initial_estimates=THREE_NODE_START):
    return network.make_scenario(network.three_node_example(), [0, 1], init_mode="explicit",
                                 initial_estimates=initial_estimates)


@pytest.fixture
def three_node_scenario():
    """Beacons at (0, 0) and (2, 0), one follower at (1, 1) starting from (4, -3)"""
    return make_three_node_scenario()


@pytest.fixture
def rigid_quad_scenario():
    return network.make_scenario(network.rigid_quad_example(), [0, 1], rng_seed=1)


@pytest.fixture
def flexible_quad_scenario():
    return network.make_scenario(network.flexible_quad_example(), [0, 1], rng_seed=1)


@pytest.fixture(scope="session")
def mesh81_scenario():
    """The 9 x 9 sinc mesh (half width 2, spacing 0.5) with beacons 0 and 1"""
    fw = network.proximity_graph(network.gen_sinc_mesh_scaled(2, 0.5), MESH_RADIUS)
    return network.make_scenario(fw, [0, 1], rng_seed=0, radius=float(MESH_RADIUS))


@pytest.fixture(scope="session")
def mesh1089_scenario():
    """The full 33 x 33 sinc mesh with beacons 0 and 1"""
    fw = network.proximity_graph(network.gen_sinc_mesh(), MESH_RADIUS)
    return network.make_scenario(fw, [0, 1], rng_seed=0, radius=float(MESH_RADIUS))


class TestScenarioManager:
    """
    Provides a temporary folder holding scenario documents and other inputs for the bnl command tests.

    Usage: with TestScenarioManager() as tsm:
        path = tsm.write_scenario("fig1a.json", scenario)

    Attributes
    ----------
    path : str
        The path to the temporary folder
    """

    __test__ = False

    def __init__(self):
        self.temp_dir = None
        self.path = None

    def __enter__(self):
        """Creates a randomly named temp folder"""
        self.temp_dir = tempfile.TemporaryDirectory()
        self.path = self.temp_dir.name
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.temp_dir.cleanup()

    def join(self, *parts):
        return os.path.join(self.path, *parts)

    def write_scenario(self, name, scen):
        return network.save_scenario(scen, self.join(name))

    def write_document(self, name, doc):
        with open(self.join(name), "w") as doc_file:
            json.dump(doc, doc_file)
        return self.join(name)

    def write_text(self, name, text):
        with open(self.join(name), "w") as text_file:
            text_file.write(text)
        return self.join(name)


@pytest.fixture
def scenario_manager():
    with TestScenarioManager() as tsm:
        yield tsm
