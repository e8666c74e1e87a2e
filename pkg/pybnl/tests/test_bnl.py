import filecmp
import json
import os

import numpy as np
import pandas as pd
import pytest

from pybnl import network, gossip
from pybnl.apps import bnl
from pybnl.exceptions import InadmissibleStepSizeWarning, InvalidParamsException
from pybnl.filesystem_utilities import read_config, read_float_list, create_file_structure


@pytest.fixture
def three_node_path(scenario_manager):
    """A custom scenario: the three node example read from a positions CSV with radius 1.5"""
    positions = scenario_manager.write_text("three.csv", "0,0\n2,0\n1,1\n")
    path = scenario_manager.join("three.json")
    assert bnl.main(["gen-scenario", "custom", path, "--positions", positions, "--radius", "1.5",
                     "--out", scenario_manager.join("gen")]) == 0
    return path


def read_json(path):
    with open(path) as json_file:
        return json.load(json_file)


def test_create_file_structure(tmp_path):
    root = create_file_structure(str(tmp_path / "run"))
    assert os.path.isabs(root)
    for folder in ("plot_data", "reports", "log"):
        assert os.path.isdir(os.path.join(root, folder))


def test_config_defaults_and_override(scenario_manager):
    conf = read_config()
    assert read_float_list(conf.get("spectral", "epsilons")) == [0.1, 0.01, 0.001]
    assert conf.getint("montecarlo", "trials") == 500
    user = scenario_manager.write_text("user.ini", "[montecarlo]\ntrials=200\n")
    conf = read_config(user)
    assert conf.getint("montecarlo", "trials") == 200
    assert conf.getint("simulation", "slots") == 25000
    with pytest.raises(FileNotFoundError):
        read_config(scenario_manager.join("missing.ini"))


def test_missing_config_exit_code(scenario_manager):
    scen_path = scenario_manager.join("fig1a.json")
    assert bnl.main(["gen-scenario", "fig1a", scen_path, "--conf", scenario_manager.join("missing.ini"),
                     "--out", scenario_manager.join("out")]) == 1


def test_malformed_config_exit_code(three_node_path, scenario_manager):
    conf = scenario_manager.write_text("bad.ini", "slots=30\n")
    assert bnl.main(["spectral", three_node_path, "--conf", conf, "--out", scenario_manager.join("out")]) == 1
    with pytest.raises(InvalidParamsException):
        read_config(conf)


def test_bad_number_lists(three_node_path, scenario_manager):
    out = scenario_manager.join("out")
    assert bnl.main(["spectral", three_node_path, "--epsilons", "0.1,abc", "--out", out]) == 1
    assert bnl.main(["montecarlo", three_node_path, "--epsilons", "x", "--out", out]) == 1
    assert bnl.main(["gen-scenario", "fig1a", scenario_manager.join("a.json"), "--beacons", "a",
                     "--out", out]) == 1
    with pytest.raises(InvalidParamsException):
        read_float_list("0.1,abc")


def test_rigidity_isolated_node(scenario_manager, capsys):
    doc = {"dimension": 2, "positions": [[0, 0], [2, 0], [1, 1], [5, 5]], "edges": [[0, 2], [1, 2]],
           "radius": None, "beacons": [0, 1], "probability": "uniform", "init_box": None, "seed": 0,
           "init_mode": "box"}
    scen_path = scenario_manager.write_document("isolated.json", doc)
    out = scenario_manager.join("out")
    assert bnl.main(["rigidity", scen_path, "--out", out]) == 2
    assert "not rigid" in capsys.readouterr().out
    assert bnl.main(["spectral", scen_path, "--out", out]) == 1


def test_rigidity_fig1a(scenario_manager, capsys):
    scen_path = scenario_manager.join("fig1a.json")
    out = scenario_manager.join("out")
    assert bnl.main(["gen-scenario", "fig1a", scen_path, "--out", out]) == 0
    assert bnl.main(["rigidity", scen_path, "--out", out]) == 0
    assert "rank 5 / required 5: rigid" in capsys.readouterr().out
    report = read_json(os.path.join(out, "reports", "rigidity_report.json"))
    assert report == {"rank": 5, "required_rank": 5, "is_rigid": True, "null_space_dimension": 3}


def test_rigidity_fig1b(scenario_manager, capsys):
    scen_path = scenario_manager.join("fig1b.json")
    out = scenario_manager.join("out")
    assert bnl.main(["gen-scenario", "fig1b", scen_path, "--out", out]) == 0
    assert bnl.main(["rigidity", scen_path, "--out", out]) == 2
    assert "not rigid" in capsys.readouterr().out
    assert bnl.main(["spectral", scen_path, "--out", out]) == 2


def test_malformed_scenario(scenario_manager):
    scen_path = scenario_manager.write_text("broken.json", "{\"dimension\": 2")
    for command in ("rigidity", "spectral", "simulate", "montecarlo"):
        assert bnl.main([command, scen_path, "--out", scenario_manager.join("out")]) == 1


def test_gen_scaled_mesh(scenario_manager, mesh81_scenario):
    scen_path = scenario_manager.join("mesh81.json")
    assert bnl.main(["gen-scenario", "sinc-mesh-scaled", scen_path, "--half-width", "2", "--spacing", "0.5",
                     "--out", scenario_manager.join("out")]) == 0
    loaded = network.load_scenario(scen_path)
    assert loaded.n == 81
    assert loaded == mesh81_scenario


def test_gen_full_mesh(scenario_manager):
    scen = bnl.cmd_gen_scenario("sinc-mesh", scenario_manager.join("mesh.json"), seed=2)
    assert scen.n == 1089
    assert scen.d == 3
    assert scen.radius == pytest.approx(np.sqrt(2) / 2)


def test_gen_custom_needs_radius(scenario_manager):
    positions = scenario_manager.write_text("three.csv", "0,0\n2,0\n1,1\n")
    assert bnl.main(["gen-scenario", "custom", scenario_manager.join("three.json"), "--positions", positions,
                     "--out", scenario_manager.join("out")]) == 1


def test_gen_single_beacon(scenario_manager):
    assert bnl.main(["gen-scenario", "fig1a", scenario_manager.join("one.json"), "--beacons", "0",
                     "--out", scenario_manager.join("out")]) == 1


def test_gen_init_box(scenario_manager):
    scen = bnl.cmd_gen_scenario("fig1a", scenario_manager.join("box.json"), init_box=[0, 1, 0, 1])
    followers = scen.initial_estimates[list(scen.follower_ids)]
    assert np.all((followers >= 0) & (followers <= 1))


def test_spectral_custom(three_node_path, scenario_manager):
    out = scenario_manager.join("out")
    assert bnl.main(["spectral", three_node_path, "--out", out]) == 0
    report = read_json(os.path.join(out, "reports", "spectral_report.json"))
    assert report["mean_bound"] == pytest.approx(4)
    assert report["weight_bound"] == pytest.approx(2)
    assert report["pairwise_bound"] is None
    assert report["alpha_used"] == pytest.approx(1.8)
    assert report["admissible"]
    assert sorted(report["K"]) == ["0.001", "0.01", "0.1"]


def test_spectral_inadmissible_alpha(three_node_path, scenario_manager):
    out = scenario_manager.join("out")
    with pytest.warns(InadmissibleStepSizeWarning):
        assert bnl.main(["spectral", three_node_path, "--alpha", "3", "--epsilons", "0.1", "--out", out]) == 0
    report = read_json(os.path.join(out, "reports", "spectral_report.json"))
    assert report["admissible"] is False
    assert report["alpha_used"] == 3
    assert report["K"] == {"0.1": None}


def test_simulate_zero_slots(three_node_path, scenario_manager):
    out = scenario_manager.join("out")
    assert bnl.main(["simulate", three_node_path, "--slots", "0", "--out", out]) == 0
    frame = gossip.read_trace_csv(os.path.join(out, "trace.csv"))
    assert frame["slot"].tolist() == [0]
    summary = read_json(os.path.join(out, "reports", "summary.json"))
    assert summary["rate"] is None
    assert summary["ratio"] == pytest.approx(1)
    assert os.path.exists(os.path.join(out, "plot_data", "snapshot_k0.csv"))


def test_simulate_is_reproducible(three_node_path, scenario_manager):
    outs = [scenario_manager.join("first"), scenario_manager.join("second")]
    for out in outs:
        assert bnl.main(["simulate", three_node_path, "--slots", "300", "--seed", "5", "--out", out]) == 0
    for name in ("trace.csv", "trace_metadata.json", os.path.join("plot_data", "bearing_error.csv")):
        assert filecmp.cmp(os.path.join(outs[0], name), os.path.join(outs[1], name), shallow=False)
    metadata = read_json(os.path.join(outs[0], "trace_metadata.json"))
    assert metadata["seed"] == 5
    assert metadata["slots_run"] == 300
    assert metadata["scenario_hash"] == network.scenario_hash(network.load_scenario(three_node_path))


def test_simulate_inadmissible_alpha(three_node_path, scenario_manager):
    out = scenario_manager.join("out")
    assert bnl.main(["simulate", three_node_path, "--slots", "20", "--alpha", "3", "--out", out]) == 1
    assert not os.path.exists(os.path.join(out, "trace.csv"))
    assert bnl.main(["simulate", three_node_path, "--slots", "20", "--alpha", "3", "--force", "--out", out]) == 0
    assert read_json(os.path.join(out, "trace_metadata.json"))["alpha"] == 3


def test_simulate_plot_data(three_node_path, scenario_manager):
    out = scenario_manager.join("out")
    assert bnl.main(["simulate", three_node_path, "--slots", "80", "--out", out]) == 0
    plot_dir = os.path.join(out, "plot_data")
    snapshots = sorted(name for name in os.listdir(plot_dir) if name.startswith("snapshot_k"))
    assert snapshots == ["snapshot_k{}.csv".format(k) for k in sorted(["0", "10", "20", "40", "60", "80"])]
    positions = pd.read_csv(os.path.join(plot_dir, "true_positions.csv"))
    assert list(positions.columns) == ["node", "is_beacon", "x", "y"]
    assert positions["is_beacon"].tolist() == [1, 1, 0]
    edges = pd.read_csv(os.path.join(plot_dir, "graph_edges.csv"))
    assert edges.values.tolist() == [[0, 2], [1, 2]]
    final = pd.read_csv(os.path.join(plot_dir, "snapshot_k80.csv"))
    np.testing.assert_array_equal(final[["x", "y"]].to_numpy()[:2], [[0, 0], [2, 0]])
    errors = pd.read_csv(os.path.join(plot_dir, "bearing_error.csv"))
    assert errors["slot"].tolist() == list(range(0, 81, 10))


def test_simulate_config_file(three_node_path, scenario_manager):
    conf = scenario_manager.write_text("run.ini", "[simulation]\nslots=30\nrecord_stride=5\n")
    out = scenario_manager.join("out")
    assert bnl.main(["simulate", three_node_path, "--conf", conf, "--out", out]) == 0
    frame = gossip.read_trace_csv(os.path.join(out, "trace.csv"))
    assert frame["slot"].tolist() == [0, 5, 10, 15, 20, 25, 30]
    assert bnl.main(["simulate", three_node_path, "--conf", conf, "--slots", "12", "--out", out]) == 0
    frame = gossip.read_trace_csv(os.path.join(out, "trace.csv"))
    assert frame["slot"].tolist() == [0, 5, 10, 12]


def test_montecarlo_trial_floor(three_node_path, scenario_manager):
    assert bnl.main(["montecarlo", three_node_path, "--trials", "10", "--out", scenario_manager.join("out")]) == 1


def test_montecarlo_three_node(three_node_path, scenario_manager):
    out = scenario_manager.join("out")
    assert bnl.main(["montecarlo", three_node_path, "--trials", "100", "--epsilons", "0.1", "--out", out]) == 0
    summary = pd.read_csv(os.path.join(out, "montecarlo_summary.csv"))
    assert list(summary.columns) == ["epsilon", "empirical_k", "bound_k", "trials", "exceedance_at_bound"]
    assert len(summary) == 1
    row = summary.iloc[0]
    assert row["epsilon"] == 0.1
    assert row["trials"] == 100
    assert 1 <= row["empirical_k"] <= np.ceil(row["bound_k"])


def test_montecarlo_unreachable(three_node_path, scenario_manager):
    assert bnl.main(["montecarlo", three_node_path, "--trials", "100", "--alpha", "1e-9", "--max-slots", "40",
                     "--out", scenario_manager.join("out")]) == 2


@pytest.mark.slow
def test_full_mesh_run(scenario_manager):
    scen_path = scenario_manager.join("mesh.json")
    out = scenario_manager.join("out")
    assert bnl.main(["gen-scenario", "sinc-mesh", scen_path, "--out", out]) == 0
    assert bnl.main(["rigidity", scen_path, "--out", out]) == 0
    assert bnl.main(["spectral", scen_path, "--epsilons", "0.1", "--out", out]) == 0
    report = read_json(os.path.join(out, "reports", "spectral_report.json"))
    assert report["admissible"]
    assert report["alpha_used"] == pytest.approx(0.9)
    assert bnl.main(["simulate", scen_path, "--slots", "25000", "--out", out]) == 0
    for k in (0, 3125, 6250, 12500, 18750, 25000):
        assert os.path.exists(os.path.join(out, "plot_data", "snapshot_k{}.csv".format(k)))
    errors = pd.read_csv(os.path.join(out, "plot_data", "bearing_error.csv"))
    assert len(errors) == 2501
    # each node wakes about 23 times in 25000 slots; the drop is close to 2e-2
    assert errors["bearing_error"].iloc[-1] < 0.05 * errors["bearing_error"].iloc[0]
