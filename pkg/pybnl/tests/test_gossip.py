import filecmp

import numpy as np
import pytest

from pybnl import gossip, network, spectral, geometry, metrics
from pybnl.gossip import EventCase, SlotEvent
from pybnl.exceptions import IsolatedNodeException, InvalidParamsException, DimensionMismatchException


@pytest.fixture
def kite_scenario():
    """Beacons at (5, 5) and (6, 5); followers at (0, 1) and (0, 0) estimated at (1, 2) and (0, 0)"""
    fw = geometry.Framework([(5, 5), (6, 5), (0, 1), (0, 0)], [(0, 1), (0, 2), (1, 3), (2, 3)])
    return network.make_scenario(fw, [0, 1], init_mode="explicit",
                                 initial_estimates=[(5, 5), (6, 5), (1, 2), (0, 0)])


def default_alpha(scen):
    L = spectral.scenario_laplacian(scen)
    return spectral.default_step_size(spectral.step_size_bounds(L, scen.framework))


def test_classify_event(kite_scenario):
    assert gossip.classify_event(kite_scenario, 0, 1).case is EventCase.BEACON_BEACON
    assert gossip.classify_event(kite_scenario, 2, 0).case is EventCase.BEACON_FOLLOWER
    assert gossip.classify_event(kite_scenario, 1, 3).case is EventCase.BEACON_FOLLOWER
    assert gossip.classify_event(kite_scenario, 3, 2) == SlotEvent(3, 2, EventCase.FOLLOWER_FOLLOWER)


def test_follower_follower_update(kite_scenario):
    state = gossip.GossipState(kite_scenario, seed=0)
    after = gossip.apply_event(state, gossip.classify_event(kite_scenario, 2, 3), 0.5)
    np.testing.assert_allclose(after.estimates[2:], [[0.5, 2], [0.5, 0]])
    np.testing.assert_array_equal(after.estimates[:2], [[5, 5], [6, 5]])
    assert after.slot == 1
    assert after.rng is state.rng
    np.testing.assert_array_equal(state.estimates[2:], [[1, 2], [0, 0]])


def test_beacon_follower_update(kite_scenario):
    state = gossip.GossipState(kite_scenario, seed=0)
    alpha = 0.3
    after = gossip.apply_event(state, gossip.classify_event(kite_scenario, 0, 2), alpha)
    A = kite_scenario.framework.projection_for(0, 2)
    beacon = kite_scenario.true_positions[0]
    np.testing.assert_allclose(A @ (after.estimates[2] - beacon), (1 - alpha) * A @ (state.estimates[2] - beacon),
                               atol=1e-12)
    np.testing.assert_array_equal(after.estimates[[0, 1, 3]], state.estimates[[0, 1, 3]])
    # the same event seen from the follower side
    mirrored = gossip.apply_event(state, gossip.classify_event(kite_scenario, 2, 0), alpha)
    np.testing.assert_allclose(mirrored.estimates, after.estimates, atol=1e-15)


def test_beacon_beacon_is_noop(kite_scenario):
    state = gossip.GossipState(kite_scenario, seed=0)
    after = gossip.apply_event(state, gossip.classify_event(kite_scenario, 1, 0), 0.5)
    np.testing.assert_array_equal(after.estimates, state.estimates)
    assert after.slot == 1


def test_truth_is_a_fixed_point(mesh81_scenario):
    fw = mesh81_scenario.framework
    scen = network.make_scenario(fw, [0, 1], init_mode="truth")
    state = gossip.GossipState(scen, seed=3)
    for _ in range(200):
        state = gossip.apply_event(state, gossip.sample_event(state), 0.9)
    np.testing.assert_allclose(state.estimates, fw.positions, atol=1e-12)


def test_update_only_touches_participants(rigid_quad_scenario):
    state = gossip.GossipState(rigid_quad_scenario, seed=5)
    for _ in range(50):
        ev = gossip.sample_event(state)
        after = gossip.apply_event(state, ev, 0.5)
        untouched = [i for i in range(4) if i not in (ev.waker, ev.partner)]
        np.testing.assert_array_equal(after.estimates[untouched], state.estimates[untouched])
        state = after


def test_state_dimension_check(kite_scenario):
    with pytest.raises(DimensionMismatchException):
        gossip.GossipState(kite_scenario, estimates=np.zeros(6))


def test_sampling_frequencies(three_node_scenario):
    state = gossip.GossipState(three_node_scenario, seed=11)
    draws = 30000
    counts = {}
    for _ in range(draws):
        ev = gossip.sample_event(state)
        counts[(ev.waker, ev.partner)] = counts.get((ev.waker, ev.partner), 0) + 1
    assert set(counts) == {(0, 2), (1, 2), (2, 0), (2, 1)}
    expected = {(0, 2): 1 / 3, (1, 2): 1 / 3, (2, 0): 1 / 6, (2, 1): 1 / 6}
    for pair, p in expected.items():
        sigma = np.sqrt(p * (1 - p) / draws)
        assert abs(counts[pair] / draws - p) <= 4 * sigma


def test_sampling_frequencies_quad(rigid_quad_scenario):
    scen = rigid_quad_scenario
    state = gossip.GossipState(scen, seed=0)
    draws = 100000
    counts = np.zeros((4, 4))
    for _ in range(draws):
        ev = gossip.sample_event(state)
        counts[ev.waker, ev.partner] += 1
    expected = scen.probability.selection / scen.n
    np.testing.assert_array_equal(counts > 0, expected > 0)
    sigma = np.sqrt(expected * (1 - expected) / draws)
    assert np.all(np.abs(counts / draws - expected) <= 3 * sigma)


def test_sampling_is_seeded(rigid_quad_scenario):
    def events(seed):
        state = gossip.GossipState(rigid_quad_scenario, seed=seed)
        return [gossip.sample_event(state) for _ in range(100)]

    assert events(7) == events(7)
    assert events(7) != events(8)


def test_isolated_waker():
    fw = geometry.Framework([(0, 0), (2, 0), (1, 1), (5, 5)], [(0, 2), (1, 2)])
    prob = network.ProbabilityModel([[0, 0, 1, 0], [0, 0, 1, 0], [0.5, 0.5, 0, 0], [0, 0, 0, 0]])
    scen = network.make_scenario(fw, [0, 1], prob=prob)
    with pytest.raises(IsolatedNodeException):
        gossip.run(scen, 0.5, 200, seed=0)


def test_update_matrix_matches_update(rigid_quad_scenario):
    scen = rigid_quad_scenario
    state = gossip.GossipState(scen, seed=2)
    for alpha in (0.2, 0.7):
        for _ in range(500):
            ev = gossip.sample_event(state)
            before = state.follower_deviation()
            after = gossip.apply_event(state, ev, alpha)
            W = gossip.build_update_matrix(scen, ev, alpha)
            np.testing.assert_allclose(after.follower_deviation(), W @ before, atol=1e-10)
            state = after


def test_update_matrix_shape(rigid_quad_scenario):
    scen = rigid_quad_scenario
    alpha = default_alpha(scen)
    for i, j in zip(*np.nonzero(scen.probability.selection)):
        W = gossip.build_update_matrix(scen, gossip.classify_event(scen, i, j), alpha)
        assert W.shape == (4, 4)
        np.testing.assert_allclose(W, W.T, atol=1e-15)
        eigenvalues = np.linalg.eigvalsh(W)
        assert eigenvalues[0] >= -1 - 1e-12 and eigenvalues[-1] <= 1 + 1e-12
    W = gossip.build_update_matrix(scen, gossip.classify_event(scen, 0, 1), alpha)
    np.testing.assert_array_equal(W, np.eye(4))


def test_run_zero_slots(mesh81_scenario):
    trace = gossip.run(mesh81_scenario, 0.5, 0, seed=0)
    assert len(trace) == 1
    assert trace.records[0].event is None
    assert trace.records[0].follower_error == pytest.approx(
        metrics.follower_error(mesh81_scenario, mesh81_scenario.initial_estimates))
    assert trace.metadata["slots_run"] == 0


def test_run_record_schedule(rigid_quad_scenario):
    trace = gossip.run(rigid_quad_scenario, 0.5, 25, seed=0)
    assert trace.slots.tolist() == [0, 10, 20, 25]
    assert trace.records[-1].event is not None
    assert trace.metadata == {"seed": 0, "alpha": 0.5, "scenario_hash": network.scenario_hash(rigid_quad_scenario),
                              "slots_run": 25, "record_stride": 10}


def test_run_bad_arguments(rigid_quad_scenario):
    with pytest.raises(InvalidParamsException):
        gossip.run(rigid_quad_scenario, 0, 10, seed=0)
    with pytest.raises(InvalidParamsException):
        gossip.run(rigid_quad_scenario, 0.5, -1, seed=0)
    with pytest.raises(InvalidParamsException):
        gossip.run(rigid_quad_scenario, 0.5, 10, seed=0, record_stride=0)


def test_run_is_reproducible(rigid_quad_scenario, tmp_path):
    first = gossip.run(rigid_quad_scenario, 0.5, 500, seed=4)
    second = gossip.run(rigid_quad_scenario, 0.5, 500, seed=4)
    first.to_csv(tmp_path / "first.csv")
    second.to_csv(tmp_path / "second.csv")
    assert filecmp.cmp(tmp_path / "first.csv", tmp_path / "second.csv", shallow=False)
    other = gossip.run(rigid_quad_scenario, 0.5, 500, seed=5)
    assert other.follower_errors.tolist() != first.follower_errors.tolist()


def test_run_keeps_beacons_fixed(mesh81_scenario):
    trace = gossip.run(mesh81_scenario, default_alpha(mesh81_scenario), 2000, seed=1, snapshot_slots=(0, 1000, 2000))
    assert sorted(trace.snapshots) == [0, 1000, 2000]
    for estimates in trace.snapshots.values():
        np.testing.assert_array_equal(estimates[[0, 1]], mesh81_scenario.true_positions[[0, 1]])
    np.testing.assert_array_equal(trace.snapshots[0], mesh81_scenario.initial_estimates)


def test_run_from_truth_stays_at_truth(rigid_quad_scenario):
    scen = network.make_scenario(rigid_quad_scenario.framework, [0, 1], init_mode="truth")
    trace = gossip.run(scen, 0.5, 300, seed=0)
    assert np.all(trace.bearing_errors <= 1e-20)
    assert np.all(trace.follower_errors <= 1e-12)


def test_trace_csv(rigid_quad_scenario, tmp_path):
    trace = gossip.run(rigid_quad_scenario, 0.5, 30, seed=0)
    frame = gossip.read_trace_csv(trace.to_csv(tmp_path / "trace.csv"))
    assert list(frame.columns) == gossip.Trace.FIELDS
    assert frame["slot"].tolist() == [0, 10, 20, 30]
    assert frame["waker"].isna().tolist() == [True, False, False, False]
    assert set(frame["case"].dropna()) <= {case.value for case in EventCase}
    np.testing.assert_array_equal(frame["bearing_error"].to_numpy(), trace.bearing_errors)
    np.testing.assert_array_equal(trace.to_dataframe()["follower_error"].to_numpy(), trace.follower_errors)


def test_follower_deviations(rigid_quad_scenario):
    deviations = gossip.follower_deviations(rigid_quad_scenario, 0.5, [0, 5, 40], seed=9)
    assert deviations.shape == (3, 4)
    state = gossip.GossipState(rigid_quad_scenario)
    np.testing.assert_array_equal(deviations[0], state.follower_deviation())
    path = gossip.follower_error_path(rigid_quad_scenario, 0.5, 40, seed=9)
    assert path.shape == (41,)
    np.testing.assert_allclose(np.linalg.norm(deviations, axis=1), path[[0, 5, 40]])


def test_mesh_errors_decay(mesh81_scenario):
    trace = gossip.run(mesh81_scenario, default_alpha(mesh81_scenario), 20000, seed=0, record_stride=100)
    assert trace.bearing_errors[-1] < trace.bearing_errors[0]
    assert trace.follower_errors[-1] < trace.follower_errors[0]
    assert metrics.fit_exponential_rate(trace) < 0


@pytest.mark.slow
def test_mesh_long_run(mesh81_scenario):
    trace = gossip.run(mesh81_scenario, default_alpha(mesh81_scenario), 100000, seed=0, record_stride=1000)
    # about 5.4 orders of magnitude at this length
    assert trace.bearing_errors[-1] <= 1e-4 * trace.bearing_errors[0]
    assert metrics.fit_exponential_rate(trace) < 0
    # the follower error is held back by lambda_min(L_ff) of about 1e-8
    assert trace.follower_errors[-1] < trace.follower_errors[0]
