"""
pybnl.gossip
============
The randomised gossip localisation protocol, run one time slot at a time.

In every slot one node wakes up (each with probability 1/n), picks a neighbour j from its selection row and the
pair updates its position estimates:

- beacon-beacon: nothing changes
- follower-follower: p_i <- p_i - alpha A_ij (p_i - p_j) and p_j <- p_j - alpha A_ij (p_j - p_i)
- beacon-follower: only the follower moves, p_f <- p_f - alpha A_fb (p_f - p_b)

Bearings are fixed at scenario build time from the true positions and never recomputed from estimates.

The same update acting on the stacked follower error is the matrix W of :py:func:`build_update_matrix`, an identity
with d-wide blocks at the compacted follower positions of the two participants.

Key functions
-------------

:py:func:`sample_event` Draws the waker and partner of the next slot

:py:func:`apply_event` Applies one slot's update

:py:func:`build_update_matrix` The update matrix W_ij of an event acting on the follower error

:py:func:`run` Runs the protocol for a number of slots and returns a :py:class:`Trace`

Function reference
------------------
"""

import csv
import json
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd
from tqdm import tqdm

from pybnl import metrics
from pybnl.network import scenario_hash
from pybnl.exceptions import IsolatedNodeException, InvalidParamsException, DimensionMismatchException

log = logging.getLogger(__name__)


class EventCase(Enum):
    BEACON_BEACON = "beacon-beacon"
    FOLLOWER_FOLLOWER = "follower-follower"
    BEACON_FOLLOWER = "beacon-follower"


@dataclass(frozen=True)
class SlotEvent:
    waker: int
    partner: int
    case: EventCase


def classify_event(scen, waker, partner):
    """Returns the SlotEvent for an interaction between `waker` and `partner` in scenario `scen`"""
    waker_is_beacon = scen.is_beacon[waker]
    partner_is_beacon = scen.is_beacon[partner]
    if waker_is_beacon and partner_is_beacon:
        case = EventCase.BEACON_BEACON
    elif waker_is_beacon or partner_is_beacon:
        case = EventCase.BEACON_FOLLOWER
    else:
        case = EventCase.FOLLOWER_FOLLOWER
    return SlotEvent(int(waker), int(partner), case)


class GossipState:
    """
    The estimates p_hat(k) of every node, the slot counter k and the random generator driving the wake-ups.

    Parameters
    ----------
    scenario : pybnl.network.Scenario
    estimates : array_like, optional
        (n, d) estimates. Defaults to the scenario's initial estimates.
    slot : int, optional
    rng : numpy.random.Generator, optional
        Shared, not copied. Built from `seed` if not given.
    seed : int, optional
    """

    def __init__(self, scenario, estimates=None, slot=0, rng=None, seed=None):
        self.scenario = scenario
        if estimates is None:
            estimates = scenario.initial_estimates
        estimates = np.array(estimates, dtype=float)
        if estimates.size != scenario.n * scenario.d:
            raise DimensionMismatchException("State needs {} estimate entries, got {}"
                                             .format(scenario.n * scenario.d, estimates.size))
        self.estimates = estimates.reshape(scenario.n, scenario.d)
        self.slot = slot
        self.rng = rng if rng is not None else np.random.default_rng(seed)

    def follower_deviation(self):
        """The stacked follower error p_hat_f(k) - p_f"""
        followers = list(self.scenario.follower_ids)
        return (self.estimates[followers] - self.scenario.true_positions[followers]).reshape(-1)


def sample_event(state):
    """
    Draws the next slot's event: a waker uniform over all n nodes, then a partner from the waker's selection row.
    Advances `state.rng`.

    Raises
    ------
    IsolatedNodeException
        If the waker has no neighbours
    """
    scen = state.scenario
    waker = int(state.rng.integers(scen.n))
    neighbours, cumulative = scen.selection_table[waker]
    if len(neighbours) == 0:
        raise IsolatedNodeException("Node {} woke up but has no neighbours".format(waker))
    draw = state.rng.random() * cumulative[-1]
    index = min(int(np.searchsorted(cumulative, draw, side="right")), len(neighbours) - 1)
    return classify_event(scen, waker, neighbours[index])


def _apply_in_place(scen, estimates, ev, alpha):
    if ev.case is EventCase.BEACON_BEACON:
        return
    i, j = ev.waker, ev.partner
    A = scen.framework.projection_for(i, j)
    if ev.case is EventCase.FOLLOWER_FOLLOWER:
        step = alpha * (A @ (estimates[i] - estimates[j]))
        estimates[i] -= step
        estimates[j] += step
    else:
        follower, beacon = (j, i) if scen.is_beacon[i] else (i, j)
        estimates[follower] -= alpha * (A @ (estimates[follower] - scen.true_positions[beacon]))


def apply_event(state, ev, alpha):
    """
    Applies the update of event `ev` with step size `alpha` and returns the next state. The input state is left
    untouched; the returned state shares its random generator.

    Parameters
    ----------
    state : GossipState
    ev : SlotEvent
    alpha : float
        Step size, > 0

    Returns
    -------
    next_state : GossipState
    """
    estimates = state.estimates.copy()
    _apply_in_place(state.scenario, estimates, ev, alpha)
    return GossipState(state.scenario, estimates=estimates, slot=state.slot + 1, rng=state.rng)


def local_update_block(scen, ev, alpha):
    """
    The non-identity part of W for an event: the compacted follower slots it touches and the square block acting on
    them.

    Returns
    -------
    slots : list of int
        Follower slots, empty for beacon-beacon events
    block : np.ndarray
        (d * len(slots)) square block
    """
    d = scen.d
    if ev.case is EventCase.BEACON_BEACON:
        return [], np.zeros((0, 0))
    A = scen.framework.projection_for(ev.waker, ev.partner)
    if ev.case is EventCase.FOLLOWER_FOLLOWER:
        slots = [scen.follower_slot[ev.waker], scen.follower_slot[ev.partner]]
        block = np.eye(2 * d) - alpha * np.kron(np.array([[1.0, -1.0], [-1.0, 1.0]]), A)
        return slots, block
    follower = ev.partner if scen.is_beacon[ev.waker] else ev.waker
    return [scen.follower_slot[follower]], np.eye(d) - alpha * A


def block_dof(nodes, d):
    """Row/column indices of the d-wide blocks at the given block positions"""
    if not nodes:
        return np.zeros(0, dtype=int)
    return np.concatenate([np.arange(d * s, d * (s + 1)) for s in nodes])


def build_update_matrix(scen, ev, alpha):
    """
    Builds the dn_f x dn_f update matrix W of event `ev`, so that the follower error after the slot is W times
    the follower error before it.

    Beacon-beacon events give the identity. A follower-follower event puts I - alpha A_ij on the diagonal blocks of
    both followers and alpha A_ij on the two blocks coupling them; a beacon-follower event puts I - alpha A_ij on the
    follower's diagonal block only. W is always symmetric.
    """
    W = np.eye(scen.d * scen.n_f)
    slots, block = local_update_block(scen, ev, alpha)
    if slots:
        dof = block_dof(slots, scen.d)
        W[np.ix_(dof, dof)] = block
    return W


@dataclass(frozen=True)
class TraceRecord:
    slot: int
    event: SlotEvent
    bearing_error: float
    follower_error: float

    def row(self):
        if self.event is None:
            waker = partner = case = ""
        else:
            waker, partner, case = self.event.waker, self.event.partner, self.event.case.value
        return [self.slot, waker, partner, case, repr(float(self.bearing_error)), repr(float(self.follower_error))]


class Trace:
    """
    Records of one run plus its metadata (seed, alpha, scenario hash, slots run, record stride) and any estimate
    snapshots that were requested.
    """

    FIELDS = ["slot", "waker", "partner", "case", "bearing_error", "follower_error"]

    def __init__(self, records=None, metadata=None, snapshots=None):
        self.records = records if records is not None else []
        self.metadata = metadata if metadata is not None else {}
        self.snapshots = snapshots if snapshots is not None else {}

    def __len__(self):
        return len(self.records)

    @property
    def slots(self):
        return np.array([record.slot for record in self.records], dtype=int)

    @property
    def bearing_errors(self):
        return np.array([record.bearing_error for record in self.records])

    @property
    def follower_errors(self):
        return np.array([record.follower_error for record in self.records])

    def to_csv(self, out_path):
        with open(out_path, "w", newline="") as trace_file:
            writer = csv.writer(trace_file)
            writer.writerow(self.FIELDS)
            for record in self.records:
                writer.writerow(record.row())
        return out_path

    def write_metadata(self, out_path):
        with open(out_path, "w") as metadata_file:
            json.dump(self.metadata, metadata_file, indent=1, sort_keys=True)
        return out_path

    def to_dataframe(self):
        return pd.DataFrame([record.row() for record in self.records], columns=self.FIELDS).astype(
            {"slot": int, "bearing_error": float, "follower_error": float})


def read_trace_csv(path):
    """Reads a trace CSV into a DataFrame; the event columns of slot 0 come back as missing values"""
    return pd.read_csv(path, dtype={"slot": "int64", "waker": "Int64", "partner": "Int64", "case": "string",
                                    "bearing_error": "float64", "follower_error": "float64"})


def _record(scen, estimates, slot, ev):
    return TraceRecord(
        slot=slot,
        event=ev,
        bearing_error=metrics.total_bearing_error(scen.framework, estimates),
        follower_error=metrics.follower_error(scen, estimates)
    )


def _check_run_args(alpha, slots):
    if not alpha > 0:
        raise InvalidParamsException("Step size must be positive, got {}".format(alpha))
    if slots < 0:
        raise InvalidParamsException("Slot count must be non-negative, got {}".format(slots))


def run(scen, alpha, slots, seed, record_stride=10, snapshot_slots=(), progress=False):
    """
    Runs the protocol on `scen` for `slots` slots from the scenario's initial estimates.

    Parameters
    ----------
    scen : pybnl.network.Scenario
    alpha : float
        Step size
    slots : int
        Number of slots to run, >= 0
    seed : int
        Seed of the wake-up generator. Equal seeds give identical traces.
    record_stride : int, optional
        A record is kept at slot 0, at every multiple of this and at the final slot. Defaults to 10.
    snapshot_slots : iterable of int, optional
        Slots at which a copy of all estimates is kept in `trace.snapshots`
    progress : bool, optional
        Shows a tqdm progress bar

    Returns
    -------
    trace : Trace
    """
    _check_run_args(alpha, slots)
    if record_stride < 1:
        raise InvalidParamsException("record_stride must be at least 1, got {}".format(record_stride))
    snapshot_slots = set(int(k) for k in snapshot_slots)
    state = GossipState(scen, seed=seed)
    estimates = state.estimates
    records = [_record(scen, estimates, 0, None)]
    snapshots = {0: estimates.copy()} if 0 in snapshot_slots else {}
    log.info("Running {} slots on {} with alpha = {}, seed = {}".format(slots, scen, alpha, seed))
    for k in tqdm(range(1, slots + 1), disable=not progress, desc="slots"):
        ev = sample_event(state)
        _apply_in_place(scen, estimates, ev, alpha)
        state.slot = k
        if k % record_stride == 0 or k == slots:
            records.append(_record(scen, estimates, k, ev))
        if k in snapshot_slots:
            snapshots[k] = estimates.copy()
    metadata = {
        "seed": seed,
        "alpha": float(alpha),
        "scenario_hash": scenario_hash(scen),
        "slots_run": slots,
        "record_stride": record_stride,
    }
    log.info("Run finished: bearing error {:.3e} -> {:.3e}, follower error {:.3e} -> {:.3e}".format(
        records[0].bearing_error, records[-1].bearing_error, records[0].follower_error, records[-1].follower_error))
    return Trace(records, metadata, snapshots)


def follower_deviations(scen, alpha, checkpoints, seed):
    """
    Runs one seeded path and returns the stacked follower error p_hat_f(k) - p_f at each checkpoint slot.

    Returns
    -------
    deviations : np.ndarray
        (len(checkpoints), d * n_f) array, rows in the order of `checkpoints`
    """
    checkpoints = [int(k) for k in checkpoints]
    horizon = max(checkpoints) if checkpoints else 0
    _check_run_args(alpha, horizon)
    state = GossipState(scen, seed=seed)
    wanted = set(checkpoints)
    found = {}
    if 0 in wanted:
        found[0] = state.follower_deviation()
    for k in range(1, horizon + 1):
        _apply_in_place(scen, state.estimates, sample_event(state), alpha)
        if k in wanted:
            found[k] = state.follower_deviation()
    return np.array([found[k] for k in checkpoints]).reshape(len(checkpoints), scen.d * scen.n_f)


def follower_error_path(scen, alpha, slots, seed):
    """
    Follower error ||p_hat_f(k) - p_f|| at every slot k = 0..slots of one seeded run.

    Returns
    -------
    path : np.ndarray
        Length slots + 1
    """
    _check_run_args(alpha, slots)
    state = GossipState(scen, seed=seed)
    path = np.empty(slots + 1)
    path[0] = np.linalg.norm(state.follower_deviation())
    for k in range(1, slots + 1):
        _apply_in_place(scen, state.estimates, sample_event(state), alpha)
        path[k] = np.linalg.norm(state.follower_deviation())
    return path
