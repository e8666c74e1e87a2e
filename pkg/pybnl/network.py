"""
pybnl.network
=============
Scenario construction: proximity graphs, neighbour selection probabilities, beacon designation, the benchmark
generators and the scenario document format.

A scenario bundles a :py:class:`pybnl.geometry.Framework` with a set of beacons (nodes that know their own position),
a neighbour selection model and the initial position estimates of the followers. Scenarios are immutable once built
and are shared freely between simulation runs.

Scenario documents
------------------
Scenarios are stored as JSON documents with the fields ::

    dimension         integer d
    positions         list of n coordinate lists
    edges             list of [i, j] pairs (optional; derived from radius if absent)
    radius            proximity radius, or null
    beacons           list of beacon node ids
    probability       "uniform" or an explicit n x n list of rows
    init_box          d pairs of [min, max] for follower initial estimates, or null for the default box
    seed              integer seed for the initial estimates
    init_mode         "box" (sampled from init_box) or "truth" (start at the true positions)
    initial_estimates optional n x d list; overrides init_mode when present

Key functions
-------------

:py:func:`proximity_graph` Builds a framework whose edges join nodes within a radius of each other

:py:func:`uniform_selection` Uniform neighbour selection probabilities

:py:func:`gen_sinc_mesh` The 1089 node sinc surface mesh

:py:func:`make_scenario` Builds a :py:class:`Scenario` from a framework and beacon set

:py:func:`save_scenario` Writes a scenario document

:py:func:`load_scenario` Reads a scenario document

:py:func:`load_framework` Reads only the framework of a scenario document

Function reference
------------------
"""

import hashlib
import json
import logging
from functools import cached_property

import numpy as np
from scipy import spatial

from pybnl.geometry import Framework, COINCIDENT_TOLERANCE
from pybnl.exceptions import CoincidentNodesException, IsolatedNodeException, TooFewBeaconsException, \
    InvalidParamsException, DimensionMismatchException, ScenarioParseException

log = logging.getLogger(__name__)

ROW_SUM_TOLERANCE = 1e-12
INIT_MODES = ("box", "truth", "explicit")


def proximity_graph(positions, radius):
    """
    Builds a framework on `positions` with an edge between every pair of nodes at most `radius` apart
    (full-dimensional Euclidean distance, inclusive).

    Candidate pairs come from a k-d tree; the final membership test is `norm(p_i - p_j) <= radius` in double
    precision, so ties at exactly the radius are decided by that comparison.

    Parameters
    ----------
    positions : array_like
        (n, d) array of node positions
    radius : float
        Proximity radius, > 0

    Returns
    -------
    fw : pybnl.geometry.Framework

    Raises
    ------
    CoincidentNodesException
        If two positions are within 1e-12 of each other
    """
    if not radius > 0:
        raise InvalidParamsException("Proximity radius must be positive, got {}".format(radius))
    positions = np.asarray(positions, dtype=float)
    tree = spatial.cKDTree(positions)
    coincident = tree.query_pairs(COINCIDENT_TOLERANCE)
    if coincident:
        i, j = sorted(coincident)[0]
        raise CoincidentNodesException("Nodes {} and {} share a position".format(i, j))
    candidates = tree.query_pairs(radius * (1 + 1e-9))
    edges = [(i, j) for i, j in sorted(candidates)
             if np.linalg.norm(positions[i] - positions[j]) <= radius]
    log.info("Proximity graph on {} nodes with radius {}: {} edges".format(len(positions), radius, len(edges)))
    return Framework(positions, edges)


class ProbabilityModel:
    """
    Neighbour selection probabilities. `selection[i, j]` is the probability that node i picks neighbour j when it
    wakes up. Every node wakes with probability 1/n.

    Parameters
    ----------
    selection : array_like
        n x n array
    kind : str, optional
        "uniform" or "explicit"; only affects how the model is written to a scenario document.
    """

    def __init__(self, selection, kind="explicit"):
        selection = np.array(selection, dtype=float)
        if selection.ndim != 2 or selection.shape[0] != selection.shape[1]:
            raise DimensionMismatchException("Selection matrix must be square, got shape {}".format(selection.shape))
        selection.flags.writeable = False
        self.selection = selection
        self.kind = kind

    @property
    def n(self):
        return self.selection.shape[0]

    def event_probability(self, i, j):
        """Probability that the unordered pair {i, j} interacts in one slot, (P_ij + P_ji) / n"""
        return (self.selection[i, j] + self.selection[j, i]) / self.n

    def validate(self, fw):
        """
        Checks this model against a framework.

        Raises
        ------
        DimensionMismatchException
            If the matrix is not n x n for the framework's n
        InvalidParamsException
            If an entry lies outside [0, 1], mass sits on a non-edge, a row of a non-isolated node does not sum
            to 1, or some edge has P_ij + P_ji == 0
        """
        P = self.selection
        if P.shape != (fw.n, fw.n):
            raise DimensionMismatchException("Selection matrix is {} but the framework has {} nodes"
                                             .format(P.shape, fw.n))
        if np.any(P < 0) or np.any(P > 1) or not np.all(np.isfinite(P)):
            raise InvalidParamsException("Selection probabilities must lie in [0, 1]")
        support = np.zeros((fw.n, fw.n), dtype=bool)
        support[fw.edges[:, 0], fw.edges[:, 1]] = True
        support[fw.edges[:, 1], fw.edges[:, 0]] = True
        if np.any(P[~support] != 0):
            raise InvalidParamsException("Selection probability placed on a pair that is not an edge")
        row_sums = P.sum(axis=1)
        has_neighbours = fw.degrees > 0
        if np.any(np.abs(row_sums[has_neighbours] - 1) > ROW_SUM_TOLERANCE):
            bad = np.flatnonzero(has_neighbours & (np.abs(row_sums - 1) > ROW_SUM_TOLERANCE))[0]
            raise InvalidParamsException("Selection row {} sums to {}, not 1".format(bad, row_sums[bad]))
        both_ways = P[fw.edges[:, 0], fw.edges[:, 1]] + P[fw.edges[:, 1], fw.edges[:, 0]]
        if np.any(both_ways <= 0):
            bad = fw.edges[np.argmax(both_ways <= 0)]
            raise InvalidParamsException("Edge ({}, {}) can never be selected from either end".format(*bad))

    def __eq__(self, other):
        return isinstance(other, ProbabilityModel) and self.kind == other.kind and \
            np.array_equal(self.selection, other.selection)


def uniform_selection(fw):
    """
    Uniform neighbour selection: P_ij = 1/|N_i| for every neighbour j of i.

    Raises
    ------
    IsolatedNodeException
        If a node has no neighbours
    """
    degrees = fw.degrees
    if np.any(degrees == 0):
        raise IsolatedNodeException("Node {} has no neighbours and cannot gossip"
                                    .format(int(np.flatnonzero(degrees == 0)[0])))
    P = np.zeros((fw.n, fw.n))
    for i, neighbours in enumerate(fw.neighbours):
        P[i, neighbours] = 1.0 / len(neighbours)
    return ProbabilityModel(P, kind="uniform")


def gen_sinc_mesh_scaled(half_width, spacing):
    """
    Generates nodes on the surface z = sin(r)/r, r = sqrt(x^2 + y^2) (z = 1 at r = 0), over the square grid
    x, y in {-half_width, -half_width + spacing, ..., half_width}. The x coordinate varies fastest, so node 0 is
    the corner (-half_width, -half_width).

    Parameters
    ----------
    half_width : float
        > 0
    spacing : float
        Grid spacing, 0 < spacing <= half_width

    Returns
    -------
    positions : np.ndarray
        (count^2, 3) array
    """
    if not half_width > 0 or not 0 < spacing <= half_width:
        raise InvalidParamsException("Need half_width > 0 and 0 < spacing <= half_width, got {} and {}"
                                     .format(half_width, spacing))
    count = int(np.floor(2 * half_width / spacing + 1e-9)) + 1
    coords = -half_width + spacing * np.arange(count)
    x, y = np.meshgrid(coords, coords)
    x = x.ravel()
    y = y.ravel()
    r = np.hypot(x, y)
    z = np.sinc(r / np.pi)
    return np.column_stack([x, y, z])


def gen_sinc_mesh():
    """The 33 x 33 (1089 node) sinc mesh over [-8, 8]^2 at spacing 0.5"""
    return gen_sinc_mesh_scaled(8, 0.5)


def rigid_quad_example():
    """Four nodes, five edges; infinitesimally bearing rigid in the plane"""
    positions = [(1, 1), (0, 0), (0, 1), (-1, 0)]
    edges = [(0, 1), (1, 3), (3, 2), (2, 1), (0, 2)]
    return Framework(positions, edges)


def flexible_quad_example():
    """The rigid quadrilateral without its (1, 2) diagonal; not bearing rigid"""
    positions = [(1, 1), (0, 0), (0, 1), (-1, 0)]
    edges = [(0, 1), (1, 3), (3, 2), (0, 2)]
    return Framework(positions, edges)


def three_node_example():
    """Two beacon candidates at (0, 0) and (2, 0), both joined to a follower at (1, 1)"""
    return Framework([(0, 0), (2, 0), (1, 1)], [(0, 2), (1, 2)])


def default_init_box(d):
    """[-8, 8] x [-8, 8] x [-8, 2] in three dimensions, [-8, 8]^d otherwise"""
    if d == 3:
        return np.array([[-8.0, 8.0], [-8.0, 8.0], [-8.0, 2.0]])
    return np.tile([-8.0, 8.0], (d, 1))


def as_init_box(box, d):
    """Accepts a (d, 2) array or a flat list of 2d values (min, max per dimension)"""
    if box is None:
        return default_init_box(d)
    box = np.asarray(box, dtype=float)
    if box.size != 2 * d:
        raise InvalidParamsException("Initial estimate box needs {} values for d = {}, got {}".format(2 * d, d, box.size))
    box = box.reshape(d, 2)
    if not np.all(np.isfinite(box)) or np.any(box[:, 0] >= box[:, 1]):
        raise InvalidParamsException("Initial estimate box {} must be finite with min < max".format(box.tolist()))
    return box


class Scenario:
    """
    A framework plus beacons, selection probabilities and initial estimates. Build with :py:func:`make_scenario`.

    Attributes
    ----------
    framework : pybnl.geometry.Framework
    beacon_ids : tuple of int
        Sorted beacon node ids
    probability : ProbabilityModel
    init_box : np.ndarray
        (d, 2) box the follower estimates were drawn from
    seed : int
    init_mode : str
    radius : float or None
        The proximity radius the edges came from, if any
    initial_estimates : np.ndarray
        Read-only (n, d) array; beacon rows equal the true beacon positions
    """

    def __init__(self, framework, beacon_ids, probability, init_box, seed, init_mode, initial_estimates,
                 radius=None):
        self.framework = framework
        self.beacon_ids = tuple(int(b) for b in beacon_ids)
        self.probability = probability
        self.init_box = init_box
        self.seed = seed
        self.init_mode = init_mode
        self.radius = radius
        initial_estimates = np.array(initial_estimates, dtype=float)
        initial_estimates.flags.writeable = False
        self.initial_estimates = initial_estimates

    @property
    def true_positions(self):
        return self.framework.positions

    @property
    def n(self):
        return self.framework.n

    @property
    def d(self):
        return self.framework.d

    @property
    def n_a(self):
        return len(self.beacon_ids)

    @property
    def n_f(self):
        return self.n - self.n_a

    @cached_property
    def is_beacon(self):
        mask = np.zeros(self.n, dtype=bool)
        mask[list(self.beacon_ids)] = True
        mask.flags.writeable = False
        return mask

    @cached_property
    def follower_ids(self):
        return tuple(int(i) for i in np.flatnonzero(~self.is_beacon))

    @cached_property
    def follower_slot(self):
        """Maps a follower's node id to its position in the compacted follower order"""
        return {node: slot for slot, node in enumerate(self.follower_ids)}

    @cached_property
    def selection_table(self):
        """Per node: (neighbour ids, cumulative selection probabilities over them)"""
        table = []
        for i, neighbours in enumerate(self.framework.neighbours):
            table.append((neighbours, np.cumsum(self.probability.selection[i, neighbours])))
        return table

    def follower_positions(self):
        return self.true_positions[list(self.follower_ids)]

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (np.array_equal(self.framework.positions, other.framework.positions)
                and np.array_equal(self.framework.edges, other.framework.edges)
                and self.beacon_ids == other.beacon_ids
                and self.probability == other.probability
                and np.array_equal(self.init_box, other.init_box)
                and self.seed == other.seed
                and self.init_mode == other.init_mode
                and self.radius == other.radius
                and np.array_equal(self.initial_estimates, other.initial_estimates))

    def __repr__(self):
        return "Scenario(n={}, d={}, beacons={}, seed={})".format(self.n, self.d, list(self.beacon_ids), self.seed)


def make_scenario(fw, beacon_ids, prob=None, init_mode="box", rng_seed=0, init_box=None, initial_estimates=None,
                  radius=None, min_beacons=2):
    """
    Builds a scenario. Beacons are pinned to their true positions; follower estimates are drawn uniformly from
    `init_box` with a generator seeded by `rng_seed` (init_mode "box"), set to the truth (init_mode "truth") or
    taken from `initial_estimates` (init_mode "explicit").

    Parameters
    ----------
    fw : pybnl.geometry.Framework
    beacon_ids : iterable of int
    prob : ProbabilityModel, optional
        Defaults to :py:func:`uniform_selection`
    init_mode : {"box", "truth", "explicit"}
    rng_seed : int
    init_box : array_like, optional
        (d, 2) box or flat list of 2d values. Defaults to :py:func:`default_init_box`.
    initial_estimates : array_like, optional
        (n, d) estimates for init_mode "explicit". Beacon rows are overwritten with the truth.
    radius : float, optional
        Recorded on the scenario when the edges came from a proximity rule
    min_beacons : int, optional
        Minimum number of beacons. Localisation needs 2; lower it only to study degenerate cases.

    Returns
    -------
    scenario : Scenario

    Raises
    ------
    TooFewBeaconsException
        If fewer than `min_beacons` beacons are given
    InvalidParamsException
        On unknown, repeated or all-node beacon sets, or a bad init_mode / box
    """
    beacons = [int(b) for b in beacon_ids]
    if len(beacons) < min_beacons:
        raise TooFewBeaconsException("{} beacon(s) given; at least {} are needed to localise the network"
                                     .format(len(beacons), min_beacons))
    if len(set(beacons)) != len(beacons):
        raise InvalidParamsException("Beacon ids {} contain duplicates".format(beacons))
    if any(not 0 <= b < fw.n for b in beacons):
        raise InvalidParamsException("Beacon ids {} must lie in 0..{}".format(beacons, fw.n - 1))
    if len(beacons) >= fw.n:
        raise InvalidParamsException("Every node is a beacon; there is nothing to localise")
    if prob is None:
        prob = uniform_selection(fw)
    prob.validate(fw)
    if init_mode not in INIT_MODES:
        raise InvalidParamsException("init_mode must be one of {}, got {}".format(INIT_MODES, init_mode))
    box = as_init_box(init_box, fw.d)
    beacons = sorted(beacons)
    followers = np.setdiff1d(np.arange(fw.n), beacons)

    estimates = np.array(fw.positions, dtype=float)
    if init_mode == "box":
        rng = np.random.default_rng(rng_seed)
        estimates[followers] = rng.uniform(box[:, 0], box[:, 1], size=(len(followers), fw.d))
    elif init_mode == "explicit":
        if initial_estimates is None:
            raise InvalidParamsException("init_mode 'explicit' needs initial_estimates")
        given = np.asarray(initial_estimates, dtype=float)
        if given.size != fw.n * fw.d:
            raise DimensionMismatchException("Initial estimates need {} entries, got {}"
                                             .format(fw.n * fw.d, given.size))
        given = given.reshape(fw.n, fw.d)
        if not np.all(np.isfinite(given)):
            raise InvalidParamsException("Initial estimates must be finite")
        estimates[followers] = given[followers]
    return Scenario(fw, beacons, prob, box, int(rng_seed), init_mode, estimates, radius=radius)


def scenario_document(scen):
    """Returns the JSON-ready dict describing `scen`"""
    fw = scen.framework
    doc = {
        "dimension": fw.d,
        "positions": fw.positions.tolist(),
        "edges": fw.edges.tolist(),
        "radius": scen.radius,
        "beacons": list(scen.beacon_ids),
        "probability": "uniform" if scen.probability.kind == "uniform" else scen.probability.selection.tolist(),
        "init_box": scen.init_box.tolist(),
        "seed": scen.seed,
        "init_mode": scen.init_mode,
    }
    if scen.init_mode == "explicit":
        doc["initial_estimates"] = scen.initial_estimates.tolist()
    return doc


def scenario_hash(scen):
    """sha256 hex digest of the canonical (key-sorted) scenario document"""
    text = json.dumps(scenario_document(scen), sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def save_scenario(scen, out_path):
    """Writes the scenario document of `scen` to `out_path` as JSON"""
    with open(out_path, "w") as scenario_file:
        json.dump(scenario_document(scen), scenario_file, indent=1)
    log.info("Scenario with {} nodes written to {}".format(scen.n, out_path))
    return out_path


def framework_from_document(doc):
    """
    The framework of a parsed scenario document, without its beacons or selection model.

    Raises
    ------
    ScenarioParseException
        On missing fields or fields of the wrong type or shape
    """
    try:
        d = int(doc["dimension"])
        positions = np.array(doc["positions"], dtype=float)
        if positions.ndim != 2 or positions.shape[1] != d:
            raise ScenarioParseException("positions must be a list of {}-element coordinates".format(d))
        if doc.get("edges") is not None:
            return Framework(positions, [tuple(edge) for edge in doc["edges"]])
        if doc.get("radius") is not None:
            return proximity_graph(positions, float(doc["radius"]))
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioParseException("Malformed scenario document: {!r}".format(e)) from e
    raise ScenarioParseException("A scenario needs either edges or a radius")


def scenario_from_document(doc, min_beacons=2):
    """
    Builds a scenario from a parsed scenario document.

    Raises
    ------
    ScenarioParseException
        On missing fields or fields of the wrong type or shape
    """
    fw = framework_from_document(doc)
    try:
        radius = doc.get("radius")
        radius = None if radius is None else float(radius)
        probability = doc.get("probability", "uniform")
        if probability == "uniform":
            prob = uniform_selection(fw)
        elif isinstance(probability, list):
            prob = ProbabilityModel(probability)
        else:
            raise ScenarioParseException("probability must be 'uniform' or a list of rows")
        initial_estimates = doc.get("initial_estimates")
        init_mode = "explicit" if initial_estimates is not None else doc.get("init_mode", "box")
        return make_scenario(
            fw,
            beacon_ids=doc["beacons"],
            prob=prob,
            init_mode=init_mode,
            rng_seed=int(doc.get("seed", 0)),
            init_box=doc.get("init_box"),
            initial_estimates=initial_estimates,
            radius=radius,
            min_beacons=min_beacons
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioParseException("Malformed scenario document: {!r}".format(e)) from e


def _read_document(path):
    try:
        with open(path) as scenario_file:
            doc = json.load(scenario_file)
    except (OSError, json.JSONDecodeError) as e:
        raise ScenarioParseException("Could not read scenario {}: {}".format(path, e)) from e
    if not isinstance(doc, dict):
        raise ScenarioParseException("Scenario {} is not a JSON object".format(path))
    return doc


def load_framework(path):
    """Reads only the framework of the scenario document at `path`; beacons and selection are not checked"""
    return framework_from_document(_read_document(path))


def load_scenario(path, min_beacons=2):
    """
    Reads a scenario document from `path`.

    Raises
    ------
    ScenarioParseException
        If the file is missing, is not JSON or is not a valid scenario document
    """
    scen = scenario_from_document(_read_document(path), min_beacons=min_beacons)
    log.info("Loaded {} from {}".format(scen, path))
    return scen
