"""
pybnl.geometry
==============
Bearings, orthogonal projection weights and bearing rigidity of frameworks.

A framework is a set of node positions in R^d together with an undirected edge set. Edges are stored canonically as
(i, j) with i < j, sorted lexicographically, and oriented from the lower to the higher index; the bearing of edge k is
g_k = (p_i - p_j) / ||p_i - p_j||. Every function in this module is a pure function of its inputs.

Nodes are indexed from 0.

Key functions
-------------

:py:func:`bearing_vector` The unit vector between two positions

:py:func:`projection_matrix` The orthogonal projection I - g g^T that annihilates a bearing

:py:func:`bearing_rigidity_matrix` The Jacobian of the stacked bearing function

:py:func:`rigidity_test` Numerical test of infinitesimal bearing rigidity

Function reference
------------------
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from pybnl.exceptions import CoincidentNodesException, NonUnitInputException, InvalidParamsException, \
    DimensionMismatchException

log = logging.getLogger(__name__)

COINCIDENT_TOLERANCE = 1e-12
UNIT_NORM_TOLERANCE = 1e-9
DEFAULT_RANK_TOLERANCE = 1e-9


def bearing_vector(p_i, p_j):
    """
    Returns the unit bearing vector pointing from p_j towards p_i, (p_i - p_j) / ||p_i - p_j||.

    Parameters
    ----------
    p_i, p_j : array_like
        Positions of length d.

    Returns
    -------
    g : np.ndarray
        Unit vector of length d.

    Raises
    ------
    CoincidentNodesException
        If the positions are within 1e-12 of each other.
    """
    difference = np.asarray(p_i, dtype=float) - np.asarray(p_j, dtype=float)
    length = np.linalg.norm(difference)
    if length <= COINCIDENT_TOLERANCE:
        raise CoincidentNodesException("Positions {} and {} coincide".format(p_i, p_j))
    return difference / length


def projection_matrix(g):
    """
    Returns the orthogonal projection matrix I_d - g g^T for a unit bearing g. The null space of the result is span(g).

    Parameters
    ----------
    g : array_like
        Unit vector of length d.

    Returns
    -------
    A : np.ndarray
        Symmetric, idempotent d x d matrix.

    Raises
    ------
    NonUnitInputException
        If | ||g|| - 1 | > 1e-9
    """
    g = np.asarray(g, dtype=float)
    if abs(np.linalg.norm(g) - 1) > UNIT_NORM_TOLERANCE:
        raise NonUnitInputException("Bearing {} does not have unit norm".format(g))
    return np.eye(g.size) - np.outer(g, g)


class Framework:
    """
    Node positions plus an undirected edge set, stored canonically.

    Attributes
    ----------
    positions : np.ndarray
        Read-only (n, d) array of node positions.
    edges : np.ndarray
        Read-only (m, 2) integer array of canonical edges (i < j, lexicographic order).

    Raises
    ------
    CoincidentNodesException
        If the two ends of an edge share a position.
    InvalidParamsException
        On self-loops, duplicate edges, out-of-range node ids, d < 2 or non-finite positions.
    """

    def __init__(self, positions, edges):
        positions = np.array(positions, dtype=float)
        if positions.ndim != 2 or positions.shape[1] < 2:
            raise InvalidParamsException("Positions must be an (n, d) array with d >= 2, got shape {}"
                                         .format(positions.shape))
        if not np.all(np.isfinite(positions)):
            raise InvalidParamsException("Positions must be finite")
        n = positions.shape[0]
        canonical = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise InvalidParamsException("Self-loop on node {}".format(i))
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidParamsException("Edge ({}, {}) refers to a node outside 0..{}".format(i, j, n - 1))
            edge = (min(i, j), max(i, j))
            if edge in canonical:
                raise InvalidParamsException("Duplicate edge {}".format(edge))
            canonical.add(edge)
        edge_array = np.array(sorted(canonical), dtype=int).reshape(-1, 2)
        lengths = np.linalg.norm(positions[edge_array[:, 0]] - positions[edge_array[:, 1]], axis=1)
        if np.any(lengths <= COINCIDENT_TOLERANCE):
            bad = edge_array[np.argmax(lengths <= COINCIDENT_TOLERANCE)]
            raise CoincidentNodesException("Nodes {} and {} share an edge and a position".format(*bad))
        positions.flags.writeable = False
        edge_array.flags.writeable = False
        self.positions = positions
        self.edges = edge_array

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def d(self):
        return self.positions.shape[1]

    @property
    def m(self):
        return self.edges.shape[0]

    @cached_property
    def edge_index(self):
        """Maps both orientations (i, j) and (j, i) of every edge to its canonical index"""
        index = {}
        for k, (i, j) in enumerate(self.edges):
            index[(int(i), int(j))] = k
            index[(int(j), int(i))] = k
        return index

    @cached_property
    def neighbours(self):
        """List of sorted neighbour arrays, one per node"""
        out = [[] for _ in range(self.n)]
        for i, j in self.edges:
            out[i].append(int(j))
            out[j].append(int(i))
        return [np.array(sorted(node_neighbours), dtype=int) for node_neighbours in out]

    @property
    def degrees(self):
        return np.array([len(node_neighbours) for node_neighbours in self.neighbours], dtype=int)

    @cached_property
    def lengths(self):
        return np.linalg.norm(self.positions[self.edges[:, 0]] - self.positions[self.edges[:, 1]], axis=1)

    @cached_property
    def bearings(self):
        """(m, d) array; row k is the bearing of canonical edge k"""
        return np.array([bearing_vector(self.positions[i], self.positions[j]) for i, j in self.edges]
                        ).reshape(self.m, self.d)

    @cached_property
    def projections(self):
        """(m, d, d) array; entry k is the projection weight A_k of canonical edge k"""
        return np.array([projection_matrix(g) for g in self.bearings]).reshape(self.m, self.d, self.d)

    def projection_for(self, i, j):
        """The weight A_ij (= A_ji) of the edge between i and j"""
        return self.projections[self.edge_index[(i, j)]]

    def stacked_positions(self):
        """The dn vector p"""
        return self.positions.reshape(-1)

    def __repr__(self):
        return "Framework(n={}, m={}, d={})".format(self.n, self.m, self.d)


@dataclass(frozen=True)
class RigidityReport:
    rigidity_matrix_rank: int
    required_rank: int
    is_rigid: bool
    null_space_dimension: int

    def to_dict(self):
        return {
            "rank": self.rigidity_matrix_rank,
            "required_rank": self.required_rank,
            "is_rigid": self.is_rigid,
            "null_space_dimension": self.null_space_dimension,
        }


def bearing_function(fw):
    """
    Returns the stacked bearing function: a vector of length dm whose k-th d-block is the bearing of the k-th
    canonical edge.
    """
    return fw.bearings.reshape(-1).copy()


def incidence_matrix(fw):
    """
    Returns the m x n incidence matrix H of the canonical orientation: row k has +1 at the lower index of edge k
    and -1 at the higher one.
    """
    H = np.zeros((fw.m, fw.n))
    rows = np.arange(fw.m)
    H[rows, fw.edges[:, 0]] = 1
    H[rows, fw.edges[:, 1]] = -1
    return H


def bearing_rigidity_matrix(fw):
    """
    Assembles the dm x dn bearing rigidity matrix R_B = diag(A_k / l_k) (H kron I_d), the Jacobian of
    :py:func:`bearing_function` with respect to the stacked positions.

    The matrix always annihilates translations (1_n kron v) and the positions p themselves.

    Parameters
    ----------
    fw : Framework

    Returns
    -------
    R : np.ndarray
        (dm, dn) array
    """
    d = fw.d
    R = np.zeros((d * fw.m, d * fw.n))
    for k, (i, j) in enumerate(fw.edges):
        block = fw.projections[k] / fw.lengths[k]
        R[d * k:d * (k + 1), d * i:d * (i + 1)] = block
        R[d * k:d * (k + 1), d * j:d * (j + 1)] = -block
    return R


def bearing_laplacian(fw):
    """
    Returns the dn x dn unit-weight bearing Laplacian (H kron I_d)^T diag(A_k) (H kron I_d). For any stacked estimate
    x, x^T L x is the sum over edges of ||A_ij (x_j - x_i)||^2.
    """
    d = fw.d
    L = np.zeros((d * fw.n, d * fw.n))
    for k, (i, j) in enumerate(fw.edges):
        A = fw.projections[k]
        si = slice(d * i, d * (i + 1))
        sj = slice(d * j, d * (j + 1))
        L[si, si] += A
        L[sj, sj] += A
        L[si, sj] -= A
        L[sj, si] -= A
    return L


def numerical_rank(matrix, rel_tol=DEFAULT_RANK_TOLERANCE):
    """
    Rank from singular values: values at or below rel_tol * sigma_max count as zero. An all-zero or empty
    matrix has rank 0.
    """
    if matrix.size == 0:
        return 0
    singular_values = np.linalg.svd(matrix, compute_uv=False)
    if singular_values.size == 0 or singular_values[0] == 0:
        return 0
    return int(np.sum(singular_values > rel_tol * singular_values[0]))


def rigidity_test(fw, rel_tol=DEFAULT_RANK_TOLERANCE):
    """
    Tests a framework for infinitesimal bearing rigidity: rank(R_B) == dn - d - 1.

    Parameters
    ----------
    fw : Framework
    rel_tol : float, optional
        Relative singular value threshold, in (0, 1e-3). Defaults to 1e-9.

    Returns
    -------
    report : RigidityReport

    """
    if not 0 < rel_tol < 1e-3:
        raise InvalidParamsException("rel_tol must lie in (0, 1e-3), got {}".format(rel_tol))
    rank = numerical_rank(bearing_rigidity_matrix(fw), rel_tol)
    total = fw.d * fw.n
    required = total - fw.d - 1
    report = RigidityReport(
        rigidity_matrix_rank=rank,
        required_rank=required,
        is_rigid=rank == required,
        null_space_dimension=total - rank
    )
    log.debug("Rigidity of {}: {}".format(fw, report))
    return report


def as_position_array(estimates, fw):
    """
    Returns estimates as an (n, d) array for framework fw. Accepts either the stacked dn vector or an (n, d) array.

    Raises
    ------
    DimensionMismatchException
    """
    estimates = np.asarray(estimates, dtype=float)
    if estimates.size != fw.n * fw.d:
        raise DimensionMismatchException("Expected {} estimate entries (n={}, d={}), got {}"
                                         .format(fw.n * fw.d, fw.n, fw.d, estimates.size))
    return estimates.reshape(fw.n, fw.d)
