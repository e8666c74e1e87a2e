"""
pybnl.spectral
==============
The expected matrix-weighted Laplacian of a scenario and the spectral quantities that govern convergence of the
gossip protocol: step size bounds, the expected update and Gram matrices, their spectral radii and the
epsilon-convergence time bound.

The expected Laplacian L has off-diagonal d x d blocks -(A_ij P_ij + A_ji P_ji) / n on edges and diagonal blocks
equal to the negated sum of the off-diagonal blocks in their row. Partitioned into beacon (a) and follower (f)
degrees of freedom, the follower block L_ff is positive definite exactly when the network can be localised from the
beacons, and E[W] = I - alpha L_ff.

Step sizes
----------
Each update matrix is W = I - alpha Q with Q positive semi-definite, ||Q|| = 2 ||A_ij|| for a follower-follower
event and ||A_ij|| for a beacon-follower event. Whenever alpha ||Q|| < 2 for every event and L_ff is positive
definite, E[W^T W] <= I - c alpha L_ff for some c > 0, so its spectral radius is below 1. The second moment bound is
therefore the smallest of 2 / lambda_max(L_ff), 2 / max ||A_ij|| and 1 / max ||A_ij|| over follower-follower edges.

All spectra come from dense symmetric eigensolves.

Key functions
-------------

:py:func:`expected_laplacian` Assembles the expected Laplacian and its beacon/follower blocks

:py:func:`localize_from_beacons` Solves for the follower positions from the beacon positions

:py:func:`step_size_bounds` The admissible step size ranges

:py:func:`expected_gram_matrix` E[W^T W] by enumeration of all slot events

:py:func:`spectral_report` Spectral radii and epsilon-time bounds for a scenario and step size

Function reference
------------------
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from pybnl import gossip
from pybnl.geometry import RigidityReport, numerical_rank, DEFAULT_RANK_TOLERANCE
from pybnl.exceptions import DimensionMismatchException, SingularGroundedLaplacianException, \
    InvalidParamsException, InadmissibleStepSizeWarning

log = logging.getLogger(__name__)

# Relative to lambda_max(L_ff); the expected Laplacian carries a 1 / n factor
SINGULAR_TOLERANCE = 1e-11
RESIDUAL_TOLERANCE = 1e-8
DEFAULT_ALPHA_SAFETY = 0.9


class ExpectedLaplacian:
    """
    The dn x dn expected Laplacian with its beacon/follower partition.

    Attributes
    ----------
    full : np.ndarray
    d : int
    beacon_ids, follower_ids : tuple of int
    beacon_dof, follower_dof : np.ndarray
        Row/column indices of the beacon and follower d-blocks, in node order
    """

    def __init__(self, full, d, beacon_ids):
        self.full = full
        self.d = d
        n = full.shape[0] // d
        self.beacon_ids = tuple(sorted(int(b) for b in beacon_ids))
        self.follower_ids = tuple(i for i in range(n) if i not in set(self.beacon_ids))
        self.beacon_dof = gossip.block_dof(list(self.beacon_ids), d)
        self.follower_dof = gossip.block_dof(list(self.follower_ids), d)

    @property
    def n_a(self):
        return len(self.beacon_ids)

    @property
    def L_aa(self):
        return self.full[np.ix_(self.beacon_dof, self.beacon_dof)]

    @property
    def L_af(self):
        return self.full[np.ix_(self.beacon_dof, self.follower_dof)]

    @property
    def L_fa(self):
        return self.full[np.ix_(self.follower_dof, self.beacon_dof)]

    @property
    def L_ff(self):
        return self.full[np.ix_(self.follower_dof, self.follower_dof)]


def expected_laplacian(fw, prob, n_a, beacon_ids=None):
    """
    Assembles the expected Laplacian of framework `fw` under selection model `prob`.

    Parameters
    ----------
    fw : pybnl.geometry.Framework
    prob : pybnl.network.ProbabilityModel
    n_a : int
        Number of beacons, 0 <= n_a <= n
    beacon_ids : iterable of int, optional
        The beacons. Defaults to the first n_a nodes, which puts the partition at row/column d n_a.

    Returns
    -------
    L : ExpectedLaplacian

    Raises
    ------
    DimensionMismatchException
        If `prob` does not match `fw` or the beacon count is out of range
    """
    prob.validate(fw)
    if not 0 <= n_a <= fw.n:
        raise DimensionMismatchException("Beacon count {} outside 0..{}".format(n_a, fw.n))
    if beacon_ids is None:
        beacon_ids = range(n_a)
    beacon_ids = list(beacon_ids)
    if len(beacon_ids) != n_a:
        raise DimensionMismatchException("{} beacon ids given for n_a = {}".format(len(beacon_ids), n_a))
    d = fw.d
    log.info("Assembling {0}x{0} expected Laplacian".format(d * fw.n))
    full = np.zeros((d * fw.n, d * fw.n))
    for k, (i, j) in enumerate(fw.edges):
        weight = fw.projections[k] * prob.event_probability(i, j)
        si = slice(d * i, d * (i + 1))
        sj = slice(d * j, d * (j + 1))
        full[si, sj] -= weight
        full[sj, si] -= weight
        full[si, si] += weight
        full[sj, sj] += weight
    return ExpectedLaplacian(full, d, beacon_ids)


def scenario_laplacian(scen):
    """The expected Laplacian of a scenario, partitioned at its beacon set"""
    return expected_laplacian(scen.framework, scen.probability, scen.n_a, scen.beacon_ids)


def laplacian_rank_report(L, fw, rel_tol=DEFAULT_RANK_TOLERANCE):
    """
    Rank of the full expected Laplacian, reported against the rigidity requirement dn - d - 1. Agrees with
    :py:func:`pybnl.geometry.rigidity_test` whenever every edge can be selected from at least one end.
    """
    if not 0 < rel_tol < 1e-3:
        raise InvalidParamsException("rel_tol must lie in (0, 1e-3), got {}".format(rel_tol))
    total = fw.d * fw.n
    if L.full.shape != (total, total):
        raise DimensionMismatchException("Laplacian is {} but the framework needs {}".format(L.full.shape, total))
    rank = numerical_rank(L.full, rel_tol)
    required = total - fw.d - 1
    return RigidityReport(rigidity_matrix_rank=rank, required_rank=required, is_rigid=rank == required,
                          null_space_dimension=total - rank)


def grounded_spectrum(L):
    """Ascending eigenvalues of the follower block L_ff"""
    if L.follower_dof.size == 0:
        return np.zeros(0)
    return linalg.eigvalsh(L.L_ff)


def _check_grounded(eigenvalues):
    if eigenvalues.size and eigenvalues[0] <= SINGULAR_TOLERANCE * eigenvalues[-1]:
        raise SingularGroundedLaplacianException(
            "Follower block of the expected Laplacian is singular (smallest eigenvalue {:.3e}); the network is "
            "not bearing rigid or has fewer than two beacons".format(eigenvalues[0]))


def localize_from_beacons(L, p_a):
    """
    Solves L_ff p_f = -L_fa p_a for the stacked follower positions.

    Parameters
    ----------
    L : ExpectedLaplacian
    p_a : array_like
        Stacked beacon positions, in beacon order

    Returns
    -------
    p_f : np.ndarray
        Stacked follower positions, in follower order

    Raises
    ------
    SingularGroundedLaplacianException
        If L_ff is not positive definite or the solution fails its residual check
    """
    p_a = np.asarray(p_a, dtype=float).reshape(-1)
    if p_a.size != L.beacon_dof.size:
        raise DimensionMismatchException("Expected {} beacon coordinates, got {}".format(L.beacon_dof.size, p_a.size))
    _check_grounded(grounded_spectrum(L))
    rhs = -L.L_fa @ p_a
    L_ff = L.L_ff
    p_f = linalg.solve(L_ff, rhs, assume_a="pos")
    residual = np.linalg.norm(L_ff @ p_f - rhs)
    if residual > RESIDUAL_TOLERANCE * max(1.0, np.linalg.norm(rhs)):
        raise SingularGroundedLaplacianException("Localisation residual {:.3e} too large".format(residual))
    return p_f


def _json_number(value):
    return float(value) if np.isfinite(value) else None


@dataclass(frozen=True)
class StepSizeBounds:
    mean_bound: float
    weight_bound: float
    pairwise_bound: float
    second_moment_bound: float
    lambda_max_Lff: float

    def to_dict(self):
        return {
            "lambda_max_Lff": _json_number(self.lambda_max_Lff),
            "mean_bound": _json_number(self.mean_bound),
            "weight_bound": _json_number(self.weight_bound),
            "pairwise_bound": _json_number(self.pairwise_bound),
            "second_moment_bound": _json_number(self.second_moment_bound),
        }


def step_size_bounds(L, fw):
    """
    Step size bounds of a partitioned expected Laplacian.

    Returns
    -------
    bounds : StepSizeBounds
        `mean_bound` = 2 / lambda_max(L_ff): E[W] is stable below it.
        `weight_bound` = 2 / max ||A_ij|| over all edges (2 for projection weights).
        `pairwise_bound` = 1 / max ||A_ij|| over follower-follower edges, infinite if there are none.
        `second_moment_bound` = the smallest of the three: E[W^T W] has spectral radius below 1 below it.

    Raises
    ------
    SingularGroundedLaplacianException
        If L_ff is not positive definite
    """
    eigenvalues = grounded_spectrum(L)
    if eigenvalues.size == 0:
        raise SingularGroundedLaplacianException("There are no followers")
    _check_grounded(eigenvalues)
    lambda_max = float(eigenvalues[-1])
    norms = np.array([np.linalg.norm(A, 2) for A in fw.projections])
    weight_bound = 2 / norms.max() if norms.size else math.inf
    beacons = set(L.beacon_ids)
    pairwise = [norm for norm, (i, j) in zip(norms, fw.edges) if i not in beacons and j not in beacons]
    pairwise_bound = 1 / max(pairwise) if pairwise else math.inf
    mean_bound = 2 / lambda_max
    return StepSizeBounds(
        mean_bound=mean_bound,
        weight_bound=weight_bound,
        pairwise_bound=pairwise_bound,
        second_moment_bound=min(mean_bound, weight_bound, pairwise_bound),
        lambda_max_Lff=lambda_max
    )


def default_step_size(bounds, safety=DEFAULT_ALPHA_SAFETY):
    """safety x second_moment_bound; 0.9 of the bound unless told otherwise"""
    if not 0 < safety < 1:
        raise InvalidParamsException("Step size safety factor must lie in (0, 1), got {}".format(safety))
    return safety * bounds.second_moment_bound


def _slot_events(scen):
    """Every ordered (waker, partner) pair with its probability P_ij / n"""
    P = scen.probability.selection
    for i, j in zip(*np.nonzero(P)):
        yield gossip.classify_event(scen, i, j), P[i, j] / scen.n


def _enumerate_expectation(scen, alpha, local_term):
    if alpha < 0:
        raise InvalidParamsException("Step size must be non-negative, got {}".format(alpha))
    size = scen.d * scen.n_f
    expectation = np.eye(size)
    for ev, probability in _slot_events(scen):
        slots, block = gossip.local_update_block(scen, ev, alpha)
        if not slots:
            continue
        dof = gossip.block_dof(slots, scen.d)
        expectation[np.ix_(dof, dof)] += probability * (local_term(block) - np.eye(dof.size))
    return expectation


def expected_update_matrix(scen, alpha):
    """
    E[W] over one slot, summed event by event: each ordered pair (i, j) contributes W_ij with probability
    P_ij / n. Equals I - alpha L_ff up to round-off.
    """
    return _enumerate_expectation(scen, alpha, lambda block: block)


def expected_gram_matrix(scen, alpha):
    """E[W^T W] over one slot, summed event by event like :py:func:`expected_update_matrix`"""
    return _enumerate_expectation(scen, alpha, lambda block: block.T @ block)


def spectral_radius(matrix):
    """Largest eigenvalue magnitude of a symmetric matrix"""
    if matrix.size == 0:
        return 0.0
    return float(np.max(np.abs(linalg.eigvalsh(matrix))))


def expected_dynamics_spectrum(L, alpha):
    """Ascending eigenvalues of I - alpha L_ff"""
    return np.sort(1 - alpha * grounded_spectrum(L))


def expected_dynamics_is_stable(L, alpha):
    """True if every eigenvalue of I - alpha L_ff lies strictly inside (-1, 1)"""
    spectrum = expected_dynamics_spectrum(L, alpha)
    return bool(np.all((spectrum > -1) & (spectrum < 1)))


def epsilon_time_bound(rho, epsilon):
    """
    The epsilon-convergence time bound K = 3 ln(1/epsilon) / ln(1/rho) for second moment contraction rate rho.

    Returns infinity for rho >= 1 and 0 for rho == 0.
    """
    if not 0 < epsilon < 1:
        raise InvalidParamsException("epsilon must lie in (0, 1), got {}".format(epsilon))
    if rho >= 1:
        return math.inf
    if rho <= 0:
        return 0.0
    return 3 * math.log(1 / epsilon) / math.log(1 / rho)


@dataclass(frozen=True)
class SpectralReport:
    bounds: StepSizeBounds
    alpha_used: float
    rho_EW: float
    rho_EWtW: float
    k_epsilon: dict = field(default_factory=dict)
    admissible: bool = True

    def to_dict(self):
        out = self.bounds.to_dict()
        out.update({
            "alpha_used": self.alpha_used,
            "admissible": bool(self.admissible),
            "rho_EW": self.rho_EW,
            "rho_EWtW": self.rho_EWtW,
            "K": {repr(float(eps)): _json_number(k) for eps, k in self.k_epsilon.items()},
        })
        return out


def spectral_report(scen, alpha=None, eps_list=(0.1, 0.01, 0.001), safety=DEFAULT_ALPHA_SAFETY):
    """
    Spectral report of a scenario at step size `alpha`.

    Parameters
    ----------
    scen : pybnl.network.Scenario
    alpha : float, optional
        Defaults to `safety` x the second moment bound
    eps_list : iterable of float
        Each in (0, 1)
    safety : float, optional

    Returns
    -------
    report : SpectralReport
        Produced even for an inadmissible alpha; `admissible` is then False and an
        :py:class:`pybnl.exceptions.InadmissibleStepSizeWarning` is issued.

    Raises
    ------
    SingularGroundedLaplacianException
    """
    L = scenario_laplacian(scen)
    bounds = step_size_bounds(L, scen.framework)
    if alpha is None:
        alpha = default_step_size(bounds, safety)
    admissible = 0 < alpha < bounds.second_moment_bound
    if not admissible:
        message = "Step size {} outside the second moment range (0, {})".format(alpha, bounds.second_moment_bound)
        log.warning(message)
        warnings.warn(message, InadmissibleStepSizeWarning)
    rho_EW = spectral_radius(expected_update_matrix(scen, alpha))
    rho_EWtW = spectral_radius(expected_gram_matrix(scen, alpha))
    k_epsilon = {float(eps): epsilon_time_bound(rho_EWtW, eps) for eps in eps_list}
    log.info("alpha = {:.6g}: rho(E[W]) = {:.6g}, rho(E[W^T W]) = {:.6g}".format(alpha, rho_EW, rho_EWtW))
    return SpectralReport(bounds=bounds, alpha_used=float(alpha), rho_EW=rho_EW, rho_EWtW=rho_EWtW,
                          k_epsilon=k_epsilon, admissible=admissible)
