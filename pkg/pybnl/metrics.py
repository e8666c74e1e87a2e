"""
pybnl.metrics
=============
Error functionals of an estimate, decay rate fitting and Monte Carlo measurement of the epsilon-convergence time.

The epsilon-convergence time of a scenario is the smallest slot k after which the follower error ratio
||p_hat_f(k) - p_f|| / ||p_hat_f(0) - p_f|| is at least epsilon with probability at most epsilon. It is estimated
here for the scenario's own initial estimates only, by running many independently seeded paths
(seeds base_seed, base_seed + 1, ...) and compared with the spectral bound of
:py:func:`pybnl.spectral.epsilon_time_bound`.

Key functions
-------------

:py:func:`total_bearing_error` Sum over edges of the squared projected estimate differences

:py:func:`follower_error` Norm of the stacked follower deviation

:py:func:`fit_exponential_rate` Log-linear fit of the bearing error of a trace

:py:func:`empirical_epsilon_time` Monte Carlo estimate of the epsilon-convergence time

Function reference
------------------
"""

import logging
from dataclasses import dataclass, asdict

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from pybnl.geometry import as_position_array
from pybnl.exceptions import InsufficientDataException, BoundNotReachedException, InvalidParamsException

log = logging.getLogger(__name__)

MIN_FIT_RECORDS = 10
MIN_TRIALS = 100
BINOMIAL_Z = 1.96


def total_bearing_error(fw, estimates):
    """
    Total bearing error of an estimate: the sum over edges (i, j) of ||A_ij (p_hat_j - p_hat_i)||^2.

    Parameters
    ----------
    fw : pybnl.geometry.Framework
    estimates : array_like
        (n, d) array or stacked dn vector

    Returns
    -------
    error : float

    Raises
    ------
    DimensionMismatchException
    """
    estimates = as_position_array(estimates, fw)
    if fw.m == 0:
        return 0.0
    differences = estimates[fw.edges[:, 1]] - estimates[fw.edges[:, 0]]
    residuals = np.einsum("kab,kb->ka", fw.projections, differences)
    return float(np.sum(residuals ** 2))


def follower_error(scen, estimates):
    """Euclidean norm of the stacked follower deviation p_hat_f - p_f. Beacon rows of `estimates` are ignored."""
    estimates = as_position_array(estimates, scen.framework)
    followers = list(scen.follower_ids)
    return float(np.linalg.norm(estimates[followers] - scen.true_positions[followers]))


@dataclass(frozen=True)
class ErrorSummary:
    bearing_error: float
    follower_error: float
    ratio: float

    def to_dict(self):
        return asdict(self)


def error_summary(scen, estimates, initial_estimates=None):
    """
    Bearing and follower error of `estimates`, with the follower error as a fraction of that of
    `initial_estimates` (the scenario's initial estimates by default). A zero initial error gives a ratio of 0 when
    the current error is also 0 and infinity otherwise.
    """
    if initial_estimates is None:
        initial_estimates = scen.initial_estimates
    current = follower_error(scen, estimates)
    initial = follower_error(scen, initial_estimates)
    if initial > 0:
        ratio = current / initial
    else:
        ratio = 0.0 if current == 0 else float("inf")
    return ErrorSummary(total_bearing_error(scen.framework, estimates), current, ratio)


def fit_exponential_rate(trace, burn_in=0):
    """
    Least squares slope of ln(bearing error) against slot over the records at or after `burn_in`. A negative slope
    means exponential decay.

    Parameters
    ----------
    trace : pybnl.gossip.Trace
    burn_in : int, optional
        First slot included in the fit

    Returns
    -------
    slope : float

    Raises
    ------
    InsufficientDataException
        If fewer than 10 records after the burn-in have a positive bearing error
    """
    slots = trace.slots
    errors = trace.bearing_errors
    keep = (slots >= burn_in) & (errors > 0)
    if np.count_nonzero(keep) < MIN_FIT_RECORDS:
        raise InsufficientDataException("Need at least {} records with positive error after slot {}, have {}"
                                        .format(MIN_FIT_RECORDS, burn_in, np.count_nonzero(keep)))
    fit = stats.linregress(slots[keep].astype(float), np.log(errors[keep]))
    log.info("Fitted bearing error rate {:.4e} per slot over {} records".format(fit.slope, np.count_nonzero(keep)))
    return float(fit.slope)


def markov_exceedance_bound(rho, k, epsilon):
    """
    Markov bound on the probability that the follower error ratio at slot k is at least epsilon, given that the
    mean squared ratio is at most rho^k: epsilon^-2 rho^k.
    """
    return rho ** k / epsilon ** 2


def binomial_slack(p, trials):
    """Normal approximation 95% half-width of a binomial proportion p estimated from `trials` trials"""
    return BINOMIAL_Z * np.sqrt(p * (1 - p) / trials)


@dataclass(frozen=True)
class EpsilonTimeEstimate:
    epsilon: float
    empirical_k: int
    bound_k: float
    trials: int
    exceedance_at_bound: float

    FIELDS = ("epsilon", "empirical_k", "bound_k", "trials", "exceedance_at_bound")

    def row(self):
        return [repr(float(self.epsilon)), self.empirical_k, repr(float(self.bound_k)), self.trials,
                repr(float(self.exceedance_at_bound))]


def _exceedance_path(scen, alpha, horizon, seed, threshold):
    from pybnl import gossip
    return gossip.follower_error_path(scen, alpha, horizon, seed) >= threshold


def _exceedance_counts(scen, alpha, horizon, trials, base_seed, threshold, n_jobs):
    paths = Parallel(n_jobs=n_jobs)(
        delayed(_exceedance_path)(scen, alpha, horizon, base_seed + trial, threshold) for trial in range(trials))
    return np.sum(paths, axis=0)


def empirical_epsilon_time(scen, alpha, epsilon, trials=500, max_slots=100000, base_seed=0, n_jobs=1):
    """
    Monte Carlo estimate of the epsilon-convergence time of `scen` from its initial estimates.

    Runs `trials` paths seeded base_seed + t. The horizon starts at max(64, ceil(K(epsilon))) and doubles, up to
    `max_slots`, until a qualifying slot is found and ceil(K(epsilon)) is covered. Longer horizons rerun the same
    seeds, so paths extend without changing.

    Parameters
    ----------
    scen : pybnl.network.Scenario
    alpha : float
    epsilon : float
        In (0, 1)
    trials : int, optional
        At least 100. Defaults to 500.
    max_slots : int, optional
    base_seed : int, optional
    n_jobs : int, optional
        joblib workers. The estimate does not depend on this.

    Returns
    -------
    estimate : EpsilonTimeEstimate
        `empirical_k` is the smallest k at which the fraction of trials with ratio >= epsilon is <= epsilon;
        `exceedance_at_bound` is that fraction at k = ceil(K(epsilon)), or nan if that slot lies beyond
        `max_slots`.

    Raises
    ------
    BoundNotReachedException
        If no k <= max_slots qualifies
    """
    from pybnl import spectral
    if not 0 < epsilon < 1:
        raise InvalidParamsException("epsilon must lie in (0, 1), got {}".format(epsilon))
    if trials < MIN_TRIALS:
        raise InvalidParamsException("At least {} trials are needed, got {}".format(MIN_TRIALS, trials))
    if max_slots < 1:
        raise InvalidParamsException("max_slots must be at least 1, got {}".format(max_slots))
    rho = spectral.spectral_radius(spectral.expected_gram_matrix(scen, alpha))
    bound_k = spectral.epsilon_time_bound(rho, epsilon)
    bound_slot = int(np.ceil(bound_k)) if np.isfinite(bound_k) else None
    threshold = epsilon * follower_error(scen, scen.initial_estimates)
    if threshold == 0:
        raise InvalidParamsException("The initial follower estimates are exact; the error ratio is undefined")

    horizon = min(max_slots, max(64, bound_slot or 0))
    log.info("Estimating epsilon time for epsilon = {}, {} trials, K = {:.4g}".format(epsilon, trials, bound_k))
    while True:
        fractions = _exceedance_counts(scen, alpha, horizon, trials, base_seed, threshold, n_jobs) / trials
        qualifying = np.flatnonzero(fractions <= epsilon)
        bound_covered = bound_slot is None or bound_slot <= horizon
        if (qualifying.size and bound_covered) or horizon >= max_slots:
            break
        horizon = min(2 * horizon, max_slots)
        log.info("Extending horizon to {} slots".format(horizon))
    if not qualifying.size:
        log.warning("No slot up to {} reached exceedance <= {}".format(max_slots, epsilon))
        raise BoundNotReachedException("No slot up to {} has an exceedance fraction <= {}".format(max_slots, epsilon))
    if bound_slot is not None and bound_slot <= horizon:
        exceedance = float(fractions[bound_slot])
    else:
        log.warning("K(epsilon) = {} lies beyond {} slots; exceedance at the bound not measured"
                    .format(bound_k, max_slots))
        exceedance = float("nan")
    estimate = EpsilonTimeEstimate(
        epsilon=float(epsilon),
        empirical_k=int(qualifying[0]),
        bound_k=float(bound_k),
        trials=trials,
        exceedance_at_bound=exceedance
    )
    log.info("{}".format(estimate))
    return estimate


def monte_carlo_moments(scen, alpha, checkpoints, trials=500, base_seed=0, n_jobs=1):
    """
    Seed averaged first and second moments of the follower error at the checkpoint slots.

    Parameters
    ----------
    scen : pybnl.network.Scenario
    alpha : float
    checkpoints : list of int
    trials : int, optional
    base_seed : int, optional
    n_jobs : int, optional

    Returns
    -------
    moments : dict
        "mean_deviation" and "deviation_standard_error": (len(checkpoints), d n_f) arrays of the mean stacked
        follower deviation and its standard error.
        "squared_ratio_mean" and "squared_ratio_standard_error": length len(checkpoints) arrays of the mean of
        ||p_tilde_f(k)||^2 / ||p_tilde_f(0)||^2 and its standard error.
    """
    from pybnl import gossip
    if trials < 2:
        raise InvalidParamsException("At least 2 trials are needed for a standard error, got {}".format(trials))
    deviations = np.array(Parallel(n_jobs=n_jobs)(
        delayed(gossip.follower_deviations)(scen, alpha, checkpoints, base_seed + trial) for trial in range(trials)))
    initial_squared = follower_error(scen, scen.initial_estimates) ** 2
    squared_ratios = np.sum(deviations ** 2, axis=2) / initial_squared
    return {
        "mean_deviation": deviations.mean(axis=0),
        "deviation_standard_error": deviations.std(axis=0, ddof=1) / np.sqrt(trials),
        "squared_ratio_mean": squared_ratios.mean(axis=0),
        "squared_ratio_standard_error": squared_ratios.std(axis=0, ddof=1) / np.sqrt(trials),
    }
