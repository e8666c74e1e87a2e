"""
bnl
---
Command line front end for bearing-based network localisation: scenario generation, rigidity and spectral analysis,
gossip simulation runs and Monte Carlo epsilon-time studies.

Usage:

::

    bnl gen-scenario fig1a fig1a.json
    bnl gen-scenario sinc-mesh-scaled mesh81.json --half-width 2 --spacing 0.5
    bnl rigidity fig1a.json --out runs/fig1a
    bnl spectral mesh81.json --out runs/mesh81
    bnl simulate mesh81.json --slots 100000 --seed 3 --out runs/mesh81
    bnl montecarlo three_node.json --epsilons 0.1,0.05 --trials 500 --out runs/three_node

Defaults come from pybnl/apps/bnl.ini; a copy edited and passed with --conf overrides them, and command line flags
override both.

Output folder (--out) layout:

::

    trace.csv                 simulate: slot,waker,partner,case,bearing_error,follower_error
    trace_metadata.json       simulate: seed, alpha, scenario hash, slots run, record stride
    montecarlo_summary.csv    montecarlo: epsilon,empirical_k,bound_k,trials,exceedance_at_bound
    reports/                  rigidity_report.json, spectral_report.json, summary.json
    plot_data/                graph_edges.csv, true_positions.csv, bearing_error.csv, snapshot_k<k>.csv
    log/                      bnl.log

Exit codes: 0 on success, 1 for unreadable input or invalid parameters, 2 when the analysis fails (the framework is
not rigid, the network cannot be localised or an epsilon time was not reached).
"""

import argparse
import configparser
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from pybnl import geometry, gossip, metrics, network, spectral
from pybnl.filesystem_utilities import init_log, read_config, read_float_list, create_file_structure
from pybnl.exceptions import ScenarioParseException, InvalidParamsException, TooFewBeaconsException, \
    CoincidentNodesException, IsolatedNodeException, InadmissibleStepSizeException, DimensionMismatchException, \
    SingularGroundedLaplacianException, BoundNotReachedException, InsufficientDataException

log = logging.getLogger("pybnl")

SCENARIO_KINDS = ["sinc-mesh", "sinc-mesh-scaled", "fig1a", "fig1b", "custom"]
MESH_RADIUS = np.sqrt(2) / 2

INPUT_ERRORS = (ScenarioParseException, InvalidParamsException, TooFewBeaconsException, CoincidentNodesException,
                IsolatedNodeException, InadmissibleStepSizeException, DimensionMismatchException, FileNotFoundError,
                configparser.Error)
ANALYSIS_FAILURES = (SingularGroundedLaplacianException, BoundNotReachedException)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_ANALYSIS = 2


@dataclass
class RunConfig:
    scenario_path: str
    alpha: Optional[float]
    slots: int
    seed: int
    record_stride: int
    out_dir: str
    force: bool = False
    progress: bool = False
    alpha_safety: float = spectral.DEFAULT_ALPHA_SAFETY


def coordinate_names(d):
    return ["x", "y", "z"][:d] if d <= 3 else ["x{}".format(axis) for axis in range(d)]


def write_csv(out_path, header, rows):
    """Writes rows with csv.writer; floats should already be repr strings so reruns are byte-identical"""
    with open(out_path, "w", newline="") as out_file:
        writer = csv.writer(out_file)
        writer.writerow(header)
        writer.writerows(rows)
    return out_path


def write_json(out_path, content):
    with open(out_path, "w") as out_file:
        json.dump(content, out_file, indent=1, sort_keys=True)
    return out_path


def read_positions_csv(path):
    """Reads a headerless CSV of node coordinates, one node per row"""
    try:
        positions = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as e:
        raise ScenarioParseException("Could not read positions from {}: {}".format(path, e)) from e
    return positions


def cmd_gen_scenario(kind, out_path, seed=0, half_width=2.0, spacing=0.5, positions_path=None, radius=None,
                     beacons=None, init_box=None):
    """
    Generates a scenario document.

    Parameters
    ----------
    kind : str
        One of sinc-mesh (1089 node surface mesh), sinc-mesh-scaled (the same surface on a smaller grid), fig1a
        (rigid quadrilateral), fig1b (flexible quadrilateral) or custom (positions read from `positions_path`, edges
        from `radius`)
    out_path : str
    seed : int, optional
        Seed of the follower initial estimates
    half_width, spacing : float, optional
        Grid of sinc-mesh-scaled
    positions_path : str, optional
        Headerless CSV of coordinates for custom
    radius : float, optional
        Proximity radius. Defaults to spacing x sqrt(2) for the meshes (sqrt(2)/2 at spacing 0.5); required for custom.
    beacons : list of int, optional
        Defaults to nodes 0 and 1
    init_box : array_like, optional
        Initial estimate box; defaults to the dimension default

    Returns
    -------
    scenario : pybnl.network.Scenario
    """
    if beacons is None:
        beacons = [0, 1]
    if kind == "sinc-mesh":
        radius = MESH_RADIUS if radius is None else radius
        fw = network.proximity_graph(network.gen_sinc_mesh(), radius)
    elif kind == "sinc-mesh-scaled":
        radius = spacing * np.sqrt(2) if radius is None else radius
        fw = network.proximity_graph(network.gen_sinc_mesh_scaled(half_width, spacing), radius)
    elif kind in ("fig1a", "fig1b"):
        radius = None
        fw = network.rigid_quad_example() if kind == "fig1a" else network.flexible_quad_example()
    elif kind == "custom":
        if positions_path is None or radius is None:
            raise InvalidParamsException("Custom scenarios need --positions and --radius")
        fw = network.proximity_graph(read_positions_csv(positions_path), radius)
    else:
        raise InvalidParamsException("Unknown scenario kind {}; choose from {}".format(kind, SCENARIO_KINDS))
    scen = network.make_scenario(fw, beacons, init_mode="box", rng_seed=seed, init_box=init_box,
                                 radius=None if radius is None else float(radius))
    network.save_scenario(scen, out_path)
    return scen


def cmd_rigidity(scenario_path, out_dir, rel_tol=geometry.DEFAULT_RANK_TOLERANCE):
    """
    Tests the scenario's framework for bearing rigidity, prints the verdict and writes reports/rigidity_report.json.
    Beacons and the selection model are not read, so a document with an isolated node is reported as not rigid.

    Returns
    -------
    exit_code : int
        0 if rigid, 2 if not
    """
    fw = network.load_framework(scenario_path)
    report = geometry.rigidity_test(fw, rel_tol)
    verdict = "rigid" if report.is_rigid else "not rigid"
    print("rank {} / required {}: {}".format(report.rigidity_matrix_rank, report.required_rank, verdict))
    write_json(os.path.join(out_dir, "reports", "rigidity_report.json"), report.to_dict())
    log.info("Rigidity of {}: {}".format(scenario_path, report))
    return EXIT_OK if report.is_rigid else EXIT_ANALYSIS


def cmd_spectral(scenario_path, out_dir, alpha=None, eps_list=(0.1, 0.01, 0.001),
                 alpha_safety=spectral.DEFAULT_ALPHA_SAFETY):
    """
    Writes reports/spectral_report.json for a scenario. An inadmissible `alpha` is reported with a warning, not
    refused.

    Returns
    -------
    report : pybnl.spectral.SpectralReport
    """
    scen = network.load_scenario(scenario_path)
    report = spectral.spectral_report(scen, alpha, eps_list, safety=alpha_safety)
    write_json(os.path.join(out_dir, "reports", "spectral_report.json"), report.to_dict())
    print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    return report


def resolve_alpha(scen, alpha, force, safety=spectral.DEFAULT_ALPHA_SAFETY):
    """
    Returns the step size for a run: `alpha` if given, else safety x the second moment bound.

    Raises
    ------
    InadmissibleStepSizeException
        If the step size lies outside (0, second moment bound) and `force` is not set
    SingularGroundedLaplacianException
        If the network cannot be localised
    """
    bounds = spectral.step_size_bounds(spectral.scenario_laplacian(scen), scen.framework)
    if alpha is None:
        alpha = spectral.default_step_size(bounds, safety)
    if not 0 < alpha < bounds.second_moment_bound:
        message = "Step size {} outside (0, {}); the run may not converge".format(alpha, bounds.second_moment_bound)
        if not force:
            raise InadmissibleStepSizeException(message + ". Pass --force to run anyway.")
        log.warning(message)
    return alpha


def snapshot_schedule(slots):
    """Snapshot slots 0, N/8, N/4, N/2, 3N/4 and N for an N slot run"""
    return sorted({0, slots // 8, slots // 4, slots // 2, 3 * slots // 4, slots})


def write_plot_data(scen, trace, plot_dir):
    """Per-panel CSVs: graph edges, true positions, the error series and the estimate snapshots"""
    names = coordinate_names(scen.d)
    write_csv(os.path.join(plot_dir, "graph_edges.csv"), ["i", "j"], scen.framework.edges.tolist())
    position_rows = [[node, int(scen.is_beacon[node])] + [repr(float(c)) for c in scen.true_positions[node]]
                     for node in range(scen.n)]
    write_csv(os.path.join(plot_dir, "true_positions.csv"), ["node", "is_beacon"] + names, position_rows)
    error_rows = [[record.slot, repr(float(record.bearing_error)), repr(float(record.follower_error))]
                  for record in trace.records]
    write_csv(os.path.join(plot_dir, "bearing_error.csv"), ["slot", "bearing_error", "follower_error"], error_rows)
    for k, estimates in sorted(trace.snapshots.items()):
        rows = [[node, int(scen.is_beacon[node])] + [repr(float(c)) for c in estimates[node]]
                for node in range(scen.n)]
        write_csv(os.path.join(plot_dir, "snapshot_k{}.csv".format(k)), ["node", "is_beacon"] + names, rows)


def cmd_simulate(config):
    """
    Runs the gossip protocol as described by a RunConfig and writes the trace, its metadata, a summary and the plot
    data into config.out_dir.

    Returns
    -------
    trace : pybnl.gossip.Trace
    """
    if config.slots < 0:
        raise InvalidParamsException("slots must be non-negative, got {}".format(config.slots))
    scen = network.load_scenario(config.scenario_path)
    alpha = resolve_alpha(scen, config.alpha, config.force, config.alpha_safety)
    trace = gossip.run(scen, alpha, config.slots, config.seed, record_stride=config.record_stride,
                       snapshot_slots=snapshot_schedule(config.slots), progress=config.progress)
    trace.to_csv(os.path.join(config.out_dir, "trace.csv"))
    trace.write_metadata(os.path.join(config.out_dir, "trace_metadata.json"))
    final = trace.snapshots[config.slots]
    summary = metrics.error_summary(scen, final).to_dict()
    try:
        summary["rate"] = metrics.fit_exponential_rate(trace)
    except InsufficientDataException:
        summary["rate"] = None
    summary.update({"alpha": float(alpha), "seed": config.seed, "slots": config.slots,
                    "initial_bearing_error": trace.records[0].bearing_error,
                    "initial_follower_error": trace.records[0].follower_error})
    write_json(os.path.join(config.out_dir, "reports", "summary.json"), summary)
    write_plot_data(scen, trace, os.path.join(config.out_dir, "plot_data"))
    return trace


def cmd_montecarlo(scenario_path, out_dir, alpha=None, eps_list=(0.1,), trials=500, max_slots=100000, base_seed=0,
                   n_jobs=1, force=False, alpha_safety=spectral.DEFAULT_ALPHA_SAFETY):
    """
    Estimates the epsilon-convergence time for every epsilon in `eps_list` and writes montecarlo_summary.csv.

    Returns
    -------
    estimates : list of pybnl.metrics.EpsilonTimeEstimate
    """
    if trials < metrics.MIN_TRIALS:
        raise InvalidParamsException("At least {} trials are needed, got {}".format(metrics.MIN_TRIALS, trials))
    scen = network.load_scenario(scenario_path)
    alpha = resolve_alpha(scen, alpha, force, alpha_safety)
    estimates = [metrics.empirical_epsilon_time(scen, alpha, eps, trials=trials, max_slots=max_slots,
                                                base_seed=base_seed, n_jobs=n_jobs)
                 for eps in eps_list]
    write_csv(os.path.join(out_dir, "montecarlo_summary.csv"), list(metrics.EpsilonTimeEstimate.FIELDS),
              [estimate.row() for estimate in estimates])
    return estimates


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Seed for initial estimates or wake-ups (default 0)")
    common.add_argument("--out", default="bnl_output", help="Output folder")
    common.add_argument("--alpha", type=float, default=None,
                        help="Step size. Defaults to alpha_safety x the second moment bound")
    common.add_argument("--force", action="store_true", help="Run with a step size outside the admissible range")
    common.add_argument("--conf", default=None, help="Path to a .ini file overriding pybnl/apps/bnl.ini")
    common.add_argument("--progress", action="store_true", help="Show progress bars")

    parser = argparse.ArgumentParser(prog="bnl", description="Bearing-based network localisation by randomised gossip")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-scenario", parents=[common], help="Write a scenario document")
    gen.add_argument("kind", choices=SCENARIO_KINDS)
    gen.add_argument("out_path", help="Path of the scenario .json to write")
    gen.add_argument("--half-width", type=float, default=2.0, help="sinc-mesh-scaled grid half width")
    gen.add_argument("--spacing", type=float, default=0.5, help="sinc-mesh-scaled grid spacing")
    gen.add_argument("--positions", default=None, help="custom: headerless CSV of node coordinates")
    gen.add_argument("--radius", type=float, default=None, help="Proximity radius")
    gen.add_argument("--beacons", default="0,1", help="Comma separated beacon node ids")
    gen.add_argument("--init-box", default=None, help="min,max per dimension for follower initial estimates")

    rigidity = commands.add_parser("rigidity", parents=[common], help="Bearing rigidity test")
    rigidity.add_argument("scenario")

    spectral_parser = commands.add_parser("spectral", parents=[common], help="Step size bounds and spectral radii")
    spectral_parser.add_argument("scenario")
    spectral_parser.add_argument("--epsilons", default=None, help="Comma separated epsilons for K(epsilon)")

    simulate = commands.add_parser("simulate", parents=[common], help="Run the gossip protocol")
    simulate.add_argument("scenario")
    simulate.add_argument("--slots", type=int, default=None)
    simulate.add_argument("--record-stride", type=int, default=None)

    montecarlo = commands.add_parser("montecarlo", parents=[common], help="Monte Carlo epsilon-time estimates")
    montecarlo.add_argument("scenario")
    montecarlo.add_argument("--epsilons", default=None)
    montecarlo.add_argument("--trials", type=int, default=None)
    montecarlo.add_argument("--max-slots", type=int, default=None)
    montecarlo.add_argument("--jobs", type=int, default=None, help="joblib workers")
    return parser


def _pick(value, fallback):
    return fallback if value is None else value


def dispatch(args, conf):
    """Runs the parsed command with configuration `conf` and returns its exit code"""
    seed = _pick(args.seed, 0)
    safety = conf.getfloat("spectral", "alpha_safety")
    if args.command == "gen-scenario":
        init_box = _pick(args.init_box, conf.get("scenario", "init_box", fallback=""))
        scen = cmd_gen_scenario(
            args.kind, args.out_path, seed=seed, half_width=args.half_width, spacing=args.spacing,
            positions_path=args.positions, radius=args.radius,
            beacons=[int(float(b)) for b in read_float_list(args.beacons)],
            init_box=read_float_list(init_box) or None)
        print("Wrote {} to {}".format(scen, args.out_path))
        return EXIT_OK
    if args.command == "rigidity":
        return cmd_rigidity(args.scenario, args.out, conf.getfloat("spectral", "rank_tolerance"))
    if args.command == "spectral":
        eps_list = read_float_list(_pick(args.epsilons, conf.get("spectral", "epsilons")))
        cmd_spectral(args.scenario, args.out, args.alpha, eps_list, alpha_safety=safety)
        return EXIT_OK
    if args.command == "simulate":
        config = RunConfig(
            scenario_path=args.scenario,
            alpha=args.alpha,
            slots=_pick(args.slots, conf.getint("simulation", "slots")),
            seed=seed,
            record_stride=_pick(args.record_stride, conf.getint("simulation", "record_stride")),
            out_dir=args.out,
            force=args.force,
            progress=args.progress,
            alpha_safety=safety
        )
        cmd_simulate(config)
        return EXIT_OK
    if args.command == "montecarlo":
        estimates = cmd_montecarlo(
            args.scenario, args.out, alpha=args.alpha,
            eps_list=read_float_list(_pick(args.epsilons, conf.get("montecarlo", "epsilons"))),
            trials=_pick(args.trials, conf.getint("montecarlo", "trials")),
            max_slots=_pick(args.max_slots, conf.getint("montecarlo", "max_slots")),
            base_seed=seed,
            n_jobs=_pick(args.jobs, conf.getint("montecarlo", "n_jobs")),
            force=args.force,
            alpha_safety=safety)
        for estimate in estimates:
            print("epsilon {}: empirical k {}, bound {:.2f}".format(estimate.epsilon, estimate.empirical_k,
                                                                   estimate.bound_k))
        return EXIT_OK
    raise InvalidParamsException("Unknown command {}".format(args.command))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        conf = read_config(args.conf)
        out_dir = create_file_structure(args.out)
        args.out = out_dir
        init_log(os.path.join(out_dir, "log", conf.get("log", "log_path")))
        log.info("bnl {}".format(" ".join(sys.argv[1:] if argv is None else argv)))
        return dispatch(args, conf)
    except INPUT_ERRORS as e:
        log.error("{}: {}".format(type(e).__name__, e))
        return EXIT_INPUT
    except ANALYSIS_FAILURES as e:
        log.error("{}: {}".format(type(e).__name__, e))
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
