"""
Command line front end.

Exit codes: 0 on success, 1 on a numerical failure and 2 on a usage or
configuration error.
"""
import argparse
import logging
import math
import sys

import numpy as np

from chevah.cylinder_wiener import __version__
from chevah.cylinder_wiener.capacity import (
    CapacityException,
    cap_neumann_cylinder,
    cap_neumann_via_ball,
    cap_weighted_condenser,
    condenser_radial_exact,
    sobolev_cp,
    )
from chevah.cylinder_wiener.configuration import (
    CONFIGURATION,
    ConfigurationError,
    load_configuration,
    parse_configuration,
    )
from chevah.cylinder_wiener.export import (
    output_path,
    write_field_csv,
    write_field_vtk,
    write_report,
    write_terms_csv,
    )
from chevah.cylinder_wiener.geometry import GeometryException
from chevah.cylinder_wiener.operators import OperatorContext
from chevah.cylinder_wiener.solver import (
    SolverException,
    compare_formulations,
    limit_at_infinity,
    solve_ball_dirichlet,
    solve_cylinder_mixed,
    )
from chevah.cylinder_wiener.transform import run_transform_checks
from chevah.cylinder_wiener.wiener import (
    BUILTIN_EXAMPLES,
    classify_infinity,
    wiener_series,
    )


EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# Ball nodes inside this radius estimate the limit at infinity.
LIMIT_SHELL = 1e-3


def cmd_transform_check(config, out):
    report = run_transform_checks(
        config.params, samples=config.samples, seed=config.seed,
        max_height=config.max_height)
    write_report(output_path(out, 'transform-check.json'), report)
    return EXIT_OK if report['passed'] else EXIT_FAILURE


def _axis_mode_error(config, field):
    """
    Max error against e^{-pi x_2 / 2} cos(pi (x_1 + 1) / 2), the exact
    solution for the base plate with axis-mode data when n = 2, p = 2.
    """
    if not (
            config.n == 2 and config.p == 2
            and config.boundary_data.description == 'axis-mode'
            and not config.obstacle.primitives
            and config.obstacle.include_base
            and not config.lateral_dirichlet):
        return None
    points = field.grid.cylinder_points()
    exact = np.exp(-math.pi * points[:, 1] / 2.0) * np.cos(
        math.pi * (points[:, 0] + 1.0) / 2.0)
    return float(np.max(np.abs(field.values - exact)))


def cmd_solve(config, out):
    report = {'config': config.to_dict()}
    converged = True
    cylinder = ball = None

    if config.formulation in ('cylinder', 'both'):
        cylinder, solve_report = solve_cylinder_mixed(
            config.obstacle, config.boundary_data, config.p,
            L=config.truncation, resolution=config.resolution,
            settings=config.settings, kind=config.grid_kind,
            kappa=config.kappa, lateral_dirichlet=config.lateral_dirichlet)
        converged &= solve_report.converged
        write_field_csv(output_path(out, 'u.csv'), cylinder)
        write_field_vtk(output_path(out, 'u.vtk'), cylinder)
        report['cylinder'] = solve_report.to_dict()
        report['analytic_error'] = _axis_mode_error(config, cylinder)

    if config.formulation in ('ball', 'both'):
        ball, solve_report = solve_ball_dirichlet(
            config.params, config.obstacle, config.boundary_data, config.p,
            resolution=config.ball_resolution, settings=config.settings)
        converged &= solve_report.converged
        write_field_csv(output_path(out, 'u_ball.csv'), ball)
        write_field_vtk(output_path(out, 'u_ball.vtk'), ball)
        report['ball'] = solve_report.to_dict()
        report['limit_at_infinity'] = limit_at_infinity(
            ball, LIMIT_SHELL).to_dict()

    if cylinder is not None and ball is not None:
        report['discrepancy'] = compare_formulations(
            config.params, cylinder, ball)

    report['converged'] = converged
    write_report(output_path(out, 'solve.json'), report)
    return EXIT_OK if converged else EXIT_FAILURE


def cmd_capacity(config, out):
    kind = config.capacity
    report = {'config': config.to_dict(), 'capacity': kind}
    E = config.obstacle.without_base()
    if kind == 'condenser':
        result = cap_weighted_condenser(
            config.condenser_inner, config.condenser_outer, config.p,
            config.n, radial_nodes=config.ball_resolution.radial_nodes,
            settings=config.settings)
        exact = condenser_radial_exact(
            config.condenser_inner, config.condenser_outer, config.p,
            config.n)
        report['exact'] = exact
        report['relative_error'] = abs(result.value - exact) / exact
    elif kind == 'neumann':
        result = cap_neumann_cylinder(
            E, config.capacity_height, config.p, L=config.truncation,
            resolution=config.resolution, settings=config.settings,
            sensitivity=config.truncation_check, kind=config.grid_kind)
    elif kind == 'via-ball':
        result = cap_neumann_via_ball(
            E, config.capacity_height,
            OperatorContext(config.params, config.p),
            resolution=config.ball_resolution, settings=config.settings)
    else:
        result = sobolev_cp(
            E, config.p, resolution=config.resolution,
            settings=config.settings)

    report.update(result.to_dict())
    write_report(output_path(out, 'capacity.json'), report)
    return EXIT_OK if result.converged else EXIT_FAILURE


def cmd_wiener(config, out):
    series = wiener_series(
        config.obstacle, config.p, jmax=config.jmax,
        resolution=config.resolution, settings=config.settings,
        threads=config.threads, sensitivity=config.truncation_check,
        kind=config.grid_kind)
    verdict = classify_infinity(series)
    report = {'config': config.to_dict()}
    report.update(series.to_dict())
    report.update(verdict.to_dict())
    write_report(output_path(out, 'wiener.json'), report)
    write_terms_csv(output_path(out, 'terms.csv'), series)
    return EXIT_OK if series.all_converged else EXIT_FAILURE


def cmd_examples_list(stream=None):
    stream = stream or sys.stdout
    for name in sorted(BUILTIN_EXAMPLES):
        stream.write(f'{name}: {BUILTIN_EXAMPLES[name].description}\n')
    return EXIT_OK


COMMANDS = {
    'transform-check': cmd_transform_check,
    'solve': cmd_solve,
    'capacity': cmd_capacity,
    'wiener': cmd_wiener,
    }


def build_parser():
    parser = argparse.ArgumentParser(
        prog='cylinder-wiener',
        description=(
            'p-Laplace mixed problems on a half-cylinder and the Wiener '
            'test at infinity.'))
    parser.add_argument(
        '--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument(
        '-v', '--verbose', action='count', default=0,
        help='Log info messages, twice for debug.')
    commands = parser.add_subparsers(dest='command', required=True)

    for name in COMMANDS:
        command = commands.add_parser(name)
        command.add_argument(
            '--config', action='append', default=[],
            help='INI file with a [cylinder_wiener] section, repeatable.')
        command.add_argument(
            '--out', default='.', help='Directory for the outputs.')
        command.add_argument(
            '--threads', type=int, default=None,
            help='Worker threads, overrides the configuration.')

    examples = commands.add_parser('examples')
    actions = examples.add_subparsers(dest='action', required=True)
    actions.add_parser('list')
    return parser


def configure_logging(verbosity):
    """
    Send the library logs to stderr and log uncaught exceptions.
    """
    level = {0: logging.WARNING, 1: logging.INFO}.get(
        verbosity, logging.DEBUG)
    logger = logging.getLogger()
    logger.setLevel(level)
    handler = logging.StreamHandler()
    handler.setFormatter(
        logging.Formatter('%(asctime)s %(levelname)s %(message)s'))
    logger.addHandler(handler)

    def log_uncaught(kind, value, traceback):
        logging.critical(
            'Uncaught exception.', exc_info=(kind, value, traceback))

    sys.excepthook = log_uncaught
    return handler


def read_configuration(arguments):
    overrides = {}
    if arguments.threads is not None:
        overrides['threads'] = str(arguments.threads)
    if arguments.config:
        return load_configuration(arguments.config, overrides)
    values = dict(CONFIGURATION)
    values.update(overrides)
    return parse_configuration(values)


def main(argv=None, install_logging=False):
    parser = build_parser()
    try:
        arguments = parser.parse_args(argv)
    except SystemExit as error:
        return EXIT_OK if error.code == 0 else EXIT_USAGE
    if install_logging:
        configure_logging(arguments.verbose)

    if arguments.command == 'examples':
        return cmd_examples_list()

    try:
        config = read_configuration(arguments)
    except ConfigurationError as error:
        logging.error(error.message)
        return EXIT_USAGE

    try:
        return COMMANDS[arguments.command](config, arguments.out)
    except (SolverException, GeometryException, CapacityException) as error:
        logging.error(error.message)
        return EXIT_FAILURE


def run():
    """
    Console script entry point.
    """
    sys.exit(main(sys.argv[1:], install_logging=True))
