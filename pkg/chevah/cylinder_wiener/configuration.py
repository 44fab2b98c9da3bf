"""
Run configuration read from INI files.

All values are read from the `[cylinder_wiener]` section and validated
before any computation starts.
"""
import configparser
import os
from dataclasses import dataclass

import numpy as np

from chevah.cylinder_wiener.geometry import (
    BallResolution,
    GeometryException,
    ObstacleSet,
    Resolution,
    )
from chevah.cylinder_wiener.solver import (
    METHODS,
    BoundaryData,
    SolverSettings,
    axis_mode_data,
    constant_data,
    step_data,
    table_data,
    )
from chevah.cylinder_wiener.transform import TransformParams
from chevah.cylinder_wiener.wiener import BUILTIN_EXAMPLES, builtin_example


SECTION = 'cylinder_wiener'

FORMULATIONS = ('cylinder', 'ball', 'both')
CAPACITIES = ('neumann', 'via-ball', 'condenser', 'sobolev')
GRID_KINDS = ('auto', 'meridian', 'full')


class ConfigurationError(Exception):
    """
    The run configuration is missing or invalid.
    """
    def __init__(self, message):
        super().__init__(message)
        self.message = message


# Documented defaults, as read from an INI file.
CONFIGURATION = {
    # Problem.
    'dimension': '2',
    'p': '2',
    'kappa': '1',
    'obstacle': '',
    'example': '',
    'example-radius': '0.5',
    'boundary-data': 'constant:1',
    'lateral-dirichlet': 'no',
    'formulation': 'cylinder',
    # Empty means 2 * top(F) + 10 / kappa.
    'truncation': '',

    # Cylinder grids.
    'grid-kind': 'auto',
    'radial-per-unit': '16',
    'axial-per-unit': '16',
    'cells-per-radius': '4',
    'grading': 'yes',

    # Ball grids.
    'ball-radial-nodes': '160',
    'ball-angular-cells': '128',
    'ball-inner-radius': '1e-6',

    # Solver.
    'solver-method': 'newton',
    'tolerance': '1e-8',
    'max-iterations': '500',
    # Empty means 1e-8 times the data scale.
    'epsilon': '',

    # Capacities.
    'capacity': 'neumann',
    'capacity-height': '0',
    'condenser-inner': '0.25',
    'condenser-outer': '0.5',
    'truncation-check': 'yes',

    # Wiener series.
    'jmax': '12',
    'threads': '1',

    # Transform checks.
    'samples': '10000',
    'seed': '0',
    'max-height': '20',
    }


@dataclass
class RunConfig:
    n: int
    p: float
    kappa: float
    obstacle: ObstacleSet
    obstacle_source: str
    boundary_data: BoundaryData
    lateral_dirichlet: bool
    formulation: str
    truncation: float
    grid_kind: str
    resolution: Resolution
    ball_resolution: BallResolution
    settings: SolverSettings
    capacity: str
    capacity_height: float
    condenser_inner: float
    condenser_outer: float
    truncation_check: bool
    jmax: int
    threads: int
    samples: int
    seed: int
    max_height: float

    @property
    def params(self):
        return TransformParams(n=self.n, kappa=self.kappa)

    def to_dict(self):
        return {
            'dimension': self.n,
            'p': self.p,
            'kappa': self.kappa,
            'obstacle': self.obstacle_source,
            'boundary_data': self.boundary_data.description,
            'formulation': self.formulation,
            'truncation': self.truncation,
            'jmax': self.jmax,
            'seed': self.seed,
            }


def _number(config, key, kind=float):
    text = config[key].strip()
    try:
        return kind(text)
    except ValueError:
        raise ConfigurationError(f'Invalid value for {key}: "{text}".')


def _optional(config, key):
    if not config[key].strip():
        return None
    return _number(config, key)


def _flag(config, key):
    text = config[key].strip().lower()
    if text in ('yes', 'true', 'on', '1'):
        return True
    if text in ('no', 'false', 'off', '0'):
        return False
    raise ConfigurationError(f'Invalid value for {key}: "{text}".')


def _choice(config, key, choices):
    text = config[key].strip()
    if text not in choices:
        raise ConfigurationError(
            f'Invalid value for {key}: "{text}", use one of {choices}.')
    return text


def _check(condition, message):
    if not condition:
        raise ConfigurationError(message)


def parse_boundary_data(text, n):
    """
    Boundary data from `constant:<c>`, `axis-mode`, `step:<c>` or
    `table:<csv path>`.

    A table has a header line and one row per point: n coordinates and
    the value.
    """
    kind, _, argument = text.strip().partition(':')
    if kind == 'axis-mode' and not argument:
        return axis_mode_data()
    if kind in ('constant', 'step'):
        try:
            value = float(argument)
        except ValueError:
            raise ConfigurationError(
                f'Invalid boundary data value: "{argument}".')
        if kind == 'constant':
            return constant_data(value)
        return step_data(value)
    if kind == 'table':
        if not os.path.isfile(argument):
            raise ConfigurationError(
                f'Boundary data table not found: {argument}.')
        try:
            table = np.loadtxt(
                argument, delimiter=',', skiprows=1, ndmin=2)
        except ValueError as error:
            raise ConfigurationError(
                f'Invalid boundary data table {argument}: {error}')
        if table.shape[1] != n + 1:
            raise ConfigurationError(
                f'Table {argument} needs {n + 1} columns, '
                f'got {table.shape[1]}.')
        if len(table) == 0 or not np.all(np.isfinite(table)):
            raise ConfigurationError(
                f'Table {argument} needs rows of finite numbers.')
        try:
            return table_data(table[:, :n], table[:, n])
        except GeometryException as error:
            raise ConfigurationError(
                f'Invalid boundary data table {argument}: {error.message}')
    raise ConfigurationError(f'Unknown boundary data: "{text}".')


def _obstacle(config, n, p, jmax):
    path = config['obstacle'].strip()
    example = config['example'].strip()
    if path and example:
        raise ConfigurationError('Set only one of obstacle and example.')
    if path:
        if not os.path.isfile(path):
            raise ConfigurationError(f'Obstacle file not found: {path}.')
        try:
            obstacle = ObstacleSet.load(path, n=n)
        except (GeometryException, ValueError) as error:
            raise ConfigurationError(f'Invalid obstacle {path}: {error}')
        if obstacle.n != n:
            raise ConfigurationError(
                f'Obstacle {path} has dimension {obstacle.n}, '
                f'configuration has {n}.')
        return obstacle, path
    if example:
        if example not in BUILTIN_EXAMPLES:
            raise ConfigurationError(
                f'Unknown example "{example}", use one of '
                f'{", ".join(sorted(BUILTIN_EXAMPLES))}.')
        radius = _number(config, 'example-radius')
        try:
            obstacle = builtin_example(
                example, n=n, p=p, jmax=jmax, radius=radius)
        except ValueError as error:
            raise ConfigurationError(str(error))
        return obstacle, f'example:{example}'
    return ObstacleSet(n=n), 'base'


def parse_configuration(config):
    """
    Convert and validate a mapping of INI values to a RunConfig.
    """
    n = _number(config, 'dimension', int)
    _check(n >= 2, f'Dimension must be >= 2, got {n}.')
    p = _number(config, 'p')
    _check(p > 1, f'Exponent p must be > 1, got {p}.')
    kappa = _number(config, 'kappa')
    _check(kappa > 0, f'kappa must be positive, got {kappa}.')
    jmax = _number(config, 'jmax', int)
    _check(jmax >= 1, f'jmax must be >= 1, got {jmax}.')
    threads = _number(config, 'threads', int)
    _check(threads >= 1, f'threads must be >= 1, got {threads}.')
    truncation = _optional(config, 'truncation')
    _check(
        truncation is None or truncation > 0,
        f'Truncation must be positive, got {truncation}.')
    inner = _number(config, 'condenser-inner')
    outer = _number(config, 'condenser-outer')
    _check(
        0 < inner < outer,
        f'Condenser needs 0 < inner < outer, got {inner} and {outer}.')
    samples = _number(config, 'samples', int)
    _check(samples >= 1, f'samples must be >= 1, got {samples}.')
    max_height = _number(config, 'max-height')
    _check(max_height > 0, f'max-height must be positive, got {max_height}.')
    capacity_height = _number(config, 'capacity-height')
    _check(
        capacity_height >= 0,
        f'capacity-height must be >= 0, got {capacity_height}.')

    try:
        resolution = Resolution(
            radial_per_unit=_number(config, 'radial-per-unit'),
            axial_per_unit=_number(config, 'axial-per-unit'),
            cells_per_radius=_number(config, 'cells-per-radius', int),
            grading=_flag(config, 'grading'),
            )
        ball_resolution = BallResolution(
            radial_nodes=_number(config, 'ball-radial-nodes', int),
            angular_cells=_number(config, 'ball-angular-cells', int),
            inner_radius=_number(config, 'ball-inner-radius'),
            )
        settings = SolverSettings(
            epsilon=_optional(config, 'epsilon'),
            tolerance=_number(config, 'tolerance'),
            max_iterations=_number(config, 'max-iterations', int),
            method=_choice(config, 'solver-method', METHODS),
            )
    except ValueError as error:
        raise ConfigurationError(str(error))
    _check(
        n != 2 or ball_resolution.angular_cells % 4 == 0,
        'ball-angular-cells must be a multiple of 4 for n=2.')

    obstacle, source = _obstacle(config, n, p, jmax)
    return RunConfig(
        n=n,
        p=p,
        kappa=kappa,
        obstacle=obstacle,
        obstacle_source=source,
        boundary_data=parse_boundary_data(config['boundary-data'], n),
        lateral_dirichlet=_flag(config, 'lateral-dirichlet'),
        formulation=_choice(config, 'formulation', FORMULATIONS),
        truncation=truncation,
        grid_kind=_choice(config, 'grid-kind', GRID_KINDS),
        resolution=resolution,
        ball_resolution=ball_resolution,
        settings=settings,
        capacity=_choice(config, 'capacity', CAPACITIES),
        capacity_height=capacity_height,
        condenser_inner=inner,
        condenser_outer=outer,
        truncation_check=_flag(config, 'truncation-check'),
        jmax=jmax,
        threads=threads,
        samples=samples,
        seed=_number(config, 'seed', int),
        max_height=max_height,
        )


def load_configuration(paths, overrides=None):
    """
    Read the INI files in `paths` over the defaults and return the
    validated RunConfig.
    """
    parser = configparser.ConfigParser()
    parser.read(paths)
    if SECTION not in parser.sections():
        raise ConfigurationError(
            f'Config section not found in files [{paths}] '
            f'from {os.getcwd()}.')

    config = dict(CONFIGURATION)
    for key, value in parser[SECTION].items():
        if key not in CONFIGURATION:
            raise ConfigurationError(f'Unknown configuration key: {key}.')
        config[key] = value
    config.update(overrides or {})
    return parse_configuration(config)
