"""
Variational capacities as constrained p-energy minimizations.

 * cap_{p,G_t}(E): Neumann capacity on the cylinder above height t.
 * cap_{p,w}(K, B_R): weighted capacity on a ball with w = |xi|^{p-n}.
 * C_p(K): Sobolev capacity, computed in a box around K.

A set is imposed on the grid as v = 1 on every node whose dual box meets
it, which is the outer approximation of the set.
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from chevah.cylinder_wiener.geometry import (
    ROUND_OFF,
    BallResolution,
    NodeClass,
    ObstacleSet,
    Resolution,
    SolidBall,
    bounding_box,
    build_ball_grid,
    build_box_grid,
    build_cylinder_grid,
    transform_obstacle,
    )
from chevah.cylinder_wiener.operators import OperatorContext, sphere_area
from chevah.cylinder_wiener.solver import (
    DiscreteField,
    SolverSettings,
    ball_problem,
    cylinder_problem,
    solve,
    )
from chevah.cylinder_wiener.transform import TransformParams


# Relative change above which a truncation or a box is reported as
# influencing the value.
SENSITIVITY_LIMIT = 0.02

# Default ball grids for the images of cylinder sets.
IMAGE_RESOLUTION = {
    2: BallResolution(radial_nodes=96, angular_cells=64),
    3: BallResolution(radial_nodes=48, angular_cells=16),
    }


class CapacityException(Exception):
    """
    Generic capacity exception.
    """
    def __init__(self, message):
        super().__init__(message)
        self.message = message


@dataclass
class CapacityProblem:
    """
    Admissible functions are 1 on `constraint` and 0 on `zero`.

    `weight_mode` is 'unit' (cylinder), 'weight' (w on the ball),
    'operator' (the transformed cylinder energy on the ball) or 'sobolev'
    (unit weight plus the |v|^p term).
    """
    p: float
    grid: object
    constraint: np.ndarray
    zero: np.ndarray
    weight_mode: str = 'unit'

    def __post_init__(self):
        self.constraint = np.asarray(self.constraint, dtype=bool)
        self.zero = np.asarray(self.zero, dtype=bool)
        if np.any(self.constraint & self.zero):
            raise CapacityException(
                'The set touches the zero set of the capacity.')
        if self.weight_mode not in ('unit', 'weight', 'operator', 'sobolev'):
            raise ValueError(f'Unknown weight mode: {self.weight_mode}.')

    @property
    def dirichlet(self):
        return self.constraint | self.zero

    @property
    def values(self):
        return self.constraint.astype(float)


@dataclass
class CapacityResult:
    """
    `converged` is False when any minimization behind the value, the
    sensitivity recomputation included, stopped before convergence.
    """
    value: float
    minimizer: DiscreteField = None
    report: object = None
    sensitivity: dict = field(default_factory=dict)
    converged: bool = True

    def __post_init__(self):
        if self.value < 0:
            raise CapacityException(f'Negative capacity: {self.value}.')

    def to_dict(self):
        result = {
            'value': self.value,
            'converged': self.converged,
            'sensitivity': dict(self.sensitivity),
            'grid': None,
            'report': None,
            }
        if self.minimizer is not None:
            grid = self.minimizer.grid
            result['grid'] = {
                'kind': getattr(grid, 'kind', 'ball'),
                'nodes': int(grid.size),
                'constrained': int(np.sum(self.minimizer.values == 1.0)),
                }
        if self.report is not None:
            result['report'] = self.report.to_dict()
        return result


def _empty_result():
    return CapacityResult(value=0.0)


def solve_capacity(problem, settings=None, ctx=None, scale=1.0):
    """
    Minimize the energy of a capacity problem.

    `scale` multiplies the minimal energy to give the capacity value.
    """
    settings = settings or SolverSettings()
    if not np.any(problem.constraint):
        zeros = DiscreteField(problem.grid, np.zeros(problem.grid.size))
        return CapacityResult(value=0.0, minimizer=zeros)
    if problem.weight_mode in ('unit', 'sobolev'):
        energy = cylinder_problem(
            problem.grid, problem.p, problem.dirichlet, problem.values,
            settings, mass=problem.weight_mode == 'sobolev')
    else:
        energy = ball_problem(
            problem.grid, ctx, problem.dirichlet, problem.values, settings,
            weighting=problem.weight_mode)
    minimizer, report = solve(energy)
    return CapacityResult(
        value=scale * report.energy, minimizer=minimizer, report=report,
        converged=report.converged)


def _check_sensitivity(label, value, other):
    change = abs(other - value) / max(abs(value), 1e-300)
    sensitive = change > SENSITIVITY_LIMIT
    if sensitive:
        logging.warning(
            f'{label} sensitive: {value:.6g} against {other:.6g} '
            f'({100 * change:.1f}%).')
    return {'value': other, 'relative_change': change, 'sensitive': sensitive}


def _cylinder_capacity(E, t, p, L, resolution, settings, kind):
    grid = build_cylinder_grid(E.n, L, resolution, E, bottom=t, kind=kind)
    zero = grid.axial <= t + ROUND_OFF
    if np.any(grid.dirichlet & zero):
        raise CapacityException(
            f'The set reaches the zero level x_n = {t}.')
    problem = CapacityProblem(
        p=p, grid=grid, constraint=grid.dirichlet, zero=zero)
    return solve_capacity(problem, settings)


def cap_neumann_cylinder(
        E, t, p, L=None, resolution=None, settings=None, sensitivity=True,
        kind='auto'):
    """
    cap_{p,G_t}(E): minimal energy over [t, L] of v = 0 for x_n <= t and
    v = 1 on E, free on the lateral boundary and on the far end.

    The truncation L defaults to top(E) + 3. With `sensitivity` the value
    is recomputed with a truncation 1.5 times longer.
    """
    E = E.without_base()
    if E.is_empty:
        return _empty_result()
    resolution = resolution or Resolution()
    low, top = E.axial_extent()
    if low < t:
        raise CapacityException(
            f'The set reaches below x_n = {t}: lowest point {low}.')
    if L is None:
        L = top + 3.0
    if L < top + 2.0 - ROUND_OFF:
        raise CapacityException(
            f'Truncation {L} is closer than 2 to the top of the set {top}.')

    result = _cylinder_capacity(E, t, p, L, resolution, settings, kind)
    if sensitivity:
        longer = t + 1.5 * (L - t)
        other = _cylinder_capacity(
            E, t, p, longer, resolution, settings, kind)
        result.sensitivity = _check_sensitivity(
            'Truncation', result.value, other.value)
        result.sensitivity['truncation'] = [L, longer]
        result.converged = result.converged and other.converged
    logging.debug(f'cap_(p,G_{t}) = {result.value:.6g}.')
    return result


def _image_grid(E, t, params, resolution):
    """
    Ball grid of B(0, e^{-kappa t}) with the radii of the axial ends of E
    as grid nodes.
    """
    outer = math.exp(-params.kappa * t)
    low, top = E.axial_extent()
    inner = min(
        resolution.inner_radius, 1e-3 * math.exp(-params.kappa * top))
    ends = [math.exp(-params.kappa * low), math.exp(-params.kappa * top)]
    return build_ball_grid(
        params.n, replace(resolution, inner_radius=inner),
        outer_radius=outer, breakpoints=ends)


def cap_neumann_via_ball(E, t, ctx, resolution=None, settings=None,
                         weighting='operator'):
    """
    Capacity of E~ = T(E) u P T(E) in the ball B(0, e^{-kappa t}).

    With `weighting='operator'` this is cap_{p,G_t}(E) computed on the
    ball: half of the transformed energy of the symmetric minimizer. With
    `weighting='weight'` it is cap_{p,w}(E~, B(0, e^{-kappa t})).
    """
    E = E.without_base()
    if E.is_empty:
        return _empty_result()
    resolution = resolution or IMAGE_RESOLUTION[ctx.n]
    grid = _image_grid(E, t, ctx.params, resolution)
    mask = transform_obstacle(ctx.params, E, grid, include_origin=False)
    problem = CapacityProblem(
        p=ctx.p, grid=grid, constraint=mask, zero=grid.outer,
        weight_mode=weighting)
    scale = 0.5 if weighting == 'operator' else 1.0
    return solve_capacity(problem, settings, ctx=ctx, scale=scale)


def cap_weighted_ball(K, grid, p, settings=None):
    """
    cap_{p,w}(K, B_R) for the node mask K of a ball grid of radius R.
    """
    ctx = OperatorContext(TransformParams(n=grid.n), p)
    problem = CapacityProblem(
        p=p, grid=grid, constraint=K, zero=grid.outer, weight_mode='weight')
    return solve_capacity(problem, settings, ctx=ctx)


def condenser_radial_exact(r, R, p, n):
    """
    n omega_n (log(R / r))^{1 - p}, the weighted capacity of B_r in B_R.
    """
    if not 0 < r < R:
        raise ValueError(f'Condenser needs 0 < r < R, got r={r}, R={R}.')
    if not p > 1:
        raise ValueError(f'Exponent p must be > 1, got {p}.')
    return sphere_area(n) * math.log(R / r) ** (1.0 - p)


def cap_weighted_condenser(r, R, p, n, radial_nodes=128, angular_cells=16,
                           settings=None):
    """
    Numerical cap_{p,w}(B_r, B_R) on a ball grid with `radial_nodes`
    log-uniform nodes between r and R.
    """
    if not 0 < r < R:
        raise ValueError(f'Condenser needs 0 < r < R, got r={r}, R={R}.')
    resolution = BallResolution(
        radial_nodes=radial_nodes, angular_cells=angular_cells,
        inner_radius=r)
    grid = build_ball_grid(n, resolution, outer_radius=R)
    inside = grid.radius <= r * (1 + ROUND_OFF)
    return cap_weighted_ball(inside, grid, p, settings)


def sobolev_cp(K, p, resolution=None, box_factor=4.0, cells=48,
               sensitivity_factor=6.0, settings=None):
    """
    C_p(K) as the minimum of sum |grad v|^p + |v|^p over a box of side
    `box_factor` times the diameter of K, with v = 0 on the box faces.

    With `sensitivity_factor` the value is recomputed in a larger box.
    """
    if K.is_empty:
        return _empty_result()
    resolution = resolution or Resolution()
    low, high = bounding_box(K)
    diameter = float(np.linalg.norm(high - low))
    if diameter == 0:
        raise CapacityException('C_p needs a set with positive diameter.')

    def compute(factor):
        grid = build_box_grid(K, factor * diameter / 2.0, cells, resolution)
        problem = CapacityProblem(
            p=p, grid=grid, constraint=grid.dirichlet,
            zero=grid.classes == NodeClass.OUTER, weight_mode='sobolev')
        return solve_capacity(problem, settings)

    result = compute(box_factor)
    if sensitivity_factor:
        other = compute(sensitivity_factor)
        result.sensitivity = _check_sensitivity(
            'Box', result.value, other.value)
        result.sensitivity['box_factors'] = [box_factor, sensitivity_factor]
        result.converged = result.converged and other.converged
    logging.debug(f'C_p = {result.value:.6g}.')
    return result


def axis_ball_family(n, radius=0.25):
    """
    t -> the closed ball of `radius` on the axis at height t + 1/2.
    """
    def family(t):
        center = (0.0,) * (n - 1) + (t + 0.5,)
        return ObstacleSet(
            n=n, primitives=(SolidBall(center=center, radius=radius),),
            include_base=False)
    return family


@dataclass
class RatioReport:
    """
    The capacity ratios measured for each height t.

    ball: cap_{p,G_t}(E) / cap_{p,w}(E~, B(0, e^{-kappa t}))
    upper: cap_{p,G_{t-1}}(E) / min(1, C_p(E))
    lower: C_p(E) / cap_{p,G_{t-1}}(E)
    A None ratio was skipped because of an empty set. `converged` tells,
    per height, whether every capacity behind the ratios converged.
    """
    heights: list
    ratios: dict
    values: dict
    converged: list = field(default_factory=list)

    def spread(self, name):
        measured = [v for v in self.ratios[name] if v is not None]
        if not measured:
            return None
        return max(measured) / min(measured)

    def interval(self, name):
        measured = [v for v in self.ratios[name] if v is not None]
        if not measured:
            return None
        return min(measured), max(measured)

    def stable(self, name, factor=2.0):
        spread = self.spread(name)
        return spread is None or spread <= factor

    def to_dict(self):
        return {
            'heights': list(self.heights),
            'ratios': {k: list(v) for k, v in self.ratios.items()},
            'values': {k: list(v) for k, v in self.values.items()},
            'spread': {k: self.spread(k) for k in self.ratios},
            'converged': list(self.converged),
            }


def _ratio(numerator, denominator):
    if denominator == 0:
        return None
    return numerator / denominator


def compare_caps(family, heights, p, n, kappa=1.0, resolution=None,
                 ball_resolution=None, settings=None, cells=48):
    """
    Measure the capacity comparisons for the sets family(t), t in heights.
    """
    ctx = OperatorContext(TransformParams(n=n, kappa=kappa), p)
    names = ('ball', 'upper', 'lower')
    ratios = {name: [] for name in names}
    values = {name: [] for name in ('cylinder', 'image', 'shifted', 'cp')}
    converged = []
    for t in heights:
        E = family(t)
        if E.is_empty:
            for name in names:
                ratios[name].append(None)
            for name in values:
                values[name].append(0.0)
            converged.append(True)
            continue
        results = [
            cap_neumann_cylinder(
                E, t, p, resolution=resolution, settings=settings,
                sensitivity=False),
            cap_neumann_via_ball(
                E, t, ctx, resolution=ball_resolution, settings=settings,
                weighting='weight'),
            cap_neumann_cylinder(
                E, t - 1, p, resolution=resolution, settings=settings,
                sensitivity=False),
            sobolev_cp(
                E, p, resolution=resolution, cells=cells, settings=settings,
                sensitivity_factor=None),
            ]
        cylinder, image, shifted, cp = [r.value for r in results]
        converged.append(all(r.converged for r in results))
        values['cylinder'].append(cylinder)
        values['image'].append(image)
        values['shifted'].append(shifted)
        values['cp'].append(cp)
        ratios['ball'].append(_ratio(cylinder, image))
        ratios['upper'].append(_ratio(shifted, min(1.0, cp)))
        ratios['lower'].append(_ratio(cp, shifted))
        logging.info(
            f'Capacities at t={t}: cylinder {cylinder:.6g}, '
            f'image {image:.6g}, shifted {shifted:.6g}, C_p {cp:.6g}.')
    return RatioReport(
        heights=list(heights), ratios=ratios, values=values,
        converged=converged)
