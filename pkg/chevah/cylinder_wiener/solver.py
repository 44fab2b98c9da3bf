"""
Minimization of the discrete p-energy.

The energy of a field u is

    E(u) = sum_s w_s (|G_s u|^2 + eps^2)^{p/2} + sum_i m_i (u_i^2 + eps^2)^{p/2}

where G_s is the gradient (possibly multiplied by a metric) on simplex s,
w_s its weighted volume and m_i an optional lumped mass used by the
Sobolev capacity. Dirichlet nodes are eliminated and the free nodes are
found with a damped Newton method or with L-BFGS-B.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.optimize import minimize
from scipy.sparse.linalg import splu

from chevah.cylinder_wiener.geometry import (
    ROUND_OFF,
    BallResolution,
    GeometryException,
    Resolution,
    build_ball_grid,
    build_cylinder_grid,
    lipschitz_constant,
    mcshane_extend,
    pull_back_points,
    transform_obstacle,
    )
from chevah.cylinder_wiener.operators import (
    OperatorContext,
    a_operator_points,
    build_operator_cache,
    weight_values,
    )
from chevah.cylinder_wiener.transform import TransformParams, forward_points


METHODS = ('newton', 'lbfgs')

# Armijo sufficient decrease constant.
ARMIJO = 1e-4


class SolverException(Exception):
    """
    Generic solver exception.
    """
    def __init__(self, message):
        super().__init__(message)
        self.message = message


class MaxIterations(SolverException):
    """
    The solver stopped before reaching the tolerance.

    The best iterate and its report are kept on the exception.
    """
    def __init__(self, message, field, report):
        super().__init__(message)
        self.field = field
        self.report = report


@dataclass
class DiscreteField:
    """
    Values on the degrees of freedom of a cylinder or ball grid.
    """
    grid: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.size,):
            raise ValueError(
                f'Field has shape {self.values.shape}, '
                f'grid has {self.grid.size} nodes.')
        if not np.all(np.isfinite(self.values)):
            raise ValueError('Field values must be finite.')

    @property
    def points(self):
        return self.grid.points

    def max_norm(self, mask=None):
        values = self.values if mask is None else self.values[mask]
        return float(np.max(np.abs(values))) if len(values) else 0.0


@dataclass
class SolveReport:
    energy: float
    iterations: int
    gradient_norm: float
    threshold: float
    wall_time: float
    converged: bool
    hit_max_iterations: bool
    method: str
    energy_history: list = field(default_factory=list)

    def to_dict(self):
        return {
            'energy': self.energy,
            'iterations': self.iterations,
            'gradient_norm': self.gradient_norm,
            'threshold': self.threshold,
            'wall_time': self.wall_time,
            'converged': self.converged,
            'hit_max_iterations': self.hit_max_iterations,
            'method': self.method,
            'energy_history': list(self.energy_history),
            }


@dataclass(frozen=True)
class SolverSettings:
    """
    Knobs shared by every minimization.

    With `epsilon=None` the regularization is 1e-8 times the data scale.
    """
    epsilon: float = None
    tolerance: float = 1e-8
    max_iterations: int = 500
    method: str = 'newton'
    continuation: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(
                f'Unknown solver method {self.method}, use one of {METHODS}.')
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError(f'epsilon must be >= 0, got {self.epsilon}.')
        if not self.tolerance > 0:
            raise ValueError('Tolerance must be positive.')
        if self.max_iterations < 1:
            raise ValueError('max_iterations must be >= 1.')

    def epsilon_for(self, values):
        if self.epsilon is not None:
            return self.epsilon
        values = np.asarray(values, dtype=float)
        scale = float(np.max(np.abs(values))) if values.size else 0.0
        return 1e-8 * (scale or 1.0)


@dataclass
class PEnergyProblem:
    """
    A convex discrete p-energy minimization with Dirichlet constraints.

    `operator` maps the degrees of freedom to the stacked per-simplex
    gradients and `weights` holds one weighted volume per simplex.
    `values` is only read on the `dirichlet` nodes.
    """
    p: float
    grid: object
    operator: object
    weights: np.ndarray
    dirichlet: np.ndarray
    values: np.ndarray
    epsilon: float = 0.0
    mass: np.ndarray = None
    tolerance: float = 1e-8
    max_iterations: int = 500
    method: str = 'newton'
    continuation: bool = True

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f'Exponent p must be > 1, got {self.p}.')
        if self.epsilon < 0:
            raise ValueError(f'epsilon must be >= 0, got {self.epsilon}.')
        self.dirichlet = np.asarray(self.dirichlet, dtype=bool)
        self.values = np.asarray(self.values, dtype=float).copy()
        size = self.operator.shape[1]
        if self.dirichlet.shape != (size,) or self.values.shape != (size,):
            raise ValueError('Constraint arrays do not match the operator.')
        if not np.all(np.isfinite(self.values[self.dirichlet])):
            raise ValueError('Every dirichlet node needs a finite value.')
        self.values[~self.dirichlet] = 0.0

    @property
    def size(self):
        return self.operator.shape[1]

    @property
    def dimension(self):
        return self.operator.shape[0] // len(self.weights)

    @property
    def free(self):
        return ~self.dirichlet

    def constrained(self, values):
        """
        Copy of `values` with the dirichlet values put back.
        """
        result = np.asarray(values, dtype=float).copy()
        result[self.dirichlet] = self.values[self.dirichlet]
        return result


def _as_values(field):
    if isinstance(field, DiscreteField):
        return field.values
    return np.asarray(field, dtype=float)


def _gradients(problem, u):
    g = (problem.operator @ u).reshape(-1, problem.dimension)
    s = np.einsum('ij,ij->i', g, g) + problem.epsilon ** 2
    return g, s


def _power(s, exponent):
    """
    s ** exponent with 0 where s is 0.
    """
    result = np.zeros_like(s)
    positive = s > 0
    result[positive] = s[positive] ** exponent
    return result


def _energy(problem, u):
    g, s = _gradients(problem, u)
    total = float(np.sum(problem.weights * _power(s, problem.p / 2.0)))
    if problem.mass is not None:
        t = u * u + problem.epsilon ** 2
        total += float(np.sum(problem.mass * _power(t, problem.p / 2.0)))
    return total


def _full_gradient(problem, u):
    p = problem.p
    g, s = _gradients(problem, u)
    flux = (problem.weights * p * _power(s, p / 2.0 - 1.0))[:, None] * g
    result = problem.operator.T @ flux.ravel()
    if problem.mass is not None:
        t = u * u + problem.epsilon ** 2
        result = result + problem.mass * p * _power(t, p / 2.0 - 1.0) * u
    return result


def p_energy(problem, field):
    """
    Discrete p-energy of a field.
    """
    return _energy(problem, _as_values(field))


def p_energy_gradient(problem, field):
    """
    First variation of the p-energy, zero on dirichlet nodes.
    """
    result = _full_gradient(problem, _as_values(field))
    result[problem.dirichlet] = 0.0
    return DiscreteField(problem.grid, result)


def _hessian(problem, u, free_operator):
    p = problem.p
    d = problem.dimension
    g, s = _gradients(problem, u)
    # Keeps the p < 2 Hessian finite where the gradient vanishes.
    floor = 1e-24 * max(float(np.max(s)), 1e-300)
    s = np.maximum(s, floor)
    scale = problem.weights * p * s ** (p / 2.0 - 2.0)
    blocks = scale[:, None, None] * (
        s[:, None, None] * np.eye(d)[None, :, :]
        + (p - 2.0) * g[:, :, None] * g[:, None, :])
    count = len(s)
    rows = np.broadcast_to(
        (np.arange(count)[:, None] * d + np.arange(d))[:, :, None],
        blocks.shape)
    columns = np.broadcast_to(
        (np.arange(count)[:, None] * d + np.arange(d))[:, None, :],
        blocks.shape)
    middle = sparse.coo_matrix(
        (blocks.ravel(), (rows.ravel(), columns.ravel())),
        shape=(count * d, count * d)).tocsr()
    result = (free_operator.T @ middle @ free_operator).tocsc()
    if problem.mass is not None:
        free = problem.free
        t = np.maximum(u[free] ** 2 + problem.epsilon ** 2, floor)
        diagonal = problem.mass[free] * p * t ** (p / 2.0 - 2.0) * (
            t + (p - 2.0) * u[free] ** 2)
        result = result + sparse.diags(diagonal)
    diagonal = result.diagonal()
    shift = 1e-12 * max(float(np.max(np.abs(diagonal))), 1e-300)
    return (result + shift * sparse.identity(result.shape[0])).tocsc()


def _threshold(problem):
    """
    Gradient norm at the zero extension of the data, the scale of the
    convergence test.
    """
    reference = _full_gradient(problem, problem.values)[problem.free]
    scale = float(np.max(np.abs(reference))) if reference.size else 0.0
    if scale > 0:
        return problem.tolerance * scale
    return problem.tolerance


def _newton(problem, u, threshold):
    free = problem.free
    free_operator = problem.operator.tocsc()[:, free]
    energy = _energy(problem, u)
    history = [energy]
    converged = False
    iteration = 0
    gradient_norm = math.inf
    for iteration in range(problem.max_iterations + 1):
        gradient = _full_gradient(problem, u)[free]
        gradient_norm = float(np.max(np.abs(gradient)))
        logging.debug(
            f'Newton iteration {iteration}: energy {energy:.12g}, '
            f'gradient {gradient_norm:.3g}.')
        if gradient_norm <= threshold:
            converged = True
            break
        if iteration == problem.max_iterations:
            break
        hessian = _hessian(problem, u, free_operator)
        direction = splu(hessian).solve(-gradient)
        slope = float(np.dot(gradient, direction))
        if not slope < 0:
            direction = -gradient
            slope = -float(np.dot(gradient, gradient))

        step = 1.0
        slack = 16 * np.finfo(float).eps * abs(energy)
        while True:
            trial = u.copy()
            trial[free] += step * direction
            trial_energy = _energy(problem, trial)
            if trial_energy <= energy + ARMIJO * step * slope + slack:
                break
            step *= 0.5
            if step < 1e-12:
                trial = None
                break
        if trial is None:
            logging.debug('Line search stalled.')
            break
        u = trial
        energy = trial_energy
        history.append(energy)
    return u, iteration, gradient_norm, converged, history


def _lbfgs(problem, u, threshold):
    free = problem.free
    base = u.copy()
    history = [_energy(problem, u)]

    def objective(values):
        current = base.copy()
        current[free] = values
        return (
            _energy(problem, current),
            _full_gradient(problem, current)[free],
            )

    def record(values):
        history.append(objective(values)[0])

    result = minimize(
        objective, u[free], jac=True, method='L-BFGS-B', callback=record,
        options={
            'maxiter': problem.max_iterations,
            'gtol': threshold,
            'ftol': 0.0,
            'maxcor': 20,
            })
    u = base.copy()
    u[free] = result.x
    gradient_norm = float(np.max(np.abs(_full_gradient(problem, u)[free])))
    return (
        u, int(result.nit), gradient_norm, gradient_norm <= threshold,
        history)


def solve(problem, initial=None, strict=False):
    """
    Minimize the p-energy of `problem`.

    Start from `initial` or, for p != 2, from the p = 2 minimizer with the
    same constraints. Return (DiscreteField, SolveReport). When the
    tolerance is not reached the best iterate is returned with
    `converged=False`, or MaxIterations is raised when `strict`.
    """
    start = time.perf_counter()
    if not np.any(problem.free):
        field = DiscreteField(problem.grid, problem.values.copy())
        report = SolveReport(
            energy=_energy(problem, field.values), iterations=0,
            gradient_norm=0.0, threshold=0.0,
            wall_time=time.perf_counter() - start, converged=True,
            hit_max_iterations=False, method=problem.method,
            energy_history=[])
        return field, report

    if initial is None and problem.p != 2 and problem.continuation:
        logging.debug(f'Starting p={problem.p} from the p=2 minimizer.')
        initial, _ = solve(replace(problem, p=2.0))
    if initial is None:
        u = problem.values.copy()
    else:
        u = problem.constrained(_as_values(initial))

    threshold = _threshold(problem)
    if problem.method == 'newton':
        u, iterations, gradient_norm, converged, history = _newton(
            problem, u, threshold)
    else:
        u, iterations, gradient_norm, converged, history = _lbfgs(
            problem, u, threshold)

    field = DiscreteField(problem.grid, u)
    report = SolveReport(
        energy=_energy(problem, u),
        iterations=iterations,
        gradient_norm=gradient_norm,
        threshold=threshold,
        wall_time=time.perf_counter() - start,
        converged=converged,
        hit_max_iterations=(
            not converged and iterations >= problem.max_iterations),
        method=problem.method,
        energy_history=history,
        )
    logging.info(
        f'Solved p={problem.p} on {problem.size} nodes with '
        f'{problem.method}: energy {report.energy:.10g} after '
        f'{iterations} iterations.')
    if not converged:
        message = (
            f'No convergence after {iterations} iterations: gradient '
            f'{gradient_norm:.3g} above {threshold:.3g}.')
        logging.warning(message)
        if strict:
            raise MaxIterations(message, field, report)
    return field, report


def cylinder_problem(grid, p, dirichlet, values, settings=None, mass=False):
    """
    Unweighted p-energy problem on a cylinder grid.
    """
    settings = settings or SolverSettings()
    mesh = grid.mesh
    return PEnergyProblem(
        p=p,
        grid=grid,
        operator=mesh.gradient_operator(),
        weights=mesh.volumes,
        dirichlet=dirichlet,
        values=values,
        epsilon=settings.epsilon_for(np.asarray(values)[dirichlet]),
        mass=mesh.lumped_mass() if mass else None,
        tolerance=settings.tolerance,
        max_iterations=settings.max_iterations,
        method=settings.method,
        continuation=settings.continuation,
        )


def ball_problem(grid, ctx, dirichlet, values, settings=None,
                 weighting='operator'):
    """
    Ball p-energy problem.

    With `weighting='operator'` the energy density is |dT* P grad u|^p /
    |J_T|, whose first variation is the operator A; its value is twice the
    cylinder energy of u o T. With `weighting='weight'` the density is
    w(xi) |grad u|^p.
    """
    settings = settings or SolverSettings()
    mesh = grid.mesh
    if weighting == 'operator':
        cache = build_operator_cache(ctx, mesh)
        operator = mesh.gradient_operator(cache.metric)
        weights = mesh.volumes * cache.inverse_jacobian
    elif weighting == 'weight':
        operator = mesh.gradient_operator()
        weights = mesh.volumes * weight_values(ctx, mesh.centroids)
    else:
        raise ValueError(f'Unknown ball weighting: {weighting}.')
    return PEnergyProblem(
        p=ctx.p,
        grid=grid,
        operator=operator,
        weights=weights,
        dirichlet=dirichlet,
        values=values,
        epsilon=settings.epsilon_for(np.asarray(values)[dirichlet]),
        tolerance=settings.tolerance,
        max_iterations=settings.max_iterations,
        method=settings.method,
        continuation=settings.continuation,
        )


@dataclass(frozen=True)
class BoundaryData:
    """
    Boundary values f as a function of cylinder points of shape (m, n).
    """
    function: object
    axisymmetric: bool = True
    description: str = ''

    def __call__(self, points):
        points = np.atleast_2d(points)
        values = np.asarray(self.function(points), dtype=float)
        return np.broadcast_to(values, (len(points),)).copy()


def constant_data(value):
    return BoundaryData(
        lambda points: np.full(len(points), float(value)),
        description=f'constant:{value}')


def axis_mode_data():
    """
    cos(pi (x_1 + 1) / 2), the first Neumann mode of the cross-section.
    """
    return BoundaryData(
        lambda points: np.cos(math.pi * (points[:, 0] + 1.0) / 2.0),
        axisymmetric=False, description='axis-mode')


def step_data(value):
    """
    0 on the base plate and `value` on the rest of the obstacle.
    """
    return BoundaryData(
        lambda points: np.where(
            points[:, -1] <= ROUND_OFF, 0.0, float(value)),
        description=f'step:{value}')


def table_data(points, values, lipschitz=None):
    """
    McShane extension of tabulated boundary values.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float)
    if lipschitz is None:
        lipschitz = lipschitz_constant(points, values)
    return BoundaryData(
        lambda targets: mcshane_extend(points, values, lipschitz, targets),
        axisymmetric=False, description='table')


def default_truncation(F, kappa=1.0):
    """
    Truncation length 2 * top(F) + 10 / kappa for direct cylinder solves.
    """
    extent = F.axial_extent()
    top = extent[1] if extent else 0.0
    return 2.0 * top + 10.0 / kappa


def solve_cylinder_mixed(
        F, data, p, L=None, resolution=None, settings=None, kind='auto',
        kappa=1.0, lateral_dirichlet=False, initial=None):
    """
    Solve the mixed problem on the truncated cylinder 0 <= x_n <= L.

    The Neumann condition on the lateral boundary and the far end is the
    natural one: those nodes are free unknowns. With `lateral_dirichlet`
    the data is imposed on the whole lateral boundary as well.
    """
    resolution = resolution or Resolution()
    if L is None:
        L = default_truncation(F, kappa)
    grid = build_cylinder_grid(
        F.n, L, resolution, F, kind=kind,
        axisymmetric=data.axisymmetric)
    dirichlet = grid.dirichlet.copy()
    if lateral_dirichlet:
        dirichlet |= grid.lateral
    values = np.zeros(grid.size)
    values[dirichlet] = data(grid.cylinder_points()[dirichlet])
    problem = cylinder_problem(grid, p, dirichlet, values, settings)
    return solve(problem, initial=initial)


def lift_boundary_data(params, grid, data):
    """
    Ball values f~ = f o T^-1 on the nodes of a ball grid, copied to the
    lower half through the reflection. The origin gets 0.
    """
    points = pull_back_points(params, grid)
    values = np.zeros(grid.size)
    regular = np.ones(grid.size, dtype=bool)
    regular[grid.origin] = False
    values[regular] = data(points[regular])
    lower = ~grid.upper
    values[lower] = values[grid.reflection[lower]]
    values[grid.origin] = 0.0
    return values


def solve_ball_dirichlet(
        params, F, data, p, resolution=None, settings=None, initial=None):
    """
    Solve div A(xi, grad u) = 0 in B_1 minus F~ with u = f~ on F~.

    The origin is a free node.
    """
    resolution = resolution or BallResolution()
    if params.n != F.n:
        raise GeometryException(
            f'Transform dimension {params.n} differs from obstacle {F.n}.')
    grid = build_ball_grid(params.n, resolution)
    mask = transform_obstacle(params, F, grid)
    mask[grid.origin] = False
    values = lift_boundary_data(params, grid, data)
    ctx = OperatorContext(params=params, p=p)
    problem = ball_problem(grid, ctx, mask, values, settings)
    return solve(problem, initial=initial)


@dataclass
class ComparisonReport:
    violations: np.ndarray
    max_excess: float
    tolerance: float

    @property
    def passed(self):
        return len(self.violations) == 0

    def to_dict(self):
        return {
            'violations': [int(i) for i in self.violations],
            'max_excess': self.max_excess,
            'tolerance': self.tolerance,
            'passed': self.passed,
            }


def comparison_check(u1, u2, tolerance=1e-8):
    """
    Nodes where u1 > u2 + tolerance.
    """
    if u1.grid is not u2.grid and u1.grid.size != u2.grid.size:
        raise SolverException('Fields live on different grids.')
    excess = u1.values - u2.values
    violations = np.flatnonzero(excess > tolerance)
    return ComparisonReport(
        violations=violations,
        max_excess=float(np.max(excess)) if excess.size else 0.0,
        tolerance=tolerance)


@dataclass
class LimitEstimate:
    mean: float
    oscillation: float
    count: int

    def to_dict(self):
        return {
            'mean': self.mean,
            'oscillation': self.oscillation,
            'count': self.count,
            }


def limit_at_infinity(ball_solution, shell_radius):
    """
    Mean and oscillation of a ball field on the nodes with
    |xi| <= shell_radius.
    """
    if not shell_radius > 0:
        raise ValueError(f'Shell radius must be positive: {shell_radius}.')
    grid = ball_solution.grid
    inside = grid.radius <= shell_radius
    values = ball_solution.values[inside]
    return LimitEstimate(
        mean=float(np.mean(values)),
        oscillation=float(np.max(values) - np.min(values)),
        count=int(np.sum(inside)))


def evaluate_on_cylinder(params, ball_field, points):
    """
    Values of u~ o T at cylinder points of shape (m, n).
    """
    grid = ball_field.grid
    xis = forward_points(params, np.atleast_2d(points))
    reference = grid.reference_points(xis)
    return grid.mesh.interpolator(ball_field.values)(reference)


def compare_formulations(params, cylinder_field, ball_field, band=(0.0, 4.0)):
    """
    Max difference between a cylinder field and u~ o T on a band.
    """
    grid = cylinder_field.grid
    mask = grid.band(*band)
    points = grid.cylinder_points()[mask]
    lifted = evaluate_on_cylinder(params, ball_field, points)
    difference = np.abs(cylinder_field.values[mask] - lifted)
    scale = max(cylinder_field.max_norm(mask), 1e-300)
    result = {
        'band': list(band),
        'nodes': int(np.sum(mask)),
        'max_difference': float(np.max(difference)) if difference.size else 0.0,
        }
    result['relative'] = result['max_difference'] / scale
    return result


def _gradient_vectors(mesh, values, metric=None):
    g = mesh.gradient_operator(metric) @ values
    return g.reshape(-1, mesh.dimension)


def cylinder_norm(field, p, kappa=1.0):
    """
    Discrete sum of |u|^p e^{-p kappa x_n} + |grad u|^p over the grid.
    """
    mesh = field.grid.mesh
    values = field.values
    damping = np.exp(-p * kappa * field.grid.axial)
    g = _gradient_vectors(mesh, values)
    return float(
        np.sum(mesh.lumped_mass() * np.abs(values) ** p * damping)
        + np.sum(mesh.volumes * np.linalg.norm(g, axis=1) ** p))


def ball_norm(field, p):
    """
    Discrete sum of (|u|^p + |grad u|^p) w(xi) over a ball grid.
    """
    grid = field.grid
    mesh = grid.mesh
    ctx = OperatorContext(TransformParams(n=grid.n), p)
    g = _gradient_vectors(mesh, field.values)
    return float(
        np.sum(
            mesh.lumped_mass() * weight_values(ctx, grid.points)
            * np.abs(field.values) ** p)
        + np.sum(
            mesh.volumes * weight_values(ctx, mesh.centroids)
            * np.linalg.norm(g, axis=1) ** p))


def cylinder_flux_pairing(u, phi, p):
    """
    Discrete integral of |grad u|^{p-2} grad u . grad phi.
    """
    mesh = u.grid.mesh
    gu = _gradient_vectors(mesh, u.values)
    gphi = _gradient_vectors(mesh, phi.values)
    length = np.linalg.norm(gu, axis=1)
    factor = np.zeros_like(length)
    moving = length > 0
    factor[moving] = length[moving] ** (p - 2.0)
    return float(np.sum(
        mesh.volumes * factor * np.einsum('ij,ij->i', gu, gphi)))


def ball_flux_pairing(ctx, u, phi):
    """
    Discrete integral of A(xi, grad u) . grad phi over the upper
    half-ball, taken as half of the integral over the whole ball.
    """
    mesh = u.grid.mesh
    gu = _gradient_vectors(mesh, u.values)
    gphi = _gradient_vectors(mesh, phi.values)
    flux = a_operator_points(ctx, mesh.centroids, gu)
    return 0.5 * float(np.sum(
        mesh.volumes * np.einsum('ij,ij->i', flux, gphi)))
