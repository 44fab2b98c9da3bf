"""
The change of variables between the half-cylinder and the unit ball.

The half-cylinder G = B' x (0, oo) is sent to the punctured upper unit
half-ball. The point at infinity of G is sent to the origin, the base
B' x {0} to the upper unit half-sphere and the lateral boundary to the
equator xi_n = 0.

Functions taking a single point work on `CylPoint` / `BallPoint`.
The `*_points` variants work on arrays of shape (m, n) and are the ones
used by the grids.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np


# Below this norm of xi' a point with xi_n <= 0 is on the excluded ray.
EXCLUDED_RAY_TOLERANCE = 1e-14


class TransformException(Exception):
    """
    Generic transform exception.
    """
    def __init__(self, message):
        super().__init__(message)
        self.message = message


class ExcludedRay(TransformException):
    """
    Raised when the inverse map is asked for a point on the ray
    {xi' = 0, xi_n <= 0}, where it is undefined.
    """


@dataclass(frozen=True)
class TransformParams:
    n: int = 2
    kappa: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f'Dimension must be an integer >= 2, got {self.n}.')
        if not self.kappa > 0:
            raise ValueError(f'kappa must be positive, got {self.kappa}.')


@dataclass(frozen=True)
class CylPoint:
    x_prime: tuple
    x_n: float

    def as_array(self):
        return np.array(tuple(self.x_prime) + (self.x_n,), dtype=float)

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=float)
        return cls(x_prime=tuple(values[:-1]), x_n=float(values[-1]))


@dataclass(frozen=True)
class BallPoint:
    xi: tuple

    def as_array(self):
        return np.array(self.xi, dtype=float)

    @classmethod
    def from_array(cls, values):
        return cls(xi=tuple(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class JacobianData:
    """
    Partials dT[k, j] = d xi_k / d x_j and the absolute Jacobian.
    """
    dT: np.ndarray
    detAbs: float


@dataclass
class BoundsReport:
    """
    Measured constants of the two-sided distortion estimate of T.
    """
    kappa: float
    upper_constant: float
    upper_max: float = 0.0
    lower_min: float = math.inf
    upper_violations: int = 0
    lower_violations: int = 0
    checked: int = 0
    skipped: int = 0
    adjoint_ratio: tuple = (math.inf, 0.0)
    differential_ratio: tuple = (math.inf, 0.0)
    jacobian_ratio: tuple = (math.inf, 0.0)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.upper_violations == 0 and self.lower_violations == 0

    def to_dict(self):
        return {
            'kappa': self.kappa,
            'upper_constant': self.upper_constant,
            'upper_max': self.upper_max,
            'lower_min': self.lower_min,
            'upper_violations': self.upper_violations,
            'lower_violations': self.lower_violations,
            'checked': self.checked,
            'skipped': self.skipped,
            'adjoint_ratio': list(self.adjoint_ratio),
            'differential_ratio': list(self.differential_ratio),
            'jacobian_ratio': list(self.jacobian_ratio),
            'passed': self.passed,
            }


def forward_points(params, points):
    """
    Apply T to an (m, n) array of cylinder points.
    """
    points = np.asarray(points, dtype=float)
    x_prime = points[..., :-1]
    squared = np.sum(x_prime * x_prime, axis=-1)
    scale = np.exp(-params.kappa * points[..., -1])
    denominator = 1.0 + squared
    result = np.empty_like(points)
    result[..., :-1] = (2.0 * scale / denominator)[..., None] * x_prime
    result[..., -1] = scale * (1.0 - squared) / denominator
    return result


def inverse_points(params, xis):
    """
    Apply the inverse of T to an (m, n) array of ball points.

    Raise ExcludedRay if any point is on the excluded ray or is the origin.
    """
    xis = np.asarray(xis, dtype=float)
    xi_prime = xis[..., :-1]
    prime_norm = np.sqrt(np.sum(xi_prime * xi_prime, axis=-1))
    excluded = (prime_norm < EXCLUDED_RAY_TOLERANCE) & (xis[..., -1] <= 0)
    if np.any(excluded):
        bad = xis[excluded][0] if xis.ndim > 1 else xis
        raise ExcludedRay(
            f'T^-1 is undefined at {tuple(np.atleast_1d(bad))}: '
            f'point is on the ray xi\'=0, xi_n<=0.')
    norm = np.sqrt(prime_norm ** 2 + xis[..., -1] ** 2)
    result = np.empty_like(xis)
    result[..., :-1] = xi_prime / (norm + xis[..., -1])[..., None]
    result[..., -1] = -np.log(norm) / params.kappa
    return result


def jacobian_determinants(params, points):
    """
    Closed form |J_T(x)| = kappa e^{-kappa n x_n} (2 / (1 + |x'|^2))^{n-1}.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[-1]
    squared = np.sum(points[..., :-1] ** 2, axis=-1)
    return (
        params.kappa
        * np.exp(-params.kappa * n * points[..., -1])
        * (2.0 / (1.0 + squared)) ** (n - 1)
        )


def differential_points(params, points):
    """
    Return (dT, detAbs) for an (m, n) array of cylinder points.

    dT has shape (m, n, n) with dT[:, k, j] = d xi_k / d x_j.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    count, n = points.shape
    kappa = params.kappa
    x_prime = points[:, :-1]
    squared = np.sum(x_prime * x_prime, axis=1)
    denominator = 1.0 + squared
    scale = np.exp(-kappa * points[:, -1])

    dT = np.zeros((count, n, n))
    identity = np.eye(n - 1)
    outer = x_prime[:, :, None] * x_prime[:, None, :]
    dT[:, :-1, :-1] = (2.0 * scale / denominator)[:, None, None] * (
        identity[None] - 2.0 * outer / denominator[:, None, None])
    dT[:, :-1, -1] = (
        -kappa * (2.0 * scale / denominator)[:, None] * x_prime)
    dT[:, -1, :-1] = (
        -4.0 * (scale / denominator ** 2)[:, None] * x_prime)
    dT[:, -1, -1] = -kappa * scale * (1.0 - squared) / denominator
    return dT, jacobian_determinants(params, points)


def forward_map(params, x):
    """
    Return T(x) for a single cylinder point.
    """
    return BallPoint.from_array(forward_points(params, x.as_array()))


def inverse_map(params, xi):
    """
    Return T^-1(xi) for a single ball point.
    """
    return CylPoint.from_array(inverse_points(params, xi.as_array()))


def differential(params, x):
    """
    Return the Jacobian matrix and absolute Jacobian of T at `x`.
    """
    dT, det = differential_points(params, x.as_array()[None, :])
    return JacobianData(dT=dT[0], detAbs=float(det[0]))


def reflect_points(xis):
    """
    Apply P(xi', xi_n) = (xi', -xi_n) to an array of points.
    """
    result = np.array(xis, dtype=float, copy=True)
    result[..., -1] = -result[..., -1]
    return result


def reflect(xi):
    return BallPoint.from_array(reflect_points(xi.as_array()))


def sample_cylinder_points(rng, count, n, max_height, min_height=0.0):
    """
    Return `count` points uniformly distributed in closed B' x [min, max].
    """
    direction = rng.normal(size=(count, n - 1))
    norms = np.linalg.norm(direction, axis=1)
    norms[norms == 0] = 1.0
    radius = rng.uniform(size=count) ** (1.0 / (n - 1))
    points = np.empty((count, n))
    points[:, :-1] = direction / norms[:, None] * radius[:, None]
    points[:, -1] = rng.uniform(min_height, max_height, size=count)
    return points


def _bounds_denominator(params, x, y):
    """
    Denominator of the lower distortion bound, with |y'| <= |x'|.
    """
    x_norm = np.linalg.norm(x[:, :-1], axis=1)
    y_norm = np.linalg.norm(y[:, :-1], axis=1)
    return (1.0 + y_norm ** 2) * (0.5 + x_norm) + 1.0 / params.kappa


def geometric_bounds_check(params, samples):
    """
    Measure the distortion of T on a list of (x, y) cylinder point pairs.

    Pairs are taken as arrays of shape (m, 2, n) or as a list of
    (CylPoint, CylPoint) tuples.
    The upper ratio is |T(x)-T(y)| / (e^{-kappa min(x_n, y_n)} |x-y|) and
    must stay below 5 + 2 kappa. The lower ratio is
    |T(x)-T(y)| D / (e^{-kappa max(x_n, y_n)} |x-y|) where D is the
    denominator (1 + |y'|^2)(1/2 + |x'|) + 1/kappa, pairs being ordered so
    that |y'| <= |x'|. It must stay above 1.
    """
    pairs = _as_pair_array(samples)
    report = BoundsReport(
        kappa=params.kappa, upper_constant=5.0 + 2.0 * params.kappa)
    if len(pairs) == 0:
        return report

    x = pairs[:, 0, :].copy()
    y = pairs[:, 1, :].copy()
    swap = (
        np.linalg.norm(y[:, :-1], axis=1) > np.linalg.norm(x[:, :-1], axis=1))
    x[swap], y[swap] = pairs[swap, 1, :], pairs[swap, 0, :]

    distance = np.linalg.norm(x - y, axis=1)
    degenerate = distance == 0
    report.skipped = int(np.count_nonzero(degenerate))
    x, y, distance = x[~degenerate], y[~degenerate], distance[~degenerate]
    report.checked = len(distance)
    if report.checked == 0:
        return report

    image_distance = np.linalg.norm(
        forward_points(params, x) - forward_points(params, y), axis=1)
    low = np.minimum(x[:, -1], y[:, -1])
    high = np.maximum(x[:, -1], y[:, -1])
    upper = image_distance / (np.exp(-params.kappa * low) * distance)
    lower = (
        image_distance * _bounds_denominator(params, x, y)
        / (np.exp(-params.kappa * high) * distance)
        )
    # Relative slack for round-off on nearly coincident pairs.
    slack = 1e-9
    report.upper_max = float(np.max(upper))
    report.lower_min = float(np.min(lower))
    report.upper_violations = int(np.count_nonzero(
        upper > report.upper_constant * (1.0 + slack)))
    report.lower_violations = int(np.count_nonzero(lower < 1.0 - slack))

    # |dT* q| ~ |dT q| ~ e^{-kappa x_n} |q| and |J_T| ~ e^{-kappa n x_n}.
    directions = (x - y) / distance[:, None]
    dT, det = differential_points(params, x)
    scale = np.exp(-params.kappa * x[:, -1])
    adjoint = np.linalg.norm(
        np.einsum('mkj,mk->mj', dT, directions), axis=1) / scale
    straight = np.linalg.norm(
        np.einsum('mkj,mj->mk', dT, directions), axis=1) / scale
    jacobian = det / scale ** params.n
    report.adjoint_ratio = (float(adjoint.min()), float(adjoint.max()))
    report.differential_ratio = (float(straight.min()), float(straight.max()))
    report.jacobian_ratio = (float(jacobian.min()), float(jacobian.max()))

    logging.debug(
        f'Distortion check on {report.checked} pairs: '
        f'upper max {report.upper_max:.4g}, lower min {report.lower_min:.4g}.')
    return report


def _as_pair_array(samples):
    if isinstance(samples, np.ndarray):
        return samples.reshape(-1, 2, samples.shape[-1]).astype(float)
    pairs = [(x.as_array(), y.as_array()) for x, y in samples]
    if not pairs:
        return np.zeros((0, 2, 2))
    return np.array(pairs, dtype=float)


def finite_difference_differential(params, points, step=1e-6):
    """
    Central finite differences of forward_points, shape (m, n, n).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    count, n = points.shape
    result = np.empty((count, n, n))
    for j in range(n):
        shift = np.zeros(n)
        shift[j] = step
        result[:, :, j] = (
            forward_points(params, points + shift)
            - forward_points(params, points - shift)
            ) / (2.0 * step)
    return result


def run_transform_checks(params, samples=10000, seed=0, max_height=20.0):
    """
    Run the full verification suite of the map and return a report dict.

    The report has a `passed` key which is True only when every check
    holds within its tolerance.
    """
    rng = np.random.default_rng(seed)
    n = params.n
    points = sample_cylinder_points(rng, samples, n, max_height)

    back = inverse_points(params, forward_points(params, points))
    round_trip = float(np.max(np.abs(back - points)))

    image_norm = np.linalg.norm(forward_points(params, points), axis=1)
    expected_norm = np.exp(-params.kappa * points[:, -1])
    norm_error = float(np.max(np.abs(image_norm - expected_norm) / expected_norm))

    fd_points = points[:min(samples, 1000)]
    dT, det = differential_points(params, fd_points)
    fd = finite_difference_differential(params, fd_points)
    fd_error = float(np.max(
        np.abs(dT - fd) / np.maximum(np.abs(fd), np.exp(
            -params.kappa * fd_points[:, -1])[:, None, None])))
    det_error = float(np.max(
        np.abs(np.abs(np.linalg.det(dT)) - det) / det))

    axis = np.zeros((50, n))
    axis[:, -1] = np.linspace(0.0, max_height, 50)
    axis_expected = (
        params.kappa * 2.0 ** (n - 1) * np.exp(-params.kappa * n * axis[:, -1]))
    axis_error = float(np.max(
        np.abs(jacobian_determinants(params, axis) - axis_expected)
        / axis_expected))

    lateral = sample_cylinder_points(rng, 200, n, max_height)
    lateral[:, :-1] /= np.maximum(
        np.linalg.norm(lateral[:, :-1], axis=1), 1e-300)[:, None]
    equator_error = float(np.max(np.abs(forward_points(params, lateral)[:, -1])))
    base = sample_cylinder_points(rng, 200, n, 0.0)
    sphere_error = float(np.max(
        np.abs(np.linalg.norm(forward_points(params, base), axis=1) - 1.0)))

    pairs = np.stack([
        sample_cylinder_points(rng, samples, n, max_height),
        sample_cylinder_points(rng, samples, n, max_height),
        ], axis=1)
    bounds = geometric_bounds_check(params, pairs)

    checks = {
        'round_trip': round_trip < 1e-9,
        'norm': norm_error < 1e-12,
        'finite_difference': fd_error < 1e-5,
        'determinant': det_error < 1e-10,
        'axis_jacobian': axis_error < 1e-10,
        'equator': equator_error < 1e-12,
        'sphere': sphere_error < 1e-12,
        'bounds': bounds.passed,
        }
    for name, passed in checks.items():
        if not passed:
            logging.error(f'Transform check "{name}" failed.')

    return {
        'n': n,
        'kappa': params.kappa,
        'samples': samples,
        'seed': seed,
        'round_trip_error': round_trip,
        'norm_error': norm_error,
        'finite_difference_error': fd_error,
        'determinant_error': det_error,
        'axis_jacobian_error': axis_error,
        'equator_error': equator_error,
        'sphere_error': sphere_error,
        'bounds': bounds.to_dict(),
        'checks': checks,
        'passed': all(checks.values()),
        }
