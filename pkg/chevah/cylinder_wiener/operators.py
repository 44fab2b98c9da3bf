"""
The transformed operator A(xi, q) on the unit ball and its weight.

For xi = T(x) in the upper half-ball

    A(xi, q) = |dT*(x) q|^{p-2} |J_T(x)|^{-1} dT(x) dT*(x) q,

extended to the lower half by A(xi, q) = P A(P xi, P q) and set to zero on
the equator. The operator is degenerate elliptic with weight
w(xi) = |xi|^{p-n}.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma

from chevah.cylinder_wiener.transform import (
    TransformParams,
    differential_points,
    inverse_points,
    reflect_points,
    )


class OperatorException(Exception):
    """
    Generic operator exception.
    """
    def __init__(self, message):
        super().__init__(message)
        self.message = message


class UndefinedAtOrigin(OperatorException):
    """
    A(xi, q) has no value at xi = 0.
    """


@dataclass(frozen=True)
class OperatorContext:
    params: TransformParams
    p: float

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f'Exponent p must be > 1, got {self.p}.')

    @property
    def n(self):
        return self.params.n


@dataclass(frozen=True)
class WeightValue:
    """
    Value of w(xi) = |xi|^{p-n}, the density of the measure d mu = w d xi.
    """
    value: float


@dataclass
class EllipticityReport:
    count: int
    coercive_ratio: tuple
    growth_ratio: tuple

    @property
    def bounded(self):
        low, high = self.coercive_ratio
        growth_low, growth_high = self.growth_ratio
        return (
            self.count > 0
            and 0 < low <= high < math.inf
            and 0 < growth_low <= growth_high < math.inf
            )

    def to_dict(self):
        return {
            'count': self.count,
            'coercive_ratio': list(self.coercive_ratio),
            'growth_ratio': list(self.growth_ratio),
            'bounded': self.bounded,
            }


def unit_ball_volume(n):
    """
    omega_n, the volume of the unit ball of R^n.
    """
    return math.pi ** (n / 2.0) / gamma(n / 2.0 + 1.0)


def sphere_area(n):
    """
    n omega_n, the surface area of the unit sphere in R^n.
    """
    return n * unit_ball_volume(n)


def weight_values(ctx, xis):
    """
    Vectorized w(xi) = |xi|^{p-n} with w(0) = 0.
    """
    xis = np.asarray(xis, dtype=float)
    norm = np.linalg.norm(xis, axis=-1)
    result = np.zeros_like(norm)
    positive = norm > 0
    result[positive] = norm[positive] ** (ctx.p - ctx.n)
    return result


def weight(ctx, xi):
    return WeightValue(value=float(weight_values(ctx, xi.as_array())))


def weight_ball_integral(ctx, alpha, r):
    """
    Closed form of the integral of w^alpha over the ball B_r.

    Equal to n omega_n / (n + alpha (p - n)) r^{n + alpha (p - n)} and
    infinite when n + alpha (p - n) <= 0.
    """
    if not r > 0:
        raise ValueError(f'Radius must be positive, got {r}.')
    exponent = ctx.n + alpha * (ctx.p - ctx.n)
    if exponent <= 0:
        return math.inf
    return sphere_area(ctx.n) / exponent * r ** exponent


def upper_half_metrics(ctx, xis):
    """
    Return (dT*, 1/|J_T|) at T^-1(xi) for points in the upper half-ball,
    with the lower half handled through the reflection.

    The first array is the matrix M = dT*(x) P_xi with P_xi = P below the
    equator and the identity above, so the energy density of A is
    |M q|^p / |J_T(x)|.
    """
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    lower = xis[:, -1] < 0
    upper_points = np.where(lower[:, None], reflect_points(xis), xis)
    x = inverse_points(ctx.params, upper_points)
    dT, det = differential_points(ctx.params, x)
    metric = np.transpose(dT, (0, 2, 1)).copy()
    metric[lower, :, -1] = -metric[lower, :, -1]
    return metric, 1.0 / det


def a_operator_points(ctx, xis, qs):
    """
    Vectorized A(xi, q) for (m, n) arrays of points and vectors.
    """
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    if np.any(np.linalg.norm(xis, axis=1) == 0):
        raise UndefinedAtOrigin('A(xi, q) is undefined at xi = 0.')

    result = np.zeros_like(qs)
    off_equator = xis[:, -1] != 0
    if not np.any(off_equator):
        return result

    lower = xis[:, -1] < 0
    upper_points = np.where(lower[:, None], reflect_points(xis), xis)
    upper_qs = np.where(lower[:, None], reflect_points(qs), qs)
    points = upper_points[off_equator]
    vectors = upper_qs[off_equator]

    x = inverse_points(ctx.params, points)
    dT, det = differential_points(ctx.params, x)
    adjoint = np.einsum('mkj,mk->mj', dT, vectors)
    length = np.linalg.norm(adjoint, axis=1)
    factor = np.zeros_like(length)
    moving = length > 0
    factor[moving] = length[moving] ** (ctx.p - 2.0) / det[moving]
    values = factor[:, None] * np.einsum('mkj,mj->mk', dT, adjoint)

    values = np.where(lower[off_equator][:, None], reflect_points(values), values)
    result[off_equator] = values
    return result


def a_operator(ctx, xi, q):
    """
    Return A(xi, q) for a single point and vector.
    """
    return a_operator_points(
        ctx, xi.as_array()[None, :], np.asarray(q, dtype=float)[None, :])[0]


def ellipticity_check(ctx, samples):
    """
    Measure A(xi, q).q / (w |q|^p) and |A(xi, q)| / (w |q|^{p-1}).

    `samples` is a list of (BallPoint, vector) or a pair of (m, n) arrays.
    """
    xis, qs = _as_sample_arrays(samples)
    values = a_operator_points(ctx, xis, qs)
    w = weight_values(ctx, xis)
    q_norm = np.linalg.norm(qs, axis=1)
    coercive = np.einsum('mj,mj->m', values, qs) / (w * q_norm ** ctx.p)
    growth = np.linalg.norm(values, axis=1) / (w * q_norm ** (ctx.p - 1.0))
    report = EllipticityReport(
        count=len(coercive),
        coercive_ratio=(float(coercive.min()), float(coercive.max())),
        growth_ratio=(float(growth.min()), float(growth.max())),
        )
    logging.debug(
        f'Ellipticity on {report.count} samples: '
        f'coercive {report.coercive_ratio}, growth {report.growth_ratio}.')
    return report


def _as_sample_arrays(samples):
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(
            samples[0], np.ndarray):
        return (
            np.atleast_2d(np.asarray(samples[0], dtype=float)),
            np.atleast_2d(np.asarray(samples[1], dtype=float)),
            )
    xis = np.array([xi.as_array() for xi, _ in samples], dtype=float)
    qs = np.array([np.asarray(q, dtype=float) for _, q in samples])
    return xis, qs


def monotonicity_check(ctx, xi, q1, q2):
    """
    Return (A(xi, q1) - A(xi, q2)).(q1 - q2), which is nonnegative.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    points = np.repeat(xi.as_array()[None, :], 2, axis=0)
    values = a_operator_points(ctx, points, np.stack([q1, q2]))
    return float(np.dot(values[0] - values[1], q1 - q2))


def monotonicity_values(ctx, xis, q1s, q2s):
    """
    Vectorized form of monotonicity_check.
    """
    first = a_operator_points(ctx, xis, q1s)
    second = a_operator_points(ctx, xis, q2s)
    return np.einsum('mj,mj->m', first - second, np.asarray(q1s) - q2s)


def spherical_midpoint_rule(n, radius, resolution, grading=1e-6,
                            radial_resolution=None):
    """
    Midpoint rule for the ball B(0, radius) in spherical coordinates.

    Radial cells are geometrically graded towards the center, down to
    `grading` times the radius. There are `radial_resolution` of them,
    4 x `resolution` by default. Return (offsets, weights) with offsets of
    shape (m, n).
    """
    radial = np.concatenate([
        [0.0], radius * np.geomspace(
            grading, 1.0, radial_resolution or 4 * resolution)])
    s_mid = 0.5 * (radial[1:] + radial[:-1])
    s_width = np.diff(radial)

    # Angles: n-2 polar angles in [0, pi] and one azimuth in [0, 2 pi).
    grids = [(s_mid, s_width)]
    for _ in range(n - 2):
        edges = np.linspace(0.0, math.pi, resolution + 1)
        grids.append((0.5 * (edges[1:] + edges[:-1]), np.diff(edges)))
    edges = np.linspace(0.0, 2.0 * math.pi, 2 * resolution + 1)
    grids.append((0.5 * (edges[1:] + edges[:-1]), np.diff(edges)))

    mids = np.meshgrid(*[g[0] for g in grids], indexing='ij')
    widths = np.meshgrid(*[g[1] for g in grids], indexing='ij')
    s = mids[0].ravel()
    angles = [m.ravel() for m in mids[1:]]
    measure = np.prod([w.ravel() for w in widths], axis=0) * s ** (n - 1)

    offsets = np.empty((len(s), n))
    remaining = s.copy()
    # xi_n is along the first polar angle, then recurse on the sphere.
    for k, angle in enumerate(angles[:-1]):
        measure = measure * np.sin(angle) ** (n - 2 - k)
        offsets[:, n - 1 - k] = remaining * np.cos(angle)
        remaining = remaining * np.sin(angle)
    offsets[:, 0] = remaining * np.cos(angles[-1])
    offsets[:, 1] = remaining * np.sin(angles[-1])
    return offsets, measure


def weight_ball_quadrature(ctx, alpha, radius, resolution=64, center=None,
                           radial_resolution=None):
    """
    Numerical integral of w^alpha over B(center, radius).
    """
    offsets, weights = spherical_midpoint_rule(
        ctx.n, radius, resolution, radial_resolution=radial_resolution)
    if center is not None:
        offsets = offsets + np.asarray(center, dtype=float)
    values = weight_values(ctx, offsets)
    positive = values > 0
    integrand = np.zeros_like(values)
    integrand[positive] = values[positive] ** alpha
    return float(np.sum(weights * integrand))


def muckenhoupt_check(ctx, ball_center, ball_radius, quadrature_resolution=64):
    """
    Return (int_B w)(int_B w^{1/(1-p)})^{p-1} / |B|^p for B(center, radius).
    """
    if not ball_radius > 0:
        raise ValueError(f'Radius must be positive, got {ball_radius}.')
    first = weight_ball_quadrature(
        ctx, 1.0, ball_radius, quadrature_resolution, ball_center)
    second = weight_ball_quadrature(
        ctx, 1.0 / (1.0 - ctx.p), ball_radius, quadrature_resolution,
        ball_center)
    volume = unit_ball_volume(ctx.n) * ball_radius ** ctx.n
    return first * second ** (ctx.p - 1.0) / volume ** ctx.p


@dataclass
class OperatorCache:
    """
    Per-simplex data of A on a ball mesh, built once and shared read-only.

    `metric[s]` is dT*(x) P_s at the centroid of simplex `s` and
    `inverse_jacobian[s]` is 1 / |J_T(x)| there.
    """
    metric: np.ndarray
    inverse_jacobian: np.ndarray


def build_operator_cache(ctx, mesh):
    """
    Evaluate the metric of A at the centroids of a ball mesh.
    """
    metric, inverse_jacobian = upper_half_metrics(ctx, mesh.centroids)
    logging.debug(
        f'Built operator cache on {len(inverse_jacobian)} simplices.')
    return OperatorCache(metric=metric, inverse_jacobian=inverse_jacobian)
