"""
Tests for the transformed operator and its weight.
"""
import math
from unittest import TestCase

import numpy as np
from numpy.testing import assert_allclose

from chevah.cylinder_wiener.operators import (
    OperatorContext,
    UndefinedAtOrigin,
    a_operator,
    a_operator_points,
    ellipticity_check,
    monotonicity_check,
    monotonicity_values,
    muckenhoupt_check,
    sphere_area,
    unit_ball_volume,
    weight,
    weight_ball_integral,
    weight_ball_quadrature,
    weight_values,
    )
from chevah.cylinder_wiener.transform import BallPoint, TransformParams


def random_ball_points(rng, count, n, radius=1.0):
    """
    Points of the open ball B(0, radius) off the equator.
    """
    direction = rng.normal(size=(count, n))
    direction /= np.linalg.norm(direction, axis=1)[:, None]
    norms = radius * rng.uniform(0.01, 0.99, size=count)
    points = direction * norms[:, None]
    points[np.abs(points[:, -1]) < 1e-6, -1] = 1e-3
    return points


class TestOperatorContext(TestCase):
    """
    Validation of the operator context.
    """

    def test_dimension(self):
        """
        The dimension comes from the transform parameters.
        """
        ctx = OperatorContext(TransformParams(n=3), 2.5)

        self.assertEqual(3, ctx.n)

    def test_exponent(self):
        """
        p must be above 1.
        """
        with self.assertRaises(ValueError):
            OperatorContext(TransformParams(), 1.0)


class TestWeight(TestCase):
    """
    w(xi) = |xi|^{p-n}.
    """

    def test_values(self):
        """
        The weight is a power of the norm and 0 at the origin.
        """
        ctx = OperatorContext(TransformParams(n=3), 5.0)
        points = np.array([[0.0, 0.0, 0.5], [0.3, 0.4, 0.0], [0, 0, 0]])

        assert_allclose([0.25, 0.25, 0.0], weight_values(ctx, points))

    def test_single_point(self):
        """
        The point form wraps the value.
        """
        ctx = OperatorContext(TransformParams(n=2), 3.0)

        value = weight(ctx, BallPoint(xi=(0.0, 0.5)))

        self.assertAlmostEqual(0.5, value.value)

    def test_volumes(self):
        """
        Unit ball volumes and sphere areas in the plane and in space.
        """
        self.assertAlmostEqual(math.pi, unit_ball_volume(2))
        self.assertAlmostEqual(4 * math.pi / 3, unit_ball_volume(3))
        self.assertAlmostEqual(4 * math.pi, sphere_area(3))

    def test_integral_closed_form(self):
        """
        The integral of w over B_r is n omega_n r^p / p.
        """
        ctx = OperatorContext(TransformParams(n=3), 4.0)

        value = weight_ball_integral(ctx, 1.0, 0.5)

        self.assertAlmostEqual(4 * math.pi * 0.5 ** 4 / 4.0, value)

    def test_integral_divergent(self):
        """
        A non integrable power gives infinity.
        """
        ctx = OperatorContext(TransformParams(n=3), 1.5)

        self.assertEqual(math.inf, weight_ball_integral(ctx, 3.0, 1.0))

    def test_quadrature_plane(self):
        """
        The midpoint rule agrees with the closed form in the plane.
        """
        for p in (1.5, 3.0):
            ctx = OperatorContext(TransformParams(n=2), p)
            for alpha in (1.0, 1.0 / (1.0 - p)):
                exact = weight_ball_integral(ctx, alpha, 0.7)

                value = weight_ball_quadrature(ctx, alpha, 0.7, 64)

                assert_allclose(exact, value, rtol=0.01)

    def test_quadrature_space(self):
        """
        The midpoint rule agrees with the closed form in space.
        """
        ctx = OperatorContext(TransformParams(n=3), 4.0)
        for alpha in (1.0, -1.0 / 3.0):
            exact = weight_ball_integral(ctx, alpha, 1.0)

            value = weight_ball_quadrature(ctx, alpha, 1.0, 32)

            assert_allclose(exact, value, rtol=0.01)

    def test_muckenhoupt_origin(self):
        """
        On balls centered at the origin the A_p quotient has a closed
        form, 32 / 27 for n = 2 and p = 3.
        """
        ctx = OperatorContext(TransformParams(n=2), 3.0)

        value = muckenhoupt_check(ctx, (0.0, 0.0), 0.5)

        assert_allclose(32.0 / 27.0, value, rtol=0.01)

    def test_muckenhoupt_bounded(self):
        """
        Balls away from the origin give quotients of the same order.
        """
        ctx = OperatorContext(TransformParams(n=2), 3.0)
        values = [
            muckenhoupt_check(ctx, center, radius, 32)
            for center, radius in [
                ((0.0, 0.0), 1.0),
                ((0.5, 0.0), 0.1),
                ((0.0, -0.3), 0.3),
                ((0.2, 0.2), 0.05),
                ]
            ]

        self.assertGreaterEqual(min(values), 1.0 - 0.01)
        self.assertLess(max(values), 3.0)

    def test_muckenhoupt_radius(self):
        """
        The radius must be positive.
        """
        ctx = OperatorContext(TransformParams(n=2), 3.0)

        with self.assertRaises(ValueError):
            muckenhoupt_check(ctx, (0.0, 0.0), 0.0)


class TestAOperator(TestCase):
    """
    A(xi, q) and its structure.
    """

    def test_origin(self):
        """
        A has no value at the origin.
        """
        ctx = OperatorContext(TransformParams(n=2), 2.0)

        with self.assertRaises(UndefinedAtOrigin):
            a_operator(ctx, BallPoint(xi=(0.0, 0.0)), (1.0, 0.0))

    def test_equator(self):
        """
        A vanishes on the equator.
        """
        ctx = OperatorContext(TransformParams(n=3), 3.0)

        value = a_operator(ctx, BallPoint(xi=(0.2, -0.1, 0.0)), (1, 2, 3))

        assert_allclose(0.0, value)

    def test_zero_vector(self):
        """
        A(xi, 0) = 0 for every p.
        """
        ctx = OperatorContext(TransformParams(n=2), 1.5)

        value = a_operator(ctx, BallPoint(xi=(0.1, 0.3)), (0.0, 0.0))

        assert_allclose(0.0, value)

    def test_reflection(self):
        """
        A(P xi, P q) = P A(xi, q).
        """
        ctx = OperatorContext(TransformParams(n=3, kappa=2.0), 3.0)
        rng = np.random.default_rng(0)
        xis = random_ball_points(rng, 200, 3)
        qs = rng.normal(size=(200, 3))
        flip = np.array([1.0, 1.0, -1.0])

        direct = a_operator_points(ctx, xis, qs)
        mirrored = a_operator_points(ctx, xis * flip, qs * flip)

        assert_allclose(direct * flip, mirrored, rtol=1e-12, atol=1e-300)

    def test_homogeneity(self):
        """
        A(xi, s q) = s^{p-1} A(xi, q) for s > 0.
        """
        ctx = OperatorContext(TransformParams(n=2), 3.5)
        rng = np.random.default_rng(1)
        xis = random_ball_points(rng, 100, 2)
        qs = rng.normal(size=(100, 2))

        assert_allclose(
            2.0 ** 2.5 * a_operator_points(ctx, xis, qs),
            a_operator_points(ctx, xis, 2.0 * qs), rtol=1e-12)

    def test_ellipticity(self):
        """
        Both structure ratios stay between positive finite bounds.
        """
        for n, p in [(2, 2.0), (2, 1.5), (3, 3.0), (3, 4.0)]:
            ctx = OperatorContext(TransformParams(n=n), p)
            rng = np.random.default_rng(n)
            xis = random_ball_points(rng, 2000, n)
            qs = rng.normal(size=(2000, n))

            report = ellipticity_check(ctx, (xis, qs))

            self.assertTrue(report.bounded)
            self.assertEqual(2000, report.count)
            low, high = report.coercive_ratio
            self.assertLess(high / low, 1e4)

    def test_ellipticity_interval_stable(self):
        """
        The coercivity interval over |xi| in [1e-3, 1] moves by less than
        5% when the sample is doubled.
        """
        for n, p in [(2, 1.5), (2, 3.0), (3, 2.0), (3, 4.0)]:
            ctx = OperatorContext(TransformParams(n=n), p)
            rng = np.random.default_rng(20 + n)
            direction = rng.normal(size=(20000, n))
            direction /= np.linalg.norm(direction, axis=1)[:, None]
            radius = 10.0 ** rng.uniform(-3.0, 0.0, size=20000)
            xis = direction * radius[:, None]
            qs = rng.normal(size=(20000, n))

            single = ellipticity_check(ctx, (xis[:10000], qs[:10000]))
            double = ellipticity_check(ctx, (xis, qs))

            low, high = single.coercive_ratio
            double_low, double_high = double.coercive_ratio
            self.assertTrue(double.bounded)
            self.assertLess((low - double_low) / low, 0.05)
            self.assertLess((double_high - high) / high, 0.05)

    def test_ellipticity_point_samples(self):
        """
        Samples can be given as (BallPoint, vector) pairs.
        """
        ctx = OperatorContext(TransformParams(n=2), 2.0)
        samples = [
            (BallPoint(xi=(0.1, 0.2)), (1.0, 0.0)),
            (BallPoint(xi=(-0.3, -0.4)), (0.5, 0.5)),
            ]

        report = ellipticity_check(ctx, samples)

        self.assertEqual(2, report.count)
        self.assertTrue(report.to_dict()['bounded'])

    def test_monotonicity(self):
        """
        (A(xi, q1) - A(xi, q2)).(q1 - q2) >= 0.
        """
        for p in (1.5, 2.0, 4.0):
            ctx = OperatorContext(TransformParams(n=3), p)
            rng = np.random.default_rng(2)
            xis = random_ball_points(rng, 1000, 3)
            q1s = rng.normal(size=(1000, 3))
            q2s = rng.normal(size=(1000, 3))

            values = monotonicity_values(ctx, xis, q1s, q2s)

            self.assertTrue(np.all(values >= -1e-12 * np.abs(values).max()))

    def test_monotonicity_single(self):
        """
        The pointwise form is 0 for equal vectors and positive otherwise.
        """
        ctx = OperatorContext(TransformParams(n=2), 3.0)
        xi = BallPoint(xi=(0.2, 0.1))

        self.assertEqual(0.0, monotonicity_check(ctx, xi, (1, 1), (1, 1)))
        self.assertGreater(monotonicity_check(ctx, xi, (1, 0), (0, 1)), 0)
