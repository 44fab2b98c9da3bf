"""
Tests for the change of variables between the half-cylinder and the ball.
"""
import math
from unittest import TestCase

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from chevah.cylinder_wiener.transform import (
    BallPoint,
    CylPoint,
    ExcludedRay,
    TransformParams,
    differential,
    differential_points,
    finite_difference_differential,
    forward_map,
    forward_points,
    geometric_bounds_check,
    inverse_map,
    inverse_points,
    jacobian_determinants,
    reflect,
    run_transform_checks,
    sample_cylinder_points,
    )


class TestTransformParams(TestCase):
    """
    Validation of the transform parameters.
    """

    def test_defaults(self):
        """
        The plane case with kappa 1 is the default.
        """
        params = TransformParams()

        self.assertEqual(2, params.n)
        self.assertEqual(1.0, params.kappa)

    def test_invalid(self):
        """
        Dimension below 2 and non positive kappa are rejected.
        """
        with self.assertRaises(ValueError):
            TransformParams(n=1)
        with self.assertRaises(ValueError):
            TransformParams(n=2, kappa=0)
        with self.assertRaises(ValueError):
            TransformParams(n=2, kappa=-1.5)


class TestForwardMap(TestCase):
    """
    Values of T on the distinguished parts of the cylinder.
    """

    def setUp(self):
        super(TestForwardMap, self).setUp()
        self.params = TransformParams(n=3, kappa=1.5)

    def test_axis(self):
        """
        The axis goes to the positive xi_n axis at height e^{-kappa x_n}.
        """
        xi = forward_map(self.params, CylPoint(x_prime=(0.0, 0.0), x_n=2.0))

        assert_allclose((0.0, 0.0, math.exp(-3.0)), xi.xi, atol=1e-15)

    def test_base_on_unit_sphere(self):
        """
        The base plate goes to the upper unit half-sphere.
        """
        rng = np.random.default_rng(1)
        points = sample_cylinder_points(rng, 500, 3, 0.0)

        image = forward_points(self.params, points)

        assert_allclose(1.0, np.linalg.norm(image, axis=1), rtol=1e-14)
        self.assertTrue(np.all(image[:, -1] >= 0))

    def test_lateral_on_equator(self):
        """
        The lateral boundary goes to the equator xi_n = 0.
        """
        points = np.array([
            [1.0, 0.0, 0.5],
            [0.0, -1.0, 3.0],
            [math.sqrt(0.5), math.sqrt(0.5), 7.0],
            ])

        image = forward_points(self.params, points)

        assert_allclose(0.0, image[:, -1], atol=1e-15)
        assert_allclose(
            np.exp(-1.5 * points[:, -1]), np.linalg.norm(image, axis=1),
            rtol=1e-14)

    def test_norm_is_exponential(self):
        """
        |T(x)| only depends on the height.
        """
        rng = np.random.default_rng(2)
        points = sample_cylinder_points(rng, 1000, 3, 20.0)

        image = forward_points(self.params, points)

        assert_allclose(
            np.exp(-1.5 * points[:, -1]), np.linalg.norm(image, axis=1),
            rtol=1e-13)


class TestInverseMap(TestCase):
    """
    Round trips and the excluded ray.
    """

    def test_round_trip_many(self):
        """
        T^-1 o T is the identity on 10^4 points up to height 20.
        """
        params = TransformParams(n=3, kappa=1.0)
        rng = np.random.default_rng(0)
        points = sample_cylinder_points(rng, 10000, 3, 20.0)

        back = inverse_points(params, forward_points(params, points))

        self.assertLess(np.max(np.abs(back - points)), 1e-9)

    @given(
        st.floats(min_value=-1.0, max_value=1.0),
        st.floats(min_value=0.0, max_value=20.0),
        st.floats(min_value=0.1, max_value=4.0),
        )
    @settings(max_examples=200, deadline=None)
    def test_round_trip_plane(self, x_1, x_n, kappa):
        """
        T^-1 o T is the identity in the plane case for every kappa.
        """
        params = TransformParams(n=2, kappa=kappa)
        x = CylPoint(x_prime=(x_1,), x_n=x_n)

        back = inverse_map(params, forward_map(params, x))

        assert_allclose(x.as_array(), back.as_array(), atol=1e-9)

    def test_excluded_ray(self):
        """
        The negative xi_n axis and the origin have no preimage.
        """
        params = TransformParams(n=2)

        with self.assertRaises(ExcludedRay):
            inverse_map(params, BallPoint(xi=(0.0, -0.5)))
        with self.assertRaises(ExcludedRay):
            inverse_map(params, BallPoint(xi=(0.0, 0.0)))

    def test_lower_half_point(self):
        """
        Points of the lower half-ball off the excluded ray have a preimage
        outside the cylinder, |x'| > 1.
        """
        params = TransformParams(n=2)

        x = inverse_map(params, BallPoint(xi=(0.3, -0.2)))

        self.assertGreater(abs(x.x_prime[0]), 1.0)

    def test_reflect(self):
        """
        P flips the sign of the last coordinate only.
        """
        self.assertEqual(
            BallPoint(xi=(0.25, 0.5, -0.75)),
            reflect(BallPoint(xi=(0.25, 0.5, 0.75))))


class TestDifferential(TestCase):
    """
    The analytic differential and Jacobian of T.
    """

    def test_finite_differences(self):
        """
        dT agrees with central differences.
        """
        params = TransformParams(n=3, kappa=0.5)
        rng = np.random.default_rng(3)
        points = sample_cylinder_points(rng, 1000, 3, 10.0)

        dT, _ = differential_points(params, points)
        fd = finite_difference_differential(params, points)

        scale = np.exp(-0.5 * points[:, -1])[:, None, None]
        self.assertLess(np.max(np.abs(dT - fd) / scale), 1e-5)

    def test_determinant(self):
        """
        The closed form Jacobian is the determinant of dT.
        """
        params = TransformParams(n=3, kappa=2.0)
        rng = np.random.default_rng(4)
        points = sample_cylinder_points(rng, 200, 3, 5.0)

        dT, det = differential_points(params, points)

        assert_allclose(np.abs(np.linalg.det(dT)), det, rtol=1e-10)

    def test_axis_jacobian(self):
        """
        On the axis |J_T| = kappa 2^{n-1} e^{-kappa n x_n}.
        """
        params = TransformParams(n=3, kappa=1.5)
        x = CylPoint(x_prime=(0.0, 0.0), x_n=1.25)

        data = differential(params, x)

        assert_allclose(
            1.5 * 4.0 * math.exp(-1.5 * 3 * 1.25), data.detAbs, rtol=1e-10)
        assert_allclose(
            data.detAbs, jacobian_determinants(params, x.as_array()),
            rtol=1e-15)


class TestGeometricBounds(TestCase):
    """
    The two-sided distortion estimate of T.
    """

    def test_random_pairs(self):
        """
        No pair violates either bound.
        """
        params = TransformParams(n=3, kappa=1.0)
        rng = np.random.default_rng(5)
        pairs = np.stack([
            sample_cylinder_points(rng, 10000, 3, 20.0),
            sample_cylinder_points(rng, 10000, 3, 20.0),
            ], axis=1)

        report = geometric_bounds_check(params, pairs)

        self.assertTrue(report.passed)
        self.assertEqual(10000, report.checked)
        self.assertLessEqual(report.upper_max, 7.0)
        self.assertGreaterEqual(report.lower_min, 1.0 - 1e-9)

    def test_point_pairs(self):
        """
        Pairs can be given as points and coincident pairs are skipped.
        """
        params = TransformParams(n=2, kappa=3.0)
        x = CylPoint(x_prime=(0.5,), x_n=1.0)
        y = CylPoint(x_prime=(-0.25,), x_n=2.0)

        report = geometric_bounds_check(params, [(x, y), (x, x)])

        self.assertEqual(1, report.checked)
        self.assertEqual(1, report.skipped)
        self.assertTrue(report.passed)
        self.assertEqual(11.0, report.to_dict()['upper_constant'])

    def test_empty(self):
        """
        An empty sample passes trivially.
        """
        report = geometric_bounds_check(TransformParams(), [])

        self.assertTrue(report.passed)
        self.assertEqual(0, report.checked)


class TestRunTransformChecks(TestCase):
    """
    The whole verification suite used by the command line.
    """

    def test_default(self):
        """
        Every check passes and the report lists them.
        """
        report = run_transform_checks(TransformParams(n=2), samples=2000)

        self.assertTrue(report['passed'])
        self.assertEqual(
            {
                'round_trip', 'norm', 'finite_difference', 'determinant',
                'axis_jacobian', 'equator', 'sphere', 'bounds',
                },
            set(report['checks']))

    def test_deterministic(self):
        """
        The same seed gives the same report.
        """
        params = TransformParams(n=3, kappa=0.5)

        first = run_transform_checks(params, samples=500, seed=7)
        second = run_transform_checks(params, samples=500, seed=7)

        self.assertEqual(first, second)
