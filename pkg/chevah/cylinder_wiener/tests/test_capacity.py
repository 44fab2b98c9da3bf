"""
Tests for the capacities.
"""
import logging
import math
from unittest import TestCase

import numpy as np
from numpy.testing import assert_allclose

from chevah.cylinder_wiener.capacity import (
    CapacityException,
    CapacityProblem,
    CapacityResult,
    RatioReport,
    _check_sensitivity,
    axis_ball_family,
    cap_neumann_cylinder,
    cap_neumann_via_ball,
    cap_weighted_ball,
    cap_weighted_condenser,
    compare_caps,
    condenser_radial_exact,
    sobolev_cp,
    )
from chevah.cylinder_wiener.geometry import (
    BallResolution,
    FullDisk,
    ObstacleSet,
    Resolution,
    Slab,
    SolidBall,
    SubBall,
    build_ball_grid,
    )
from chevah.cylinder_wiener.operators import OperatorContext
from chevah.cylinder_wiener.solver import SolverSettings
from chevah.cylinder_wiener.tests import LogAsserter
from chevah.cylinder_wiener.transform import TransformParams


def balls(n, *pairs):
    """
    Obstacle without base made of balls on the axis, (height, radius).
    """
    return ObstacleSet(
        n=n,
        primitives=tuple(
            SolidBall((0.0,) * (n - 1) + (height,), radius)
            for height, radius in pairs),
        include_base=False)


class TestCondenser(TestCase):
    """
    cap_{p,w}(B_r, B_R) against its closed form.
    """

    def test_exact(self):
        """
        With log(R / r) = 1 the value is the sphere area.
        """
        self.assertAlmostEqual(
            2 * math.pi, condenser_radial_exact(math.exp(-1), 1.0, 2.0, 2))
        self.assertAlmostEqual(
            4 * math.pi * 2.0 ** -2,
            condenser_radial_exact(1.0, math.exp(2), 3.0, 3))

    def test_exact_invalid(self):
        """
        The radii must be ordered and p above 1.
        """
        with self.assertRaises(ValueError):
            condenser_radial_exact(1.0, 1.0, 2.0, 2)
        with self.assertRaises(ValueError):
            condenser_radial_exact(0.1, 1.0, 1.0, 2)
        with self.assertRaises(ValueError):
            cap_weighted_condenser(0.0, 1.0, 2.0, 2)

    def test_plane(self):
        """
        The numerical value of (B_1/4, B_1/2) in the plane is within 3%
        for several p.
        """
        for p in (1.5, 2.0, 3.0):
            exact = condenser_radial_exact(0.25, 0.5, p, 2)

            result = cap_weighted_condenser(
                0.25, 0.5, p, 2, radial_nodes=128)

            assert_allclose(exact, result.value, rtol=0.03)

    def test_space(self):
        """
        The numerical value in space is within 3%.
        """
        exact = condenser_radial_exact(0.1, 1.0, 2.0, 3)

        result = cap_weighted_condenser(
            0.1, 1.0, 2.0, 3, radial_nodes=48, angular_cells=8)

        assert_allclose(exact, result.value, rtol=0.03)

    def test_scale_invariant(self):
        """
        Only the ratio R / r matters.
        """
        first = cap_weighted_condenser(0.1, 1.0, 3.0, 2, radial_nodes=64)
        second = cap_weighted_condenser(0.01, 0.1, 3.0, 2, radial_nodes=64)

        assert_allclose(first.value, second.value, rtol=1e-4)

    def test_annuli(self):
        """
        cap(B_r, B_2r) is the same for r = 1/2, 1/4 and 1/8.
        """
        for p in (1.5, 3.0):
            values = [
                cap_weighted_condenser(r, 2 * r, p, 2).value
                for r in (0.5, 0.25, 0.125)
                ]

            self.assertLess(max(values) / min(values), 1.03)
            assert_allclose(
                condenser_radial_exact(0.5, 1.0, p, 2), values, rtol=0.03)

    def test_origin_only(self):
        """
        The single origin node has a capacity that vanishes as the grid
        gets finer at the origin.
        """
        values = []
        for inner in (1e-4, 1e-8):
            grid = build_ball_grid(
                2, BallResolution(
                    radial_nodes=64, angular_cells=16, inner_radius=inner))
            K = np.zeros(grid.size, dtype=bool)
            K[grid.origin] = True

            values.append(cap_weighted_ball(K, grid, 2.0).value)

        self.assertGreater(values[0], values[1])
        self.assertGreater(values[1], 0)
        self.assertLess(values[1], 0.5)


class TestNeumannCylinder(TestCase):
    """
    cap_{p,G_t} computed on the cylinder.
    """

    def test_slab(self):
        """
        The slab 1 <= x_2 <= 2 has capacity 2 above the base for every p.
        """
        E = ObstacleSet(
            n=2, primitives=(Slab(FullDisk(), (1.0, 2.0)),),
            include_base=False)

        for p in (2.0, 3.0):
            result = cap_neumann_cylinder(E, 0.0, p, sensitivity=False)

            assert_allclose(2.0, result.value, rtol=1e-3)
            self.assertTrue(result.report.converged)

    def test_slab_via_ball(self):
        """
        The operator energy on the ball gives the same capacity.
        """
        E = ObstacleSet(
            n=2, primitives=(Slab(FullDisk(), (1.0, 2.0)),),
            include_base=False)
        ctx = OperatorContext(TransformParams(n=2), 2.0)

        cylinder = cap_neumann_cylinder(E, 0.0, 2.0, sensitivity=False)
        ball = cap_neumann_via_ball(E, 0.0, ctx)

        assert_allclose(cylinder.value, ball.value, rtol=0.03)

    def test_monotone(self):
        """
        A larger set has a larger capacity.
        """
        small = cap_neumann_cylinder(
            balls(2, (1.5, 0.2)), 0.0, 2.0, sensitivity=False)
        large = cap_neumann_cylinder(
            balls(2, (1.5, 0.3)), 0.0, 2.0, sensitivity=False)

        self.assertGreater(small.value, 0)
        self.assertLess(small.value, large.value)

    def test_increasing_slabs(self):
        """
        The slabs [1 + 2^-k, 2] grow with k and their capacities
        2 (1 + 2^-k)^(1-p) grow to the capacity of [1, 2].
        """
        for p in (2.0, 3.0):
            values = []
            for k in range(1, 5):
                bottom = 1.0 + 2.0 ** -k
                E = ObstacleSet(
                    n=2, primitives=(Slab(FullDisk(), (bottom, 2.0)),),
                    include_base=False)

                result = cap_neumann_cylinder(E, 0.0, p, sensitivity=False)

                assert_allclose(
                    2.0 * bottom ** (1.0 - p), result.value, rtol=1e-3)
                values.append(result.value)

            self.assertEqual(sorted(values), values)
            assert_allclose(2.0, values[-1], rtol=0.07 * (p - 1))

    def test_not_converged(self):
        """
        A minimization out of iterations marks the result.
        """
        settings = SolverSettings(max_iterations=1)

        result = cap_neumann_cylinder(
            balls(2, (1.5, 0.25)), 0.0, 3.0, settings=settings,
            sensitivity=False)

        self.assertFalse(result.converged)
        self.assertFalse(result.to_dict()['converged'])

    def test_converged_with_sensitivity(self):
        """
        Both truncations must converge.
        """
        result = cap_neumann_cylinder(balls(2, (1.5, 0.25)), 0.0, 2.0)

        self.assertTrue(result.converged)
        self.assertTrue(result.to_dict()['converged'])

    def test_subadditive(self):
        """
        The capacity of a union is at most the sum.
        """
        first = cap_neumann_cylinder(
            balls(3, (1.5, 0.25)), 0.0, 2.0, sensitivity=False)
        second = cap_neumann_cylinder(
            balls(3, (3.5, 0.25)), 0.0, 2.0, sensitivity=False)
        union = cap_neumann_cylinder(
            balls(3, (1.5, 0.25), (3.5, 0.25)), 0.0, 2.0, sensitivity=False)

        self.assertLessEqual(union.value, first.value + second.value)
        self.assertGreaterEqual(
            union.value, max(first.value, second.value) - 1e-9)

    def test_truncation_sensitivity(self):
        """
        The far end does not change the value of a set well below it.
        """
        result = cap_neumann_cylinder(balls(2, (1.5, 0.25)), 0.0, 2.0)

        self.assertFalse(result.sensitivity['sensitive'])
        self.assertEqual([4.75, 7.125], result.sensitivity['truncation'])
        self.assertIn('sensitivity', result.to_dict())

    def test_empty(self):
        """
        The base alone has no capacity.
        """
        result = cap_neumann_cylinder(ObstacleSet(2), 0.0, 2.0)

        self.assertEqual(0.0, result.value)

    def test_below_height(self):
        """
        The set must lie above x_n = t.
        """
        with self.assertRaises(CapacityException):
            cap_neumann_cylinder(balls(2, (1.0, 0.25)), 1.0, 2.0)

    def test_short_truncation(self):
        """
        The truncation must be 2 above the top of the set.
        """
        with self.assertRaises(CapacityException) as context:
            cap_neumann_cylinder(balls(2, (1.0, 0.25)), 0.0, 2.0, L=2.0)

        self.assertIn('closer than 2', context.exception.message)


class TestSobolev(TestCase):
    """
    C_p computed in a box.
    """

    def test_scaling(self):
        """
        In space with p = 2 halving a small ball roughly halves C_2.
        """
        large = sobolev_cp(
            balls(3, (0.0, 0.1)), 2.0, sensitivity_factor=None)
        small = sobolev_cp(
            balls(3, (0.0, 0.05)), 2.0, sensitivity_factor=None)

        ratio = large.value / small.value
        self.assertGreater(ratio, 1.8)
        self.assertLess(ratio, 2.2)

    def test_cylinder_piece(self):
        """
        The product of a disk with [0, 1] has a positive C_p that does
        not depend on the box.
        """
        E = ObstacleSet(
            n=2, primitives=(Slab(SubBall((0.0,), 0.5), (0.0, 1.0)),),
            include_base=False)

        result = sobolev_cp(E, 2.0)

        self.assertGreater(result.value, 0)
        self.assertTrue(result.converged)
        self.assertEqual([4.0, 6.0], result.sensitivity['box_factors'])
        self.assertLess(result.sensitivity['relative_change'], 0.05)

    def test_empty(self):
        """
        The empty set has no capacity.
        """
        empty = ObstacleSet(n=2, include_base=False)

        self.assertEqual(0.0, sobolev_cp(empty, 2.0).value)


class TestHelpers(TestCase):
    """
    Result types and the sensitivity report.
    """

    def setUp(self):
        super(TestHelpers, self).setUp()
        self.log, _ = LogAsserter.createWithLogger(logging.WARNING)

    def tearDown(self):
        logging.getLogger().removeHandler(self.log)
        self.log.assertLogEmpty()
        super(TestHelpers, self).tearDown()

    def test_sensitive(self):
        """
        A change above 2% is logged.
        """
        report = _check_sensitivity('Box', 1.0, 1.1)

        self.log.assertLog('Box sensitive: 1 against 1.1 (10.0%).')
        self.assertTrue(report['sensitive'])
        assert_allclose(0.1, report['relative_change'])

    def test_not_sensitive(self):
        """
        Small changes are silent.
        """
        report = _check_sensitivity('Truncation', 1.0, 1.001)

        self.assertFalse(report['sensitive'])

    def test_negative(self):
        """
        A capacity is never negative.
        """
        with self.assertRaises(CapacityException):
            CapacityResult(value=-1.0)

    def test_overlap(self):
        """
        The set and the zero set must be disjoint.
        """
        with self.assertRaises(CapacityException):
            CapacityProblem(
                p=2.0, grid=None, constraint=[True, False],
                zero=[True, True])

    def test_ratio_report(self):
        """
        Skipped heights do not count in the spread.
        """
        report = RatioReport(
            heights=[1, 2, 3],
            ratios={'ball': [1.0, None, 3.0]},
            values={'cylinder': [1.0, 0.0, 3.0]})

        self.assertEqual(3.0, report.spread('ball'))
        self.assertEqual((1.0, 3.0), report.interval('ball'))
        self.assertFalse(report.stable('ball'))
        self.assertTrue(report.stable('ball', factor=3.0))
        self.assertEqual(3.0, report.to_dict()['spread']['ball'])

    def test_family(self):
        """
        The family puts a ball half a unit above each height.
        """
        E = axis_ball_family(3)(2.0)

        self.assertFalse(E.include_base)
        self.assertEqual((2.25, 2.75), tuple(E.axial_extent()))


class TestCompareCaps(TestCase):
    """
    The capacity comparisons along a family of sets.
    """

    def test_plane(self):
        """
        The ball ratio does not drift with the height.
        """
        report = compare_caps(axis_ball_family(2), [1.0, 3.0, 5.0], 2.0, 2)

        self.assertEqual([1.0, 3.0, 5.0], report.heights)
        self.assertEqual([True, True, True], report.converged)
        self.assertTrue(report.stable('ball'))
        for name in ('ball', 'upper', 'lower'):
            self.assertEqual(3, len(report.ratios[name]))
            self.assertTrue(all(v > 0 for v in report.ratios[name]))
            self.assertTrue(report.stable(name))

    def test_empty_height(self):
        """
        An empty set is skipped and counts as converged.
        """
        def family(t):
            if t > 2:
                return ObstacleSet(n=2, include_base=False)
            return axis_ball_family(2)(t)

        report = compare_caps(family, [1.0, 3.0], 2.0, 2)

        self.assertEqual([True, True], report.converged)
        self.assertIsNone(report.ratios['ball'][1])
        self.assertEqual(0.0, report.values['cylinder'][1])
        self.assertEqual([True, True], report.to_dict()['converged'])
