"""
Tests for the mapped tensor meshes.
"""
import math
from unittest import TestCase

import numpy as np
from numpy.testing import assert_allclose

from chevah.cylinder_wiener.mesh import (
    MeridianMap,
    PolarMap,
    SphericalMap,
    TensorMesh,
    graded_axis,
    )


class TestGradedAxis(TestCase):
    """
    Axis node placement.
    """

    def test_uniform(self):
        """
        Without refinements the nodes are evenly spaced.
        """
        nodes = graded_axis(0.0, 1.0, 0.25)

        assert_allclose([0.0, 0.25, 0.5, 0.75, 1.0], nodes)

    def test_uneven_length(self):
        """
        The spacing is an upper bound.
        """
        nodes = graded_axis(0.0, 1.0, 0.3)

        self.assertEqual(5, len(nodes))
        self.assertLessEqual(np.max(np.diff(nodes)), 0.3)

    def test_empty(self):
        """
        An empty interval is rejected.
        """
        with self.assertRaises(ValueError):
            graded_axis(1.0, 1.0, 0.1)

    def test_refinement(self):
        """
        Inside the refinement box the spacing is the target and the box
        ends are nodes.
        """
        nodes = graded_axis(0.0, 4.0, 0.5, [(2.0, 2.1, 0.01)])

        self.assertIn(2.0, nodes)
        self.assertIn(2.1, nodes)
        inside = nodes[(nodes >= 2.0) & (nodes <= 2.1)]
        self.assertLessEqual(np.max(np.diff(inside)), 0.01 + 1e-12)
        self.assertLessEqual(np.max(np.diff(nodes)), 0.5 + 1e-12)
        self.assertTrue(np.all(np.diff(nodes) > 0))
        self.assertEqual(0.0, nodes[0])
        self.assertEqual(4.0, nodes[-1])

    def test_growth(self):
        """
        Away from the refinement neighbouring cells grow by at most the
        growth factor, plus the target.
        """
        nodes = graded_axis(0.0, 3.0, 1.0, [(0.0, 0.0, 0.001)], growth=1.5)
        widths = np.diff(nodes)

        self.assertAlmostEqual(0.001, widths[0])
        self.assertTrue(np.all(widths[1:-1] <= 1.5 * widths[:-2] + 1e-9))


class TestTensorMesh(TestCase):
    """
    Simplicial split and discrete operators.
    """

    def test_unit_square(self):
        """
        The square is split in 2 triangles per cell with total area 1.
        """
        axis = np.linspace(0.0, 1.0, 5)

        mesh = TensorMesh([axis, axis])

        self.assertEqual(25, mesh.dof_count)
        self.assertEqual(32, len(mesh.volumes))
        self.assertAlmostEqual(1.0, mesh.volumes.sum())
        assert_allclose(1.0, mesh.lumped_mass().sum())

    def test_unit_cube(self):
        """
        The cube is split in 6 tetrahedra per cell.
        """
        axis = np.linspace(0.0, 1.0, 3)

        mesh = TensorMesh([axis, axis, axis])

        self.assertEqual(48, len(mesh.volumes))
        self.assertAlmostEqual(1.0, mesh.volumes.sum())

    def test_linear_gradient(self):
        """
        Gradients of linear functions are exact on every simplex.
        """
        axes = [np.array([0.0, 0.1, 0.5, 1.0]), np.array([0.0, 0.3, 1.0])]
        mesh = TensorMesh(axes)
        values = 2.0 * mesh.dof_points[:, 0] - 3.0 * mesh.dof_points[:, 1]

        gradients = (mesh.gradient_operator() @ values).reshape(-1, 2)

        assert_allclose(
            np.broadcast_to([2.0, -3.0], gradients.shape), gradients,
            atol=1e-12)

    def test_metric(self):
        """
        A per-simplex metric multiplies the gradients.
        """
        axis = np.linspace(0.0, 1.0, 3)
        mesh = TensorMesh([axis, axis])
        values = mesh.dof_points[:, 0]
        metric = np.broadcast_to(
            np.array([[0.0, 1.0], [2.0, 0.0]]), (len(mesh.volumes), 2, 2))

        gradients = (mesh.gradient_operator(metric) @ values).reshape(-1, 2)

        assert_allclose(
            np.broadcast_to([0.0, 2.0], gradients.shape), gradients,
            atol=1e-12)

    def test_cell_filter(self):
        """
        Filtered cells are dropped with their unused nodes.
        """
        axis = np.linspace(0.0, 1.0, 3)

        mesh = TensorMesh(
            [axis, axis],
            cell_filter=lambda corners: corners[:, :, 0].max(axis=1) <= 0.5)

        self.assertEqual(6, mesh.dof_count)
        self.assertAlmostEqual(0.5, mesh.volumes.sum())
        self.assertTrue(np.isnan(mesh.node_values(np.zeros(6))[2, 0]))

    def test_periodic(self):
        """
        A periodic axis wraps its last cell.
        """
        mesh = TensorMesh(
            [np.linspace(0.0, 1.0, 3), np.arange(4) * 0.25],
            periods=[None, 1.0])

        self.assertEqual(12, mesh.dof_count)
        self.assertAlmostEqual(1.0, mesh.volumes.sum())

    def test_dual_boxes(self):
        """
        Dual boxes reach the midpoints and stop at the ends.
        """
        mesh = TensorMesh([np.array([0.0, 1.0, 3.0])])

        low, high = mesh.dual_boxes()

        assert_allclose([0.0, 0.5, 2.0], low[:, 0])
        assert_allclose([0.5, 2.0, 3.0], high[:, 0])

    def test_interpolator(self):
        """
        The interpolator is multilinear on the tensor grid.
        """
        axis = np.linspace(0.0, 1.0, 3)
        mesh = TensorMesh([axis, axis])
        values = 1.0 + mesh.dof_points[:, 0] + 2.0 * mesh.dof_points[:, 1]

        result = mesh.interpolator(values)([[0.25, 0.75], [1.0, 0.0]])

        assert_allclose([2.75, 2.0], result)


class TestMaps(TestCase):
    """
    Coordinate maps and their measures.
    """

    def test_meridian_disk(self):
        """
        The meridian grid of the unit cylinder of height 1 in R^3 has the
        volume pi.
        """
        axis = np.linspace(0.0, 1.0, 9)

        mesh = TensorMesh([axis, axis], mapping=MeridianMap(3))

        assert_allclose(math.pi, mesh.volumes.sum(), rtol=1e-12)

    def test_meridian_plane(self):
        """
        In the plane the meridian measure counts both sides of the axis.
        """
        axis = np.linspace(0.0, 1.0, 5)

        mesh = TensorMesh([axis, axis], mapping=MeridianMap(2))

        assert_allclose(2.0, mesh.volumes.sum(), rtol=1e-12)

    def test_polar_disk(self):
        """
        A polar grid with an identified center covers the unit disk.
        """
        cells = 16
        shape = (5, cells)

        def identify(index):
            flat = np.ravel_multi_index(tuple(index.T), shape)
            return np.where(index[:, 0] == 0, 0, flat)

        mesh = TensorMesh(
            [np.linspace(0.0, 1.0, 5), 2 * math.pi * np.arange(cells) / cells],
            mapping=PolarMap(), periods=[None, 2 * math.pi],
            identify=identify)

        self.assertEqual(1 + 4 * cells, mesh.dof_count)
        assert_allclose(math.pi, mesh.volumes.sum(), rtol=1e-12)

    def test_polar_points(self):
        """
        theta is measured from the positive second axis.
        """
        points = PolarMap().points([[2.0, 0.0], [1.0, math.pi / 2]])

        assert_allclose([[0.0, 2.0], [1.0, 0.0]], points, atol=1e-15)

    def test_spherical_jacobian(self):
        """
        The spherical Jacobian has determinant rho^2 sin(theta).
        """
        ref = np.array([[0.5, 0.3, 1.0], [2.0, 2.0, -1.0]])

        jacobian = SphericalMap().jacobian(ref)

        assert_allclose(
            ref[:, 0] ** 2 * np.sin(ref[:, 1]),
            np.abs(np.linalg.det(jacobian)))
