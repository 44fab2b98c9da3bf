"""
Mapped tensor-product grids split into simplices.

A mesh is a tensor grid in reference coordinates, a coordinate map to
physical space and an optional measure factor. Each kept cell is split
into the d! Kuhn simplices. The piecewise linear gradient of a simplex is
taken in reference coordinates and pushed to physical space with the
Jacobian of the map at the simplex centroid.

Grid nodes can be identified (the origin of a polar grid, the poles of a
spherical grid) through a node to degree of freedom map. The unknowns
of every solver are the degrees of freedom, not the grid nodes.
"""
import itertools
import logging
import math

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator


class IdentityMap:
    """
    Reference coordinates are the physical coordinates.
    """

    def points(self, ref):
        return np.array(ref, dtype=float)

    def jacobian(self, ref):
        ref = np.atleast_2d(ref)
        count, dimension = ref.shape
        return np.broadcast_to(
            np.eye(dimension), (count, dimension, dimension)).copy()

    def measure(self, ref):
        return np.ones(len(np.atleast_2d(ref)))


class MeridianMap(IdentityMap):
    """
    The (|x'|, x_n) half-plane of an axisymmetric domain in R^n.

    Gradients are the planar ones and the measure carries the area of the
    sphere of radius |x'| in R^{n-1}.
    """

    def __init__(self, n):
        self.n = n
        self._sphere = 2.0 * math.pi ** ((n - 1) / 2.0) / math.gamma(
            (n - 1) / 2.0)

    def measure(self, ref):
        radius = np.atleast_2d(ref)[:, 0]
        return self._sphere * radius ** (self.n - 2)


class PolarMap(IdentityMap):
    """
    (rho, theta) to xi = (rho sin theta, rho cos theta).

    theta is measured from the positive xi_2 axis so theta = 0 is the
    symmetry axis of the upper half-disk.
    """

    def points(self, ref):
        ref = np.atleast_2d(ref)
        rho, theta = ref[:, 0], ref[:, 1]
        return np.stack([rho * np.sin(theta), rho * np.cos(theta)], axis=1)

    def jacobian(self, ref):
        ref = np.atleast_2d(ref)
        rho, theta = ref[:, 0], ref[:, 1]
        result = np.empty((len(rho), 2, 2))
        result[:, 0, 0] = np.sin(theta)
        result[:, 0, 1] = rho * np.cos(theta)
        result[:, 1, 0] = np.cos(theta)
        result[:, 1, 1] = -rho * np.sin(theta)
        return result


class SphericalMap(IdentityMap):
    """
    (rho, theta, phi) to
    xi = (rho sin theta cos phi, rho sin theta sin phi, rho cos theta).
    """

    def points(self, ref):
        ref = np.atleast_2d(ref)
        rho, theta, phi = ref[:, 0], ref[:, 1], ref[:, 2]
        return np.stack([
            rho * np.sin(theta) * np.cos(phi),
            rho * np.sin(theta) * np.sin(phi),
            rho * np.cos(theta),
            ], axis=1)

    def jacobian(self, ref):
        ref = np.atleast_2d(ref)
        rho, theta, phi = ref[:, 0], ref[:, 1], ref[:, 2]
        st, ct = np.sin(theta), np.cos(theta)
        sp, cp = np.sin(phi), np.cos(phi)
        result = np.empty((len(rho), 3, 3))
        result[:, 0] = np.stack([st * cp, rho * ct * cp, -rho * st * sp], 1)
        result[:, 1] = np.stack([st * sp, rho * ct * sp, rho * st * cp], 1)
        result[:, 2] = np.stack([ct, -rho * st, np.zeros_like(rho)], 1)
        return result


def graded_axis(start, stop, spacing, refinements=(), growth=1.5):
    """
    Nodes from `start` to `stop` with at most `spacing` between them.

    `refinements` is a list of (low, high, target) triples. Inside
    [low, high] the spacing is `target` and it grows geometrically with
    factor `growth` away from it, up to `spacing`.
    """
    if not stop > start:
        raise ValueError(f'Empty axis [{start}, {stop}].')
    if not refinements:
        count = max(1, int(math.ceil((stop - start) / spacing - 1e-9)))
        return np.linspace(start, stop, count + 1)

    def local_spacing(x):
        result = spacing
        for low, high, target in refinements:
            distance = max(low - x, x - high, 0.0)
            result = min(result, target + (growth - 1.0) * distance)
        return result

    nodes = [start]
    # Anchor the refinement boxes on nodes.
    anchors = sorted(
        value
        for low, high, _ in refinements
        for value in (low, high)
        if start < value < stop
        )
    x = start
    while True:
        step = local_spacing(x)
        remaining = stop - x
        pending = [a for a in anchors if x < a < stop]
        if not pending and remaining <= step * (1 + 1e-9):
            break
        # Split the rest evenly rather than leave a sliver.
        if remaining < 1.5 * step:
            forward = x + 0.5 * remaining
        else:
            forward = x + step
        if pending and pending[0] < forward:
            forward = pending[0]
        nodes.append(forward)
        x = forward
    nodes.append(stop)
    return np.array(nodes)


class TensorMesh:
    """
    Simplicial mesh of a mapped tensor grid.

    `axes` is a list of 1-D node arrays in reference coordinates.
    `periods` gives, per axis, the period of a periodic axis or None.
    A periodic axis lists the nodes of [a, a + period) and its last cell
    wraps around.
    `cell_filter`, when given, receives the reference corners of all cells
    as an array (cells, 2^d, d) and returns the mask of kept cells.
    `flip`, when given, receives the reference centers of all cells and
    returns a (cells, d) boolean array: a flipped axis splits its cell
    with the mirrored diagonal.
    `identify`, when given, receives the node multi-indices and returns a
    key per node; nodes with the same key share one degree of freedom.
    """

    def __init__(
            self, axes, mapping=None, periods=None, cell_filter=None,
            flip=None, identify=None):
        self.axes = [np.asarray(axis, dtype=float) for axis in axes]
        self.dimension = len(self.axes)
        self.mapping = mapping or IdentityMap()
        self.periods = list(periods or [None] * self.dimension)
        self.shape = tuple(len(axis) for axis in self.axes)

        self._build_nodes()
        self._build_cells(cell_filter, flip)
        self._build_dofs(identify)
        self._build_simplices()
        logging.debug(
            f'Mesh with {self.dof_count} unknowns and '
            f'{len(self.volumes)} simplices on grid {self.shape}.')

    def _build_nodes(self):
        grids = np.meshgrid(*self.axes, indexing='ij')
        self.node_ref = np.stack([g.ravel() for g in grids], axis=1)
        index = np.meshgrid(
            *[np.arange(size) for size in self.shape], indexing='ij')
        self.node_index = np.stack([i.ravel() for i in index], axis=1)

    def _cell_counts(self):
        return [
            size if period is not None else size - 1
            for size, period in zip(self.shape, self.periods)
            ]

    def _upper(self, axis, index):
        """
        Reference coordinate of node index + 1 along an axis.
        """
        nodes = self.axes[axis]
        period = self.periods[axis]
        if period is None:
            return nodes[index + 1]
        wrapped = index + 1 >= len(nodes)
        upper = nodes[np.minimum(index + 1, len(nodes) - 1)]
        return np.where(wrapped, nodes[0] + period, upper)

    def _build_cells(self, cell_filter, flip):
        d = self.dimension
        counts = self._cell_counts()
        index = np.meshgrid(*[np.arange(c) for c in counts], indexing='ij')
        lower = np.stack([i.ravel() for i in index], axis=1)

        low_ref = np.stack(
            [self.axes[a][lower[:, a]] for a in range(d)], axis=1)
        high_ref = np.stack(
            [self._upper(a, lower[:, a]) for a in range(d)], axis=1)
        bits = np.array(list(itertools.product((0, 1), repeat=d)))

        if cell_filter is not None:
            corners = (
                low_ref[:, None, :]
                + bits[None, :, :] * (high_ref - low_ref)[:, None, :])
            keep = np.asarray(cell_filter(corners), dtype=bool)
            lower, low_ref, high_ref = (
                lower[keep], low_ref[keep], high_ref[keep])

        if flip is not None:
            flips = np.asarray(
                flip(0.5 * (low_ref + high_ref)), dtype=bool).reshape(-1, d)
        else:
            flips = np.zeros((len(lower), d), dtype=bool)

        self.cell_lower = lower
        self.cell_low_ref = low_ref
        self.cell_high_ref = high_ref
        self.cell_flips = flips

    def _flat(self, multi_index):
        return np.ravel_multi_index(tuple(multi_index.T), self.shape)

    def _build_dofs(self, identify):
        d = self.dimension
        used = np.zeros(len(self.node_ref), dtype=bool)
        for bits in itertools.product((0, 1), repeat=d):
            corner = self.cell_lower + np.array(bits)
            for a in range(d):
                if self.periods[a] is not None:
                    corner[:, a] %= self.shape[a]
            used[self._flat(corner)] = True

        if identify is not None:
            keys = np.asarray(identify(self.node_index))
        else:
            keys = np.arange(len(self.node_ref))

        unique_keys, first = np.unique(keys[used], return_index=True)
        # Nodes identified with a used node share its degree of freedom.
        position = np.minimum(
            np.searchsorted(unique_keys, keys), len(unique_keys) - 1)
        self.dof_of_node = np.where(
            unique_keys[position] == keys, position, -1).astype(np.int64)
        self.dof_count = len(unique_keys)
        representative = np.flatnonzero(used)[first]
        self.dof_node = representative
        self.dof_ref = self.node_ref[representative]
        self.dof_points = self.mapping.points(self.dof_ref)

    def _build_simplices(self):
        d = self.dimension
        cells = len(self.cell_lower)
        permutations = list(itertools.permutations(range(d)))
        size = self.cell_high_ref - self.cell_low_ref

        vertex_bits = []
        for permutation in permutations:
            path = [np.zeros(d, dtype=int)]
            for axis in permutation:
                step = path[-1].copy()
                step[axis] = 1
                path.append(step)
            vertex_bits.append(np.array(path))
        # (simplices per cell, d + 1, d)
        vertex_bits = np.array(vertex_bits)

        # Per cell and simplex, the actual corner bits after flips.
        bits = np.where(
            self.cell_flips[:, None, None, :],
            1 - vertex_bits[None, :, :, :],
            vertex_bits[None, :, :, :])
        ref = (
            self.cell_low_ref[:, None, None, :]
            + bits * size[:, None, None, :])
        corner = self.cell_lower[:, None, None, :] + bits
        for a in range(d):
            if self.periods[a] is not None:
                corner[..., a] %= self.shape[a]

        ref = ref.reshape(-1, d + 1, d)
        corner = corner.reshape(-1, d + 1, d)
        nodes = self._flat(corner.reshape(-1, d)).reshape(-1, d + 1)

        edges = ref[:, 1:, :] - ref[:, :1, :]
        reference_gradient = np.linalg.inv(edges)
        local = np.concatenate(
            [-np.ones((d, 1)), np.eye(d)], axis=1)
        ref_gradients = reference_gradient @ local

        centroid_ref = ref.mean(axis=1)
        jacobian = self.mapping.jacobian(centroid_ref)
        inverse_transpose = np.transpose(np.linalg.inv(jacobian), (0, 2, 1))

        self.simplex_nodes = nodes
        self.simplices = self.dof_of_node[nodes]
        self.simplex_cell = np.repeat(np.arange(cells), len(permutations))
        self.centroid_ref = centroid_ref
        self.centroids = self.mapping.points(centroid_ref)
        self.local_gradients = inverse_transpose @ ref_gradients
        self.volumes = (
            np.abs(np.linalg.det(edges)) / math.factorial(d)
            * np.abs(np.linalg.det(jacobian))
            * self.mapping.measure(centroid_ref)
            )

    def gradient_operator(self, metric=None):
        """
        Sparse matrix of shape (simplices * d, dofs) mapping degrees of
        freedom to the per-simplex gradient, optionally multiplied by a
        per-simplex (d, d) metric.
        """
        d = self.dimension
        local = self.local_gradients
        if metric is not None:
            local = metric @ local
        count = len(local)
        rows = np.broadcast_to(
            (np.arange(count)[:, None] * d + np.arange(d))[:, :, None],
            local.shape)
        columns = np.broadcast_to(self.simplices[:, None, :], local.shape)
        return sparse.coo_matrix(
            (local.ravel(), (rows.ravel(), columns.ravel())),
            shape=(count * d, self.dof_count)).tocsr()

    def lumped_mass(self):
        """
        Volume of the simplices shared equally by their vertices.
        """
        share = np.repeat(
            self.volumes / (self.dimension + 1), self.dimension + 1)
        return np.bincount(
            self.simplices.ravel(), weights=share, minlength=self.dof_count)

    def dual_boxes(self):
        """
        Reference box around each grid node, bounded by the midpoints to
        its neighbours. Return (low, high) arrays of shape (nodes, d).
        """
        low = np.empty_like(self.node_ref)
        high = np.empty_like(self.node_ref)
        for a, nodes in enumerate(self.axes):
            period = self.periods[a]
            if period is None:
                before = np.concatenate([nodes[:1], nodes[:-1]])
                after = np.concatenate([nodes[1:], nodes[-1:]])
            else:
                before = np.concatenate([nodes[-1:] - period, nodes[:-1]])
                after = np.concatenate([nodes[1:], nodes[:1] + period])
            index = self.node_index[:, a]
            low[:, a] = 0.5 * (nodes[index] + before[index])
            high[:, a] = 0.5 * (nodes[index] + after[index])
        return low, high

    def node_values(self, dof_values):
        """
        Expand degree of freedom values to the full tensor grid, with NaN
        on unused nodes.
        """
        values = np.full(len(self.node_ref), np.nan)
        used = self.dof_of_node >= 0
        values[used] = np.asarray(dof_values)[self.dof_of_node[used]]
        return values.reshape(self.shape)

    def interpolator(self, dof_values):
        """
        Return a callable evaluating the field at reference coordinates,
        multilinear on the tensor grid.
        """
        axes = list(self.axes)
        values = self.node_values(dof_values)
        for a, period in enumerate(self.periods):
            if period is None:
                continue
            axes[a] = np.concatenate([axes[a], axes[a][:1] + period])
            values = np.concatenate(
                [values, np.take(values, [0], axis=a)], axis=a)
        return RegularGridInterpolator(
            axes, values, bounds_error=False, fill_value=None)
