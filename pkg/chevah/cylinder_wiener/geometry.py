"""
Obstacle sets and the grids of the half-cylinder and of the unit ball.

An obstacle set F is a union of primitives in the closed half-cylinder.
The base plate B' x {0} is implicit in every set read from a document and
it is dropped from annular pieces.

Grid nodes are classified by intersecting the closed dual box of the node
with the primitives, so F is slightly inflated on every grid.
"""
import enum
import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

from chevah.cylinder_wiener.mesh import (
    MeridianMap,
    PolarMap,
    SphericalMap,
    TensorMesh,
    graded_axis,
    )
from chevah.cylinder_wiener.transform import inverse_points, reflect_points


# Slack when testing |x'| <= 1 on grid coordinates.
ROUND_OFF = 1e-12


class GeometryException(Exception):
    """
    Generic geometry exception.
    """
    def __init__(self, message):
        super().__init__(message)
        self.message = message


class ResolutionTooCoarse(GeometryException):
    """
    A primitive of the obstacle is not resolved by the grid.
    """


class NodeClass(enum.IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    LATERAL = 2
    FAR_END = 3
    ORIGIN_ADJACENT = 4
    ORIGIN = 5
    OUTER = 6


def _distance_to_boxes(point, low, high):
    """
    Euclidean distance from a point to each box of (m, k) arrays.
    """
    nearest = np.clip(point, low, high)
    return np.linalg.norm(nearest - point, axis=1)


def _farthest_from_origin(low, high):
    return np.linalg.norm(
        np.maximum(np.abs(low), np.abs(high)), axis=1)


def _overlaps(low, high, start, stop):
    return (low <= stop) & (high >= start)


@dataclass(frozen=True)
class FullDisk:
    """
    The whole cross-section B'.
    """
    radius = 1.0

    @property
    def center(self):
        return None

    def to_dict(self):
        return 'full'


@dataclass(frozen=True)
class SubBall:
    """
    A closed ball of the cross-section, centered in R^{n-1}.
    """
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(
                f'Cross-section radius must be positive, got {self.radius}.')
        object.__setattr__(
            self, 'center', tuple(float(v) for v in self.center))

    def to_dict(self):
        return {'center': list(self.center), 'radius': self.radius}


class Primitive:
    """
    Common interface of the obstacle primitives.

    Boxes are given in cylinder coordinates as (m, n) arrays. Shells are
    given in meridian coordinates (|x'|, x_n) as (m, 2) arrays and are
    only meaningful for primitives symmetric about the axis.
    """
    kind = None

    def axial_range(self):
        raise NotImplementedError()

    def clip(self, low, high):
        raise NotImplementedError()

    def intersects_boxes(self, low, high):
        raise NotImplementedError()

    def intersects_shells(self, low, high):
        raise NotImplementedError()

    def contains(self, points):
        raise NotImplementedError()

    def box_extent(self, n):
        raise NotImplementedError()

    def shell_extent(self):
        raise NotImplementedError()

    def features(self, n, meridian):
        """
        (axis, length) pairs: along each axis the grid spacing over the
        primitive must not exceed half the length. Axis -1 is x_n.
        """
        raise NotImplementedError()

    def refinements(self, n, meridian, cells_per_radius):
        return []

    @property
    def is_axisymmetric(self):
        return True

    def to_dict(self):
        raise NotImplementedError()


def _clip_interval(start, stop, low, high):
    """
    Intersection of [start, stop] with [low, high], or None when it is
    empty or when clipping left a single point of a proper interval.
    """
    new_start, new_stop = max(start, low), min(stop, high)
    if new_start > new_stop:
        return None
    if new_start == new_stop and start < stop:
        return None
    return new_start, new_stop


@dataclass(frozen=True)
class Base(Primitive):
    """
    The plate B' x {0}.
    """
    kind = 'base'

    def axial_range(self):
        return 0.0, 0.0

    def clip(self, low, high):
        return self if low <= 0 <= high else None

    def intersects_boxes(self, low, high):
        cross = _distance_to_boxes(
            np.zeros(low.shape[1] - 1), low[:, :-1], high[:, :-1])
        return _overlaps(low[:, -1], high[:, -1], 0.0, 0.0) & (
            cross <= 1 + ROUND_OFF)

    def intersects_shells(self, low, high):
        return _overlaps(low[:, 1], high[:, 1], 0.0, 0.0) & (
            low[:, 0] <= 1 + ROUND_OFF)

    def contains(self, points):
        points = np.atleast_2d(points)
        return (np.abs(points[:, -1]) <= ROUND_OFF) & (
            np.linalg.norm(points[:, :-1], axis=1) <= 1 + ROUND_OFF)

    def box_extent(self, n):
        return np.r_[-np.ones(n - 1), 0.0], np.r_[np.ones(n - 1), 0.0]

    def shell_extent(self):
        return np.array([0.0, 0.0]), np.array([1.0, 0.0])

    def features(self, n, meridian):
        return []

    def to_dict(self):
        return {'type': 'base'}


@dataclass(frozen=True)
class SolidBall(Primitive):
    """
    A closed ball intersected with the closed cylinder and with the
    axial `window`.
    """
    center: tuple
    radius: float
    window: tuple = (-math.inf, math.inf)
    kind = 'ball'

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(
                f'Ball radius must be positive, got {self.radius}.')
        object.__setattr__(
            self, 'center', tuple(float(v) for v in self.center))
        object.__setattr__(
            self, 'window', tuple(float(v) for v in self.window))

    def axial_range(self):
        middle = self.center[-1]
        return (
            max(middle - self.radius, self.window[0]),
            min(middle + self.radius, self.window[1]),
            )

    def clip(self, low, high):
        start, stop = self.axial_range()
        if _clip_interval(start, stop, low, high) is None:
            return None
        window = (max(self.window[0], low), min(self.window[1], high))
        return replace(self, window=window)

    def _clipped(self, low, high, axis):
        start, stop = self.axial_range()
        low = low.copy()
        high = high.copy()
        low[:, axis] = np.maximum(low[:, axis], start)
        high[:, axis] = np.minimum(high[:, axis], stop)
        return low, high, low[:, axis] <= high[:, axis]

    def intersects_boxes(self, low, high):
        low, high, inside = self._clipped(low, high, -1)
        distance = _distance_to_boxes(np.array(self.center), low, high)
        return inside & (distance <= self.radius)

    def intersects_shells(self, low, high):
        low, high, inside = self._clipped(low, high, 1)
        distance = _distance_to_boxes(
            np.array([0.0, self.center[-1]]), low, high)
        return inside & (distance <= self.radius)

    def contains(self, points):
        points = np.atleast_2d(points)
        start, stop = self.axial_range()
        return (
            (np.linalg.norm(points - np.array(self.center), axis=1)
                <= self.radius)
            & (points[:, -1] >= start) & (points[:, -1] <= stop)
            )

    def box_extent(self, n):
        start, stop = self.axial_range()
        center = np.array(self.center)
        low = center - self.radius
        high = center + self.radius
        low[-1], high[-1] = start, stop
        return low, high

    def shell_extent(self):
        start, stop = self.axial_range()
        return np.array([0.0, start]), np.array([self.radius, stop])

    def features(self, n, meridian):
        axes = 2 if meridian else n
        return [(axis, 2 * self.radius) for axis in range(axes)]

    def refinements(self, n, meridian, cells_per_radius):
        target = self.radius / cells_per_radius
        if meridian:
            low, high = self.shell_extent()
        else:
            low, high = self.box_extent(n)
        return [
            (axis, low[axis], high[axis], target)
            for axis in range(len(low))
            ]

    @property
    def is_axisymmetric(self):
        return all(v == 0 for v in self.center[:-1])

    def to_dict(self):
        result = {
            'type': 'ball',
            'center': list(self.center),
            'radius': self.radius,
            }
        if self.window != (-math.inf, math.inf):
            result['window'] = list(self.window)
        return result


@dataclass(frozen=True)
class Slab(Primitive):
    """
    cross x [a, b] for a cross-section that is B' or one of its sub-balls.
    """
    cross: object
    interval: tuple
    kind = 'slab'

    def __post_init__(self):
        start, stop = (float(v) for v in self.interval)
        if start > stop:
            raise ValueError(f'Empty slab interval [{start}, {stop}].')
        object.__setattr__(self, 'interval', (start, stop))

    def axial_range(self):
        return self.interval

    def clip(self, low, high):
        interval = _clip_interval(*self.interval, low, high)
        if interval is None:
            return None
        return replace(self, interval=interval)

    def _cross_center(self, n):
        if isinstance(self.cross, FullDisk):
            return np.zeros(n - 1)
        return np.array(self.cross.center)

    def intersects_boxes(self, low, high):
        n = low.shape[1]
        distance = _distance_to_boxes(
            self._cross_center(n), low[:, :-1], high[:, :-1])
        return _overlaps(low[:, -1], high[:, -1], *self.interval) & (
            distance <= self.cross.radius + ROUND_OFF)

    def intersects_shells(self, low, high):
        return _overlaps(low[:, 1], high[:, 1], *self.interval) & (
            low[:, 0] <= self.cross.radius + ROUND_OFF)

    def contains(self, points):
        points = np.atleast_2d(points)
        n = points.shape[1]
        distance = np.linalg.norm(
            points[:, :-1] - self._cross_center(n), axis=1)
        return (
            (distance <= self.cross.radius + ROUND_OFF)
            & (np.linalg.norm(points[:, :-1], axis=1) <= 1 + ROUND_OFF)
            & (points[:, -1] >= self.interval[0])
            & (points[:, -1] <= self.interval[1])
            )

    def box_extent(self, n):
        center = self._cross_center(n)
        radius = self.cross.radius
        return (
            np.r_[center - radius, self.interval[0]],
            np.r_[center + radius, self.interval[1]],
            )

    def shell_extent(self):
        return (
            np.array([0.0, self.interval[0]]),
            np.array([self.cross.radius, self.interval[1]]),
            )

    def features(self, n, meridian):
        result = []
        length = self.interval[1] - self.interval[0]
        if length > 0:
            result.append((-1, length))
        if isinstance(self.cross, FullDisk):
            return result
        cross_axes = 1 if meridian else n - 1
        return result + [
            (axis, 2 * self.cross.radius) for axis in range(cross_axes)]

    @property
    def is_axisymmetric(self):
        return isinstance(self.cross, FullDisk) or all(
            v == 0 for v in self.cross.center)

    def to_dict(self):
        return {
            'type': 'slab',
            'cross': self.cross.to_dict(),
            'interval': list(self.interval),
            }


@dataclass(frozen=True)
class LateralPatch(Primitive):
    """
    The part {|x'| = 1, a <= x_n <= b} of the lateral boundary.
    """
    interval: tuple
    kind = 'lateral'

    def __post_init__(self):
        start, stop = (float(v) for v in self.interval)
        if start > stop:
            raise ValueError(f'Empty lateral interval [{start}, {stop}].')
        object.__setattr__(self, 'interval', (start, stop))

    def axial_range(self):
        return self.interval

    def clip(self, low, high):
        interval = _clip_interval(*self.interval, low, high)
        if interval is None:
            return None
        return replace(self, interval=interval)

    def intersects_boxes(self, low, high):
        n = low.shape[1]
        nearest = _distance_to_boxes(
            np.zeros(n - 1), low[:, :-1], high[:, :-1])
        farthest = _farthest_from_origin(low[:, :-1], high[:, :-1])
        return _overlaps(low[:, -1], high[:, -1], *self.interval) & (
            nearest <= 1 + ROUND_OFF) & (farthest >= 1 - ROUND_OFF)

    def intersects_shells(self, low, high):
        return _overlaps(low[:, 1], high[:, 1], *self.interval) & (
            low[:, 0] <= 1 + ROUND_OFF) & (high[:, 0] >= 1 - ROUND_OFF)

    def contains(self, points):
        points = np.atleast_2d(points)
        radius = np.linalg.norm(points[:, :-1], axis=1)
        return (
            (np.abs(radius - 1) <= ROUND_OFF)
            & (points[:, -1] >= self.interval[0])
            & (points[:, -1] <= self.interval[1])
            )

    def box_extent(self, n):
        return (
            np.r_[-np.ones(n - 1), self.interval[0]],
            np.r_[np.ones(n - 1), self.interval[1]],
            )

    def shell_extent(self):
        return (
            np.array([1.0, self.interval[0]]),
            np.array([1.0, self.interval[1]]),
            )

    def features(self, n, meridian):
        length = self.interval[1] - self.interval[0]
        return [(-1, length)] if length > 0 else []

    def to_dict(self):
        return {'type': 'lateral', 'interval': list(self.interval)}


def _cross_from_dict(value):
    if value == 'full':
        return FullDisk()
    return SubBall(center=tuple(value['center']), radius=value['radius'])


def primitive_from_dict(data):
    """
    Build a primitive from its JSON form.
    """
    kind = data.get('type')
    if kind == 'ball':
        window = data.get('window', (-math.inf, math.inf))
        return SolidBall(
            center=tuple(data['center']), radius=data['radius'],
            window=tuple(window))
    if kind == 'slab':
        return Slab(
            cross=_cross_from_dict(data['cross']),
            interval=tuple(data['interval']))
    if kind == 'lateral':
        return LateralPatch(interval=tuple(data['interval']))
    if kind == 'base':
        return Base()
    raise GeometryException(f'Unknown primitive type: {kind}.')


@dataclass(frozen=True)
class ObstacleSet:
    """
    The closed Dirichlet set F as a union of primitives.
    """
    n: int
    primitives: tuple = ()
    include_base: bool = True

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f'Dimension must be >= 2, got {self.n}.')
        primitives = tuple(
            p for p in self.primitives if not isinstance(p, Base))
        object.__setattr__(self, 'primitives', primitives)
        for primitive in primitives:
            center = getattr(primitive, 'center', None)
            if center is not None and len(center) != self.n:
                raise ValueError(
                    f'Ball center {center} is not in R^{self.n}.')
            cross = getattr(primitive, 'cross', None)
            if isinstance(cross, SubBall) and len(
                    cross.center) != self.n - 1:
                raise ValueError(
                    f'Cross-section center {cross.center} is not in '
                    f'R^{self.n - 1}.')

    @property
    def all_primitives(self):
        """
        The primitives with the base plate when it is part of the set.
        """
        if self.include_base:
            return (Base(),) + self.primitives
        return self.primitives

    @property
    def is_empty(self):
        return not self.all_primitives

    @property
    def is_axisymmetric(self):
        return all(p.is_axisymmetric for p in self.primitives)

    def axial_extent(self):
        """
        Return (lowest, highest) axial coordinate of the set.
        """
        ranges = [p.axial_range() for p in self.all_primitives]
        if not ranges:
            return None
        return min(r[0] for r in ranges), max(r[1] for r in ranges)

    def clip(self, low, high):
        """
        Intersect the set with the band low <= x_n <= high.
        """
        clipped = [p.clip(low, high) for p in self.primitives]
        return ObstacleSet(
            n=self.n,
            primitives=tuple(p for p in clipped if p is not None),
            include_base=self.include_base and low <= 0 <= high,
            )

    def union(self, other):
        return ObstacleSet(
            n=self.n,
            primitives=self.primitives + other.primitives,
            include_base=self.include_base or other.include_base,
            )

    def without_base(self):
        return replace(self, include_base=False)

    def intersects_boxes(self, low, high):
        result = np.zeros(len(low), dtype=bool)
        for primitive in self.all_primitives:
            result |= primitive.intersects_boxes(low, high)
        return result

    def intersects_shells(self, low, high):
        result = np.zeros(len(low), dtype=bool)
        for primitive in self.all_primitives:
            result |= primitive.intersects_shells(low, high)
        return result

    def contains(self, points):
        points = np.atleast_2d(points)
        result = np.zeros(len(points), dtype=bool)
        for primitive in self.all_primitives:
            result |= primitive.contains(points)
        return result

    def to_dict(self):
        result = {
            'dimension': self.n,
            'primitives': [p.to_dict() for p in self.primitives],
            }
        if not self.include_base:
            result['base'] = False
        return result

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data, n=None):
        n = data.get('dimension', n)
        if n is None:
            raise GeometryException('Obstacle dimension is not known.')
        try:
            primitives = tuple(
                primitive_from_dict(item)
                for item in data.get('primitives', []))
        except (KeyError, TypeError) as error:
            raise GeometryException(f'Invalid primitive: {error}.')
        return cls(
            n=int(n),
            primitives=primitives,
            include_base=data.get('base', True),
            )

    @classmethod
    def from_json(cls, text, n=None):
        return cls.from_dict(json.loads(text), n=n)

    @classmethod
    def load(cls, path, n=None):
        with open(path) as stream:
            return cls.from_json(stream.read(), n=n)


def annular_piece(F, j):
    """
    F intersected with the band j <= x_n <= 2j.
    """
    if j < 1:
        raise ValueError(f'Annulus index must be >= 1, got {j}.')
    return F.clip(float(j), 2.0 * j).without_base()


@dataclass(frozen=True)
class Resolution:
    """
    Grid density of cylinder grids, as cells per unit length.

    Around ball primitives the axes are graded down to
    radius / cells_per_radius.
    """
    radial_per_unit: float = 16.0
    axial_per_unit: float = 16.0
    cells_per_radius: int = 4
    growth: float = 1.5
    grading: bool = True

    def __post_init__(self):
        if not (self.radial_per_unit > 0 and self.axial_per_unit > 0):
            raise ValueError('Resolution must be positive.')
        if self.cells_per_radius < 1:
            raise ValueError('cells_per_radius must be >= 1.')
        if not self.growth > 1:
            raise ValueError('Grading growth must be > 1.')


@dataclass
class CylinderGrid:
    """
    A classified grid of the truncated cylinder bottom <= x_n <= top.

    `kind` is 'meridian' for the axisymmetric (|x'|, x_n) grid and 'full'
    for the n-dimensional one. Classes are given per degree of freedom.
    """
    n: int
    kind: str
    mesh: TensorMesh
    bottom: float
    top: float
    classes: np.ndarray
    obstacle: ObstacleSet

    @property
    def points(self):
        return self.mesh.dof_points

    @property
    def size(self):
        return self.mesh.dof_count

    @property
    def axial(self):
        return self.points[:, -1]

    @property
    def radial(self):
        if self.kind == 'meridian':
            return self.points[:, 0]
        return np.linalg.norm(self.points[:, :-1], axis=1)

    @property
    def dirichlet(self):
        return self.classes == NodeClass.DIRICHLET

    @property
    def lateral(self):
        return self.classes == NodeClass.LATERAL

    @property
    def far_end(self):
        return self.classes == NodeClass.FAR_END

    def cylinder_points(self):
        """
        Node coordinates in R^n. Meridian nodes are placed on the x_1 axis.
        """
        if self.kind == 'full':
            return self.points.copy()
        result = np.zeros((self.size, self.n))
        result[:, 0] = self.points[:, 0]
        result[:, -1] = self.points[:, 1]
        return result

    def band(self, low, high):
        """
        Mask of the nodes with low <= x_n <= high.
        """
        return (self.axial >= low - ROUND_OFF) & (
            self.axial <= high + ROUND_OFF)


def _axis_refinements(primitives, n, meridian, resolution, axis):
    if not resolution.grading:
        return []
    result = []
    for primitive in primitives:
        for index, low, high, target in primitive.refinements(
                n, meridian, resolution.cells_per_radius):
            if index == axis:
                result.append((low, high, target))
    return result


def _check_resolution(grid, primitives):
    meridian = grid.kind == 'meridian'
    axes = grid.mesh.axes
    for primitive in primitives:
        if meridian:
            low, high = primitive.shell_extent()
        else:
            low, high = primitive.box_extent(grid.n)
        for axis, length in primitive.features(grid.n, meridian):
            axis = axis % len(axes)
            nodes = axes[axis]
            start = max(low[axis], nodes[0])
            stop = min(high[axis], nodes[-1])
            overlapping = (nodes[1:] > start) & (nodes[:-1] < stop)
            if not np.any(overlapping):
                spacing = math.inf
            else:
                spacing = np.max(np.diff(nodes)[overlapping])
            if spacing > length / 2.0 + ROUND_OFF:
                raise ResolutionTooCoarse(
                    f'Primitive {primitive.to_dict()} spans less than two '
                    f'cells along axis {axis} (spacing {spacing:.3g}).')


def build_cylinder_grid(
        n, L, resolution, F, bottom=0.0, kind='auto', axisymmetric=True):
    """
    Build and classify the grid of bottom <= x_n <= L for the obstacle F.

    With `kind='auto'` the meridian grid is used when F and the boundary
    data (`axisymmetric`) are symmetric about the axis.
    """
    if not L > bottom:
        raise ValueError(f'Truncation {L} must be above {bottom}.')
    if kind == 'auto':
        kind = 'meridian' if (
            axisymmetric and F.is_axisymmetric) else 'full'
    if kind not in ('meridian', 'full'):
        raise ValueError(f'Unknown grid kind: {kind}.')
    obstacle = F.clip(bottom, L)
    primitives = obstacle.primitives
    meridian = kind == 'meridian'

    cross_spacing = 1.0 / resolution.radial_per_unit
    axial_spacing = 1.0 / resolution.axial_per_unit
    axial_axis = 1 if meridian else n - 1
    axial = graded_axis(
        bottom, L, axial_spacing,
        _axis_refinements(primitives, n, meridian, resolution, axial_axis),
        resolution.growth)

    if meridian:
        radial = graded_axis(
            0.0, 1.0, cross_spacing,
            _axis_refinements(primitives, n, meridian, resolution, 0),
            resolution.growth)
        mesh = TensorMesh([radial, axial], mapping=MeridianMap(n))
    else:
        cross = [
            graded_axis(
                -1.0, 1.0, cross_spacing,
                _axis_refinements(primitives, n, False, resolution, a),
                resolution.growth)
            for a in range(n - 1)
            ]

        def inside_cylinder(corners):
            radius = np.linalg.norm(corners[:, :, :-1], axis=2)
            return np.all(radius <= 1 + ROUND_OFF, axis=1)

        mesh = TensorMesh(cross + [axial], cell_filter=inside_cylinder)

    classes = _classify_cylinder(mesh, obstacle, meridian, n, L)
    grid = CylinderGrid(
        n=n, kind=kind, mesh=mesh, bottom=bottom, top=L, classes=classes,
        obstacle=obstacle)
    _check_resolution(grid, primitives)
    _check_coverage(grid, obstacle)
    logging.debug(
        f'Cylinder grid {kind} n={n} on [{bottom}, {L}] with '
        f'{grid.size} nodes, {int(np.sum(grid.dirichlet))} dirichlet.')
    return grid


def _classify_cylinder(mesh, obstacle, meridian, n, L):
    low, high = mesh.dual_boxes()
    nodes = mesh.dof_node
    low, high = low[nodes], high[nodes]
    if meridian:
        dirichlet = obstacle.intersects_shells(low, high)
        lateral = mesh.dof_ref[:, 0] >= 1 - ROUND_OFF
    else:
        dirichlet = obstacle.intersects_boxes(low, high)
        lateral = _lateral_nodes(mesh, n)
    far_end = mesh.dof_ref[:, -1] >= L - ROUND_OFF

    classes = np.full(mesh.dof_count, NodeClass.INTERIOR, dtype=np.int8)
    classes[far_end] = NodeClass.FAR_END
    classes[lateral] = NodeClass.LATERAL
    classes[dirichlet] = NodeClass.DIRICHLET
    return classes


def _lateral_nodes(mesh, n):
    """
    Nodes on the boundary of the kept cross-section cells.
    """
    cross_shape = mesh.shape[:-1]
    counts = np.zeros(cross_shape, dtype=int)
    cross_cells = np.unique(mesh.cell_lower[:, :-1], axis=0)
    for bits in np.ndindex(*([2] * (n - 1))):
        corner = cross_cells + np.array(bits)
        np.add.at(counts, tuple(corner.T), 1)
    node_cross = mesh.node_index[mesh.dof_node, :-1]
    incident = counts[tuple(node_cross.T)]
    return incident < 2 ** (n - 1)


def _check_coverage(grid, obstacle):
    low, high = grid.mesh.dual_boxes()
    low, high = low[grid.mesh.dof_node], high[grid.mesh.dof_node]
    for primitive in obstacle.all_primitives:
        if grid.kind == 'meridian':
            hit = primitive.intersects_shells(low, high)
        else:
            hit = primitive.intersects_boxes(low, high)
        if not np.any(hit):
            raise ResolutionTooCoarse(
                f'Primitive {primitive.to_dict()} contains no grid node.')


def bounding_box(F):
    """
    Return (low, high) corners of a box containing the primitives of F.
    """
    extents = [p.box_extent(F.n) for p in F.all_primitives]
    if not extents:
        raise GeometryException('Empty obstacle has no bounding box.')
    low = np.min([e[0] for e in extents], axis=0)
    high = np.max([e[1] for e in extents], axis=0)
    return low, high


def build_box_grid(K, half_side, cells, resolution, kind='auto'):
    """
    Grid of the cube of side 2 * half_side centered on the bounding box
    of K, in the whole space R^n.

    The cube faces are classified OUTER and the nodes of K DIRICHLET.
    With the meridian kind the cube becomes the cylinder
    |x'| <= half_side around the axis.
    """
    n = K.n
    low, high = bounding_box(K)
    center = 0.5 * (low + high)
    if kind == 'auto':
        kind = 'meridian' if K.is_axisymmetric else 'full'
    meridian = kind == 'meridian'
    spacing = 2.0 * half_side / cells
    primitives = K.all_primitives

    def axis_nodes(axis, start, stop):
        return graded_axis(
            start, stop, spacing,
            _axis_refinements(primitives, n, meridian, resolution, axis),
            resolution.growth)

    bottom = center[-1] - half_side
    top = center[-1] + half_side
    if meridian:
        mesh = TensorMesh(
            [axis_nodes(0, 0.0, half_side), axis_nodes(1, bottom, top)],
            mapping=MeridianMap(n))
        lo, hi = mesh.dual_boxes()
        dirichlet = K.intersects_shells(
            lo[mesh.dof_node], hi[mesh.dof_node])
        ref = mesh.dof_ref
        outer = (
            (ref[:, 0] >= half_side - ROUND_OFF)
            | (ref[:, 1] <= bottom + ROUND_OFF)
            | (ref[:, 1] >= top - ROUND_OFF))
    else:
        axes = [
            axis_nodes(a, center[a] - half_side, center[a] + half_side)
            for a in range(n)
            ]
        mesh = TensorMesh(axes)
        lo, hi = mesh.dual_boxes()
        dirichlet = K.intersects_boxes(lo[mesh.dof_node], hi[mesh.dof_node])
        ref = mesh.dof_ref
        outer = np.zeros(mesh.dof_count, dtype=bool)
        for a in range(n):
            outer |= (ref[:, a] <= axes[a][0] + ROUND_OFF) | (
                ref[:, a] >= axes[a][-1] - ROUND_OFF)

    classes = np.full(mesh.dof_count, NodeClass.INTERIOR, dtype=np.int8)
    classes[outer] = NodeClass.OUTER
    classes[dirichlet] = NodeClass.DIRICHLET
    grid = CylinderGrid(
        n=n, kind=kind, mesh=mesh, bottom=bottom, top=top, classes=classes,
        obstacle=K)
    _check_resolution(grid, K.primitives)
    _check_coverage(grid, K)
    if np.any(dirichlet & outer):
        raise GeometryException('Obstacle touches the faces of its box.')
    return grid


@dataclass(frozen=True)
class BallResolution:
    """
    Log-polar grid density of ball grids.

    Radial nodes are log-uniform from inner_radius to the outer radius.
    `angular_cells` is the number of cells around the circle for n=2 and
    of polar cells from pole to pole for n=3.
    """
    radial_nodes: int = 160
    angular_cells: int = 128
    inner_radius: float = 1e-6
    azimuth_cells: int = None

    def __post_init__(self):
        if self.radial_nodes < 2:
            raise ValueError('Ball grids need at least 2 radial nodes.')
        if self.angular_cells < 4 or self.angular_cells % 2:
            raise ValueError(
                f'Angular cells must be even and >= 4, '
                f'got {self.angular_cells}.')
        if not self.inner_radius > 0:
            raise ValueError('Inner radius must be positive.')


@dataclass
class BallGrid:
    """
    Log-polar grid of the ball B(0, outer_radius) in R^2 or R^3.

    The origin is a single degree of freedom. `reflection[k]` is the
    degree of freedom of the mirror image of node k under P and `upper`
    marks the nodes with xi_n >= 0.
    """
    n: int
    mesh: TensorMesh
    outer_radius: float
    classes: np.ndarray
    reflection: np.ndarray
    upper: np.ndarray
    origin: int

    @property
    def points(self):
        return self.mesh.dof_points

    @property
    def size(self):
        return self.mesh.dof_count

    @property
    def radius(self):
        return self.mesh.dof_ref[:, 0]

    @property
    def outer(self):
        return self.radius >= self.outer_radius * (1 - ROUND_OFF)

    def classes_with(self, mask):
        """
        Node classes once the nodes of `mask` are part of the Dirichlet set.
        """
        classes = self.classes.copy()
        classes[np.asarray(mask, dtype=bool)] = NodeClass.DIRICHLET
        classes[self.origin] = NodeClass.ORIGIN
        return classes

    def reference_points(self, xis):
        """
        Reference coordinates (rho, theta[, phi]) of physical points.
        """
        xis = np.atleast_2d(xis)
        rho = np.linalg.norm(xis, axis=1)
        if self.n == 2:
            return np.stack([rho, np.arctan2(xis[:, 0], xis[:, 1])], axis=1)
        safe = np.where(rho > 0, rho, 1.0)
        theta = np.arccos(np.clip(xis[:, 2] / safe, -1.0, 1.0))
        phi = np.arctan2(xis[:, 1], xis[:, 0])
        return np.stack([rho, theta, phi], axis=1)


def build_ball_grid(n, resolution, outer_radius=1.0, breakpoints=()):
    """
    Build the log-polar grid of B(0, outer_radius).

    The simplicial split is mirrored across the equator so the grid is
    invariant under the reflection P.
    """
    if n not in (2, 3):
        raise GeometryException(f'Ball grids support n=2 and n=3, not {n}.')
    if not 0 < resolution.inner_radius < outer_radius:
        raise ValueError(
            f'Inner radius {resolution.inner_radius} must be in '
            f'(0, {outer_radius}).')
    radial = np.geomspace(
        resolution.inner_radius, outer_radius, resolution.radial_nodes)
    extra = [b for b in breakpoints if 0 < b < outer_radius]
    radial = np.unique(np.concatenate([[0.0], radial, extra]))
    radial[-1] = outer_radius

    cells = resolution.angular_cells
    if n == 2:
        if cells % 4:
            raise ValueError(
                f'Angular cells must be a multiple of 4, got {cells}.')
        theta = -math.pi + 2 * math.pi * np.arange(cells) / cells
        axes = [radial, theta]
        periods = [None, 2 * math.pi]
        shape = (len(radial), cells)

        def flip(centers):
            result = np.zeros(centers.shape, dtype=bool)
            result[:, 1] = np.cos(centers[:, 1]) < 0
            return result

        def identify(index):
            flat = np.ravel_multi_index(tuple(index.T), shape)
            return np.where(index[:, 0] == 0, 0, flat)

        def mirror(index):
            result = index.copy()
            result[:, 1] = (cells // 2 - index[:, 1]) % cells
            return result

        def in_upper(index):
            return (index[:, 1] >= cells // 4) & (
                index[:, 1] <= 3 * cells // 4)

        mapping = PolarMap()
    else:
        azimuth = resolution.azimuth_cells or 2 * cells
        theta = np.linspace(0.0, math.pi, cells + 1)
        phi = -math.pi + 2 * math.pi * np.arange(azimuth) / azimuth
        axes = [radial, theta, phi]
        periods = [None, None, 2 * math.pi]
        shape = (len(radial), cells + 1, azimuth)

        def flip(centers):
            result = np.zeros(centers.shape, dtype=bool)
            result[:, 1] = centers[:, 1] > math.pi / 2
            return result

        def identify(index):
            pole = index.copy()
            on_pole = (index[:, 1] == 0) | (index[:, 1] == cells)
            pole[on_pole, 2] = 0
            flat = np.ravel_multi_index(tuple(pole.T), shape)
            return np.where(index[:, 0] == 0, 0, flat)

        def mirror(index):
            result = index.copy()
            result[:, 1] = cells - index[:, 1]
            return result

        def in_upper(index):
            return index[:, 1] <= cells // 2

        mapping = SphericalMap()

    mesh = TensorMesh(
        axes, mapping=mapping, periods=periods, flip=flip,
        identify=identify)

    dof_index = mesh.node_index[mesh.dof_node]
    mirrored = np.ravel_multi_index(tuple(mirror(dof_index).T), shape)
    reflection = mesh.dof_of_node[mirrored]
    origin = int(mesh.dof_of_node[0])

    classes = np.full(mesh.dof_count, NodeClass.INTERIOR, dtype=np.int8)
    classes[dof_index[:, 0] == 1] = NodeClass.ORIGIN_ADJACENT
    classes[dof_index[:, 0] == len(radial) - 1] = NodeClass.DIRICHLET
    classes[origin] = NodeClass.ORIGIN

    grid = BallGrid(
        n=n, mesh=mesh, outer_radius=outer_radius, classes=classes,
        reflection=reflection, upper=in_upper(dof_index), origin=origin)
    logging.debug(
        f'Ball grid n={n} radius {outer_radius} with {grid.size} nodes.')
    return grid


def _dual_samples(grid, dofs):
    """
    Reference sample points of the dual boxes of the given nodes: the
    corners, edge midpoints and centers. Pole nodes of n=3 grids sample
    the whole azimuth circle.
    """
    mesh = grid.mesh
    low, high = mesh.dual_boxes()
    node = mesh.dof_node[dofs]
    low, high = low[node], high[node]
    fractions = np.array(
        list(np.ndindex(*([3] * mesh.dimension)))) / 2.0
    samples = low[:, None, :] + fractions[None, :, :] * (
        high - low)[:, None, :]
    if grid.n == 3:
        index = mesh.node_index[node]
        pole = (index[:, 1] == 0) | (index[:, 1] == mesh.shape[1] - 1)
        if np.any(pole):
            circle = np.linspace(-math.pi, math.pi, samples.shape[1],
                                 endpoint=False)
            samples[pole, :, 2] = circle
    return samples


def transform_obstacle(params, F, grid, include_origin=True):
    """
    Indicator of F~ = T(F) u P T(F) u {0} on the nodes of a ball grid.

    The dual box of each upper node is pulled back through T^-1 and its
    bounding box is tested against F. Lower nodes copy the value of their
    mirror image, so the indicator is P-invariant.
    """
    if params.n != grid.n:
        raise GeometryException(
            f'Transform dimension {params.n} differs from grid {grid.n}.')
    mask = np.zeros(grid.size, dtype=bool)
    candidates = np.flatnonzero(grid.upper)
    candidates = candidates[candidates != grid.origin]

    if len(candidates) and not F.is_empty:
        samples = _dual_samples(grid, candidates)
        count, per_node, dimension = samples.shape
        xis = grid.mesh.mapping.points(samples.reshape(-1, dimension))
        xis = np.where(xis[:, -1:] < 0, reflect_points(xis), xis)
        x = inverse_points(params, xis).reshape(count, per_node, dimension)
        low = x.min(axis=1)
        high = x.max(axis=1)
        mask[candidates] = F.intersects_boxes(low, high)

    if F.include_base and grid.outer_radius >= 1 - ROUND_OFF:
        mask[grid.outer] = True
    lower = ~grid.upper
    mask[lower] = mask[grid.reflection[lower]]
    mask[grid.origin] = include_origin
    return mask


def pull_back_points(params, grid):
    """
    Cylinder coordinates of the upper nodes of a ball grid, clamped to the
    closed cylinder. Lower nodes get the point of their mirror image and
    the origin gets NaN.
    """
    xis = grid.points.copy()
    lower = ~grid.upper
    xis[lower] = reflect_points(xis[lower])
    xis[:, -1] = np.maximum(xis[:, -1], 0.0)
    result = np.full((grid.size, grid.n), np.nan)
    regular = np.ones(grid.size, dtype=bool)
    regular[grid.origin] = False
    x = inverse_points(params, xis[regular])
    radius = np.linalg.norm(x[:, :-1], axis=1)
    scale = np.where(radius > 1, 1.0 / np.maximum(radius, 1.0), 1.0)
    x[:, :-1] *= scale[:, None]
    x[:, -1] = np.maximum(x[:, -1], 0.0)
    result[regular] = x
    return result


def mcshane_extend(source_points, source_values, lipschitz, target_points,
                   chunk=4096):
    """
    McShane extension g(x) = min_y (f(y) + L |x - y|) over the source
    nodes y.
    """
    source_points = np.atleast_2d(np.asarray(source_points, dtype=float))
    source_values = np.asarray(source_values, dtype=float)
    target_points = np.atleast_2d(np.asarray(target_points, dtype=float))
    if len(source_points) == 0:
        raise GeometryException('McShane extension needs source nodes.')
    if not 0 <= lipschitz < np.inf:
        raise ValueError(
            f'Lipschitz constant must be finite and >= 0, got {lipschitz}.')
    result = np.empty(len(target_points))
    for start in range(0, len(target_points), chunk):
        block = target_points[start:start + chunk]
        distance = cdist(block, source_points)
        result[start:start + chunk] = np.min(
            source_values[None, :] + lipschitz * distance, axis=1)
    return result


def lipschitz_constant(points, values):
    """
    Smallest L for which the tabulated values are L-Lipschitz.

    Repeated points are allowed only with equal values.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float)
    if len(points) < 2:
        return 0.0
    distance = cdist(points, points)
    difference = np.abs(values[:, None] - values[None, :])
    repeated = distance == 0
    np.fill_diagonal(repeated, False)
    if np.any(repeated & (difference > 0)):
        first, second = np.argwhere(repeated & (difference > 0))[0]
        raise GeometryException(
            f'Point {points[first].tolist()} is given with values '
            f'{values[first]} and {values[second]}.')
    distinct = distance > 0
    if not np.any(distinct):
        return 0.0
    return float(np.max(difference[distinct] / distance[distinct]))
