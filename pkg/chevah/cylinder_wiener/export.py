"""
Writing fields and reports to disk.
"""
import json
import logging
import os

import numpy as np


# Legacy VTK cell types for triangles and tetrahedra.
VTK_CELL_TYPES = {3: 5, 4: 10}


def coordinate_names(grid):
    """
    Column names of the node coordinates of a grid.
    """
    kind = getattr(grid, 'kind', 'ball')
    if kind == 'meridian':
        return ['radius', f'x{grid.n}']
    if kind == 'ball':
        return [f'xi{i}' for i in range(1, grid.n + 1)]
    return [f'x{i}' for i in range(1, grid.mesh.dimension + 1)]


def write_field_csv(path, field):
    """
    One row per degree of freedom: the coordinates then the value.
    """
    grid = field.grid
    header = ','.join(coordinate_names(grid) + ['value'])
    data = np.column_stack([grid.points, field.values])
    np.savetxt(path, data, delimiter=',', header=header, comments='',
               fmt='%.17g')
    logging.debug(f'Wrote {len(data)} field values to {path}.')


def write_field_vtk(path, field, name='u'):
    """
    Legacy ASCII VTK unstructured grid with the simplices of the grid and
    the field as point data.
    """
    mesh = field.grid.mesh
    points = np.zeros((field.grid.size, 3))
    points[:, :mesh.dimension] = field.grid.points
    simplices = mesh.simplices
    per_cell = simplices.shape[1]
    cells = np.column_stack([np.full(len(simplices), per_cell), simplices])

    with open(path, 'w') as stream:
        stream.write('# vtk DataFile Version 3.0\n')
        stream.write(f'{name}\nASCII\nDATASET UNSTRUCTURED_GRID\n')
        stream.write(f'POINTS {len(points)} double\n')
        np.savetxt(stream, points, fmt='%.17g')
        stream.write(f'CELLS {len(cells)} {cells.size}\n')
        np.savetxt(stream, cells, fmt='%d')
        stream.write(f'CELL_TYPES {len(cells)}\n')
        np.savetxt(
            stream, np.full(len(cells), VTK_CELL_TYPES[per_cell]), fmt='%d')
        stream.write(f'POINT_DATA {len(points)}\n')
        stream.write(f'SCALARS {name} double 1\nLOOKUP_TABLE default\n')
        np.savetxt(stream, field.values, fmt='%.17g')
    logging.debug(f'Wrote VTK grid with {len(cells)} cells to {path}.')


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_report(path, report):
    """
    Write a report dictionary as indented JSON with sorted keys.
    """
    with open(path, 'w') as stream:
        json.dump(_plain(report), stream, indent=2, sort_keys=True)
        stream.write('\n')


def write_terms_csv(path, series):
    header = 'j,term,powered_term,partial_sum'
    rows = np.array(series.rows(), dtype=float).reshape(-1, 4)
    np.savetxt(path, rows, delimiter=',', header=header, comments='',
               fmt=['%d', '%.17g', '%.17g', '%.17g'])


def output_path(directory, name):
    os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, name)
