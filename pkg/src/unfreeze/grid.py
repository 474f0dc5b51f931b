"""Uniform tensor grids on intervals and axis-aligned rectangles.

Nodes are ordered with x varying fastest, so node ``(i, j)`` of a 2D grid
has flat index ``j * (nx + 1) + i``.

The energy discretization needs a piecewise-linear element gradient. In 1D
the elements are the cells; in 2D every rectangle is split into a
lower-left and an upper-right right triangle. ``elem_grad`` maps nodal
values to the stacked element gradients (row ``e * dim + d`` holds the
``d``-th component on element ``e``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class Grid:
    dimension: int
    extent: tuple[tuple[float, float], ...]
    n_cells: tuple[int, ...]
    coords: np.ndarray
    cell_volumes: np.ndarray
    node_weights: np.ndarray
    boundary: np.ndarray
    normals: np.ndarray
    surface_weights: np.ndarray
    dist: np.ndarray
    elem_grad: sp.csr_matrix = field(repr=False)
    elem_volumes: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        """Node-array shape in C order (ny+1, nx+1) for 2D."""
        return tuple(n + 1 for n in reversed(self.n_cells))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / n for (a, b), n in zip(self.extent, self.n_cells))

    @property
    def h(self) -> float:
        return max(self.spacing)

    @property
    def measure(self) -> float:
        return float(np.prod([b - a for a, b in self.extent]))

    @property
    def boundary_measure(self) -> float:
        if self.dimension == 1:
            return 2.0
        (x0, x1), (y0, y1) = self.extent
        return 2.0 * ((x1 - x0) + (y1 - y0))

    @property
    def is_boundary(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary] = True
        return mask

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.is_boundary)

    @property
    def n_elements(self) -> int:
        return self.elem_volumes.size

    def element_gradients(self, values) -> np.ndarray:
        """Gradient of the piecewise-linear interpolant, shape (n_elem, dim)."""
        return (self.elem_grad @ np.asarray(values, dtype=float)).reshape(-1, self.dimension)

    def boundary_field(self, values) -> np.ndarray:
        """Accept a nodal array or an already restricted boundary array."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] == self.n_nodes:
            return values[self.boundary]
        if values.shape[0] == self.boundary.size:
            return values
        raise ValueError(
            f"field of length {values.shape[0]} matches neither {self.n_nodes} nodes "
            f"nor {self.boundary.size} boundary nodes"
        )


@dataclass(frozen=True, eq=False)
class DiscreteField:
    grid: Grid
    values: np.ndarray
    positive: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (self.grid.n_nodes,):
            raise ValidationError(f"expected {self.grid.n_nodes} nodal values, got shape {values.shape}")

    def require_positive(self) -> "DiscreteField":
        """Check the strict-positivity flag; a no-op for unflagged fields."""
        if self.positive and not np.min(self.values) > 0:
            raise ValidationError(f"field flagged strictly positive has min {np.min(self.values):.3e}")
        return self

    def to_csv(self, path) -> None:
        write_field_csv(path, self.grid, {"value": self.values})


def build_grid(extent: Sequence, n_cells) -> Grid:
    """Build a uniform grid on ``[a, b]`` or ``[x0, x1] x [y0, y1]``.

    ``extent`` is either ``(a, b)`` or ``((x0, x1), (y0, y1))``; ``n_cells``
    is an int (same count per axis) or one count per axis.
    """
    extent = _normalize_extent(extent)
    dim = len(extent)
    if np.isscalar(n_cells):
        n_cells = (int(n_cells),) * dim
    n_cells = tuple(int(n) for n in n_cells)

    problems = []
    if len(n_cells) != dim:
        problems.append(f"need {dim} cell counts, got {len(n_cells)}")
    problems += [f"n_cells must be >= 2, got {n}" for n in n_cells if n < 2]
    problems += [f"degenerate extent [{a}, {b}]" for a, b in extent if not b > a]
    if problems:
        raise ValidationError(problems)

    if dim == 1:
        return _build_1d(extent, n_cells)
    return _build_2d(extent, n_cells)


def _normalize_extent(extent) -> tuple[tuple[float, float], ...]:
    arr = np.asarray(extent, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        return ((float(arr[0]), float(arr[1])),)
    if arr.ndim == 1 and arr.size == 4:
        return ((float(arr[0]), float(arr[1])), (float(arr[2]), float(arr[3])))
    if arr.shape == (2, 2):
        return tuple((float(a), float(b)) for a, b in arr)
    raise ValidationError(f"extent must describe an interval or a rectangle, got {extent!r}")


def _build_1d(extent, n_cells) -> Grid:
    (a, b), = extent
    n, = n_cells
    h = (b - a) / n
    x = np.linspace(a, b, n + 1)
    x[-1] = b
    weights = np.full(n + 1, h)
    weights[[0, -1]] = h / 2

    rows = np.repeat(np.arange(n), 2)
    cols = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1).ravel()
    vals = np.tile([-1.0 / h, 1.0 / h], n)
    D = sp.csr_matrix((vals, (rows, cols)), shape=(n, n + 1))

    return Grid(
        dimension=1,
        extent=extent,
        n_cells=n_cells,
        coords=x[:, None],
        cell_volumes=np.full(n, h),
        node_weights=weights,
        boundary=np.array([0, n]),
        normals=np.array([[-1.0], [1.0]]),
        surface_weights=np.array([1.0, 1.0]),
        dist=np.minimum(x - a, b - x).clip(min=0.0),
        elem_grad=D,
        elem_volumes=np.full(n, h),
    )


def _build_2d(extent, n_cells) -> Grid:
    (x0, x1), (y0, y1) = extent
    nx, ny = n_cells
    hx, hy = (x1 - x0) / nx, (y1 - y0) / ny
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    coords = np.column_stack([X.ravel(), Y.ravel()])

    wx = np.full(nx + 1, hx)
    wx[[0, -1]] = hx / 2
    wy = np.full(ny + 1, hy)
    wy[[0, -1]] = hy / 2
    weights = np.outer(wy, wx).ravel()

    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    on_left, on_right = X == x0, X == x1
    on_bottom, on_top = Y == y0, Y == y1
    bmask = on_left | on_right | on_bottom | on_top
    boundary = idx[bmask]
    nrm = np.zeros((ny + 1, nx + 1, 2))
    nrm[..., 0] -= on_left
    nrm[..., 0] += on_right
    nrm[..., 1] -= on_bottom
    nrm[..., 1] += on_top
    normals = nrm[bmask]
    normals /= np.linalg.norm(normals, axis=1)[:, None]

    # each boundary edge gives half its length to both endpoints
    sw = np.zeros((ny + 1, nx + 1))
    sw[0, :] += wx
    sw[-1, :] += wx
    sw[:, 0] += wy
    sw[:, -1] += wy
    surface_weights = sw[bmask]

    dist = np.minimum.reduce([X - x0, x1 - X, Y - y0, y1 - Y]).clip(min=0.0).ravel()
    dist[boundary] = 0.0

    D = _triangle_gradient(idx, hx, hy)
    n_tri = 2 * nx * ny
    return Grid(
        dimension=2,
        extent=extent,
        n_cells=n_cells,
        coords=coords,
        cell_volumes=np.full(nx * ny, hx * hy),
        node_weights=weights,
        boundary=boundary,
        normals=normals,
        surface_weights=surface_weights,
        dist=dist,
        elem_grad=D,
        elem_volumes=np.full(n_tri, hx * hy / 2),
    )


def _triangle_gradient(idx, hx, hy) -> sp.csr_matrix:
    ll = idx[:-1, :-1].ravel()
    lr = idx[:-1, 1:].ravel()
    ul = idx[1:, :-1].ravel()
    ur = idx[1:, 1:].ravel()
    m = ll.size
    n_nodes = idx.size
    # lower-left triangle (ll, lr, ul); upper-right triangle (ur, ul, lr)
    tri = np.arange(m)
    rows, cols, vals = [], [], []

    def add(elem, comp, node, val):
        rows.append(2 * elem + comp)
        cols.append(node)
        vals.append(np.full(m, val))

    add(2 * tri, 0, lr, 1 / hx)
    add(2 * tri, 0, ll, -1 / hx)
    add(2 * tri, 1, ul, 1 / hy)
    add(2 * tri, 1, ll, -1 / hy)
    add(2 * tri + 1, 0, ur, 1 / hx)
    add(2 * tri + 1, 0, ul, -1 / hx)
    add(2 * tri + 1, 1, ur, 1 / hy)
    add(2 * tri + 1, 1, lr, -1 / hy)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(4 * m, n_nodes),
    )


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, DiscreteField) else np.asarray(u, dtype=float)


def discrete_gradient(u, grid: Grid | None = None) -> np.ndarray:
    """Nodal gradient, shape (n_nodes, dim).

    Central differences inside, second-order one-sided differences at the
    boundary; exact on affine fields.
    """
    if isinstance(u, DiscreteField):
        grid = u.grid
    if grid is None:
        raise TypeError("grid is required when u is a plain array")
    vals = _values(u).reshape(grid.shape)
    spacing = tuple(reversed(grid.spacing))
    parts = np.gradient(vals, *spacing, edge_order=2)
    if grid.dimension == 1:
        return np.asarray(parts).reshape(-1, 1)
    d_dy, d_dx = parts
    return np.column_stack([d_dx.ravel(), d_dy.ravel()])


def integrate_volume(f, grid: Grid | None = None) -> float:
    if isinstance(f, DiscreteField):
        grid = f.grid
    return float(grid.node_weights @ _values(f))


def integrate_surface(f, grid: Grid | None = None) -> float:
    if isinstance(f, DiscreteField):
        grid = f.grid
    return float(grid.surface_weights @ grid.boundary_field(_values(f)))


def write_field_csv(path, grid: Grid, columns: dict[str, np.ndarray]) -> None:
    names = ["x", "y"][: grid.dimension]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names + list(columns))
        cols = [np.asarray(c, dtype=float) for c in columns.values()]
        for i in range(grid.n_nodes):
            row = [repr(float(c)) for c in grid.coords[i]] + [repr(float(c[i])) for c in cols]
            writer.writerow(row)
