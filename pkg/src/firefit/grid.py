"""Structured rectangular grid, scalar fields, and discrete operators.

The grid is a uniform lattice of nx*ny nodes; node (i, j) sits at
(x0 + i*dx, y0 + j*dy).  Fields store one value per node in a (ny, nx)
array, so the row-major flat index of node (i, j) is j*nx + i.

The central operator here is the first-order Godunov upwind gradient
norm used by the eikonal residual,

    |grad T|_up = sqrt( max(Dx-, -Dx+, 0)^2 + max(Dy-, -Dy+, 0)^2 ),

which reads values only from the directions the fire is arriving from.
At domain edges the missing one-sided difference is dropped; no ghost
values are invented.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDimensionError, OutOfDomainError, ShapeMismatchError

__all__ = [
    "Grid",
    "ScalarField",
    "make_grid",
    "upwind_gradient_norm",
    "upwind_gradient_norm_squared",
    "count_local_minima",
    "bilinear_sample",
    "write_esri_ascii",
    "read_esri_ascii",
    "write_field_csv",
    "read_field_csv",
]

NODATA_DEFAULT = -9999.0


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid of nodes.

    Attributes
    ----------
    nx, ny : int
        Node counts per axis, at least 2 each.
    dx, dy : float
        Mesh steps in meters, positive.
    x0, y0 : float
        Coordinates of node (0, 0) in meters.
    """

    nx: int
    ny: int
    dx: float
    dy: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise InvalidDimensionError(
                f"grid needs at least 2 nodes per axis, got nx={self.nx}, ny={self.ny}"
            )
        if not (self.dx > 0 and self.dy > 0):
            raise InvalidDimensionError(
                f"mesh steps must be positive, got dx={self.dx}, dy={self.dy}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape of a field on this grid, (ny, nx)."""
        return (self.ny, self.nx)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def xmax(self) -> float:
        return self.x0 + (self.nx - 1) * self.dx

    @property
    def ymax(self) -> float:
        return self.y0 + (self.ny - 1) * self.dy

    def x_coords(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    def y_coords(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    def node_coords(self, i: int, j: int) -> tuple[float, float]:
        return (self.x0 + i * self.dx, self.y0 + j * self.dy)

    def node_index(self, i: int, j: int) -> int:
        """Row-major flat index of node (i, j)."""
        return j * self.nx + i

    def contains(self, x: float, y: float) -> bool:
        return (self.x0 <= x <= self.xmax) and (self.y0 <= y <= self.ymax)


def make_grid(nx: int, ny: int, dx: float, dy: float, x0: float = 0.0, y0: float = 0.0) -> Grid:
    """Construct a grid, validating node counts and mesh steps."""
    return Grid(int(nx), int(ny), float(dx), float(dy), float(x0), float(y0))


@dataclass
class ScalarField:
    """One value per grid node, stored as a (ny, nx) array.

    values[j, i] belongs to node (i, j).
    """

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ShapeMismatchError(
                f"field shape {self.values.shape} does not match grid shape {self.grid.shape}"
            )

    @classmethod
    def full(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def flat(self) -> np.ndarray:
        """Row-major flat view of the values."""
        return self.values.reshape(-1)


def _check_same_grid(f: ScalarField, grid: Grid | None):
    if grid is not None and f.grid != grid:
        raise ShapeMismatchError("field is not on the expected grid")


def upwind_gradient_norm_squared(t: ScalarField) -> np.ndarray:
    """Squared Godunov upwind gradient norm, as a raw (ny, nx) array.

    Kept separate from the norm so that the eikonal residual can use
    the squared quantity without a sqrt/square round trip.
    """
    v = t.values
    if not np.all(np.isfinite(v)):
        raise ValueError("upwind gradient requires a finite field")
    g = t.grid
    neg_inf = -np.inf

    # backward and forward one-sided differences; missing side -> -inf so
    # it never wins the max
    dxm = np.full(g.shape, neg_inf)
    dxm[:, 1:] = (v[:, 1:] - v[:, :-1]) / g.dx
    dxp = np.full(g.shape, neg_inf)
    dxp[:, :-1] = (v[:, :-1] - v[:, 1:]) / g.dx  # -D+ = (T_i - T_{i+1})/dx

    dym = np.full(g.shape, neg_inf)
    dym[1:, :] = (v[1:, :] - v[:-1, :]) / g.dy
    dyp = np.full(g.shape, neg_inf)
    dyp[:-1, :] = (v[:-1, :] - v[1:, :]) / g.dy

    mx = np.maximum(np.maximum(dxm, dxp), 0.0)
    my = np.maximum(np.maximum(dym, dyp), 0.0)
    return mx * mx + my * my


def upwind_gradient_norm(t: ScalarField) -> ScalarField:
    """First-order Godunov upwind norm of grad T.

    At each node: sqrt(max(Dx-, -Dx+, 0)^2 + max(Dy-, -Dy+, 0)^2) with
    one-sided differences divided by the respective mesh step; edges use
    only the difference toward the interior.
    """
    return ScalarField(t.grid, np.sqrt(upwind_gradient_norm_squared(t)))


def count_local_minima(t: ScalarField, ignition_nodes=()) -> int:
    """Number of strict 4-neighbor local minima, excluding given nodes.

    A node counts when its value is strictly below every existing
    neighbor; plateaus never count.  ignition_nodes holds flat node
    indices (or (i, j) pairs) to exclude.
    """
    v = t.values
    g = t.grid
    padded = np.pad(v, 1, mode="constant", constant_values=np.inf)
    nmin = np.minimum(
        np.minimum(padded[:-2, 1:-1], padded[2:, 1:-1]),
        np.minimum(padded[1:-1, :-2], padded[1:-1, 2:]),
    )
    is_pit = v < nmin
    for node in ignition_nodes:
        if isinstance(node, tuple):
            i, j = node
            k = g.node_index(i, j)
        else:
            k = int(node)
        is_pit.reshape(-1)[k] = False
    return int(np.count_nonzero(is_pit))


def bilinear_sample(f: ScalarField, x, y):
    """Bilinear interpolation of a field at points inside the bounding box.

    Accepts scalars or arrays; raises OutOfDomainError for any point
    outside the box.
    """
    g = f.grid
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x < g.x0) or np.any(x > g.xmax) or np.any(y < g.y0) or np.any(y > g.ymax):
        raise OutOfDomainError("bilinear sample point outside grid bounding box")
    s = (x - g.x0) / g.dx
    t = (y - g.y0) / g.dy
    i = np.clip(np.floor(s).astype(int), 0, g.nx - 2)
    j = np.clip(np.floor(t).astype(int), 0, g.ny - 2)
    fs = s - i
    ft = t - j
    v = f.values
    out = (
        v[j, i] * (1 - fs) * (1 - ft)
        + v[j, i + 1] * fs * (1 - ft)
        + v[j + 1, i] * (1 - fs) * ft
        + v[j + 1, i + 1] * fs * ft
    )
    return out if out.ndim else float(out)


def _fmt(x: float) -> str:
    """17 significant digits, enough to round-trip a double."""
    return format(float(x), ".17g")


def write_esri_ascii(f: ScalarField, path, nodata: float = NODATA_DEFAULT) -> None:
    """Write a field as an ESRI ASCII grid.

    The format carries a single CELLSIZE, so dx != dy is rejected; use
    write_field_csv for anisotropic grids.  Data rows run north to
    south (j = ny-1 first), per the format convention.
    """
    g = f.grid
    if g.dx != g.dy:
        raise InvalidDimensionError(
            "ESRI ASCII grid requires dx == dy; use write_field_csv instead"
        )
    lines = [
        f"NCOLS {g.nx}",
        f"NROWS {g.ny}",
        f"XLLCORNER {_fmt(g.x0)}",
        f"YLLCORNER {_fmt(g.y0)}",
        f"CELLSIZE {_fmt(g.dx)}",
        f"NODATA_VALUE {_fmt(nodata)}",
    ]
    for j in range(g.ny - 1, -1, -1):
        lines.append(" ".join(_fmt(v) for v in f.values[j, :]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_esri_ascii(path) -> ScalarField:
    """Read a field written by write_esri_ascii."""
    with open(path) as fh:
        tokens = fh.read().split()
    header = {}
    pos = 0
    for _ in range(6):
        key = tokens[pos].upper()
        header[key] = tokens[pos + 1]
        pos += 2
    nx = int(header["NCOLS"])
    ny = int(header["NROWS"])
    cell = float(header["CELLSIZE"])
    g = make_grid(nx, ny, cell, cell, float(header["XLLCORNER"]), float(header["YLLCORNER"]))
    data = np.array(tokens[pos:], dtype=float)
    if data.size != nx * ny:
        raise ShapeMismatchError(f"expected {nx * ny} values, found {data.size}")
    values = data.reshape(ny, nx)[::-1, :].copy()  # undo north-to-south row order
    return ScalarField(g, values)


def write_field_csv(f: ScalarField, path) -> None:
    """CSV fallback for anisotropic grids: one row per node, i,j,x,y,value."""
    g = f.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "x", "y", "value"])
        for j in range(g.ny):
            for i in range(g.nx):
                x, y = g.node_coords(i, j)
                w.writerow([i, j, _fmt(x), _fmt(y), _fmt(f.values[j, i])])


def read_field_csv(path) -> ScalarField:
    """Read a field written by write_field_csv."""
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != ["i", "j", "x", "y", "value"]:
            raise ShapeMismatchError(f"unexpected field CSV header: {header}")
        for row in r:
            rows.append((int(row[0]), int(row[1]), float(row[2]), float(row[3]), float(row[4])))
    nx = max(r[0] for r in rows) + 1
    ny = max(r[1] for r in rows) + 1
    if len(rows) != nx * ny:
        raise ShapeMismatchError("field CSV does not cover a full grid")
    by_ij = {(r[0], r[1]): r for r in rows}
    x0, y0 = by_ij[(0, 0)][2], by_ij[(0, 0)][3]
    dx = by_ij[(1, 0)][2] - x0
    dy = by_ij[(0, 1)][3] - y0
    g = make_grid(nx, ny, dx, dy, x0, y0)
    values = np.empty(g.shape)
    for i, j, _, _, v in rows:
        values[j, i] = v
    return ScalarField(g, values)
