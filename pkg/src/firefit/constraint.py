"""Perimeter interpolation constraints HT = g.

Each observed perimeter is a set of points with known fire arrival
times.  Every point is located in the triangulated grid (each cell
split along its (i, j)-(i+1, j+1) diagonal), giving a row of at most 3
barycentric coefficients; all points of one perimeter falling in the
same triangle are condensed into a single row by summing their rows,
with the matching sum of times on the right-hand side.  The result is
a short, provably full-rank sparse system used two ways:

  * feasible point   u0 = H' (HH')^-1 g        (minimum-norm interpolant)
  * projector        P  = I - H' (HH')^-1 v    (null-space of H)

HH' is tiny (one row per triangle hit), so it is factored densely once.
Projection accuracy matters more than speed here: descent performs
~1e5 projected steps and the accumulated constraint violation must
stay below 1e-10, so every Gram solve gets one iterative-refinement
pass.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import (
    ConstraintDriftError,
    InvalidDimensionError,
    OutOfDomainError,
    RankDeficiencyError,
)
from .grid import Grid, ScalarField

__all__ = [
    "Perimeter",
    "ConstraintSystem",
    "locate_point",
    "triangle_sample",
    "build_constraints",
    "feasible_point",
    "project_nullspace",
    "read_perimeters_csv",
    "write_perimeters_csv",
]

PIVOT_RTOL = 1e-12
FEASIBLE_RTOL = 1e-10


@dataclass(frozen=True)
class Perimeter:
    """Ordered planar points with fire arrival times.

    A single-point perimeter is an ignition point.  time is the nominal
    arrival time shared by all points; point_times, when given, carries
    one time per point and overrides it (perimeters sampled from a
    non-radially-symmetric arrival field are not isochrones of a single
    value).
    """

    points: tuple[tuple[float, float], ...]
    time: float
    point_times: tuple[float, ...] | None = None

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "time", float(self.time))
        if not pts:
            raise InvalidDimensionError("a perimeter needs at least one point")
        if not all(np.isfinite(x) and np.isfinite(y) for x, y in pts):
            raise InvalidDimensionError("perimeter points must be finite")
        if not np.isfinite(self.time):
            raise InvalidDimensionError("perimeter time must be finite")
        if self.point_times is not None:
            pt = tuple(float(t) for t in self.point_times)
            object.__setattr__(self, "point_times", pt)
            if len(pt) != len(pts):
                raise InvalidDimensionError("point_times length must match points")
            if not all(np.isfinite(t) for t in pt):
                raise InvalidDimensionError("point times must be finite")

    def times(self) -> np.ndarray:
        """Per-point arrival times (nominal time broadcast if scalar)."""
        if self.point_times is not None:
            return np.asarray(self.point_times)
        return np.full(len(self.points), self.time)


def locate_point(grid: Grid, p) -> tuple[int, tuple[int, int, int], tuple[float, float, float]]:
    """Locate p in the triangulated grid.

    Returns (triangle id, 3 flat node indices, 3 barycentric weights).
    Cells are split along the diagonal from node (i, j) to node
    (i+1, j+1); triangle id = 2*(cj*(nx-1) + ci) + which, where which
    is 0 for the lower triangle (below the diagonal) and 1 for the
    upper.  Points on shared edges or on the diagonal go to the first
    containing triangle in global id order, so assembly is
    deterministic.
    """
    x, y = float(p[0]), float(p[1])
    if not grid.contains(x, y):
        raise OutOfDomainError(f"point ({x}, {y}) outside grid bounding box")
    s = (x - grid.x0) / grid.dx
    t = (y - grid.y0) / grid.dy
    # first containing cell: a point on a shared cell edge belongs to the
    # lower-index cell, hence ceil(s) - 1 rather than floor(s)
    ci = min(max(int(np.ceil(s)) - 1, 0), grid.nx - 2)
    cj = min(max(int(np.ceil(t)) - 1, 0), grid.ny - 2)
    u = s - ci
    v = t - cj
    a = grid.node_index(ci, cj)
    c = grid.node_index(ci + 1, cj + 1)
    if v <= u:  # lower triangle, diagonal ties included
        which = 0
        nodes = (a, grid.node_index(ci + 1, cj), c)
        weights = (1.0 - u, u - v, v)
    else:
        which = 1
        nodes = (a, c, grid.node_index(ci, cj + 1))
        weights = (1.0 - v, u, v - u)
    tri = 2 * (cj * (grid.nx - 1) + ci) + which
    return tri, nodes, weights


def triangle_sample(f: ScalarField, x, y) -> np.ndarray:
    """Sample a field at points with the same triangle interpolation the
    constraint rows use, so a perimeter built from sampled values is
    satisfied by the sampled field to machine precision."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    flat = f.flat()
    out = np.empty(x.shape)
    for k in range(x.size):
        _, nodes, weights = locate_point(f.grid, (x.flat[k], y.flat[k]))
        out.flat[k] = sum(w * flat[n] for n, w in zip(nodes, weights))
    return out


class ConstraintSystem:
    """Condensed sparse constraints HT = g on a grid.

    Immutable after construction; the factored Gram matrix HH' is
    shared read-only by feasible-point and projection calls.
    """

    def __init__(self, grid: Grid, h: scipy.sparse.csr_matrix, g: np.ndarray, row_keys):
        self.grid = grid
        self.h = h
        self.g = np.asarray(g, dtype=float)
        self.row_keys = tuple(row_keys)  # (perimeter index, triangle id) per row
        gram = (h @ h.T).toarray()
        try:
            chol = scipy.linalg.cholesky(gram, lower=True)
        except scipy.linalg.LinAlgError as e:
            raise RankDeficiencyError(f"constraint rows numerically dependent: {e}") from e
        pivots = np.diag(chol) ** 2
        if pivots.min() < PIVOT_RTOL * np.diag(gram).max():
            raise RankDeficiencyError(
                f"Gram pivot ratio {pivots.min() / np.diag(gram).max():.3e} below {PIVOT_RTOL}"
            )
        self._gram = gram
        self._chol = (chol, True)
        self._ht = h.T.tocsr()

    @property
    def n_rows(self) -> int:
        return self.h.shape[0]

    def gram_solve(self, b: np.ndarray) -> np.ndarray:
        """Solve (HH') y = b with one iterative-refinement pass."""
        y = scipy.linalg.cho_solve(self._chol, b)
        r = b - self._gram @ y
        return y + scipy.linalg.cho_solve(self._chol, r)

    def apply_h(self, w: np.ndarray) -> np.ndarray:
        """H w for a flat node vector w."""
        return self.h @ w

    def project_flat(self, w: np.ndarray) -> np.ndarray:
        """P w = w - H'(HH')^-1 H w for a flat node vector."""
        return w - self._ht @ self.gram_solve(self.h @ w)

    def violation(self, t) -> float:
        """Relative constraint violation ||Ht - g||_inf / max(1, ||g||_inf).

        Accepts a flat node vector or a ScalarField on the same grid.
        """
        if self.n_rows == 0:
            return 0.0
        t_flat = t.flat() if isinstance(t, ScalarField) else np.asarray(t, dtype=float).ravel()
        return float(np.abs(self.h @ t_flat - self.g).max() / max(1.0, np.abs(self.g).max()))

    def constrained_nodes(self) -> np.ndarray:
        """Sorted flat indices of nodes appearing in any constraint row."""
        return np.unique(self.h.indices)


def build_constraints(grid: Grid, perimeters) -> ConstraintSystem:
    """Assemble the condensed system from perimeter point sets.

    One row per (perimeter, triangle) pair that received at least one
    point: the row is the sum of the per-point barycentric rows and the
    g-entry is the sum of those points' times (count x time when the
    perimeter carries a single time).  Rows are ordered by perimeter
    index, then triangle id.
    """
    perimeters = list(perimeters)
    if not perimeters:
        raise InvalidDimensionError("at least one perimeter required")
    condensed: dict[tuple[int, int], tuple[dict[int, float], float]] = {}
    for pi, per in enumerate(perimeters):
        times = per.times()
        for pt, pt_time in zip(per.points, times):
            try:
                tri, nodes, weights = locate_point(grid, pt)
            except OutOfDomainError as e:
                raise OutOfDomainError(
                    f"perimeter {pi} point ({pt[0]}, {pt[1]}) outside grid"
                ) from e
            coeffs, gval = condensed.setdefault((pi, tri), ({}, 0.0))
            for node, w in zip(nodes, weights):
                coeffs[node] = coeffs.get(node, 0.0) + w
            condensed[(pi, tri)] = (coeffs, gval + float(pt_time))
    keys = sorted(condensed)
    rows, cols, vals, g = [], [], [], []
    for r, key in enumerate(keys):
        coeffs, gval = condensed[key]
        for node in sorted(coeffs):
            w = coeffs[node]
            if w != 0.0:
                rows.append(r)
                cols.append(node)
                vals.append(w)
        g.append(gval)
    h = scipy.sparse.csr_matrix(
        (vals, (rows, cols)), shape=(len(keys), grid.n_nodes), dtype=float
    )
    return ConstraintSystem(grid, h, np.asarray(g), keys)


def feasible_point(c: ConstraintSystem) -> ScalarField:
    """Minimum-norm field u0 with H u0 = g, via u0 = H'(HH')^-1 g."""
    u0 = c._ht @ c.gram_solve(c.g)
    viol = c.violation(u0)
    if viol > FEASIBLE_RTOL:
        raise ConstraintDriftError(f"feasible point violation {viol:.3e} exceeds {FEASIBLE_RTOL}")
    return ScalarField(c.grid, u0.reshape(c.grid.shape))


def project_nullspace(c: ConstraintSystem, v: ScalarField) -> ScalarField:
    """Project a field onto the null space of H."""
    if v.grid != c.grid:
        raise InvalidDimensionError("field grid does not match constraint grid")
    return ScalarField(c.grid, c.project_flat(v.flat()).reshape(c.grid.shape))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_perimeters_csv(perimeters, path) -> None:
    """Write perimeters as CSV.

    Header is `x,y,time` for a single scalar-time perimeter; the
    optional `perimeter_id` fourth column is added whenever there are
    several perimeters or per-point times, so grouping on read-back is
    unambiguous.
    """
    perimeters = list(perimeters)
    need_ids = len(perimeters) > 1 or any(p.point_times is not None for p in perimeters)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "time", "perimeter_id"] if need_ids else ["x", "y", "time"])
        for pi, per in enumerate(perimeters):
            for (x, y), t in zip(per.points, per.times()):
                row = [_fmt(x), _fmt(y), _fmt(t)]
                if need_ids:
                    row.append(str(pi))
                w.writerow(row)


def read_perimeters_csv(path) -> list[Perimeter]:
    """Read perimeters written by write_perimeters_csv.

    Without the perimeter_id column, points are grouped into perimeters
    by runs of contiguous equal times.
    """
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header == ["x", "y", "time"]:
            has_ids = False
        elif header == ["x", "y", "time", "perimeter_id"]:
            has_ids = True
        else:
            raise InvalidDimensionError(f"unexpected perimeter CSV header: {header}")
        rows = [row for row in r if row]
    groups: list[tuple[list[tuple[float, float]], list[float]]] = []
    last_key = None
    for row in rows:
        x, y, t = float(row[0]), float(row[1]), float(row[2])
        key = row[3] if has_ids else t
        if key != last_key:
            groups.append(([], []))
            last_key = key
        groups[-1][0].append((x, y))
        groups[-1][1].append(t)
    out = []
    for pts, times in groups:
        if all(t == times[0] for t in times):
            out.append(Perimeter(tuple(pts), times[0]))
        else:
            out.append(Perimeter(tuple(pts), times[0], tuple(times)))
    return out
