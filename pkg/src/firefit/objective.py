"""Eikonal residual objective and the fast-marching reference solver.

The fit minimizes

    J(T) = ( sum_nodes |f(|grad T|^2, R^2)|^p * dx*dy )^(1/p)  +  penalty,

where f vanishes exactly on x*y = 1, so the integrand vanishes where
the upwind gradient norm equals 1/R.  Working with squares avoids
square roots of the Godunov norm inside the hot loop.  The penalty adds
w * (depth)^2 for every strict 4-neighbor local minimum outside the
constrained node set: spurious pits are non-causal (fire does not start
spontaneously), but pits at ignition constraints are real and exempt.

fast_march solves the same eikonal relation directly by monotone front
expansion and serves as the verification reference: its output has
near-zero residual away from sources, no spurious pits, and a
deterministic heap order (ties broken by node index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InvalidDimensionError, ShapeMismatchError
from .grid import Grid, ScalarField, upwind_gradient_norm_squared
from .spread import RosModel, node_rate_field

__all__ = [
    "ObjectiveConfig",
    "default_penalty_weight",
    "residual_field",
    "pit_depths",
    "objective",
    "fast_march",
]

F_VARIANTS = ("product", "difference")


@dataclass(frozen=True)
class ObjectiveConfig:
    """Residual functional parameters.

    f_variant picks f(x, y) with x = |grad T|^2 and y = R^2:
    "product" is 1 - x*y, "difference" is x - 1/y; both vanish iff
    x*y = 1 on the positive quadrant.  p is the norm exponent.
    penalty_weight of None resolves to 10 times the domain average of
    1/R^2, putting the pit penalty on the scale of the residual
    integrand.
    """

    f_variant: str = "product"
    p: float = 2.0
    penalty_weight: float | None = None

    def __post_init__(self):
        if self.f_variant not in F_VARIANTS:
            raise InvalidDimensionError(
                f"f_variant must be one of {F_VARIANTS}, got {self.f_variant!r}"
            )
        if not (self.p >= 1):
            raise InvalidDimensionError(f"p must be >= 1, got {self.p}")
        if self.penalty_weight is not None and not (self.penalty_weight >= 0):
            raise InvalidDimensionError(f"penalty_weight must be >= 0, got {self.penalty_weight}")


def default_penalty_weight(rates: ScalarField) -> float:
    """10 x domain average of 1/R^2."""
    return 10.0 * float(np.mean(1.0 / rates.values**2))


def residual_field(t: ScalarField, ros: RosModel, cfg: ObjectiveConfig) -> ScalarField:
    """Pointwise f(|grad T|^2, R^2), the integrand of J before the norm."""
    gsq = upwind_gradient_norm_squared(t)
    rates = node_rate_field(ros, t.grid)
    r2 = rates.values**2
    if cfg.f_variant == "product":
        res = 1.0 - gsq * r2
    else:
        res = gsq - 1.0 / r2
    return ScalarField(t.grid, res)


def pit_depths(t: ScalarField, exempt_nodes=()) -> np.ndarray:
    """Depth of each strict 4-neighbor local minimum, 0 elsewhere.

    Depth is (smallest neighbor value - node value) > 0.  Nodes listed
    in exempt_nodes (flat indices) are zeroed regardless.
    """
    v = t.values
    padded = np.pad(v, 1, mode="constant", constant_values=np.inf)
    nmin = np.minimum(
        np.minimum(padded[:-2, 1:-1], padded[2:, 1:-1]),
        np.minimum(padded[1:-1, :-2], padded[1:-1, 2:]),
    )
    depth = np.where(v < nmin, nmin - v, 0.0)
    flat = depth.reshape(-1)
    idx = np.asarray(list(exempt_nodes), dtype=int)
    if idx.size:
        flat[idx] = 0.0
    return depth


def objective(t: ScalarField, ros: RosModel, cfg: ObjectiveConfig, exempt_nodes=()) -> float:
    """J(T): p-norm of the residual plus the weighted pit penalty."""
    res = residual_field(t, ros, cfg).values
    area = t.grid.dx * t.grid.dy
    j_res = float(np.sum(np.abs(res) ** cfg.p * area)) ** (1.0 / cfg.p)
    w = cfg.penalty_weight
    if w is None:
        w = default_penalty_weight(node_rate_field(ros, t.grid))
    depth = pit_depths(t, exempt_nodes)
    return j_res + w * float(np.sum(depth**2))


@njit(cache=True)
def _heap_push(hv, hi, size, v, i):
    hv[size] = v
    hi[size] = i
    k = size
    while k > 0:
        parent = (k - 1) // 2
        if hv[k] < hv[parent] or (hv[k] == hv[parent] and hi[k] < hi[parent]):
            hv[k], hv[parent] = hv[parent], hv[k]
            hi[k], hi[parent] = hi[parent], hi[k]
            k = parent
        else:
            break
    return size + 1


@njit(cache=True)
def _heap_pop(hv, hi, size):
    top_v = hv[0]
    top_i = hi[0]
    size -= 1
    hv[0] = hv[size]
    hi[0] = hi[size]
    k = 0
    while True:
        left = 2 * k + 1
        if left >= size:
            break
        child = left
        right = left + 1
        if right < size and (
            hv[right] < hv[left] or (hv[right] == hv[left] and hi[right] < hi[left])
        ):
            child = right
        if hv[child] < hv[k] or (hv[child] == hv[k] and hi[child] < hi[k]):
            hv[k], hv[child] = hv[child], hv[k]
            hi[k], hi[child] = hi[child], hi[k]
            k = child
        else:
            break
    return top_v, top_i, size


@njit(cache=True)
def _eikonal_update(ax, ay, dx, dy, s):
    """Smallest u with max((u-ax)/dx, 0)^2 + max((u-ay)/dy, 0)^2 = s^2.

    ax, ay are the per-axis upwind values (inf when the axis has no
    accepted neighbor yet).
    """
    if ax < np.inf and ay < np.inf:
        qa = 1.0 / dx**2 + 1.0 / dy**2
        qb = -2.0 * (ax / dx**2 + ay / dy**2)
        qc = ax**2 / dx**2 + ay**2 / dy**2 - s**2
        disc = qb * qb - 4.0 * qa * qc
        if disc >= 0.0:
            u = (-qb + math.sqrt(disc)) / (2.0 * qa)
            if u >= ax and u >= ay:
                return u
        return min(ax + s * dx, ay + s * dy)
    if ax < np.inf:
        return ax + s * dx
    return ay + s * dy


@njit(cache=True)
def _fmm(nx, ny, dx, dy, slow, src_idx, src_val):
    n = nx * ny
    val = np.full(n, np.inf)
    accepted = np.zeros(n, dtype=np.uint8)
    cap = 5 * n + src_idx.size
    hv = np.empty(cap)
    hi = np.empty(cap, dtype=np.int64)
    size = 0
    for k in range(src_idx.size):
        idx = src_idx[k]
        if src_val[k] < val[idx]:
            val[idx] = src_val[k]
            size = _heap_push(hv, hi, size, val[idx], idx)
    while size > 0:
        v, idx, size = _heap_pop(hv, hi, size)
        if accepted[idx] == 1 or v > val[idx]:
            continue  # stale heap entry
        accepted[idx] = 1
        i = idx % nx
        j = idx // nx
        for move in range(4):
            if move == 0:
                ni, nj = i - 1, j
            elif move == 1:
                ni, nj = i + 1, j
            elif move == 2:
                ni, nj = i, j - 1
            else:
                ni, nj = i, j + 1
            if ni < 0 or ni >= nx or nj < 0 or nj >= ny:
                continue
            nidx = nj * nx + ni
            if accepted[nidx] == 1:
                continue
            ax = np.inf
            if ni > 0 and accepted[nidx - 1] == 1:
                ax = val[nidx - 1]
            if ni < nx - 1 and accepted[nidx + 1] == 1 and val[nidx + 1] < ax:
                ax = val[nidx + 1]
            ay = np.inf
            if nj > 0 and accepted[nidx - nx] == 1:
                ay = val[nidx - nx]
            if nj < ny - 1 and accepted[nidx + nx] == 1 and val[nidx + nx] < ay:
                ay = val[nidx + nx]
            u = _eikonal_update(ax, ay, dx, dy, slow[nidx])
            if u < val[nidx]:
                val[nidx] = u
                size = _heap_push(hv, hi, size, u, nidx)
    return val


def fast_march(grid: Grid, ros_field: ScalarField, sources) -> ScalarField:
    """First-order fast-marching solution of |grad T| = 1/R.

    sources is a list of (node, time) pairs, node given as a flat index
    or an (i, j) pair; repeated nodes keep their smallest time.  The
    slowness at the node being updated drives its update, matching the
    node-collocated residual.  Front expansion is monotone and heap
    ties break by node index, so results are reproducible bit for bit.
    """
    if ros_field.grid != grid:
        raise ShapeMismatchError("rate field is not on the marching grid")
    if np.any(ros_field.values <= 0):
        raise InvalidDimensionError("fast_march requires strictly positive rates")
    sources = list(sources)
    if not sources:
        raise InvalidDimensionError("fast_march requires at least one source")
    src_idx = np.empty(len(sources), dtype=np.int64)
    src_val = np.empty(len(sources))
    for k, (node, time) in enumerate(sources):
        if isinstance(node, tuple):
            i, j = node
            idx = grid.node_index(int(i), int(j))
        else:
            idx = int(node)
        if not (0 <= idx < grid.n_nodes):
            raise InvalidDimensionError(f"source node {node} outside grid")
        src_idx[k] = idx
        src_val[k] = float(time)
    slow = (1.0 / ros_field.values).reshape(-1)
    val = _fmm(grid.nx, grid.ny, grid.dx, grid.dy, slow, src_idx, src_val)
    return ScalarField(grid, val.reshape(grid.shape))
