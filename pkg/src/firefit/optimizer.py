"""Multiscale projected coordinate descent for the residual objective.

The fit repeatedly line-searches the working field T along bilinear
coarse-grid hat directions projected onto the null space of the
constraint matrix, so HT = g keeps holding while J(T) never increases.
Levels run coarse to fine (mesh step halving down to single nodes) and
the whole ladder repeats for a fixed number of cycles.

The inner loop is heavily optimized: the objective is never recomputed
from scratch during a line search.  Per-node integrand values
|f(|grad T|^2, R^2)|^p and pit-penalty depths are cached, and a probe
at step s only revisits the nodes whose stencil touches the direction
support.  Probe and commit run the same compiled code in the same
order, so an accepted value is reproduced bit for bit when committed
and the recorded objective history is monotone by construction, not by
tolerance.

A projected hat direction d - H'(HH')^-1 H d is supported on the hat
box plus the constrained nodes of the perimeter components the hat
touches (the Gram matrix is exactly block diagonal across constraint
components, so untouched components stay exactly zero).  Hats that
touch no constrained node project to themselves and skip the linear
algebra entirely.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .constraint import ConstraintSystem, project_nullspace
from .errors import AnchorError, ConstraintDriftError, InvalidDimensionError
from .grid import Grid, ScalarField
from .objective import ObjectiveConfig, default_penalty_weight
from .spread import RosModel, node_rate_field

__all__ = [
    "LevelSchedule",
    "FitReport",
    "coarse_basis",
    "golden_section",
    "line_search",
    "sweep",
    "multiscale_fit",
]

GOLDEN_REL_WIDTH = 1e-3
DIRECTION_SKIP_NORM = 1e-12
DRIFT_RTOL = 1e-10
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_INVPHI2 = (3.0 - math.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class LevelSchedule:
    """Coarse-to-fine level ladder.

    Steps run coarsest_step, coarsest_step/2, ..., 1; sweeps gives the
    sweep count per level in that order and defaults to 1, 2, ...,
    n_levels (more work on finer levels).
    """

    coarsest_step: int = 32
    cycles: int = 4
    sweeps: tuple[int, ...] | None = None

    def __post_init__(self):
        cs = self.coarsest_step
        if cs < 1 or (cs & (cs - 1)) != 0:
            raise InvalidDimensionError(f"coarsest_step must be a power of two >= 1, got {cs}")
        if self.cycles < 0:
            raise InvalidDimensionError(f"cycles must be >= 0, got {self.cycles}")
        n = cs.bit_length()  # 32 -> 6 levels
        if self.sweeps is None:
            object.__setattr__(self, "sweeps", tuple(range(1, n + 1)))
        else:
            object.__setattr__(self, "sweeps", tuple(int(s) for s in self.sweeps))
        if len(self.sweeps) != n:
            raise InvalidDimensionError(
                f"need {n} sweep counts for coarsest_step {cs}, got {len(self.sweeps)}"
            )
        if any(s < 1 for s in self.sweeps):
            raise InvalidDimensionError("sweep counts must be positive")

    def steps(self) -> tuple[int, ...]:
        return tuple(self.coarsest_step >> k for k in range(self.coarsest_step.bit_length()))


@dataclass
class FitReport:
    """Per-line-search record of a multiscale fit.

    history[k] is the objective after line search k (accepted or not);
    it is non-increasing.  level_steps and step_lengths align with
    history; a rejected search has step length 0.  level_counts holds
    (cycle, level step, searches run) triples.  violations, present
    only when the fit was told to track them, aligns with history.
    """

    initial_objective: float
    history: np.ndarray
    level_steps: np.ndarray
    step_lengths: np.ndarray
    level_counts: list[tuple[int, int, int]] = field(default_factory=list)
    final_violation: float = 0.0
    wall_time: float = 0.0
    violations: np.ndarray | None = None

    def n_line_searches(self) -> int:
        return len(self.history)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("iteration,level,step,objective\n")
            for k in range(len(self.history)):
                fh.write(
                    f"{k + 1},{self.level_steps[k]},"
                    f"{format(self.step_lengths[k], '.17g')},"
                    f"{format(self.history[k], '.17g')}\n"
                )


def _axis_anchors(n: int, step: int) -> list[int]:
    anchors = list(range(0, n, step))
    if anchors[-1] != n - 1:
        anchors.append(n - 1)  # boundary row/column always present
    return anchors


def coarse_basis(grid: Grid, step: int, anchor: tuple[int, int]) -> ScalarField:
    """Tensor-product bilinear hat at a coarse-lattice anchor.

    Value 1 at the anchor node, linear decay to 0 at index distance
    step along each axis, 0 beyond, truncated at the boundary.  The
    anchor must sit on the coarse lattice: index a multiple of step, or
    the boundary-clamped last index.
    """
    if step < 1:
        raise AnchorError(f"step must be >= 1, got {step}")
    ai, aj = int(anchor[0]), int(anchor[1])
    if not (0 <= ai < grid.nx and 0 <= aj < grid.ny):
        raise AnchorError(f"anchor {anchor} outside grid")
    if ai % step != 0 and ai != grid.nx - 1:
        raise AnchorError(f"anchor i={ai} not on the step-{step} lattice")
    if aj % step != 0 and aj != grid.ny - 1:
        raise AnchorError(f"anchor j={aj} not on the step-{step} lattice")
    hx = np.maximum(0.0, 1.0 - np.abs(np.arange(grid.nx) - ai) / step)
    hy = np.maximum(0.0, 1.0 - np.abs(np.arange(grid.ny) - aj) / step)
    return ScalarField(grid, hy[:, None] * hx[None, :])


def golden_section(f, lo: float, hi: float, rel_width: float = GOLDEN_REL_WIDTH):
    """Golden-section minimization of f over [lo, hi].

    Narrows the interval to rel_width times its initial width and
    returns the best evaluated (point, value).  Fixed probe sequence:
    derivative-free and deterministic, which is all the nonsmooth
    objective admits.
    """
    a, b = float(lo), float(hi)
    h = b - a
    if h <= 0:
        raise InvalidDimensionError("golden_section needs lo < hi")
    c = a + _INVPHI2 * h
    d = a + _INVPHI * h
    yc = f(c)
    yd = f(d)
    if yc <= yd:
        best_s, best_y = c, yc
    else:
        best_s, best_y = d, yd
    h0 = h
    while h > rel_width * h0:
        if yc < yd:
            b, d, yd = d, c, yc
            h = b - a
            c = a + _INVPHI2 * h
            yc = f(c)
            if yc < best_y:
                best_s, best_y = c, yc
        else:
            a, c, yc = c, d, yd
            h = b - a
            d = a + _INVPHI * h
            yd = f(d)
            if yd < best_y:
                best_s, best_y = d, yd
    return best_s, best_y


def line_search(t: ScalarField, direction: ScalarField, closure, bracket: float):
    """Golden-section search along a direction, accepted only on decrease.

    closure maps a ScalarField to its objective value.  Returns
    (step length, objective at the returned point); a search that finds
    no strict decrease returns (0.0, closure(t)).
    """
    if bracket <= 0:
        raise InvalidDimensionError(f"bracket must be positive, got {bracket}")
    j0 = closure(t)

    def j_at(s):
        return closure(ScalarField(t.grid, t.values + s * direction.values))

    s_best, j_best = golden_section(j_at, -bracket, bracket)
    if j_best < j0:
        return s_best, j_best
    return 0.0, j0


def default_bracket(t: ScalarField, step: int, bracket_scale: float = 1.0) -> float:
    """Level bracket: value span scaled by step over the domain extent.

    Coarse hats move large regions and get wide brackets; single-node
    directions get narrow ones.  Clamped below at one time unit so flat
    starting fields still move.
    """
    span = float(np.ptp(t.values))
    extent = max(t.grid.nx - 1, t.grid.ny - 1)
    return max(1.0, span * step / extent) * bracket_scale


def sweep(t: ScalarField, step: int, c: ConstraintSystem, closure, bracket: float | None = None):
    """One pass over all step-lattice anchors, reference implementation.

    Directions are projected hats in row-major anchor order; directions
    whose projection is below 1e-12 in the max norm are skipped.  The
    returned field still satisfies HT = g.  This form evaluates the
    closure on full fields and suits small problems and contract tests;
    multiscale_fit runs the incremental engine instead.
    """
    viol = c.violation(t.flat())
    if viol > DRIFT_RTOL:
        raise ConstraintDriftError(f"sweep input violates constraints by {viol:.3e}")
    if bracket is None:
        bracket = default_bracket(t, step)
    work = t.copy()
    for aj in _axis_anchors(t.grid.ny, step):
        for ai in _axis_anchors(t.grid.nx, step):
            d = project_nullspace(c, coarse_basis(t.grid, step, (ai, aj)))
            if float(np.abs(d.values).max()) < DIRECTION_SKIP_NORM:
                continue
            s, _ = line_search(work, d, closure, bracket)
            if s != 0.0:
                work.values += s * d.values
    viol = c.violation(work.flat())
    if viol > DRIFT_RTOL:
        raise ConstraintDriftError(f"sweep drifted off the constraints by {viol:.3e}")
    return work


# --- incremental engine -------------------------------------------------
#
# Node k reads its 4-neighborhood, so a direction supported on set S
# changes the integrand only on S plus its axis neighbors.  All kernels
# evaluate T as tv[m] + s*dv[m] with dv the full-size scattered
# direction; commit stores exactly the probed values.


@njit(cache=True)
def _node_res_pow(tv, dv, s, k, nx, ny, inv_dx, inv_dy, r2, product, p):
    vk = tv[k] + s * dv[k]
    i = k % nx
    j = k // nx
    mx = 0.0
    if i > 0:
        diff = (vk - (tv[k - 1] + s * dv[k - 1])) * inv_dx
        if diff > mx:
            mx = diff
    if i < nx - 1:
        diff = (vk - (tv[k + 1] + s * dv[k + 1])) * inv_dx
        if diff > mx:
            mx = diff
    my = 0.0
    if j > 0:
        diff = (vk - (tv[k - nx] + s * dv[k - nx])) * inv_dy
        if diff > my:
            my = diff
    if j < ny - 1:
        diff = (vk - (tv[k + nx] + s * dv[k + nx])) * inv_dy
        if diff > my:
            my = diff
    gsq = mx * mx + my * my
    if product:
        res = 1.0 - gsq * r2[k]
    else:
        res = gsq - 1.0 / r2[k]
    if p == 2.0:
        return res * res
    return abs(res) ** p


@njit(cache=True)
def _node_pen(tv, dv, s, k, nx, ny, exempt):
    if exempt[k] == 1:
        return 0.0
    vk = tv[k] + s * dv[k]
    i = k % nx
    j = k // nx
    nmin = np.inf
    if i > 0:
        v = tv[k - 1] + s * dv[k - 1]
        if v < nmin:
            nmin = v
    if i < nx - 1:
        v = tv[k + 1] + s * dv[k + 1]
        if v < nmin:
            nmin = v
    if j > 0:
        v = tv[k - nx] + s * dv[k - nx]
        if v < nmin:
            nmin = v
    if j < ny - 1:
        v = tv[k + nx] + s * dv[k + nx]
        if v < nmin:
            nmin = v
    if vk < nmin:
        depth = nmin - vk
        return depth * depth
    return 0.0


@njit(cache=True)
def _refresh_all(tv, dv, res_pow, pen, nx, ny, inv_dx, inv_dy, r2, product, p, exempt):
    total_res = 0.0
    total_pen = 0.0
    for k in range(nx * ny):
        rp = _node_res_pow(tv, dv, 0.0, k, nx, ny, inv_dx, inv_dy, r2, product, p)
        res_pow[k] = rp
        total_res += rp
        pe = _node_pen(tv, dv, 0.0, k, nx, ny, exempt)
        pen[k] = pe
        total_pen += pe
    return total_res, total_pen


@njit(cache=True)
def _probe(tv, dv, s, aff, res_pow, pen, nx, ny, inv_dx, inv_dy, r2, product, p, exempt):
    dres = 0.0
    dpen = 0.0
    for a in range(aff.size):
        k = aff[a]
        dres += _node_res_pow(tv, dv, s, k, nx, ny, inv_dx, inv_dy, r2, product, p) - res_pow[k]
        dpen += _node_pen(tv, dv, s, k, nx, ny, exempt) - pen[k]
    return dres, dpen


@njit(cache=True)
def _commit(tv, dv, s, aff, supp, res_pow, pen, nx, ny, inv_dx, inv_dy, r2, product, p, exempt):
    dres = 0.0
    dpen = 0.0
    for a in range(aff.size):
        k = aff[a]
        rp = _node_res_pow(tv, dv, s, k, nx, ny, inv_dx, inv_dy, r2, product, p)
        dres += rp - res_pow[k]
        res_pow[k] = rp
        pe = _node_pen(tv, dv, s, k, nx, ny, exempt)
        dpen += pe - pen[k]
        pen[k] = pe
    for a in range(supp.size):
        m = supp[a]
        tv[m] = tv[m] + s * dv[m]
    return dres, dpen


@njit(cache=True)
def _fill_hat(dv, ai, aj, step, nx, ny, supp_buf):
    cnt = 0
    jlo = aj - step + 1
    if jlo < 0:
        jlo = 0
    jhi = aj + step - 1
    if jhi > ny - 1:
        jhi = ny - 1
    ilo = ai - step + 1
    if ilo < 0:
        ilo = 0
    ihi = ai + step - 1
    if ihi > nx - 1:
        ihi = nx - 1
    for jj in range(jlo, jhi + 1):
        hy = 1.0 - abs(jj - aj) / step
        base = jj * nx
        for ii in range(ilo, ihi + 1):
            hx = 1.0 - abs(ii - ai) / step
            k = base + ii
            dv[k] = hy * hx
            supp_buf[cnt] = k
            cnt += 1
    return cnt


@njit(cache=True)
def _dedup(cand, visited, out):
    cnt = 0
    for a in range(cand.size):
        k = cand[a]
        if visited[k] == 0:
            visited[k] = 1
            out[cnt] = k
            cnt += 1
    for a in range(cnt):
        visited[out[a]] = 0
    return cnt


def _row_components(c: ConstraintSystem):
    """Connected components of the row interaction graph.

    Rows interact iff they share a grid node, i.e. their Gram entry is
    structurally nonzero; the Gram matrix (and its Cholesky factor) is
    exactly block diagonal across components, so projections of
    directions touching one component leave the others untouched.
    """
    m = c.n_rows
    parent = list(range(m))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    csc = c.h.tocsc()
    for col in range(csc.shape[1]):
        rows = csc.indices[csc.indptr[col] : csc.indptr[col + 1]]
        for r in rows[1:]:
            union(int(rows[0]), int(r))
    labels = np.array([find(r) for r in range(m)])
    _, comp_of_row = np.unique(labels, return_inverse=True)
    return comp_of_row


def _dilate_indices(idx: np.ndarray, nx: int, ny: int) -> np.ndarray:
    """Indices plus their existing 4-neighbors, unique and sorted."""
    i = idx % nx
    j = idx // nx
    parts = [idx]
    parts.append(idx[i > 0] - 1)
    parts.append(idx[i < nx - 1] + 1)
    parts.append(idx[j > 0] - nx)
    parts.append(idx[j < ny - 1] + nx)
    return np.unique(np.concatenate(parts))


class _Engine:
    """Mutable state of one multiscale fit."""

    def __init__(self, t0: ScalarField, c: ConstraintSystem, ros: RosModel,
                 cfg: ObjectiveConfig):
        grid = t0.grid
        self.grid = grid
        self.c = c
        n = grid.n_nodes
        self.tv = t0.flat().copy()
        self.dv = np.zeros(n)
        rates = node_rate_field(ros, grid)
        self.r2 = (rates.values**2).reshape(-1)
        w = cfg.penalty_weight
        self.w_pen = default_penalty_weight(rates) if w is None else float(w)
        self.p = float(cfg.p)
        self.product = cfg.f_variant == "product"
        self.area = grid.dx * grid.dy
        self.inv_dx = 1.0 / grid.dx
        self.inv_dy = 1.0 / grid.dy
        exempt = np.zeros(n, dtype=np.uint8)
        exempt[c.constrained_nodes()] = 1
        self.exempt = exempt
        self.res_pow = np.zeros(n)
        self.pen = np.zeros(n)
        self.total_res, self.total_pen = _refresh_all(
            self.tv, self.dv, self.res_pow, self.pen, grid.nx, grid.ny,
            self.inv_dx, self.inv_dy, self.r2, self.product, self.p, exempt,
        )
        self.row_comp = _row_components(c)
        n_comp = int(self.row_comp.max()) + 1 if c.n_rows else 0
        csc = c.h.tocsc()
        comp_nodes = [[] for _ in range(n_comp)]
        for col in range(n):
            rows = csc.indices[csc.indptr[col] : csc.indptr[col + 1]]
            if rows.size:
                comp_nodes[self.row_comp[rows[0]]].append(col)
        self.comp_nodes = [np.array(sorted(set(cn)), dtype=np.int64) for cn in comp_nodes]
        self.comp_aff = [_dilate_indices(cn, grid.nx, grid.ny) for cn in self.comp_nodes]
        self.visited = np.zeros(n, dtype=np.uint8)
        self.supp_buf = np.empty(n, dtype=np.int64)
        self.supp_out = np.empty(n, dtype=np.int64)
        self.aff_out = np.empty(n, dtype=np.int64)

    def current_j(self) -> float:
        return self._j(self.total_res, self.total_pen)

    def _j(self, total_res: float, total_pen: float) -> float:
        jr = (max(total_res, 0.0) * self.area) ** (1.0 / self.p)
        return jr + self.w_pen * max(total_pen, 0.0)

    def _aff_box(self, ai: int, aj: int, step: int) -> np.ndarray:
        g = self.grid
        ii = np.arange(max(0, ai - step), min(g.nx - 1, ai + step) + 1, dtype=np.int64)
        jj = np.arange(max(0, aj - step), min(g.ny - 1, aj + step) + 1, dtype=np.int64)
        return (jj[:, None] * g.nx + ii[None, :]).reshape(-1)

    def line_search_at(self, ai: int, aj: int, step: int, bracket: float):
        """Project the hat at (ai, aj), search, commit on decrease.

        Returns (step length, objective) or None when the projected
        direction vanished.
        """
        g = self.grid
        c = self.c
        n_supp_box = _fill_hat(self.dv, ai, aj, step, g.nx, g.ny, self.supp_buf)
        supp_box = self.supp_buf[:n_supp_box]
        aff_box = self._aff_box(ai, aj, step)
        hd = c.apply_h(self.dv)
        touched_rows = np.nonzero(hd)[0]
        if touched_rows.size:
            comps = np.unique(self.row_comp[touched_rows])
            y = c.gram_solve(hd)
            hty = c._ht @ y
            supp_parts = [supp_box]
            aff_parts = [aff_box]
            for ci in comps:
                nodes = self.comp_nodes[ci]
                self.dv[nodes] -= hty[nodes]
                supp_parts.append(nodes)
                aff_parts.append(self.comp_aff[ci])
            n_supp = _dedup(np.concatenate(supp_parts), self.visited, self.supp_out)
            supp = self.supp_out[:n_supp]
            n_aff = _dedup(np.concatenate(aff_parts), self.visited, self.aff_out)
            aff = self.aff_out[:n_aff]
            d_norm = float(np.abs(self.dv[supp]).max())
            if d_norm >= DIRECTION_SKIP_NORM:
                hd_after = float(np.abs(c.apply_h(self.dv)).max())
                if hd_after > DRIFT_RTOL * d_norm:
                    self.dv[supp] = 0.0
                    raise ConstraintDriftError(
                        f"projected direction violates H d = 0 by {hd_after:.3e}"
                    )
        else:
            supp = supp_box
            aff = aff_box
            d_norm = float(np.abs(self.dv[supp]).max())
        if d_norm < DIRECTION_SKIP_NORM:
            self.dv[supp] = 0.0
            return None
        j0 = self.current_j()

        def j_at(s):
            dres, dpen = _probe(
                self.tv, self.dv, s, aff, self.res_pow, self.pen, g.nx, g.ny,
                self.inv_dx, self.inv_dy, self.r2, self.product, self.p, self.exempt,
            )
            return self._j(self.total_res + dres, self.total_pen + dpen)

        s_best, j_best = golden_section(j_at, -bracket, bracket)
        if j_best < j0:
            dres, dpen = _commit(
                self.tv, self.dv, s_best, aff, supp, self.res_pow, self.pen, g.nx, g.ny,
                self.inv_dx, self.inv_dy, self.r2, self.product, self.p, self.exempt,
            )
            self.total_res += dres
            self.total_pen += dpen
            out = (s_best, j_best)
        else:
            out = (0.0, j0)
        self.dv[supp] = 0.0
        return out

    def field(self) -> ScalarField:
        return ScalarField(self.grid, self.tv.reshape(self.grid.shape).copy())


def multiscale_fit(
    t0: ScalarField,
    c: ConstraintSystem,
    ros: RosModel,
    cfg: ObjectiveConfig,
    sched: LevelSchedule,
    bracket_scale: float = 1.0,
    track_violation: bool = False,
):
    """Run the full cycle/level/sweep schedule from a feasible start.

    Returns (fitted field, FitReport).  The input must already satisfy
    HT = g (use the initializer); the fit preserves that to 1e-10
    relative at every recorded iteration and the objective history
    never increases.  Rate models are sampled once on the grid nodes,
    so time-varying rates see t = 0.  With track_violation the report
    also carries the relative constraint violation after every line
    search (a cheap sparse matvec per iteration; off by default).
    """
    viol = c.violation(t0.flat())
    if viol > DRIFT_RTOL:
        raise ConstraintDriftError(f"starting field violates constraints by {viol:.3e}")
    t_start = time.perf_counter()
    engine = _Engine(t0, c, ros, cfg)
    history: list[float] = []
    level_steps: list[int] = []
    step_lengths: list[float] = []
    level_counts: list[tuple[int, int, int]] = []
    violations: list[float] = []
    initial_objective = engine.current_j()
    anchors_x = {}
    anchors_y = {}
    for step in sched.steps():
        anchors_x[step] = _axis_anchors(t0.grid.nx, step)
        anchors_y[step] = _axis_anchors(t0.grid.ny, step)
    for cycle in range(sched.cycles):
        for step, n_sweeps in zip(sched.steps(), sched.sweeps):
            bracket = default_bracket(t0, step, bracket_scale)
            count = 0
            for _ in range(n_sweeps):
                for aj in anchors_y[step]:
                    for ai in anchors_x[step]:
                        result = engine.line_search_at(ai, aj, step, bracket)
                        if result is None:
                            continue
                        s_len, j_val = result
                        history.append(j_val)
                        level_steps.append(step)
                        step_lengths.append(s_len)
                        if track_violation:
                            violations.append(c.violation(engine.tv))
                        count += 1
                sweep_viol = c.violation(engine.tv)
                if sweep_viol > DRIFT_RTOL:
                    raise ConstraintDriftError(
                        f"constraint violation {sweep_viol:.3e} after sweep at step {step}"
                    )
            level_counts.append((cycle, step, count))
    report = FitReport(
        initial_objective=initial_objective,
        history=np.asarray(history),
        level_steps=np.asarray(level_steps, dtype=int),
        step_lengths=np.asarray(step_lengths),
        level_counts=level_counts,
        final_violation=c.violation(engine.tv),
        wall_time=time.perf_counter() - t_start,
        violations=np.asarray(violations) if track_violation else None,
    )
    return engine.field(), report
