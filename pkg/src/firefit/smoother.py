"""Fractional-Laplacian initializer for the arrival-time fit.

The starting field minimizes the seminorm (1/2)||(-Delta)^(alpha/2) T||^2
subject to the interpolation constraints HT = g.  Writing T = u0 + Pv
with u0 a feasible point and P the null-space projector of H turns the
optimality condition into the symmetric positive semidefinite system

    P(S P v - f0) + rho (I - P) v = 0,      S = A^alpha,  f0 = -S u0,

where -A is the 5-point Laplacian with Neumann boundary conditions.
A is diagonalized by the orthonormal type-II cosine basis, so S and its
pseudoinverse are a forward DCT, a per-mode scaling, and an inverse
DCT.  The system is solved by preconditioned conjugate gradients with

    M : r -> P Pz S+ Pz P r,

Pz being the projection removing the constant mode (the Neumann
nullspace).  Low solver accuracy is fine; constraint satisfaction comes
from the T = u0 + Pv structure, not from iterating to convergence.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .constraint import ConstraintSystem, feasible_point
from .errors import InvalidDimensionError, PCGBreakdownError
from .grid import Grid, ScalarField

__all__ = [
    "SpectralOperator",
    "SmootherConfig",
    "build_spectral_operator",
    "solve_initial",
    "pcg",
    "funnel_metric",
]


@dataclass(frozen=True)
class SmootherConfig:
    """Initializer parameters.

    alpha > 1 embeds the field continuously; 1.4 keeps the surface from
    forming a sharp funnel at point constraints.  rho weights the
    regularization block acting on the complement of null(H); its value
    is immaterial to the returned field because the Krylov space stays
    inside null(H).  The linear system only needs low accuracy.
    """

    alpha: float = 1.4
    rho: float = 1.0
    pcg_tol: float = 1e-4
    pcg_maxit: int = 200

    def __post_init__(self):
        if not (self.alpha > 0 and self.rho > 0 and self.pcg_tol > 0 and self.pcg_maxit > 0):
            raise InvalidDimensionError("smoother parameters must be positive")


class SpectralOperator:
    """S = A^alpha in the cosine eigenbasis of the Neumann Laplacian.

    Eigenvalues of A on an nx x ny grid:

        lam[k, l] = (2/dx^2)(1 - cos(pi k / nx)) + (2/dy^2)(1 - cos(pi l / ny)),

    the exact spectrum of the symmetric matrix tridiag(-1, 2, -1)/dx^2
    with (1, -1)/dx^2 boundary rows, whose eigenvectors are the
    orthonormal type-II cosine modes.  lam[0, 0] = 0 carries the
    constant nullspace; the pseudoinverse zeroes that mode.
    """

    def __init__(self, grid: Grid, alpha: float):
        self.grid = grid
        self.alpha = float(alpha)
        kx = np.arange(grid.nx)
        ky = np.arange(grid.ny)
        lam_x = (2.0 / grid.dx**2) * (1.0 - np.cos(math.pi * kx / grid.nx))
        lam_y = (2.0 / grid.dy**2) * (1.0 - np.cos(math.pi * ky / grid.ny))
        lam = lam_y[:, None] + lam_x[None, :]
        lam[0, 0] = 0.0  # exact, not merely tiny
        self.eigenvalues = lam**self.alpha
        with np.errstate(divide="ignore"):
            inv = np.where(self.eigenvalues > 0, 1.0 / self.eigenvalues, 0.0)
        self._inv_eigenvalues = inv

    def _scale(self, v: np.ndarray, factors: np.ndarray) -> np.ndarray:
        coeff = scipy.fft.dctn(v, type=2, norm="ortho")
        return scipy.fft.idctn(coeff * factors, type=2, norm="ortho")

    def apply(self, v: ScalarField) -> ScalarField:
        """S v; maps constants to zero."""
        return ScalarField(self.grid, self._scale(v.values, self.eigenvalues))

    def apply_pinv(self, v: ScalarField) -> ScalarField:
        """S+ v; zeroes the constant mode, inverts the rest."""
        return ScalarField(self.grid, self._scale(v.values, self._inv_eigenvalues))

    def apply_flat(self, w: np.ndarray) -> np.ndarray:
        return self._scale(w.reshape(self.grid.shape), self.eigenvalues).reshape(-1)

    def apply_pinv_flat(self, w: np.ndarray) -> np.ndarray:
        return self._scale(w.reshape(self.grid.shape), self._inv_eigenvalues).reshape(-1)


def build_spectral_operator(grid: Grid, alpha: float, force: bool = False) -> SpectralOperator:
    """Construct S = A^alpha.

    alpha below 1 loses the embedding that makes pointwise constraints
    meaningful and is refused unless force is set (the only legitimate
    use is demonstration sweeps).
    """
    if alpha <= 0:
        raise InvalidDimensionError(f"alpha must be positive, got {alpha}")
    if alpha < 1 and not force:
        raise InvalidDimensionError(f"alpha = {alpha} < 1 requires force=True")
    return SpectralOperator(grid, alpha)


def pcg(operator, preconditioner, rhs: ScalarField, tol: float, maxit: int):
    """Preconditioned conjugate gradients with zero initial guess.

    operator and preconditioner are callables on ScalarField and must
    be symmetric positive semidefinite on the iterated subspace.
    Returns (iterate, iteration count, history of the preconditioned
    residual norm sqrt(r'z), including the initial value).  Stops when
    the norm falls to tol times its initial value.  Non-positive
    direction curvature aborts: it signals an operator violating the
    contract.
    """
    grid = rhs.grid
    x = np.zeros(grid.shape)
    r = rhs.values.copy()
    z = preconditioner(ScalarField(grid, r.copy())).values
    rz = float(np.vdot(r, z))
    if rz < 0:
        raise PCGBreakdownError(f"preconditioner produced r'z = {rz} < 0")
    norm0 = math.sqrt(rz)
    history = [norm0]
    if norm0 == 0.0:
        return ScalarField(grid, x), 0, history
    p = z.copy()
    k = 0
    while k < maxit:
        ap = operator(ScalarField(grid, p.copy())).values
        pap = float(np.vdot(p, ap))
        if pap <= 0:
            raise PCGBreakdownError(f"direction curvature {pap} <= 0 at iteration {k}")
        gamma = rz / pap
        x += gamma * p
        r -= gamma * ap
        z = preconditioner(ScalarField(grid, r.copy())).values
        rz_next = float(np.vdot(r, z))
        if rz_next < 0:
            raise PCGBreakdownError(f"preconditioner produced r'z = {rz_next} < 0")
        k += 1
        history.append(math.sqrt(rz_next))
        if history[-1] <= tol * norm0:
            rz = rz_next
            break
        p = z + (rz_next / rz) * p
        rz = rz_next
    return ScalarField(grid, x), k, history


def solve_initial(c: ConstraintSystem, s: SpectralOperator, cfg: SmootherConfig) -> ScalarField:
    """Constrained seminorm-minimizing starting field T = u0 + Pv.

    Solves the projected system for v by PCG with the M preconditioner
    and returns u0 + Pv.  The constraints hold to rounding precision by
    construction, independent of how far PCG got; hitting the iteration
    cap only degrades smoothness and raises a warning.
    """
    if s.grid != c.grid:
        raise InvalidDimensionError("operator grid does not match constraint grid")
    grid = c.grid
    u0 = feasible_point(c)
    rho = cfg.rho

    def mean_removed(w: np.ndarray) -> np.ndarray:
        return w - w.mean()

    def op(v: ScalarField) -> ScalarField:
        w = v.flat()
        pw = c.project_flat(w)
        out = c.project_flat(s.apply_flat(pw)) + rho * (w - pw)
        return ScalarField(grid, out.reshape(grid.shape))

    def precond(r: ScalarField) -> ScalarField:
        w = c.project_flat(r.flat())
        w = mean_removed(w)
        w = s.apply_pinv_flat(w)
        w = mean_removed(w)
        w = c.project_flat(w)
        return ScalarField(grid, w.reshape(grid.shape))

    rhs = ScalarField(grid, (-c.project_flat(s.apply_flat(u0.flat()))).reshape(grid.shape))
    v, iterations, history = pcg(op, precond, rhs, cfg.pcg_tol, cfg.pcg_maxit)
    if history[-1] > cfg.pcg_tol * history[0]:
        warnings.warn(
            f"initializer PCG stopped at {iterations} iterations with relative "
            f"residual {history[-1] / history[0]:.2e}; field returned anyway",
            RuntimeWarning,
            stacklevel=2,
        )
    t_flat = u0.flat() + c.project_flat(v.flat())
    return ScalarField(grid, t_flat.reshape(grid.shape))


def funnel_metric(t: ScalarField, node: tuple[int, int]) -> float:
    """|T at a node - mean of its 4-neighbors|; sharpness of a point pit."""
    i, j = node
    g = t.grid
    neighbors = []
    if i > 0:
        neighbors.append(t.values[j, i - 1])
    if i < g.nx - 1:
        neighbors.append(t.values[j, i + 1])
    if j > 0:
        neighbors.append(t.values[j - 1, i])
    if j < g.ny - 1:
        neighbors.append(t.values[j + 1, i])
    return abs(float(t.values[j, i]) - float(np.mean(neighbors)))
