"""Rate-of-spread models.

Two kinds of backends feed the arrival-time fit: the classical
point formula

    R = R0 * (1 + phi_w + phi_s),

with the wind and slope factors supplied as precomputed numbers, and
spatial fields (sectored idealized rates, or an arbitrary gridded rate)
evaluated by bilinear interpolation.  Every backend clamps its output
to a positive floor r_min, since 1/R appears in the eikonal residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FirefitError, InvalidDimensionError
from .grid import Grid, ScalarField, bilinear_sample

__all__ = [
    "R_MIN_DEFAULT",
    "RothermelInputs",
    "rothermel_rate",
    "SectorSpec",
    "sectored_ros_field",
    "RosModel",
    "UniformRos",
    "SectoredRos",
    "FieldRos",
    "evaluate_ros",
    "node_rate_field",
]

R_MIN_DEFAULT = 1e-6


@dataclass(frozen=True)
class RothermelInputs:
    """Inputs to the point spread-rate formula.

    r0 is the omnidirectional (no-wind, no-slope) rate in m/s; phi_w
    and phi_s are the dimensionless wind and slope enhancement factors.
    """

    r0: float
    phi_w: float = 0.0
    phi_s: float = 0.0

    def __post_init__(self):
        for name in ("r0", "phi_w", "phi_s"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidDimensionError(f"{name} must be finite and non-negative, got {v}")


def rothermel_rate(inputs: RothermelInputs) -> float:
    """Point spread rate r0 * (1 + phi_w + phi_s)."""
    return inputs.r0 * (1.0 + inputs.phi_w + inputs.phi_s)


@dataclass(frozen=True)
class SectorSpec:
    """Angular sectors around a center point, one spread rate each.

    boundaries[k] is the starting angle of sector k in radians; the
    list must be strictly increasing within [0, 2*pi), and sector k
    spans [boundaries[k], boundaries[k+1]) with the last sector
    wrapping around to boundaries[0] + 2*pi.
    """

    center: tuple[float, float]
    boundaries: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "boundaries", tuple(float(a) for a in self.boundaries))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if len(self.boundaries) != len(self.rates) or not self.rates:
            raise InvalidDimensionError("need one rate per sector boundary, at least one sector")
        b = self.boundaries
        if any(not (0.0 <= a < 2 * math.pi) for a in b):
            raise InvalidDimensionError("sector boundaries must lie in [0, 2*pi)")
        if any(b[k] >= b[k + 1] for k in range(len(b) - 1)):
            raise InvalidDimensionError("sector boundaries must be strictly increasing")
        if any(r <= 0 for r in self.rates):
            raise InvalidDimensionError("sector rates must be positive")

    def rate_at_angle(self, theta: float) -> float:
        """Rate of the sector containing angle theta (any real angle)."""
        t = math.fmod(theta, 2 * math.pi)
        if t < 0:
            t += 2 * math.pi
        b = self.boundaries
        # t below the first boundary belongs to the wrapping last sector
        if t < b[0]:
            return self.rates[-1]
        k = int(np.searchsorted(b, t, side="right")) - 1
        return self.rates[k]


def sectored_ros_field(grid: Grid, spec: SectorSpec) -> ScalarField:
    """Per-node rates from an angular sector spec.

    Each node gets the rate of the sector containing its angle from
    spec.center; nodes exactly at the center get the first sector's
    rate.
    """
    cx, cy = spec.center
    xs = grid.x_coords()[None, :] - cx
    ys = grid.y_coords()[:, None] - cy
    theta = np.arctan2(np.broadcast_to(ys, grid.shape), np.broadcast_to(xs, grid.shape))
    theta = np.where(theta < 0, theta + 2 * math.pi, theta)
    b = np.asarray(spec.boundaries)
    k = np.searchsorted(b, theta, side="right") - 1
    k = np.where(k < 0, len(spec.rates) - 1, k)
    values = np.asarray(spec.rates)[k]
    at_center = (xs == 0) & (ys == 0)
    values = np.where(at_center, spec.rates[0], values)
    return ScalarField(grid, values)


class RosModel:
    """Spread-rate evaluator R(x, y, t, direction).

    Subclasses implement rate_at; evaluation is pure and clamps to the
    r_min floor.  The direction argument is reserved for backends whose
    rate depends on the spread direction (wind/slope projection) and is
    ignored by the backends here.
    """

    def __init__(self, r_min: float = R_MIN_DEFAULT):
        if not (r_min > 0):
            raise InvalidDimensionError(f"r_min must be positive, got {r_min}")
        self.r_min = float(r_min)

    def rate_at(self, x: float, y: float, t: float, direction=None) -> float:
        raise NotImplementedError

    def __call__(self, x: float, y: float, t: float = 0.0, direction=None) -> float:
        r = self.rate_at(x, y, t, direction)
        if not math.isfinite(r):
            raise FirefitError(f"spread rate not finite at ({x}, {y})")
        return max(r, self.r_min)


class UniformRos(RosModel):
    """Constant rate everywhere."""

    def __init__(self, rate: float, r_min: float = R_MIN_DEFAULT):
        super().__init__(r_min)
        self.rate = float(rate)

    def rate_at(self, x, y, t, direction=None):
        return self.rate


class SectoredRos(RosModel):
    """Angular sectors; rate depends only on the bearing from the center."""

    def __init__(self, spec: SectorSpec, r_min: float = R_MIN_DEFAULT):
        super().__init__(r_min)
        self.spec = spec

    def rate_at(self, x, y, t, direction=None):
        cx, cy = self.spec.center
        if x == cx and y == cy:
            return self.spec.rates[0]
        return self.spec.rate_at_angle(math.atan2(y - cy, x - cx))


class FieldRos(RosModel):
    """Gridded rate field, bilinearly interpolated between nodes.

    This is the backend for rates built from the point formula on
    per-node factor fields (r0, phi_w, phi_s sampled per node) or read
    from a grid file.
    """

    def __init__(self, rate_field: ScalarField, r_min: float = R_MIN_DEFAULT):
        super().__init__(r_min)
        self.field = rate_field

    @classmethod
    def from_rothermel_fields(
        cls,
        r0: ScalarField,
        phi_w: ScalarField | None = None,
        phi_s: ScalarField | None = None,
        r_min: float = R_MIN_DEFAULT,
    ) -> "FieldRos":
        g = r0.grid
        w = phi_w.values if phi_w is not None else 0.0
        s = phi_s.values if phi_s is not None else 0.0
        if np.any(r0.values < 0) or np.any(np.asarray(w) < 0) or np.any(np.asarray(s) < 0):
            raise InvalidDimensionError("rate factors must be non-negative")
        return cls(ScalarField(g, r0.values * (1.0 + w + s)), r_min)

    def rate_at(self, x, y, t, direction=None):
        return bilinear_sample(self.field, x, y)


def evaluate_ros(model: RosModel, x: float, y: float, t: float = 0.0, direction=None) -> float:
    """Evaluate a spread-rate model at a point; always ≥ model.r_min."""
    return model(x, y, t, direction)


def node_rate_field(model: RosModel, grid: Grid, t: float = 0.0) -> ScalarField:
    """Sample a model at every node, floor applied.

    SectoredRos and FieldRos avoid the per-node Python loop; other
    backends fall back to pointwise evaluation.
    """
    if isinstance(model, UniformRos):
        return ScalarField.full(grid, max(model.rate, model.r_min))
    if isinstance(model, SectoredRos):
        f = sectored_ros_field(grid, model.spec)
        return ScalarField(grid, np.maximum(f.values, model.r_min))
    if isinstance(model, FieldRos) and model.field.grid == grid:
        return ScalarField(grid, np.maximum(model.field.values, model.r_min))
    values = np.empty(grid.shape)
    for j in range(grid.ny):
        for i in range(grid.nx):
            x, y = grid.node_coords(i, j)
            values[j, i] = model(x, y, t)
    return ScalarField(grid, values)
