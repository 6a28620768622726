"""Satellite fire-detection likelihood and ignition search.

A detection pixel reports fire, no fire, or nothing (clouds, gaps).
Given an arrival-time field T, the chance that a pixel registers fire
combines two error sources, assumed independent:

  * detection error: a node burning since T is detected with
    probability p_false + (p_max - p_false) * logistic(a + b * proxy),
    where the heat proxy is 1 at arrival and decays as
    exp(-(t_obs - T)/tau); the floor and ceiling model commission and
    omission errors and keep every log finite;
  * position error: the nominal pixel center is smeared with a
    Gaussian kernel exp(-d^2/sigma^2), truncated at 3*sigma and
    normalized over the grid nodes it covers.

The log-likelihood of a record set sums ln(p) over fire pixels and
ln(1 - p) over no-fire pixels; missing pixels contribute zero.
Scanning that likelihood over a lattice of candidate ignition points,
each simulated by fast marching, ranks where and when the fire could
have started.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidDimensionError, OutOfCoverageError
from .grid import Grid, ScalarField
from .objective import ObjectiveConfig, fast_march, objective
from .spread import RosModel, node_rate_field

__all__ = [
    "DetectionRecord",
    "DetectionConfig",
    "heat_proxy",
    "detect_prob",
    "pixel_fire_prob",
    "data_log_likelihood",
    "IgnitionScore",
    "ignition_search",
    "sample_detections",
    "combined_objective",
    "read_detections_csv",
    "write_detections_csv",
]

FLAGS = ("fire", "nofire", "missing")


@dataclass(frozen=True)
class DetectionRecord:
    """One satellite pixel observation.

    x, y locate the nominal pixel center in meters; t is the overpass
    time; flag says what the sensor reported.  half_width records the
    sensor footprint scale and is carried as metadata.
    """

    x: float
    y: float
    t: float
    flag: str
    half_width: float = 0.0

    def __post_init__(self):
        if self.flag not in FLAGS:
            raise InvalidDimensionError(f"flag must be one of {FLAGS}, got {self.flag!r}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.t)):
            raise InvalidDimensionError("record coordinates and time must be finite")


@dataclass(frozen=True)
class DetectionConfig:
    """Detection model parameters.

    sigma is the position-error scale (meters); the default 500 m
    corresponds to a 3-sigma error of 1.5 km.  a and b shape the
    logistic response to the heat proxy; tau is the proxy decay time
    (seconds), large values meaning the fire stays detectable long
    after arrival.  The a/b defaults are placeholders standing in for
    sensor-specific regression fits and are meant to be configured.
    """

    sigma: float = 500.0
    a: float = -4.0
    b: float = 8.0
    p_false: float = 0.05
    p_max: float = 0.95
    tau: float = 3600.0

    def __post_init__(self):
        if not (0.0 < self.p_false < self.p_max < 1.0):
            raise InvalidDimensionError(
                f"need 0 < p_false < p_max < 1, got p_false={self.p_false}, p_max={self.p_max}"
            )
        if not (self.sigma > 0 and self.tau > 0):
            raise InvalidDimensionError("sigma and tau must be positive")


def heat_proxy(t: ScalarField, node, t_obs: float, cfg: DetectionConfig) -> float:
    """Unit-peak decaying proxy for the heat output of a burning node.

    0 before fire arrival, exp(-(t_obs - T)/tau) afterwards.
    """
    if isinstance(node, tuple):
        i, j = node
        value = float(t.values[j, i])
    else:
        value = float(t.flat()[int(node)])
    if t_obs < value:
        return 0.0
    return math.exp(-(t_obs - value) / cfg.tau)


def detect_prob(proxy: float, cfg: DetectionConfig) -> float:
    """Probability of detection for a given proxy value.

    Logistic in the proxy, floored at p_false and capped at p_max.
    """
    p = cfg.p_false + (cfg.p_max - cfg.p_false) / (1.0 + math.exp(-(cfg.a + cfg.b * proxy)))
    return min(max(p, cfg.p_false), cfg.p_max)


def _proxy_array(tv: np.ndarray, t_obs: float, tau: float) -> np.ndarray:
    burning = t_obs >= tv
    with np.errstate(over="ignore"):
        decay = np.exp(np.minimum(-(t_obs - tv) / tau, 0.0))
    return np.where(burning, decay, 0.0)


def _detect_prob_array(proxy: np.ndarray, cfg: DetectionConfig) -> np.ndarray:
    p = cfg.p_false + (cfg.p_max - cfg.p_false) / (1.0 + np.exp(-(cfg.a + cfg.b * proxy)))
    return np.clip(p, cfg.p_false, cfg.p_max)


def _record_kernel(grid: Grid, x: float, y: float, cfg: DetectionConfig):
    """Flat node indices and normalized Gaussian weights for a pixel.

    Support is every node within 3*sigma of the center, plus the
    nearest node so the support is never empty; weights e^(-d^2/s^2)
    are normalized to sum to 1 (all-underflow degenerates to a point
    mass at the nearest node).
    """
    r = 3.0 * cfg.sigma
    if not (
        grid.x0 - r <= x <= grid.xmax + r and grid.y0 - r <= y <= grid.ymax + r
    ):
        raise OutOfCoverageError(
            f"record at ({x}, {y}) beyond grid coverage padded by 3*sigma = {r}"
        )
    ilo = max(0, int(np.ceil((x - r - grid.x0) / grid.dx)))
    ihi = min(grid.nx - 1, int(np.floor((x + r - grid.x0) / grid.dx)))
    jlo = max(0, int(np.ceil((y - r - grid.y0) / grid.dy)))
    jhi = min(grid.ny - 1, int(np.floor((y + r - grid.y0) / grid.dy)))
    idx_list = []
    w_list = []
    if ilo <= ihi and jlo <= jhi:
        ii = np.arange(ilo, ihi + 1)
        jj = np.arange(jlo, jhi + 1)
        dx2 = (grid.x0 + ii * grid.dx - x) ** 2
        dy2 = (grid.y0 + jj * grid.dy - y) ** 2
        d2 = dy2[:, None] + dx2[None, :]
        mask = d2 <= r * r
        if mask.any():
            flat_idx = (jj[:, None] * grid.nx + ii[None, :])[mask]
            w = np.exp(-d2[mask] / cfg.sigma**2)
            idx_list.append(flat_idx)
            w_list.append(w)
    # nearest node, clamped to the grid, keeps the support non-empty
    ni = min(max(int(round((x - grid.x0) / grid.dx)), 0), grid.nx - 1)
    nj = min(max(int(round((y - grid.y0) / grid.dy)), 0), grid.ny - 1)
    nearest = nj * grid.nx + ni
    if not idx_list or nearest not in idx_list[0]:
        nd2 = (grid.x0 + ni * grid.dx - x) ** 2 + (grid.y0 + nj * grid.dy - y) ** 2
        idx_list.append(np.array([nearest]))
        w_list.append(np.exp(np.array([-nd2 / cfg.sigma**2])))
    idx = np.concatenate(idx_list)
    w = np.concatenate(w_list)
    total = w.sum()
    if total > 0.0:
        w = w / total
    else:
        w = np.where(idx == nearest, 1.0, 0.0)
    return idx, w


def pixel_fire_prob(t: ScalarField, rec: DetectionRecord, cfg: DetectionConfig) -> float:
    """Probability that the pixel registers fire given the field T.

    Position-weighted average of per-node detection probabilities;
    always inside [p_false, p_max].
    """
    idx, w = _record_kernel(t.grid, rec.x, rec.y, cfg)
    proxy = _proxy_array(t.flat()[idx], rec.t, cfg.tau)
    return float(np.dot(w, _detect_prob_array(proxy, cfg)))


def data_log_likelihood(t: ScalarField, recs, cfg: DetectionConfig) -> float:
    """Sum of ln(p) over fire records and ln(1 - p) over no-fire records."""
    total = 0.0
    for rec in recs:
        if rec.flag == "missing":
            continue
        p = pixel_fire_prob(t, rec, cfg)
        total += math.log(p) if rec.flag == "fire" else math.log1p(-p)
    return total


class IgnitionScore(NamedTuple):
    x: float
    y: float
    t: float
    loglik: float
    index: int


def ignition_search(
    grid: Grid,
    candidates,
    recs,
    ros: RosModel,
    cfg: DetectionConfig,
) -> list[IgnitionScore]:
    """Rank candidate ignition points and times by data likelihood.

    candidates is a list of ((x, y), time) pairs; each is simulated by
    fast marching from the nearest grid node and scored against the
    records.  Results are sorted by decreasing log-likelihood with ties
    broken by candidate index.
    """
    rates = node_rate_field(ros, grid)
    kernels = []
    for rec in recs:
        if rec.flag == "missing":
            continue
        idx, w = _record_kernel(grid, rec.x, rec.y, cfg)
        kernels.append((rec.flag == "fire", rec.t, idx, w))
    scores = []
    for index, ((x, y), t_ign) in enumerate(candidates):
        if not grid.contains(x, y):
            raise OutOfCoverageError(f"candidate ({x}, {y}) outside grid")
        ni = min(max(int(round((x - grid.x0) / grid.dx)), 0), grid.nx - 1)
        nj = min(max(int(round((y - grid.y0) / grid.dy)), 0), grid.ny - 1)
        t_field = fast_march(grid, rates, [((ni, nj), float(t_ign))])
        tv = t_field.flat()
        total = 0.0
        for is_fire, t_obs, idx, w in kernels:
            proxy = _proxy_array(tv[idx], t_obs, cfg.tau)
            p = float(np.dot(w, _detect_prob_array(proxy, cfg)))
            total += math.log(p) if is_fire else math.log1p(-p)
        scores.append(IgnitionScore(float(x), float(y), float(t_ign), total, index))
    return sorted(scores, key=lambda s: (-s.loglik, s.index))


def sample_detections(
    t: ScalarField,
    n: int,
    t_obs: float,
    cfg: DetectionConfig,
    rng: np.random.Generator,
    missing_fraction: float = 0.0,
) -> list[DetectionRecord]:
    """Draw synthetic records consistent with the detection model.

    Pixel centers are uniform over the grid bounding box; each record
    reports fire with probability pixel_fire_prob under the given
    field, and is independently blanked to missing with the given
    fraction.  The draw order per record is fixed (x, y, flag, missing)
    so a seeded generator reproduces the set bit for bit.
    """
    g = t.grid
    out = []
    for _ in range(n):
        x = float(rng.uniform(g.x0, g.xmax))
        y = float(rng.uniform(g.y0, g.ymax))
        rec = DetectionRecord(x, y, float(t_obs), "fire")
        p = pixel_fire_prob(t, rec, cfg)
        flag = "fire" if rng.uniform() < p else "nofire"
        if missing_fraction > 0.0 and rng.uniform() < missing_fraction:
            flag = "missing"
        out.append(DetectionRecord(x, y, float(t_obs), flag))
    return out


def combined_objective(
    ros: RosModel,
    obj_cfg: ObjectiveConfig,
    recs,
    det_cfg: DetectionConfig,
    likelihood_weight: float,
    exempt_nodes=(),
):
    """Closure J(T) - weight * log-likelihood, for likelihood-aware fits.

    Usable anywhere a plain objective closure is (line_search, sweep);
    larger weights trade residual fidelity for agreement with the
    detection data.
    """

    def closure(t: ScalarField) -> float:
        value = objective(t, ros, obj_cfg, exempt_nodes)
        if likelihood_weight != 0.0:
            value -= likelihood_weight * data_log_likelihood(t, recs, det_cfg)
        return value

    return closure


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_detections_csv(recs, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "t", "flag"])
        for rec in recs:
            w.writerow([_fmt(rec.x), _fmt(rec.y), _fmt(rec.t), rec.flag])


def read_detections_csv(path) -> list[DetectionRecord]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != ["x", "y", "t", "flag"]:
            raise InvalidDimensionError(f"unexpected detection CSV header: {header}")
        return [
            DetectionRecord(float(row[0]), float(row[1]), float(row[2]), row[3])
            for row in r
            if row
        ]
