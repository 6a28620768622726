"""Shared fixtures: small grids and a reusable concentric-circles case."""

import numpy as np
import pytest

import firefit as ff


@pytest.fixture
def grid8():
    return ff.make_grid(8, 8, 1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def build_concentric_case(n, radii, n_points=64, rates=(1.0, 0.7, 1.2, 0.9)):
    """Sectored concentric-circles case: exact marched field plus
    perimeters whose point times are sampled from it with the same
    triangle interpolation the constraint rows use, so the exact field
    is feasible to machine precision.  Returns a small namespace."""
    grid = ff.make_grid(n, n, 1.0, 1.0)
    ci = cj = (n - 1) // 2
    cx, cy = float(ci), float(cj)
    n_sec = len(rates)
    spec = ff.SectorSpec(
        center=(cx, cy),
        boundaries=tuple(2.0 * np.pi * k / n_sec for k in range(n_sec)),
        rates=tuple(rates),
    )
    ros = ff.SectoredRos(spec)
    rate_field = ff.node_rate_field(ros, grid)
    exact = ff.fast_march(grid, rate_field, [((ci, cj), 0.0)])
    perimeters = [ff.Perimeter(((cx, cy),), 0.0)]
    for radius in radii:
        ang = 2.0 * np.pi * np.arange(n_points) / n_points
        px = cx + radius * np.cos(ang)
        py = cy + radius * np.sin(ang)
        pt = ff.triangle_sample(exact, px, py)
        perimeters.append(
            ff.Perimeter(
                tuple(zip(px.tolist(), py.tolist())),
                float(np.median(pt)),
                tuple(pt.tolist()),
            )
        )
    system = ff.build_constraints(grid, perimeters)

    class Case:
        pass

    case = Case()
    case.grid = grid
    case.center = (ci, cj)
    case.radii = tuple(radii)
    case.ros = ros
    case.rate_field = rate_field
    case.exact = exact
    case.perimeters = perimeters
    case.system = system
    return case


@pytest.fixture(scope="session")
def small_case():
    """40x40 sectored case shared by optimizer and smoother tests."""
    return build_concentric_case(40, (6.0, 14.0), n_points=48)
