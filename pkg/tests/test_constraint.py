"""Constraint assembly oracles: point location, condensation, projector."""

import numpy as np
import pytest

import firefit as ff
from firefit.constraint import FEASIBLE_RTOL, locate_point
from firefit.errors import (
    InvalidDimensionError,
    OutOfDomainError,
    RankDeficiencyError,
)


def brute_force_locate(grid, p):
    """Independent point classifier: scan every triangle of the mesh in
    global id order and return the first whose closed region contains
    the point, with its barycentric weights.  Cells split along the
    (i, j)-(i+1, j+1) diagonal; lower triangle of cell (ci, cj) has id
    2*(cj*(nx-1)+ci), the upper one id+1."""
    x, y = p
    s = (x - grid.x0) / grid.dx
    t = (y - grid.y0) / grid.dy
    for cj in range(grid.ny - 1):
        for ci in range(grid.nx - 1):
            u = s - ci
            v = t - cj
            if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
                continue
            if v <= u:  # lower triangle contains it (diagonal included)
                nodes = (
                    grid.node_index(ci, cj),
                    grid.node_index(ci + 1, cj),
                    grid.node_index(ci + 1, cj + 1),
                )
                return 2 * (cj * (grid.nx - 1) + ci), nodes, (1.0 - u, u - v, v)
            nodes = (
                grid.node_index(ci, cj),
                grid.node_index(ci + 1, cj + 1),
                grid.node_index(ci, cj + 1),
            )
            return 2 * (cj * (grid.nx - 1) + ci) + 1, nodes, (1.0 - v, u, v - u)
    raise AssertionError("point not located by brute force")


def test_locate_point_frozen_cases(grid8):
    # (1.25, 2.75): cell (1, 2), u=0.25, v=0.75 -> upper triangle,
    # weights (1-v, u, v-u) = (0.25, 0.25, 0.5)
    tri, nodes, w = locate_point(grid8, (1.25, 2.75))
    assert tri == 2 * (2 * 7 + 1) + 1
    assert nodes == (2 * 8 + 1, 3 * 8 + 2, 3 * 8 + 1)
    np.testing.assert_allclose(w, (0.25, 0.25, 0.5))
    # (4.5, 4.25): u=0.5, v=0.25 -> lower triangle, (0.5, 0.25, 0.25)
    tri, nodes, w = locate_point(grid8, (4.5, 4.25))
    assert tri == 2 * (4 * 7 + 4)
    assert nodes == (4 * 8 + 4, 4 * 8 + 5, 5 * 8 + 5)
    np.testing.assert_allclose(w, (0.5, 0.25, 0.25))
    # exactly on a node: weight 1 on that node, reached as the far
    # corner of the lower-left cell by the edge tie rule
    tri, nodes, w = locate_point(grid8, (3.0, 5.0))
    assert w == (0.0, 0.0, 1.0) and nodes[2] == 5 * 8 + 3
    # on the diagonal: lower triangle wins the tie
    tri, _, _ = locate_point(grid8, (2.5, 2.5))
    assert tri % 2 == 0


def test_locate_point_matches_brute_force(grid8, rng):
    for _ in range(300):
        p = (rng.uniform(0, 7), rng.uniform(0, 7))
        assert locate_point(grid8, p) == brute_force_locate(grid8, p)
    # points exactly on grid lines exercise the tie rules
    for p in [(3.0, 1.4), (1.4, 3.0), (2.0, 2.0), (0.0, 0.0), (7.0, 7.0), (7.0, 3.5)]:
        assert locate_point(grid8, p) == brute_force_locate(grid8, p)


def test_locate_point_affine_reproduction(grid8, rng):
    # barycentric interpolation on triangles is exact for affine fields
    a, b, c = 2.0, -0.7, 0.3
    x, yy = np.meshgrid(np.arange(8.0), np.arange(8.0))
    vals = (a + b * x + c * yy).ravel()
    for _ in range(100):
        p = (rng.uniform(0, 7), rng.uniform(0, 7))
        _, nodes, w = locate_point(grid8, p)
        got = sum(wi * vals[n] for n, wi in zip(nodes, w))
        np.testing.assert_allclose(got, a + b * p[0] + c * p[1], rtol=1e-12)


def test_locate_point_out_of_domain(grid8):
    with pytest.raises(OutOfDomainError):
        locate_point(grid8, (7.5, 2.0))
    with pytest.raises(OutOfDomainError):
        locate_point(grid8, (2.0, -0.5))


def test_triangle_sample_feasibility(grid8, rng):
    f = ff.ScalarField(grid8, rng.normal(size=(8, 8)))
    xs = rng.uniform(0, 7, size=12)
    ys = rng.uniform(0, 7, size=12)
    vals = ff.triangle_sample(f, xs, ys)
    perim = ff.Perimeter(tuple(zip(xs.tolist(), ys.tolist())), 0.0, tuple(vals.tolist()))
    c = ff.build_constraints(grid8, [perim])
    assert c.violation(f) < 1e-14


def test_perimeter_validation():
    with pytest.raises(InvalidDimensionError):
        ff.Perimeter((), 0.0)
    with pytest.raises(InvalidDimensionError):
        ff.Perimeter(((0.0, 0.0),), np.nan)
    with pytest.raises(InvalidDimensionError):
        ff.Perimeter(((0.0, 0.0), (1.0, 1.0)), 1.0, (1.0,))
    p = ff.Perimeter(((0.0, 0.0), (1.0, 1.0)), 3.0)
    np.testing.assert_array_equal(p.times(), [3.0, 3.0])


def test_condensation_sums_rows(grid8):
    # two points in the same triangle become one row; weights and times add
    p1, p2 = (1.2, 0.1), (1.4, 0.3)  # both in the lower triangle of cell (1, 0)
    tri1, nodes1, w1 = locate_point(grid8, p1)
    tri2, _, w2 = locate_point(grid8, p2)
    assert tri1 == tri2
    c = ff.build_constraints(grid8, [ff.Perimeter((p1, p2), 5.0)])
    assert c.n_rows == 1
    assert c.g[0] == 10.0
    row = c.h.toarray()[0]
    expected = np.zeros(64)
    for n, w in zip(nodes1, w1):
        expected[n] += w
    for n, w in zip(nodes1, w2):
        expected[n] += w
    np.testing.assert_allclose(row, expected, atol=1e-15)


def test_same_triangle_different_perimeters_stay_separate(grid8):
    p = (1.2, 0.1)
    c = ff.build_constraints(
        grid8, [ff.Perimeter((p,), 1.0), ff.Perimeter((p + np.array([0.1, 0.1]),), 2.0)]
    )
    # same triangle but different perimeters: rows must not merge, and
    # the Gram factorization must reject the nearly dependent pair only
    # if it is actually singular; these two points differ, so rank is 2
    assert c.n_rows == 2


def test_row_ordering(grid8):
    # rows sorted by (perimeter index, triangle id)
    pts_a = [(5.5, 5.1), (0.5, 0.1)]  # triangles in decreasing id order
    pts_b = [(3.5, 3.1)]
    c = ff.build_constraints(grid8, [ff.Perimeter(tuple(pts_a), 1.0), ff.Perimeter(tuple(pts_b), 2.0)])
    keys = c.row_keys
    assert keys == tuple(sorted(keys))
    assert keys[0][0] == 0 and keys[-1][0] == 1


def test_brute_force_assembly_circle(rng):
    # independently assemble (H, g) for a 64-point circle and compare
    grid = ff.make_grid(32, 32, 1.0, 1.0)
    cx = cy = 15.5
    ang = 2 * np.pi * np.arange(64) / 64
    pts = [(cx + 10.0 * np.cos(a), cy + 10.0 * np.sin(a)) for a in ang]
    times = rng.uniform(1.0, 2.0, size=64)
    perim = ff.Perimeter(tuple(pts), 1.5, tuple(times.tolist()))
    c = ff.build_constraints(grid, [perim])

    condensed = {}
    for p, t in zip(pts, times):
        tri, nodes, w = brute_force_locate(grid, p)
        row, gsum = condensed.setdefault(tri, ({}, 0.0))
        for n, wi in zip(nodes, w):
            row[n] = row.get(n, 0.0) + wi
        condensed[tri] = (row, gsum + t)
    h_oracle = np.zeros((len(condensed), grid.n_nodes))
    g_oracle = np.zeros(len(condensed))
    for r, tri in enumerate(sorted(condensed)):
        row, gsum = condensed[tri]
        for n, w in row.items():
            h_oracle[r, n] = w
        g_oracle[r] = gsum
    np.testing.assert_allclose(c.h.toarray(), h_oracle, atol=1e-14)
    np.testing.assert_allclose(c.g, g_oracle, rtol=1e-14)


def test_projector_against_dense_pseudoinverse(grid8, rng):
    pts = [(0.7, 0.2), (3.3, 4.8), (6.1, 1.9), (2.5, 6.4)]
    c = ff.build_constraints(grid8, [ff.Perimeter(tuple(pts), 2.0)])
    h = c.h.toarray()
    p_oracle = np.eye(64) - h.T @ np.linalg.pinv(h @ h.T) @ h
    for _ in range(5):
        w = rng.normal(size=64)
        np.testing.assert_allclose(c.project_flat(w), p_oracle @ w, atol=1e-12)
    # feasible point against the dense least-norm solution
    u_oracle = h.T @ np.linalg.pinv(h @ h.T) @ c.g
    u0 = ff.feasible_point(c)
    np.testing.assert_allclose(u0.flat(), u_oracle, atol=1e-12)


def test_projector_idempotent_symmetric(grid8, rng):
    pts = [(0.7, 0.2), (3.3, 4.8), (6.1, 1.9)]
    c = ff.build_constraints(grid8, [ff.Perimeter(tuple(pts), 1.0)])
    for _ in range(5):
        w = rng.normal(size=64)
        pw = c.project_flat(w)
        np.testing.assert_allclose(c.project_flat(pw), pw, atol=1e-12)
        assert np.abs(c.apply_h(pw)).max() < 1e-12
        v = rng.normal(size=64)
        # symmetry through inner products
        assert abs(np.dot(c.project_flat(v), w) - np.dot(v, c.project_flat(w))) < 1e-12


def test_rank_deficiency_detected(grid8):
    # the same point twice in different perimeters gives two identical
    # rows and a singular Gram matrix
    p = (2.3, 2.6)
    with pytest.raises(RankDeficiencyError):
        ff.build_constraints(grid8, [ff.Perimeter((p,), 1.0), ff.Perimeter((p,), 2.0)])


def test_feasible_point_satisfies_constraints(grid8):
    pts = [(0.7, 0.2), (3.3, 4.8), (6.1, 1.9), (2.5, 6.4)]
    c = ff.build_constraints(grid8, [ff.Perimeter(tuple(pts), 2.0)])
    u0 = ff.feasible_point(c)
    assert c.violation(u0) < FEASIBLE_RTOL


def test_project_nullspace_field_variant(grid8, rng):
    pts = [(0.7, 0.2), (3.3, 4.8)]
    c = ff.build_constraints(grid8, [ff.Perimeter(tuple(pts), 2.0)])
    v = ff.ScalarField(grid8, rng.normal(size=(8, 8)))
    pv = ff.project_nullspace(c, v)
    assert np.abs(c.apply_h(pv.flat())).max() < 1e-12


def test_constrained_nodes(grid8):
    c = ff.build_constraints(grid8, [ff.Perimeter(((1.25, 2.75),), 1.0)])
    _, nodes, _ = locate_point(grid8, (1.25, 2.75))
    np.testing.assert_array_equal(c.constrained_nodes(), sorted(nodes))


def test_out_of_domain_point_reports_perimeter(grid8):
    with pytest.raises(OutOfDomainError, match="perimeter 1"):
        ff.build_constraints(
            grid8,
            [ff.Perimeter(((1.0, 1.0),), 0.5), ff.Perimeter(((9.0, 1.0),), 1.0)],
        )


def test_perimeters_csv_round_trip(tmp_path):
    perims = [
        ff.Perimeter(((3.0, 5.0),), 0.0),
        ff.Perimeter(((1.25, 2.75), (4.5, 4.25)), 2.0, (1.9, 2.1)),
    ]
    path = tmp_path / "p.csv"
    ff.write_perimeters_csv(perims, path)
    back = ff.read_perimeters_csv(path)
    assert len(back) == 2
    assert back[0].points == perims[0].points
    assert back[0].time == 0.0
    np.testing.assert_allclose(back[1].times(), [1.9, 2.1])


def test_perimeters_csv_single_no_id_column(tmp_path):
    perims = [ff.Perimeter(((1.0, 1.0), (2.0, 2.0)), 3.0)]
    path = tmp_path / "one.csv"
    ff.write_perimeters_csv(perims, path)
    header = path.read_text().splitlines()[0]
    assert "perimeter_id" not in header
    back = ff.read_perimeters_csv(path)
    assert len(back) == 1
    assert back[0].time == 3.0


def test_empty_perimeter_list_rejected(grid8):
    with pytest.raises(InvalidDimensionError):
        ff.build_constraints(grid8, [])
