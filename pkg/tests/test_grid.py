"""Grid container, upwind norm, interpolation, and raster I/O tests."""

import numpy as np
import pytest

import firefit as ff
from firefit.errors import InvalidDimensionError, OutOfDomainError, ShapeMismatchError


def test_make_grid_basic(grid8):
    assert grid8.shape == (8, 8)
    assert grid8.n_nodes == 64
    assert grid8.xmax == 7.0 and grid8.ymax == 7.0
    assert grid8.node_index(3, 2) == 2 * 8 + 3
    np.testing.assert_allclose(grid8.x_coords(), np.arange(8.0))


def test_make_grid_rejects_bad_dims():
    with pytest.raises(InvalidDimensionError):
        ff.make_grid(1, 8, 1.0, 1.0)
    with pytest.raises(InvalidDimensionError):
        ff.make_grid(8, 8, -1.0, 1.0)
    with pytest.raises(InvalidDimensionError):
        ff.make_grid(8, 8, 1.0, 0.0)


def test_scalar_field_shape_checked(grid8):
    with pytest.raises(ShapeMismatchError):
        ff.ScalarField(grid8, np.zeros((8, 7)))


def test_upwind_norm_oracle_3x3():
    # hand-worked Godunov values on a 3x3 field with dx = dy = 1:
    #   t = [[0, 1, 4],
    #        [2, 3, 5],
    #        [1, 0, 2]]   (row j=0 first)
    # at node (1,1) (value 3): back-x 3-2=1, fwd-x 5-3=2 -> x-term
    # max(1, -2, 0) = 1; back-y 3-1=2, fwd-y 0-3=-3 -> y-term
    # max(2, 3, 0) = 3; norm^2 = 1 + 9 = 10
    t = ff.ScalarField(
        ff.make_grid(3, 3, 1.0, 1.0),
        np.array([[0.0, 1.0, 4.0], [2.0, 3.0, 5.0], [1.0, 0.0, 2.0]]),
    )
    n2 = ff.upwind_gradient_norm_squared(t)
    assert n2[1, 1] == 10.0
    # corner (0,0): only fwd-x 1-0=1 -> max(-1, 0) = 0 wait, fwd term is
    # -(t[0,1]-t[0,0]) = -1 -> max(-1, 0) = 0; fwd-y 2-0=2 -> -(2) -> 0
    assert n2[0, 0] == 0.0
    # corner (2,0) (value 4): back-x 4-1=3; fwd-y 5-4=1 -> -(1) -> 0
    assert n2[0, 2] == 9.0


def test_upwind_norm_anisotropic_spacing():
    # one-sided differences must divide by the right spacing
    g = ff.make_grid(3, 3, 2.0, 0.5)
    v = np.zeros((3, 3))
    v[1, 1] = 1.0
    n2 = ff.upwind_gradient_norm_squared(ff.ScalarField(g, v))
    # at (1,1): back-x (1-0)/2 = 0.5, fwd-x -> -(0-1)/2 = 0.5 -> 0.5
    #           back-y (1-0)/0.5 = 2, fwd-y -> 2 -> 2; 0.25 + 4
    assert n2[1, 1] == 4.25


def test_upwind_norm_linear_ramp_exact():
    g = ff.make_grid(12, 9, 1.0, 1.0)
    x, y = np.meshgrid(g.x_coords(), g.y_coords())
    t = ff.ScalarField(g, 3.0 * x + 4.0 * y)
    norm = ff.upwind_gradient_norm(t).values
    # interior and both downwind boundaries see the full (3, 4) slope
    np.testing.assert_allclose(norm[1:, 1:], 5.0, rtol=1e-14)
    # on the upwind edges only the one available one-sided difference
    # contributes, so the norm drops to the single-axis slope
    np.testing.assert_allclose(norm[0, 1:], 3.0, rtol=1e-14)
    np.testing.assert_allclose(norm[1:, 0], 4.0, rtol=1e-14)
    assert norm[0, 0] == 0.0


def test_upwind_norm_rejects_nonfinite(grid8):
    v = np.zeros((8, 8))
    v[3, 3] = np.inf
    with pytest.raises(ValueError):
        ff.upwind_gradient_norm_squared(ff.ScalarField(grid8, v))


def test_count_local_minima_brute_force(rng):
    # strict 4-neighbor local minima, counted against a direct scan
    g = ff.make_grid(13, 11, 1.0, 1.0)
    for _ in range(20):
        v = rng.normal(size=(11, 13))
        expected = 0
        for j in range(11):
            for i in range(13):
                neigh = []
                if i > 0:
                    neigh.append(v[j, i - 1])
                if i < 12:
                    neigh.append(v[j, i + 1])
                if j > 0:
                    neigh.append(v[j - 1, i])
                if j < 10:
                    neigh.append(v[j + 1, i])
                if all(v[j, i] < w for w in neigh):
                    expected += 1
        assert ff.count_local_minima(ff.ScalarField(g, v)) == expected


def test_count_local_minima_exclusions(grid8):
    v = np.full((8, 8), 5.0)
    v[2, 3] = 1.0
    v[6, 6] = 0.5
    t = ff.ScalarField(grid8, v)
    assert ff.count_local_minima(t) == 2
    assert ff.count_local_minima(t, [(3, 2)]) == 1
    assert ff.count_local_minima(t, [(3, 2), (6, 6)]) == 0
    # flat indices accepted too
    assert ff.count_local_minima(t, [2 * 8 + 3]) == 1


def test_bilinear_sample_reproduces_bilinear(rng):
    g = ff.make_grid(9, 7, 0.5, 2.0, x0=-1.0, y0=3.0)
    a, b, c, d = 0.7, -1.3, 0.25, 0.11
    x, y = np.meshgrid(g.x_coords(), g.y_coords())
    f = ff.ScalarField(g, a + b * x + c * y + d * x * y)
    xs = rng.uniform(-1.0, -1.0 + 8 * 0.5, size=40)
    ys = rng.uniform(3.0, 3.0 + 6 * 2.0, size=40)
    got = ff.bilinear_sample(f, xs, ys)
    np.testing.assert_allclose(got, a + b * xs + c * ys + d * xs * ys, rtol=1e-13)


def test_bilinear_sample_out_of_domain(grid8):
    f = ff.ScalarField(grid8, np.zeros((8, 8)))
    with pytest.raises(OutOfDomainError):
        ff.bilinear_sample(f, [7.01], [3.0])
    with pytest.raises(OutOfDomainError):
        ff.bilinear_sample(f, [3.0], [-0.01])


def test_esri_ascii_round_trip(tmp_path, rng):
    g = ff.make_grid(6, 4, 2.5, 2.5, x0=10.0, y0=-3.0)
    f = ff.ScalarField(g, rng.normal(size=(4, 6)) * 1e6)
    path = tmp_path / "f.asc"
    ff.write_esri_ascii(f, path)
    back = ff.read_esri_ascii(path)
    assert back.grid == g
    np.testing.assert_array_equal(back.values, f.values)


def test_esri_ascii_row_order(tmp_path):
    # the first data row of the file is the northernmost (max y) row
    g = ff.make_grid(2, 3, 1.0, 1.0)
    f = ff.ScalarField(g, np.array([[0.0, 1.0], [10.0, 11.0], [20.0, 21.0]]))
    path = tmp_path / "rows.asc"
    ff.write_esri_ascii(f, path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    data = lines[-3:]
    assert data[0].split() == ["20", "21"]
    assert data[-1].split() == ["0", "1"]


def test_esri_ascii_rejects_anisotropic(tmp_path):
    g = ff.make_grid(4, 4, 1.0, 2.0)
    f = ff.ScalarField(g, np.zeros((4, 4)))
    with pytest.raises(InvalidDimensionError):
        ff.write_esri_ascii(f, tmp_path / "bad.asc")


def test_field_csv_round_trip(tmp_path, rng):
    g = ff.make_grid(5, 6, 1.5, 2.0, x0=-2.0, y0=0.5)
    f = ff.ScalarField(g, rng.normal(size=(6, 5)))
    path = tmp_path / "f.csv"
    ff.write_field_csv(f, path)
    back = ff.read_field_csv(path)
    assert back.grid == g
    np.testing.assert_array_equal(back.values, f.values)


def test_seventeen_digit_round_trip(tmp_path):
    # 17 significant digits keep doubles bit-exact through text
    g = ff.make_grid(2, 2, 1.0, 1.0)
    vals = np.array([[np.pi, np.e], [1.0 / 3.0, np.sqrt(2.0)]])
    f = ff.ScalarField(g, vals)
    path = tmp_path / "pi.asc"
    ff.write_esri_ascii(f, path)
    np.testing.assert_array_equal(ff.read_esri_ascii(path).values, vals)
