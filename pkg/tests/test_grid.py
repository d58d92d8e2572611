import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jkoflow.grid import (
    DiscreteMeasure,
    UniformGrid,
    build_grid,
    discrete_entropy,
    gaussian_cell_masses,
    gaussian_measure,
    l1_distance,
    marginal,
    read_measure_csv,
    second_moment,
    write_measure_csv,
)


def test_points_are_cell_centers():
    g = build_grid((0.0,), (1.0,), (4,))
    np.testing.assert_allclose(g.points()[:, 0], [0.125, 0.375, 0.625, 0.875])
    assert g.spacing == (0.25,)
    assert g.cell_volume == 0.25


def test_two_point_grid_centers_at_zero_and_one():
    # the reference instance used throughout: centers exactly {0, 1}
    g = build_grid((-0.5,), (1.5,), (2,))
    np.testing.assert_array_equal(g.points()[:, 0], [0.0, 1.0])


def test_points_storage_order_matches_c_order():
    g = build_grid((0.0, 0.0), (1.0, 2.0), (2, 3))
    pts = g.points()
    assert pts.shape == (6, 2)
    # last axis varies fastest
    np.testing.assert_allclose(pts[:3, 0], pts[0, 0])
    np.testing.assert_allclose(pts[:3, 1], g.axis_points(1))
    assert g.cell_volume == pytest.approx(0.5 * (2.0 / 3.0))


def test_grid_validation():
    with pytest.raises(ValueError):
        build_grid((0.0,), (0.0,), (4,))
    with pytest.raises(ValueError):
        build_grid((0.0,), (1.0,), (1,))
    with pytest.raises(ValueError):
        build_grid((0.0, 0.0), (1.0,), (2, 2))
    with pytest.raises(ValueError):
        UniformGrid((0.0,), (np.inf,), (2,))


def test_sub_grid_keeps_selected_axes():
    g = build_grid((0.0, -1.0, 2.0), (1.0, 1.0, 4.0), (2, 4, 8))
    sub = g.sub_grid([0, 2])
    assert sub.counts == (2, 8)
    assert sub.lo == (0.0, 2.0)


def test_from_weights_normalizes_and_records_mass():
    g = build_grid((0.0,), (1.0,), (3,))
    m = DiscreteMeasure.from_weights(g, [1.0, 2.0, 1.0])
    assert m.weights.sum() == pytest.approx(1.0)
    assert m.input_mass == pytest.approx(4.0)
    with pytest.raises(ValueError):
        DiscreteMeasure.from_weights(g, [1.0, -1.0, 0.0])
    with pytest.raises(ValueError):
        DiscreteMeasure.from_weights(g, [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        DiscreteMeasure.from_weights(g, [1.0, np.nan, 0.0])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(min_value=0.0, max_value=1e6), min_size=5, max_size=5).filter(
        lambda w: sum(w) > 0
    )
)
def test_normalization_is_projective(w):
    g = build_grid((0.0,), (1.0,), (5,))
    m1 = DiscreteMeasure.from_weights(g, w)
    m2 = DiscreteMeasure.from_weights(g, m1.weights)
    np.testing.assert_allclose(m1.weights, m2.weights, rtol=0, atol=1e-15)
    assert m1.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_density_scales_by_cell_volume():
    g = build_grid((0.0,), (2.0,), (4,))
    m = DiscreteMeasure.uniform(g)
    np.testing.assert_allclose(m.density(), 0.25 / 0.5)


def test_second_moment_uniform_1d():
    # sum of x_i^2 / M for centers of [-1, 1] with 2 cells: x = +-0.5
    g = build_grid((-1.0,), (1.0,), (2,))
    assert second_moment(DiscreteMeasure.uniform(g)) == pytest.approx(0.25)


def test_entropy_minimized_by_uniform():
    g = build_grid((0.0,), (1.0,), (8,))
    uni = DiscreteMeasure.uniform(g)
    floor = np.log(1.0 / (g.size * g.cell_volume))
    assert discrete_entropy(uni) == pytest.approx(floor)
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = DiscreteMeasure.from_weights(g, rng.random(8) + 1e-12)
        assert discrete_entropy(m) >= floor - 1e-12


def test_entropy_zero_weights_convention():
    g = build_grid((0.0,), (1.0,), (4,))
    m = DiscreteMeasure.from_weights(g, [1.0, 0.0, 0.0, 1.0])
    expected = np.log(0.5 / g.cell_volume)
    assert discrete_entropy(m) == pytest.approx(expected)


def test_l1_distance_basic():
    g = build_grid((0.0,), (1.0,), (2,))
    a = DiscreteMeasure.from_weights(g, [1.0, 0.0])
    b = DiscreteMeasure.from_weights(g, [0.0, 1.0])
    assert l1_distance(a, b) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        l1_distance(a, DiscreteMeasure.uniform(build_grid((0.0,), (1.0,), (3,))))


def test_marginal_sums_out_axes():
    g = build_grid((0.0, 0.0), (1.0, 1.0), (3, 4))
    rng = np.random.default_rng(1)
    m = DiscreteMeasure.from_weights(g, rng.random(12))
    mx = marginal(m, [0])
    w2 = m.weights.reshape(3, 4)
    np.testing.assert_allclose(mx.weights, w2.sum(axis=1))
    # keeping every axis is the identity
    np.testing.assert_allclose(marginal(m, [0, 1]).weights, m.weights)
    with pytest.raises(ValueError):
        marginal(m, [2])


def test_gaussian_cell_masses_captures_unit_mass_on_wide_grid():
    g = build_grid((-8.0,), (8.0,), (400,))
    w = gaussian_cell_masses(g, (0.0,), 1.0)
    assert w.sum() == pytest.approx(1.0, abs=1e-6)


def test_gaussian_measure_moments():
    g = build_grid((-10.0, -10.0), (10.0, 10.0), (160, 160))
    cov = np.array([[1.5, 0.4], [0.4, 0.8]])
    m = gaussian_measure(g, (0.3, -0.2), cov)
    pts = g.points()
    mean = m.weights @ pts
    np.testing.assert_allclose(mean, [0.3, -0.2], atol=1e-6)
    c = (pts - mean).T * m.weights @ (pts - mean)
    np.testing.assert_allclose(c, cov, atol=5e-3)


def test_gaussian_rejects_bad_covariance():
    g = build_grid((-1.0, -1.0), (1.0, 1.0), (4, 4))
    with pytest.raises(ValueError):
        gaussian_cell_masses(g, (0.0, 0.0), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        gaussian_cell_masses(g, (0.0,), 1.0)


def test_measure_csv_round_trip(tmp_path):
    g = build_grid((-1.0, 0.0), (1.0, 3.0), (4, 5))
    rng = np.random.default_rng(7)
    m = DiscreteMeasure.from_weights(g, rng.random(20))
    p = tmp_path / "m.csv"
    write_measure_csv(m, p)
    back = read_measure_csv(p, g)
    np.testing.assert_array_equal(back.weights, m.weights)
    # a second write is byte-identical
    p2 = tmp_path / "m2.csv"
    write_measure_csv(back, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_measure_csv_rejects_mismatched_grid(tmp_path):
    g = build_grid((0.0,), (1.0,), (4,))
    m = DiscreteMeasure.uniform(g)
    p = tmp_path / "m.csv"
    write_measure_csv(m, p)
    other = build_grid((0.0,), (2.0,), (4,))
    with pytest.raises(ValueError):
        read_measure_csv(p, other)
    with pytest.raises(ValueError):
        read_measure_csv(p, build_grid((0.0,), (1.0,), (5,)))


def test_measure_csv_uses_lf_and_17g(tmp_path):
    g = build_grid((-0.5,), (1.5,), (2,))
    m = DiscreteMeasure.from_weights(g, [1.0, 2.0])
    p = tmp_path / "m.csv"
    write_measure_csv(m, p)
    raw = p.read_bytes()
    assert b"\r" not in raw
    text = raw.decode()
    assert text.splitlines()[0] == "index,coord_1,weight"
    # 1/3 and 2/3 round-trip exactly through repr-quality formatting
    assert float(text.splitlines()[1].split(",")[2]) == m.weights[0]
