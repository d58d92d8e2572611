import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jkoflow.costs import (
    KernelOperator,
    KolmogorovCost,
    KramersCost,
    WeightedQuadraticCost,
    build_msd_matrices,
    cost_kolmogorov,
    cost_kramers,
    cost_weighted,
    gibbs_kernel,
    msd_identity_residuals,
    quadratic_drift,
    zero_drift,
)
from jkoflow.grid import build_grid


def jet_cost_oracle(x, y, n, h):
    """Minimal h * int_0^h |xi^(n)|^2 over curves whose first n derivatives
    match the scalar jets x at 0 and y at h; the minimizer is the unique
    polynomial of degree 2n-1, found here by direct coefficient solve."""
    deg = 2 * n
    A = np.zeros((deg, deg))
    rhs = np.zeros(deg)
    for j in range(n):  # xi^(j)(0) = x[j]
        A[j, j] = math.factorial(j)
        rhs[j] = x[j]
    for j in range(n):  # xi^(j)(h) = y[j]
        for k in range(j, deg):
            A[n + j, k] = math.factorial(k) / math.factorial(k - j) * h ** (k - j)
        rhs[n + j] = y[j]
    c = np.linalg.solve(A, rhs)
    total = 0.0
    for k in range(n, deg):
        for l in range(n, deg):
            fk = math.factorial(k) / math.factorial(k - n)
            fl = math.factorial(l) / math.factorial(l - n)
            p = k + l - 2 * n
            total += fk * fl * c[k] * c[l] * h ** (p + 1) / (p + 1)
    return h * total


# --- generating-matrix identities ------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("dtilde", [1, 2])
@pytest.mark.parametrize("h", [0.1, 0.02])
def test_msd_identity_residuals(n, dtilde, h):
    res = msd_identity_residuals(build_msd_matrices(n, dtilde, h))
    assert res.pop("j_closed_form") <= 1e-12
    for name, val in res.items():
        assert val <= 1e-9, f"{name} residual {val}"


def test_msd_j_entries_closed_form():
    # upper-triangular Taylor-flow inverse: J_ik = (-h)^(k-i) / (k-i)!
    mats = build_msd_matrices(3, 1, 0.25)
    expected = np.array([[1.0, -0.25, 0.03125], [0.0, 1.0, -0.25], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(mats.j, expected, atol=1e-13)


def test_msd_builder_validation():
    with pytest.raises(ValueError):
        build_msd_matrices(0, 1, 0.1)
    with pytest.raises(ValueError):
        build_msd_matrices(9, 1, 0.1)
    with pytest.raises(ValueError):
        build_msd_matrices(2, 0, 0.1)
    with pytest.raises(ValueError):
        build_msd_matrices(2, 1, 0.0)


# --- cost values against independent oracles --------------------------------


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("h", [0.1, 0.02])
def test_chain_cost_matches_polynomial_oracle(n, h):
    rng = np.random.default_rng(100 * n + int(1 / h))
    cost = KolmogorovCost(build_msd_matrices(n, 1, h))
    for _ in range(50):
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        ref = jet_cost_oracle(x, y, n, h)
        val = cost(x, y)
        assert val == pytest.approx(ref, rel=1e-8, abs=1e-12)


def test_chain_cost_n1_is_squared_distance():
    rng = np.random.default_rng(5)
    for h in (0.1, 0.02):
        cost = KolmogorovCost(build_msd_matrices(1, 2, h))
        X = rng.normal(size=(1000, 2))
        Y = rng.normal(size=(1000, 2))
        d2 = np.sum((X - Y) ** 2, axis=1)
        np.testing.assert_allclose(cost(X, Y), d2, rtol=1e-12, atol=1e-12)


def test_chain_cost_n2_matches_kinetic_cost():
    rng = np.random.default_rng(6)
    for h in (0.1, 0.02):
        chain = KolmogorovCost(build_msd_matrices(2, 1, h))
        kinetic = KramersCost(zero_drift, h, dtilde=1)
        X = rng.normal(size=(1000, 2))
        Y = rng.normal(size=(1000, 2))
        a = chain(X, Y)
        b = kinetic(X, Y)
        np.testing.assert_allclose(a, b, rtol=1e-9)


def test_kinetic_cost_explicit_formula():
    h = 0.05
    cost = KramersCost(quadratic_drift(0.7), h, dtilde=1)
    rng = np.random.default_rng(7)
    for _ in range(50):
        x, v, y, w = rng.normal(size=4)
        expected = (w - v + h * 0.7 * x) ** 2 + 12.0 * ((y - x) / h - (v + w) / 2.0) ** 2
        assert cost(np.array([x, v]), np.array([y, w])) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_kinetic_cost_vanishes_on_free_flight():
    # with zero drift, staying at the same velocity and translating by h*v is free
    h = 0.2
    cost = KramersCost(zero_drift, h, dtilde=1)
    for v in (-1.5, 0.0, 2.0):
        x = 0.3
        assert cost(np.array([x, v]), np.array([x + h * v, v])) == pytest.approx(0.0, abs=1e-14)


def test_kinetic_cost_is_direction_sensitive():
    h = 0.1
    cost = KramersCost(zero_drift, h, dtilde=1)
    a = np.array([0.0, 1.0])
    b = np.array([0.1, 1.0])
    assert cost(a, b) != pytest.approx(cost(b, a), rel=1e-3)


def test_weighted_cost_matches_direct_solve():
    rng = np.random.default_rng(8)
    for h in (0.1, 0.02):
        B = rng.normal(size=(3, 3))
        A = B @ B.T
        cost = WeightedQuadraticCost(A, h)
        W = A + h * np.eye(3)
        for _ in range(20):
            x = rng.normal(size=3)
            y = rng.normal(size=3)
            ref = float((x - y) @ np.linalg.solve(W, x - y))
            assert cost(x, y) == pytest.approx(ref, rel=1e-10, abs=1e-14)


def test_weighted_cost_identity_matrix_1d():
    cost = WeightedQuadraticCost(np.eye(1), 0.0125)
    assert cost(np.array([2.0]), np.array([0.5])) == pytest.approx(1.5**2 / 1.0125, rel=1e-14)


def test_weighted_cost_validation():
    with pytest.raises(ValueError):
        WeightedQuadraticCost(np.array([[1.0, 0.5], [0.0, 1.0]]), 0.1)  # not symmetric
    with pytest.raises(ValueError):
        WeightedQuadraticCost(np.array([[-1.0]]), 0.1)  # not PSD
    with pytest.raises(ValueError):
        WeightedQuadraticCost(np.eye(2), 0.0)
    with pytest.raises(ValueError):
        WeightedQuadraticCost(np.ones((2, 3)), 0.1)


def test_singular_weight_matrix_allowed():
    # degenerate diffusion: A = diag(0, 1) must work, h regularizes the solve
    A = np.diag([0.0, 1.0])
    cost = WeightedQuadraticCost(A, 0.1)
    x = np.array([1.0, 1.0])
    y = np.zeros(2)
    assert cost(x, y) == pytest.approx(1.0 / 0.1 + 1.0 / 1.1, rel=1e-12)


def test_cost_convenience_wrappers_agree():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(4, 2))
    y = rng.normal(size=(4, 2))
    np.testing.assert_allclose(
        cost_weighted(np.eye(2), 0.1, x, y), WeightedQuadraticCost(np.eye(2), 0.1)(x, y)
    )
    np.testing.assert_allclose(
        cost_kramers(zero_drift, 0.1, x, y), KramersCost(zero_drift, 0.1)(x, y)
    )
    mats = build_msd_matrices(2, 1, 0.1)
    np.testing.assert_allclose(cost_kolmogorov(mats, x, y), KolmogorovCost(mats)(x, y))


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(min_value=-5, max_value=5), min_size=4, max_size=4),
    st.sampled_from([0.1, 0.02]),
)
def test_costs_nonnegative(vals, h):
    x = np.array(vals[:2])
    y = np.array(vals[2:])
    assert KramersCost(zero_drift, h)(x, y) >= 0.0
    assert KolmogorovCost(build_msd_matrices(2, 1, h))(x, y) >= 0.0
    assert WeightedQuadraticCost(np.eye(2), h)(x, y) >= 0.0


def test_pairwise_block_matches_loop():
    cost = KramersCost(quadratic_drift(0.3), 0.1)
    rng = np.random.default_rng(10)
    X = rng.normal(size=(5, 2))
    Y = rng.normal(size=(7, 2))
    block = cost.pairwise(X, Y)
    assert block.shape == (5, 7)
    for i in range(5):
        for j in range(7):
            assert block[i, j] == pytest.approx(cost(X[i], Y[j]), rel=1e-12, abs=1e-12)


# --- Gibbs kernel operator ---------------------------------------------------


def small_kernel(mode, eps=0.5, **kw):
    g = build_grid((-1.0,), (1.0,), (6,))
    cost = WeightedQuadraticCost(np.eye(1), 0.1)
    return gibbs_kernel(cost, g, eps, mode=mode, **kw)


def test_kernel_dense_matches_manual():
    op = small_kernel("dense")
    pts = op.points[:, 0]
    manual = np.exp(-((pts[:, None] - pts[None, :]) ** 2 / 1.1) / 0.5)
    np.testing.assert_allclose(op.dense(), manual, rtol=1e-14)


def test_kernel_modes_agree():
    dense = small_kernel("dense")
    free = small_kernel("matrix_free", tile_rows=2)
    rng = np.random.default_rng(11)
    v = rng.random(6)
    np.testing.assert_allclose(dense.matvec(v), free.matvec(v), rtol=1e-14)
    np.testing.assert_allclose(dense.rmatvec(v), free.rmatvec(v), rtol=1e-14)
    np.testing.assert_allclose(dense.dense(), free.dense(), rtol=1e-14)
    assert dense.base_kernel_sum() == pytest.approx(free.base_kernel_sum(), rel=1e-13)


def test_kernel_matvec_deterministic_rerun():
    free = small_kernel("matrix_free", tile_rows=4)
    v = np.linspace(0.1, 1.0, 6)
    a = free.matvec(v)
    b = free.matvec(v)
    np.testing.assert_array_equal(a, b)


def test_kernel_shifts_match_direct_exponential():
    op = small_kernel("dense")
    rng = np.random.default_rng(12)
    u = rng.normal(size=6) * 0.2
    w = rng.normal(size=6) * 0.2
    shifted = op.with_shifts(u, w)
    manual = np.exp((u[:, None] + w[None, :] - op.cost_block(0, 6)) / op.eps)
    np.testing.assert_allclose(shifted.dense(), manual, rtol=1e-13)
    # base kernel sum ignores the shifts
    assert shifted.base_kernel_sum() == pytest.approx(op.base_kernel_sum(), rel=1e-13)


def test_kernel_asymmetric_cost_transposes_correctly():
    g = build_grid((-0.5, -1.0), (0.5, 1.0), (3, 3))
    cost = KramersCost(zero_drift, 0.1)
    op = gibbs_kernel(cost, g, 0.7, mode="matrix_free", tile_rows=2)
    K = op.dense()
    rng = np.random.default_rng(13)
    v = rng.random(9)
    np.testing.assert_allclose(op.matvec(v), K @ v, rtol=1e-13)
    np.testing.assert_allclose(op.rmatvec(v), K.T @ v, rtol=1e-13)
    C = op.cost_block(0, 9)
    assert np.max(np.abs(C - C.T)) > 1.0  # direction sensitivity must survive


def test_kernel_memory_budget_enforced():
    with pytest.raises(MemoryError):
        small_kernel("dense", memory_budget=100)
    # matrix-free mode has no dense allocation to refuse
    op = small_kernel("matrix_free", memory_budget=100)
    assert op.matvec(np.ones(6)).shape == (6,)


def test_kernel_validation():
    g = build_grid((-1.0,), (1.0,), (4,))
    cost = WeightedQuadraticCost(np.eye(1), 0.1)
    with pytest.raises(ValueError):
        gibbs_kernel(cost, g, 0.0)
    with pytest.raises(ValueError):
        gibbs_kernel(cost, g, 1.0, mode="sparse")
    with pytest.raises(ValueError):
        gibbs_kernel(cost, build_grid((-1.0, 0.0), (1.0, 1.0), (2, 2)), 1.0)


def test_kernel_raw_points_accepted():
    pts = np.array([[0.0], [1.0], [3.0]])
    cost = WeightedQuadraticCost(np.eye(1), 1.0)
    op = gibbs_kernel(cost, pts, 2.0)
    assert op.size == 3
    assert op.dense()[0, 1] == pytest.approx(np.exp(-0.5 / 2.0))
