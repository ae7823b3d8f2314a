import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from girli.operators import (MAX_MATERIALIZE_COLUMNS, MaskedOperator, MatrixOperator,
                             RadonOperator, ScaledOperator, Sinogram, default_angles,
                             default_bins, estimate_operator_norm, materialize_matrix,
                             radon_adjoint, radon_forward)

from oracles import brute_force_radon_matrix


def test_two_by_two_example():
    sino = radon_forward(np.array([[1.0, 0.0], [0.0, 0.0]]), angles=[0.0], bins=2)
    np.testing.assert_array_equal(sino.values, [[1.0, 0.0]])


def test_default_geometry():
    assert default_bins(28, 28) == 40
    assert default_bins(16, 8) == 23
    a = default_angles(4)
    np.testing.assert_allclose(a, [0, np.pi / 4, np.pi / 2, 3 * np.pi / 4])


@pytest.mark.parametrize("w,h,n", [(4, 4, 6), (5, 3, 7), (6, 6, 8)])
def test_matches_brute_force(w, h, n):
    angles = default_angles(n)
    bins = default_bins(w, h)
    op = RadonOperator(w, h, angles, bins)
    ref = brute_force_radon_matrix(w, h, angles, bins)
    np.testing.assert_allclose(materialize_matrix(op), ref, rtol=0, atol=1e-12)


def test_zero_angle_gives_column_sums(rng):
    img = rng.random((5, 7))
    sino = radon_forward(img, angles=[0.0], bins=7)
    np.testing.assert_allclose(sino.values[0], img.sum(axis=0), atol=1e-12)


def test_ray_on_grid_line_splits_weight():
    # even bins on an odd grid put the rays on pixel edges
    img = np.zeros((3, 3))
    img[:, 1] = 1.0
    sino = radon_forward(img, angles=[0.0], bins=2)
    np.testing.assert_allclose(sino.values[0], [1.5, 1.5])


def test_mass_conservation(rng):
    # every pixel is fully covered once per angle by the unit-width bins
    img = rng.random((8, 8))
    sino = radon_forward(img, angles=[0.0, np.pi / 2], bins=default_bins(8, 8))
    np.testing.assert_allclose(sino.values.sum(axis=1), img.sum(), rtol=1e-12)


@pytest.mark.parametrize("w,h,n", [(8, 8, 12), (16, 16, 30), (7, 5, 9)])
def test_adjoint_pairing(w, h, n, rng):
    op = RadonOperator(w, h, default_angles(n))
    for _ in range(100):
        u = rng.standard_normal((h, w))
        v = rng.standard_normal(op.range_shape)
        lhs = np.vdot(op.apply(u), v)
        rhs = np.vdot(u, op.apply_adjoint(v))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3),
       u=arrays(np.float64, (6, 6), elements=st.floats(-1, 1)),
       v=arrays(np.float64, (6, 6), elements=st.floats(-1, 1)))
def test_linearity(a, b, u, v):
    op = RadonOperator(6, 6, default_angles(10))
    lhs = op.apply(a * u + b * v)
    rhs = a * op.apply(u) + b * op.apply(v)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_determinism(rng):
    img = rng.random((9, 9))
    a = radon_forward(img, angles=default_angles(20)).values
    b = radon_forward(img, angles=default_angles(20)).values
    assert a.tobytes() == b.tobytes()


def test_adjoint_is_transpose():
    op = RadonOperator(4, 4, default_angles(6))
    m = materialize_matrix(op)
    adj = np.empty((op.domain_size, op.range_size))
    e = np.zeros(op.range_size)
    for j in range(op.range_size):
        e[j] = 1.0
        adj[:, j] = op.apply_adjoint(e.reshape(op.range_shape)).ravel()
        e[j] = 0.0
    assert np.array_equal(adj, m.T)


def test_radon_adjoint_function(rng):
    angles = default_angles(5)
    sino = Sinogram(rng.standard_normal((5, default_bins(4, 3))), angles)
    back = radon_adjoint(sino, 4, 3)
    op = RadonOperator(4, 3, angles)
    np.testing.assert_array_equal(back, op.apply_adjoint(sino.values))


def test_backproject_geometry_mismatch():
    op = RadonOperator(4, 4, default_angles(6))
    sino = Sinogram(np.zeros((5, op.bins)), default_angles(5))
    with pytest.raises(ValueError, match="geometry mismatch"):
        op.backproject(sino)
    sino = Sinogram(np.zeros((6, op.bins + 1)), default_angles(6))
    with pytest.raises(ValueError, match="geometry mismatch"):
        op.backproject(sino)


@pytest.mark.parametrize("kwargs,match", [
    ({"angles": []}, "angle"),
    ({"bins": 0}, "bins"),
])
def test_forward_rejects_bad_geometry(kwargs, match):
    with pytest.raises(ValueError, match=match):
        radon_forward(np.ones((3, 3)), **kwargs)


def test_forward_rejects_nonfinite():
    img = np.ones((3, 3))
    img[1, 2] = np.nan
    with pytest.raises(ValueError):
        radon_forward(img, angles=[0.0])


def test_apply_shape_checks():
    op = RadonOperator(4, 4, default_angles(3))
    with pytest.raises(ValueError):
        op.apply(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        op.apply_adjoint(np.zeros((2, op.bins)))


def test_materialize_guard():
    n = int(np.sqrt(MAX_MATERIALIZE_COLUMNS)) + 1
    op = MatrixOperator(sp.identity(n * n, format="csr"), (n, n), (n, n))
    with pytest.raises(ValueError, match="materialization limit"):
        materialize_matrix(op)


def test_norm_diagonal():
    op = MatrixOperator(np.diag([3.0, 1.0]), (2,), (2,))
    assert estimate_operator_norm(op, iterations=100) == pytest.approx(3.0, rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_norm_estimate_sound(seed):
    op = RadonOperator(8, 8, default_angles(7))
    smax = np.linalg.svd(materialize_matrix(op), compute_uv=False)[0]
    est_short = estimate_operator_norm(op, iterations=5, seed=seed)
    est_long = estimate_operator_norm(op, iterations=200, seed=seed)
    assert est_short <= est_long <= smax * (1 + 1e-12)
    assert est_long == pytest.approx(smax, rel=1e-6)


def test_norm_zero_operator_flagged():
    op = MatrixOperator(np.zeros((3, 4)), (4,), (3,))
    with pytest.warns(RuntimeWarning, match="zero"):
        assert estimate_operator_norm(op) == 0.0


def test_scaled_operator(rng):
    base = RadonOperator(6, 6, default_angles(5))
    op = ScaledOperator(base, 0.25)
    u = rng.random((6, 6))
    np.testing.assert_allclose(op.apply(u), 0.25 * base.apply(u))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert estimate_operator_norm(op, 200) == pytest.approx(
            0.25 * estimate_operator_norm(base, 200), rel=1e-12)


def test_masked_operator_is_self_consistent(rng):
    base = RadonOperator(6, 6, default_angles(6))
    mask = np.array([True, True, False, True, False, True])
    op = MaskedOperator(base, mask)
    u = rng.random((6, 6))
    out = op.apply(u)
    assert np.all(out[~mask] == 0)
    np.testing.assert_array_equal(out[mask], base.apply(u)[mask])
    v = rng.standard_normal(op.range_shape)
    assert np.vdot(op.apply(u), v) == pytest.approx(np.vdot(u, op.apply_adjoint(v)), rel=1e-12)
