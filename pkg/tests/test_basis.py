"""Univariate and tensor B-spline bases."""

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from argmax_bayes import _fallback
from argmax_bayes.basis import (
    KnotVector,
    TensorBasisSpec,
    basis_matrix,
    derivative_matrix,
    design_matrix,
    eval_basis,
    grid_values,
    knots_for_count,
    make_uniform_knots,
    reduced_basis_rows,
    tensor_derivative_matrix,
    tensor_eval,
    tensor_rows,
)

try:
    from argmax_bayes import _kernels
except ImportError:  # extension not built
    _kernels = None


def scipy_basis(kv, x):
    """Independent oracle: scipy's design matrix on the same clamped knots."""
    x = np.asarray(x, float)
    return BSpline.design_matrix(x, kv.knots, kv.order - 1).toarray()


def spline_value(kv, theta, x, nu=0):
    return BSpline(kv.knots, theta, kv.order - 1)(x, nu=nu)


orders = st.integers(min_value=1, max_value=6)
interiors = st.integers(min_value=0, max_value=8)
unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


class TestKnotVector:
    def test_uniform_cubic(self):
        kv = make_uniform_knots(4, 3)
        assert kv.interior == (0.25, 0.5, 0.75)
        assert kv.n_basis == 7

    def test_uniform_order_one(self):
        kv = make_uniform_knots(1, 1)
        assert kv.interior == (0.5,)
        assert kv.n_basis == 2

    def test_cubic_nine_functions(self):
        assert make_uniform_knots(4, 5).n_basis == 9

    def test_extended_sequence(self):
        kv = make_uniform_knots(3, 1)
        np.testing.assert_array_equal(kv.knots, [0, 0, 0, 0.5, 1, 1, 1])

    def test_rejects_order_zero(self):
        with pytest.raises(ValueError):
            make_uniform_knots(0, 2)
        with pytest.raises(ValueError):
            KnotVector(0, ())

    @pytest.mark.parametrize("interior", [(0.5, 0.5), (0.6, 0.4), (0.0, 0.5), (0.5, 1.0)])
    def test_rejects_bad_interior(self, interior):
        with pytest.raises(ValueError):
            KnotVector(3, interior)

    def test_gap_ratio_limit(self):
        assert make_uniform_knots(4, 6).gap_ratio == pytest.approx(1.0)
        with pytest.raises(ValueError, match="quasi-uniform"):
            KnotVector(2, (0.01, 0.5))
        assert KnotVector(2, (0.01, 0.5), max_gap_ratio=100).gap_ratio == pytest.approx(50.0)

    def test_json_round_trip(self):
        kv = make_uniform_knots(4, 3)
        assert KnotVector.from_json(kv.to_json()) == kv
        assert json.loads(kv.to_json()) == {"order": 4, "interior": [0.25, 0.5, 0.75]}

    @pytest.mark.parametrize("J", range(1, 12))
    def test_knots_for_count(self, J):
        assert knots_for_count(4, J).n_basis == J


class TestEvalBasis:
    def test_indicator(self):
        np.testing.assert_array_equal(eval_basis(make_uniform_knots(1, 1), 0.25), [1, 0])

    def test_hat_peak(self):
        np.testing.assert_allclose(eval_basis(make_uniform_knots(2, 1), 0.5), [0, 1, 0],
                                   atol=1e-15)

    def test_right_endpoint_closed(self):
        for q in range(1, 6):
            kv = make_uniform_knots(q, 3)
            row = eval_basis(kv, 1.0)
            assert row[-1] == pytest.approx(1.0)
            assert row.sum() == pytest.approx(1.0, abs=1e-12)

    def test_outside_rejected(self):
        kv = make_uniform_knots(3, 2)
        for x in (-0.01, 1.01, np.nan):
            with pytest.raises(ValueError):
                eval_basis(kv, x)

    @pytest.mark.parametrize("q,N", [(1, 3), (2, 1), (3, 4), (4, 3), (4, 10), (5, 2)])
    def test_matches_scipy(self, q, N):
        kv = make_uniform_knots(q, N)
        x = np.linspace(0, 1, 97)
        np.testing.assert_allclose(basis_matrix(kv, x), scipy_basis(kv, x), atol=1e-13)

    def test_nonuniform_matches_scipy(self):
        kv = KnotVector(4, (0.1, 0.35, 0.4, 0.8))
        x = np.linspace(0, 1, 201)
        np.testing.assert_allclose(basis_matrix(kv, x), scipy_basis(kv, x), atol=1e-13)

    @given(orders, interiors, st.lists(unit, min_size=1, max_size=20))
    def test_partition_support_range(self, q, N, xs):
        kv = make_uniform_knots(q, N)
        B = basis_matrix(kv, np.array(xs))
        np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(B >= -1e-15) and np.all(B <= 1 + 1e-15)
        for row in B:
            nz = np.flatnonzero(np.abs(row) > 0)
            assert nz.size <= q
            if nz.size:
                assert nz[-1] - nz[0] < q  # consecutive block


class TestDerivativeMatrix:
    def test_identity_for_r0(self):
        kv = make_uniform_knots(4, 3)
        np.testing.assert_array_equal(derivative_matrix(kv, 0), np.eye(7))

    def test_shape_and_errors(self):
        kv = make_uniform_knots(4, 3)
        assert derivative_matrix(kv, 2).shape == (5, 7)
        with pytest.raises(ValueError):
            derivative_matrix(kv, 4)
        with pytest.raises(ValueError):
            derivative_matrix(kv, -1)

    def test_linear_spline_slopes(self, rng):
        kv = make_uniform_knots(2, 1)
        theta = rng.normal(size=3)
        x = np.array([0.1, 0.3, 0.7, 0.9])
        h = 1e-6
        fd = (basis_matrix(kv, x + h) @ theta - basis_matrix(kv, x - h) @ theta) / (2 * h)
        expected = np.where(x < 0.5, (theta[1] - theta[0]) / 0.5, (theta[2] - theta[1]) / 0.5)
        np.testing.assert_allclose(fd, expected, atol=1e-4)
        analytic = basis_matrix(kv.reduced(1), x) @ derivative_matrix(kv, 1) @ theta
        np.testing.assert_allclose(analytic, expected, atol=1e-12)

    def test_cubic_first_derivative_fd(self, rng):
        kv = make_uniform_knots(4, 3)
        theta = rng.normal(size=kv.n_basis)
        x = np.linspace(0.01, 0.99, 100)
        h = 1e-6
        fd = (basis_matrix(kv, x + h) @ theta - basis_matrix(kv, x - h) @ theta) / (2 * h)
        analytic = basis_matrix(kv.reduced(1), x) @ derivative_matrix(kv, 1) @ theta
        assert np.max(np.abs(analytic - fd)) < 1e-4

    @pytest.mark.parametrize("q,N", [(3, 2), (4, 3), (4, 7), (5, 4)])
    def test_all_orders_vs_scipy(self, q, N, rng):
        kv = make_uniform_knots(q, N)
        theta = rng.normal(size=kv.n_basis)
        x = np.linspace(0, 1, 53)
        for r in range(q):
            analytic = basis_matrix(kv.reduced(r), x) @ derivative_matrix(kv, r) @ theta
            np.testing.assert_allclose(analytic, spline_value(kv, theta, x, nu=r),
                                       atol=1e-9 * max(1, 10**r))

    def test_composition(self):
        kv = make_uniform_knots(5, 4)
        for r1 in range(4):
            for r2 in range(4 - r1):
                composed = derivative_matrix(kv.reduced(r1), r2) @ derivative_matrix(kv, r1)
                np.testing.assert_allclose(composed, derivative_matrix(kv, r1 + r2), atol=1e-12)

    @given(orders.filter(lambda q: q >= 2), interiors, st.integers(0, 2**32 - 1))
    def test_fd_property(self, q, N, seed):
        kv = make_uniform_knots(q, N)
        theta = np.random.default_rng(seed).normal(size=kv.n_basis)
        x = np.linspace(0.013, 0.987, 31)
        h = 1e-6
        fd = (basis_matrix(kv, x + h) @ theta - basis_matrix(kv, x - h) @ theta) / (2 * h)
        analytic = basis_matrix(kv.reduced(1), x) @ derivative_matrix(kv, 1) @ theta
        # one-sided kinks at knots are only hit for q == 2; skip those points
        knots = np.asarray(kv.interior)
        away = np.all(np.abs(x[:, None] - knots[None, :]) > 2 * h, axis=1) if knots.size else True
        assert np.max(np.abs((analytic - fd)[away])) < 1e-4


class TestTensor:
    @pytest.fixture
    def spec(self):
        return TensorBasisSpec.uniform((4, 3), (6, 5))

    def test_shape_and_index_map(self, spec):
        assert spec.shape == (6, 5)
        assert spec.n_basis == 30
        assert len(spec.index_map) == 30
        assert len(set(spec.index_map)) == 30
        for flat, multi in enumerate(spec.index_map):
            assert spec.flat_index(multi) == flat
        assert spec.index_map[1] == (0, 1)  # last axis fastest

    def test_partition_of_unity(self, spec, rng):
        X = rng.uniform(size=(200, 2))
        np.testing.assert_allclose(tensor_rows(spec, X).sum(axis=1), 1.0, atol=1e-12)
        assert tensor_eval(spec, (0, 0), [0.3, 0.8]).sum() == pytest.approx(1.0, abs=1e-12)

    def test_constant_surface(self, spec, rng):
        ones = np.ones(spec.n_basis)
        X = rng.uniform(size=(50, 2))
        np.testing.assert_allclose(tensor_rows(spec, X) @ ones, 1.0, atol=1e-12)
        np.testing.assert_allclose(tensor_rows(spec, X, (1, 0)) @ ones, 0.0, atol=1e-10)
        np.testing.assert_allclose(tensor_rows(spec, X, (0, 1)) @ ones, 0.0, atol=1e-10)

    def test_separable_product(self, spec, rng):
        a, b = rng.normal(size=6), rng.normal(size=5)
        theta = np.outer(a, b).ravel()
        X = rng.uniform(size=(40, 2))
        kv1, kv2 = spec.dims
        for r in [(0, 0), (1, 0), (0, 1), (2, 1)]:
            expected = spline_value(kv1, a, X[:, 0], r[0]) * spline_value(kv2, b, X[:, 1], r[1])
            np.testing.assert_allclose(tensor_rows(spec, X, r) @ theta, expected,
                                       atol=1e-12 * 10 ** sum(r))

    def test_kronecker_w(self, spec, rng):
        X = rng.uniform(size=(30, 2))
        for r in [(1, 0), (0, 2), (1, 1)]:
            W = tensor_derivative_matrix(spec, r)
            assert W.shape == ((6 - r[0]) * (5 - r[1]), 30)
            np.testing.assert_allclose(reduced_basis_rows(spec, X, r) @ W,
                                       tensor_rows(spec, X, r), atol=1e-12)

    def test_design_matrix(self):
        spec = TensorBasisSpec.uniform((4, 4), (7, 9))
        g = np.linspace(0, 1, 30)
        X = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
        B = design_matrix(spec, X)
        assert B.shape == (900, 63)
        np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((B != 0).sum(axis=1) <= 16)
        single = design_matrix(spec, [[0.2, 0.4]])
        assert single.shape == (1, 63) and single.sum() == pytest.approx(1.0, abs=1e-12)

    def test_errors(self, spec):
        with pytest.raises(ValueError):
            tensor_eval(spec, (0, 0), [0.2, 0.3, 0.4])
        with pytest.raises(ValueError):
            design_matrix(spec, [[0.2, 1.2]])
        with pytest.raises(ValueError):
            spec.check_r((4, 0))
        with pytest.raises(ValueError):
            spec.check_r((0, 3))

    def test_grid_values_match_rows(self, spec, rng):
        axes = [np.linspace(0, 1, 7), np.linspace(0, 1, 11)]
        coeffs = rng.normal(size=(3, spec.n_basis))
        X = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 2)
        for r in [(0, 0), (1, 0), (0, 2)]:
            vals = grid_values(spec, axes, coeffs, r)
            assert vals.shape == (3, 7, 11)
            np.testing.assert_allclose(vals.reshape(3, -1), coeffs @ tensor_rows(spec, X, r).T,
                                       atol=1e-11)
        assert grid_values(spec, axes, coeffs[0]).shape == (7, 11)

    def test_three_dimensions(self, rng):
        spec = TensorBasisSpec.uniform((3, 2, 4), (4, 3, 5))
        X = rng.uniform(size=(25, 3))
        np.testing.assert_allclose(tensor_rows(spec, X).sum(axis=1), 1.0, atol=1e-12)


class TestGram:
    def test_eigenvalues_scale_like_n_over_J(self):
        spec = TensorBasisSpec.uniform((4, 4), (7, 9))
        lo, hi = [], []
        for m in (20, 30, 40):
            g = np.linspace(0, 1, m)
            X = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
            B = design_matrix(spec, X)
            ev = np.linalg.eigvalsh(B.T @ B)
            scale = B.shape[0] / spec.n_basis
            lo.append(ev[0] / scale)
            hi.append(ev[-1] / scale)
        # the same constants bracket the spectrum at every n
        assert min(lo) > 0 and max(lo) / min(lo) < 1.25
        assert max(hi) / min(hi) < 1.25
        assert 0.001 < min(lo) and max(hi) < 3.0


@pytest.mark.skipif(_kernels is None, reason="compiled extension not built")
class TestBackendParity:
    @given(orders, interiors, st.lists(unit, min_size=1, max_size=30))
    def test_basis_identical(self, q, N, xs):
        kv = make_uniform_knots(q, N)
        x = np.array(xs)
        np.testing.assert_array_equal(_kernels.basis_matrix(kv.knots, q, x),
                                      _fallback.basis_matrix(kv.knots, q, x))
