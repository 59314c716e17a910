import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tdbounds import linalg
from tdbounds.exceptions import DimensionError, ShapeError, SingularMatrixError

from conftest import char_poly_roots, rk4_columns

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def square(d):
    return arrays(np.float64, (d, d), elements=finite)


class TestSymEigenvalues:
    def test_identity(self):
        assert np.array_equal(linalg.sym_eigenvalues(np.eye(3)), [1.0, 1.0, 1.0])

    def test_two_by_two(self):
        np.testing.assert_allclose(linalg.sym_eigenvalues([[2, 1], [1, 2]]), [1, 3], atol=1e-14)

    def test_counterexample_symmetric_part(self):
        w = linalg.sym_eigenvalues([[2, 1], [1, 0]])
        np.testing.assert_allclose(w, [1 - math.sqrt(2), 1 + math.sqrt(2)], atol=1e-14)

    def test_non_square(self):
        with pytest.raises(DimensionError):
            linalg.sym_eigenvalues(np.ones((2, 3)))

    def test_asymmetric(self):
        with pytest.raises(ShapeError):
            linalg.sym_eigenvalues([[1, 2], [0, 1]])

    def test_asymmetry_within_tolerance_accepted(self):
        linalg.sym_eigenvalues([[1, 1 + 5e-13], [1, 1]])

    @given(st.integers(2, 3).flatmap(square))
    def test_matches_characteristic_polynomial(self, m):
        s = m + m.T
        w = linalg.sym_eigenvalues(s)
        oracle = np.sort(np.real(char_poly_roots(s)))
        scale = 1.0 + np.max(np.abs(s))
        assert np.all(np.diff(w) >= 0)
        np.testing.assert_allclose(w, oracle, atol=1e-10 * scale ** 2)

    @given(st.integers(1, 6).flatmap(square))
    def test_eigenpairs_reconstruct(self, m):
        s = m + m.T
        w, v = linalg.sym_eigenvalues(s, eigenvectors=True)
        norm = max(1.0, linalg.spectral_norm(s))
        for i in range(len(w)):
            assert np.linalg.norm(s @ v[:, i] - w[i] * v[:, i]) <= 1e-10 * norm
        np.testing.assert_allclose(v.T @ v, np.eye(len(w)), atol=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(0)
        stack = rng.normal(size=(7, 4, 4))
        stack = stack + np.swapaxes(stack, 1, 2)
        batch = linalg.sym_eigenvalues_batch(stack)
        for i in range(7):
            np.testing.assert_allclose(batch[i], linalg.sym_eigenvalues(stack[i]), atol=1e-13)


class TestGeneralEigenvalues:
    def test_diagonal(self):
        w = linalg.eigenvalues_general(np.diag([3.0, -1.0]))
        assert sorted(w.real) == pytest.approx([-1, 3], abs=1e-14)
        assert np.all(w.imag == 0)

    def test_counterexample_matrix(self):
        w = linalg.eigenvalues_general([[1, 1], [0, 0]])
        assert sorted(w.real) == pytest.approx([0, 1], abs=1e-14)

    def test_rotation(self):
        w = linalg.eigenvalues_general([[0, -1], [1, 0]])
        assert sorted(w.imag) == pytest.approx([-1, 1], abs=1e-14)
        assert np.max(np.abs(w.real)) <= 1e-14

    def test_non_square(self):
        with pytest.raises(DimensionError):
            linalg.eigenvalues_general(np.ones((3, 2)))

    @given(st.integers(1, 5).flatmap(square))
    def test_trace_and_determinant(self, m):
        w = linalg.eigenvalues_general(m)
        assert len(w) == m.shape[0]
        assert abs(np.sum(w) - np.trace(m)) <= 1e-9 * (1 + np.abs(m).sum())
        det = np.linalg.det(m)
        prod = np.prod(w)
        assert abs(prod.imag) <= 1e-9 * (1 + abs(det)) * (1 + np.abs(m).max()) ** m.shape[0]
        assert abs(prod.real - det) <= 1e-9 * max(1.0, abs(det)) * (1 + np.abs(m).max()) ** m.shape[0]

    @given(st.integers(2, 5).flatmap(square))
    def test_conjugate_pairs(self, m):
        w = linalg.eigenvalues_general(m)
        cplx = np.sort_complex(w[w.imag != 0])
        np.testing.assert_array_equal(np.sort_complex(np.conj(cplx)), cplx)

    @given(st.integers(2, 3).flatmap(square))
    def test_matches_characteristic_polynomial(self, m):
        w = np.sort_complex(linalg.eigenvalues_general(m))
        oracle = np.sort_complex(char_poly_roots(m))
        # repeated roots are ill-conditioned for both methods; compare as sets
        # with a tolerance that reflects root sensitivity
        gaps = np.abs(oracle[:, None] - oracle[None, :]) + np.eye(len(oracle))
        if gaps.min() < 1e-3:
            return
        for z in w:
            assert np.min(np.abs(oracle - z)) <= 1e-8 * (1 + np.abs(m).max())

    def test_against_scipy_random(self):
        rng = np.random.default_rng(5)
        for d in range(1, 9):
            m = rng.normal(size=(d, d))
            ours = np.sort_complex(linalg.eigenvalues_general(m))
            ref = np.sort_complex(scipy.linalg.eigvals(m))
            np.testing.assert_allclose(ours, ref, atol=1e-10)


class TestMatrixExponential:
    def test_zero_time(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(linalg.matrix_exponential(m, 0.0), np.eye(2))

    def test_diagonal(self):
        e = linalg.matrix_exponential(np.diag([-1.0, -2.0]), 1.0)
        np.testing.assert_allclose(e, np.diag([math.exp(-1), math.exp(-2)]), rtol=1e-14)

    @pytest.mark.parametrize("t", [0.1, 1.0, 3.0, -2.0])
    def test_idempotent(self, t):
        m = np.array([[1.0, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(linalg.matrix_exponential(m, t),
                                   np.eye(2) + (math.exp(t) - 1) * m, rtol=1e-13, atol=1e-14)

    @given(st.integers(1, 4).flatmap(square), st.floats(0.01, 2.0))
    def test_semigroup(self, m, t):
        full = linalg.matrix_exponential(m, t)
        half = linalg.matrix_exponential(m, t / 2)
        np.testing.assert_allclose(half @ half, full, rtol=1e-10,
                                   atol=1e-10 * np.abs(full).max())

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_rk4_integration(self, seed):
        rng = np.random.default_rng(seed)
        d = 1 + seed % 3
        m = rng.normal(size=(d, d))
        np.testing.assert_allclose(linalg.matrix_exponential(m, 1.0), rk4_columns(m, 1.0),
                                   atol=1e-8)

    def test_against_scipy(self):
        rng = np.random.default_rng(9)
        for d in (1, 2, 5, 10):
            m = rng.normal(size=(d, d)) * 3
            np.testing.assert_allclose(linalg.matrix_exponential(m, 1.0), scipy.linalg.expm(m),
                                       rtol=1e-11, atol=1e-12)


class TestNormsAndSolves:
    def test_spectral_norm_cases(self):
        assert linalg.spectral_norm(np.eye(4)) == pytest.approx(1.0, abs=1e-15)
        assert linalg.spectral_norm(np.diag([3.0, -4.0])) == pytest.approx(4.0, abs=1e-14)
        assert linalg.spectral_norm([[1, 1], [0, 0]]) == pytest.approx(math.sqrt(2), abs=1e-14)

    @given(st.integers(1, 5).flatmap(square))
    def test_spectral_norm_vs_columns(self, m):
        d = m.shape[0]
        col = np.max(np.sqrt(np.sum(m * m, axis=0)))
        assert linalg.spectral_norm(m) >= col / math.sqrt(d) - 1e-12 * (1 + col)

    def test_spectral_norm_power_iteration(self):
        rng = np.random.default_rng(2)
        m = rng.normal(size=(4, 4))
        g = m.T @ m
        v = np.ones(4)
        for _ in range(5000):
            v = g @ v
            v /= np.linalg.norm(v)
        assert linalg.spectral_norm(m) == pytest.approx(math.sqrt(v @ g @ v), rel=1e-10)

    def test_solve_examples(self):
        np.testing.assert_array_equal(linalg.solve_linear(np.eye(2), [5, 7]), [5, 7])
        np.testing.assert_allclose(linalg.solve_linear([[0.125]], [0.5]), [4.0])

    def test_counterexample_singular(self):
        with pytest.raises(SingularMatrixError):
            linalg.solve_linear([[1, 1], [0, 0]], [2, 0])

    @given(st.integers(1, 6).flatmap(square), arrays(np.float64, 6, elements=finite))
    def test_solve_residual(self, a, rhs):
        rhs = rhs[: a.shape[0]]
        try:
            x = linalg.solve_linear(a, rhs)
        except SingularMatrixError:
            return
        anorm = np.abs(a).sum(axis=1).max()
        assert np.abs(a @ x - rhs).max() <= 1e-10 * (anorm * np.abs(x).max() + np.abs(rhs).max())

    def test_matrix_rhs(self):
        a = np.array([[2.0, 1.0], [1.0, 3.0]])
        np.testing.assert_allclose(a @ linalg.solve_linear(a, np.eye(2)), np.eye(2), atol=1e-15)

    def test_spectral_summary(self):
        s = linalg.spectral_summary([[1, 1], [0, 0]])
        assert s.sym_min_eig == pytest.approx(1 - math.sqrt(2))
        assert s.min_real_part == pytest.approx(0.0, abs=1e-15)
        assert s.spectral_norm == pytest.approx(math.sqrt(2))
