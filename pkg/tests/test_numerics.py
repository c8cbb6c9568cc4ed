import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qlabc.errors import DimensionMismatch, DomainViolation, NonConverged, NotPositiveDefinite
from qlabc.numerics import (
    RandomStream,
    cholesky_factor,
    richardson_jacobian,
    sample_mvn,
    solve_nonlinear,
)


class TestRandomStream:
    def test_same_key_same_sequence(self):
        a = RandomStream(12345, 7).generator.standard_normal(64)
        b = RandomStream(12345, 7).generator.standard_normal(64)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = RandomStream(12345, 7).generator.standard_normal(64)
        b = RandomStream(12345, 8).generator.standard_normal(64)
        assert not np.array_equal(a, b)

    def test_negative_stream_id_rejected(self):
        with pytest.raises(ValueError):
            RandomStream(1, -1)

    def test_substream(self):
        s = RandomStream(5, 0).substream(3)
        assert (s.master_seed, s.stream_id) == (5, 3)


class TestCholesky:
    def test_identity(self):
        assert np.array_equal(cholesky_factor(np.eye(2)), np.eye(2))

    def test_diagonal(self):
        L = cholesky_factor([[4.0, 0.0], [0.0, 9.0]])
        assert np.allclose(L, [[2.0, 0.0], [0.0, 3.0]])

    def test_random_spd_reconstruction(self):
        rng = np.random.default_rng(42)
        A = rng.standard_normal((3, 3))
        m = A.T @ A
        L = cholesky_factor(m)
        assert np.abs(L @ L.T - m).max() < 1e-8 * np.abs(m).max()
        assert np.allclose(np.triu(L, 1), 0.0)

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_factor([[4.0, 0.0], [0.0, 0.0]])

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            cholesky_factor([[1.0, 0.5], [0.2, 1.0]])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6), st.integers(min_value=1, max_value=5))
    def test_reconstruction_property(self, seed, dim):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((dim, dim)) + dim * np.eye(dim)
        m = A @ A.T
        L = cholesky_factor(m)
        assert np.abs(L @ L.T - m).max() <= 1e-8 * max(1.0, np.abs(m).max())


class TestSampleMvn:
    def test_zero_variance(self):
        rng = RandomStream(1).generator
        for _ in range(5):
            assert sample_mvn([0.0], [[0.0]], rng)[0] == 0.0

    def test_scalar_mean(self):
        rng = RandomStream(2).generator
        draws = np.array([sample_mvn([5.0], [[1.0]], rng)[0] for _ in range(10**5)])
        assert abs(draws.mean() - 5.0) < 0.02

    def test_correlation(self):
        rng = RandomStream(3).generator
        L = cholesky_factor([[1.0, 0.5], [0.5, 1.0]])
        draws = np.array([sample_mvn([0.0, 0.0], L, rng) for _ in range(10**5)])
        corr = np.corrcoef(draws.T)[0, 1]
        assert abs(corr - 0.5) < 0.02

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            sample_mvn([0.0, 1.0], [[1.0]], RandomStream(4).generator)


class TestRichardsonJacobian:
    def test_identity_map(self):
        J = richardson_jacobian(lambda x: x, [0.3, -1.2])
        assert np.abs(J - np.eye(2)).max() < 1e-8

    def test_quadratic_map(self):
        f = lambda t: np.array([t[0] ** 2, t[0] * t[1]])
        J = richardson_jacobian(f, [1.0, 2.0])
        assert np.abs(J - np.array([[2.0, 0.0], [2.0, 1.0]])).max() < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_exact_on_cubics(self, seed):
        rng = np.random.default_rng(seed)
        coef = rng.uniform(-2, 2, size=(2, 4))
        x0 = rng.uniform(-1, 1, size=2)

        def f(t):
            return np.array(
                [
                    coef[i, 0] + coef[i, 1] * t[i] + coef[i, 2] * t[i] ** 2 + coef[i, 3] * t[i] ** 3
                    for i in range(2)
                ]
            )

        J = richardson_jacobian(f, x0)
        expected = np.diag(
            [coef[i, 1] + 2 * coef[i, 2] * x0[i] + 3 * coef[i, 3] * x0[i] ** 2 for i in range(2)]
        )
        assert np.abs(J - expected).max() < 1e-6

    def test_domain_violation(self):
        with pytest.raises(DomainViolation):
            richardson_jacobian(lambda x: x, [1.0], h0=0.5, bounds=[[0.0, 1.2]])


class TestSolveNonlinear:
    def test_identity(self):
        x = solve_nonlinear(lambda t: t, [0.7, -0.1], [0.0, 0.0], [[-1, 1], [-1, 1]])
        assert np.abs(x - [0.7, -0.1]).max() < 1e-8

    def test_cube_root(self):
        x = solve_nonlinear(lambda t: t**3, [8.0], [0.5], [[0.0, 3.0]])
        assert abs(x[0] - 2.0) < 1e-8

    def test_nonconverged_carries_best(self):
        # no solution: f maps into [0, 1], target is 5
        f = lambda t: 1.0 / (1.0 + np.exp(-t))
        with pytest.raises(NonConverged) as err:
            solve_nonlinear(f, [5.0], [0.0], [[-4.0, 4.0]])
        assert err.value.best is not None
        assert err.value.residual > 1.0

    @settings(max_examples=25, deadline=None)
    @given(st.floats(min_value=-7.5, max_value=7.5))
    def test_monotone_round_trip(self, target_x):
        f = lambda t: t**3 + t  # strictly increasing
        target = f(np.array([target_x]))
        x = solve_nonlinear(f, target, [0.0], [[-8.0, 8.0]])
        assert np.abs(f(x) - target).max() < 1e-6
