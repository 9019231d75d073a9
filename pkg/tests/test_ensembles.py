import numpy as np
import pytest

from freegamp.channels import AWGN, BernoulliGaussianPrior, GaussianPrior, LaplacePrior
from freegamp.ensembles import (KINDS, EnsembleSpec, haar_orthogonal, make_rng, sample_matrix,
                                synthesize_problem)
from freegamp.errors import DomainError


def test_iid_entry_statistics():
    N, K = 1000, 500
    A = sample_matrix(EnsembleSpec("iid-gaussian", N, K, seed=1))
    assert abs(A.mean()) <= 3 / np.sqrt(N * K * N)
    assert A.var() == pytest.approx(1 / N, rel=0.02)


def test_row_orthogonal_rows_are_orthonormal():
    A = sample_matrix(EnsembleSpec("row-orthogonal", 4, 8, seed=2))
    assert np.max(np.abs(A @ A.T - np.eye(4))) <= 1e-12


def test_constant_singular_values():
    A = sample_matrix(EnsembleSpec("right-invariant", 16, 16, singular_values=2.0, seed=0))
    np.testing.assert_allclose(np.linalg.eigvalsh(A.T @ A), 4.0, atol=1e-10)


def test_haar_small_cases():
    Q = haar_orthogonal(1, 5)
    assert Q.shape == (1, 1) and abs(Q[0, 0]) == 1.0
    Q = haar_orthogonal(8, make_rng(3, "haar"))
    assert np.max(np.abs(Q.T @ Q - np.eye(8))) <= 1e-12
    with pytest.raises(DomainError):
        haar_orthogonal(0, 1)


def test_haar_first_entry_mean_is_zero():
    rng = make_rng(11, "haar-mc")
    q11 = [haar_orthogonal(4, rng)[0, 0] for _ in range(2000)]
    assert abs(np.mean(q11)) <= 0.05
    # first column uniform on the sphere: E[Q11^2] = 1/T
    assert np.mean(np.square(q11)) == pytest.approx(0.25, abs=0.02)


@pytest.mark.parametrize("kind", KINDS)
def test_factor_reconstruction(kind):
    N, K = (6, 10) if kind == "row-orthogonal" else (7, 5)
    S = sample_matrix(EnsembleSpec(kind, N, K, seed=4), keep_factors=True)
    assert np.max(np.abs(S.A - S.reconstruct())) <= 1e-10


def test_user_singular_values_are_used():
    sv = [3.0, 2.0, 0.5]
    S = sample_matrix(EnsembleSpec("bi-invariant", 3, 5, singular_values=sv, seed=0), keep_factors=True)
    np.testing.assert_allclose(np.linalg.svd(S.A, compute_uv=False), sv, atol=1e-12)


def test_marchenko_pastur_edges():
    K, alpha = 2000, 2.0
    A = sample_matrix(EnsembleSpec("iid-gaussian", int(alpha * K), K, seed=9))
    ev = np.linalg.eigvalsh(A.T @ A)
    lo, hi = (1 - 1 / np.sqrt(alpha)) ** 2, (1 + 1 / np.sqrt(alpha)) ** 2
    assert ev.min() == pytest.approx(lo, rel=0.05)
    assert ev.max() == pytest.approx(hi, rel=0.05)


@pytest.mark.parametrize("bad", [
    dict(kind="toeplitz", N=2, K=2), dict(kind="iid-gaussian", N=0, K=2),
    dict(kind="row-orthogonal", N=5, K=4), dict(kind="right-invariant", N=3, K=4, singular_values=[1, 2]),
    dict(kind="right-invariant", N=2, K=2, singular_values=-1.0),
    dict(kind="right-invariant", N=2, K=2, singular_values="uniform"),
])
def test_invalid_specs(bad):
    with pytest.raises(DomainError):
        EnsembleSpec(**bad)


def test_noiseless_problem_has_y_equal_z():
    P = synthesize_problem(EnsembleSpec("iid-gaussian", 20, 10, seed=0), GaussianPrior(), AWGN(0.0))
    np.testing.assert_array_equal(P.y, P.A @ P.x_true)
    np.testing.assert_array_equal(P.z_true, P.A @ P.x_true)


def test_synthesis_is_deterministic():
    spec = EnsembleSpec("bi-invariant", 12, 9, seed=7)
    P1 = synthesize_problem(spec, LaplacePrior(), AWGN(0.1))
    P2 = synthesize_problem(spec, LaplacePrior(), AWGN(0.1))
    for k in ("A", "x_true", "y"):
        assert getattr(P1, k).tobytes() == getattr(P2, k).tobytes()
    P3 = synthesize_problem(spec, LaplacePrior(), AWGN(0.1), seed=8)
    assert not np.array_equal(P1.A, P3.A)


def test_sparse_signal_fraction():
    P = synthesize_problem(EnsembleSpec("iid-gaussian", 10, 10000, seed=3),
                           BernoulliGaussianPrior(0.1), AWGN(1.0))
    assert abs(np.mean(P.x_true != 0) - 0.1) <= 0.01


def test_stored_singular_values_match_svd():
    P = synthesize_problem(EnsembleSpec("right-invariant", 30, 20, seed=2), GaussianPrior(), AWGN(1.0))
    np.testing.assert_allclose(P.singular_values, np.linalg.svd(P.A, compute_uv=False), atol=1e-12)
    assert P.alpha == 1.5


def test_rng_streams_are_independent_of_call_order():
    a = make_rng(5, "signal").standard_normal(3)
    make_rng(5, "noise").standard_normal(100)
    b = make_rng(5, "signal").standard_normal(3)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, make_rng(5, "noise").standard_normal(3))
