import numpy as np
import pytest
import scipy.sparse as sp

from tperiodic.linalg import LinearSolver
from tperiodic.oracle import ScalarOperator
from tperiodic.timeloop import (
    PeriodicSolver,
    all_at_once_matrix,
    backward_difference,
    block_dualnorm_khat,
    block_norm_khat,
    circulant_symbols,
    dft_periodic_solve,
    residual,
)


def random_pair(rng, n, mass_density=0.5):
    B = rng.standard_normal((n, n))
    K = sp.csr_matrix(B @ B.T + n * np.eye(n))
    m = rng.uniform(0, 1, n) * (rng.uniform(size=n) < mass_density)
    return sp.diags(m).tocsr(), K


def dense_periodic(M, K, N, tau):
    """Independent dense construction of the circulant system."""
    M, K = M.toarray(), K.toarray()
    n = K.shape[0]
    A = np.zeros((N * n, N * n))
    for i in range(N):
        A[i * n:(i + 1) * n, i * n:(i + 1) * n] = M / tau + K
        j = (i - 1) % N
        A[i * n:(i + 1) * n, j * n:(j + 1) * n] -= M / tau
    return A


def test_backward_difference_wraps():
    U = np.array([[1.0], [3.0], [6.0]])
    np.testing.assert_allclose(backward_difference(U, 0.5), [[-10.0], [4.0], [6.0]])


def test_residual_single_step():
    # N = 1: the time difference vanishes, leaving F - K(u)
    op = ScalarOperator()
    r = residual(op, sp.csr_matrix([[2.0]]), np.array([[0.7]]), np.array([[1.0]]), 0.1)
    assert r[0, 0] == pytest.approx(1.0 - op.apply(0.7))


def test_residual_shape_mismatch():
    with pytest.raises(ValueError):
        residual(ScalarOperator(), sp.csr_matrix([[1.0]]), np.zeros((3, 1)), np.zeros((2, 1)), 0.1)


def test_symbols():
    lam = circulant_symbols(4, 0.5)
    np.testing.assert_allclose(lam, [0, 2 + 2j, 4, 2 - 2j], atol=1e-14)


@pytest.mark.parametrize("N,n,tol", [(2, 3, 1e-10), (8, 5, 1e-9), (7, 4, 1e-9)])
def test_dft_solve_matches_dense(rng, N, n, tol):
    M, K = random_pair(rng, n)
    tau = 0.1
    G = rng.standard_normal((N, n))
    U = dft_periodic_solve(M, K, G, tau)
    ref = np.linalg.solve(dense_periodic(M, K, N, tau), G.ravel()).reshape(N, n)
    assert np.abs(U - ref).max() <= tol * np.abs(ref).max()


def test_all_at_once_matrix_matches_dense(rng):
    M, K = random_pair(rng, 4)
    np.testing.assert_allclose(all_at_once_matrix(M, K, 5, 0.2).toarray(), dense_periodic(M, K, 5, 0.2))


def test_solution_satisfies_block_equations(rng):
    M, K = random_pair(rng, 6)
    tau, N = 0.05, 16
    G = rng.standard_normal((N, 6))
    U = dft_periodic_solve(M, K, G, tau)
    lhs = (M @ backward_difference(U, tau).T).T + (K @ U.T).T
    assert np.abs(lhs - G).max() <= 1e-10 * np.abs(G).max()


@pytest.mark.parametrize("N", [1, 2, 5, 8])
def test_fft_and_direct_agree(rng, N):
    M, K = random_pair(rng, 5)
    G = rng.standard_normal((N, 5))
    a = dft_periodic_solve(M, K, G, 0.1, transform="fft")
    b = dft_periodic_solve(M, K, G, 0.1, transform="direct")
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_solution_is_real(rng):
    M, K = random_pair(rng, 4)
    U = dft_periodic_solve(M, K, rng.standard_normal((9, 4)), 0.1)
    assert U.dtype == np.float64


def test_round_trip(rng):
    M, K = random_pair(rng, 5)
    U = rng.standard_normal((12, 5))
    G = (M @ backward_difference(U, 0.3).T).T + (K @ U.T).T
    np.testing.assert_allclose(dft_periodic_solve(M, K, G, 0.3), U, rtol=1e-10, atol=1e-10)


def test_constant_data_reduces_to_static_solve(rng):
    M, K = random_pair(rng, 5)
    g = rng.standard_normal(5)
    U = dft_periodic_solve(M, K, np.tile(g, (6, 1)), 0.1)
    u = np.linalg.solve(K.toarray(), g)
    np.testing.assert_allclose(U, np.tile(u, (6, 1)), rtol=1e-10)


def test_zero_mass_decouples(rng):
    _, K = random_pair(rng, 4)
    M = sp.csr_matrix((4, 4))
    G = rng.standard_normal((5, 4))
    U = dft_periodic_solve(M, K, G, 0.1)
    np.testing.assert_allclose(U, np.linalg.solve(K.toarray(), G.T).T, rtol=1e-10)


def test_solver_reuse_and_threads(rng):
    M, K = random_pair(rng, 8)
    G = rng.standard_normal((16, 8))
    s1 = PeriodicSolver(M, K, 16, 0.1, workers=1)
    s4 = PeriodicSolver(M, K, 16, 0.1, workers=4)
    np.testing.assert_array_equal(s1.solve(G), s4.solve(G))
    np.testing.assert_array_equal(s1.solve(G), s1.solve(G))


def test_solver_validation(rng):
    M, K = random_pair(rng, 3)
    with pytest.raises(ValueError):
        PeriodicSolver(M, K, 0, 0.1)
    with pytest.raises(ValueError):
        PeriodicSolver(M, K, 4, 0.1, transform="dct")
    with pytest.raises(ValueError):
        PeriodicSolver(M, K, 4, 0.1).solve(np.zeros((3, 3)))


def test_condition_indicators(rng):
    M, K = random_pair(rng, 3)
    ind = PeriodicSolver(M, K, 8, 0.1).condition_indicators()
    assert len(ind) == 5 and ind[0] == 0.0 and all(v >= 0 for v in ind)


def test_block_norms(rng):
    _, K = random_pair(rng, 5)
    U = rng.standard_normal((4, 5))
    V = rng.standard_normal((4, 5))
    nu = block_norm_khat(U, K)
    assert nu**2 == pytest.approx(sum(U[n] @ K @ U[n] for n in range(4)))
    # Cauchy-Schwarz for the pairing <F, U> with F = K U'
    F = (K @ V.T).T
    assert abs(np.sum(F * U)) <= block_dualnorm_khat(F, K) * nu * (1 + 1e-12)
    # the dual norm of K U equals the primal norm of U
    assert block_dualnorm_khat((K @ U.T).T, LinearSolver(K)) == pytest.approx(nu, rel=1e-10)


def test_discrete_energy_identity(rng):
    # d_tau |a|^2 = 2 (d_tau a, a) - tau |d_tau a|^2, and the periodic sum of d_tau |a|^2 vanishes
    tau = 0.1
    a = rng.standard_normal((10, 3))
    da = backward_difference(a, tau)
    sq = (a * a).sum(axis=1)
    lhs = backward_difference(sq, tau)
    rhs = 2 * (da * a).sum(axis=1) - tau * (da * da).sum(axis=1)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    assert abs(lhs.sum()) <= 1e-12
