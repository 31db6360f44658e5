import numpy as np
import pytest
import scipy.sparse as sp

from tperiodic.materials import Material
from tperiodic.oracle import ScalarOperator, ToyProblem, kappa_prime, oracle_solve_dense, toy_problem
from tperiodic.solvers import (
    ConvergenceError,
    SolverConfig,
    damped_newton,
    solve_m1_fixed_point,
    solve_m2_newton,
    solve_m3_timestepping,
    static_init,
    stopping_check,
)
from tperiodic.timeloop import residual


def linear_toy(N=16, m=1.0, k=2.0):
    p = toy_problem(N=N, m=m)
    p.op = ScalarOperator(lambda u: k * u, lambda u: np.full_like(u, k))
    return p


@pytest.mark.parametrize("hist,tol,expected", [
    ([1.0, 1e-4], 1e-4, True),
    ([1.0, 1.0001e-4], 1e-4, False),
    ([2.0, 0.5, 2.1e-4], 1e-4, False),
    ([1.0], 1e-4, False),
])
def test_stopping_check(hist, tol, expected):
    assert stopping_check(hist, tol) is expected


def test_stopping_check_absolute_floor():
    assert stopping_check([1e-20], 1e-4, atol=1e-12)
    with pytest.raises(ValueError):
        stopping_check([], 1e-4)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(armijo_backtrack=1.0)
    with pytest.raises(ValueError):
        SolverConfig(nu_hat_mode="guess")


def test_damped_newton_scalar():
    x, its = damped_newton(lambda x: 2.0 - x**3, lambda x: sp.csr_matrix(3 * x**2), np.array([1.0]), 1e-14)
    assert x[0] == pytest.approx(2 ** (1 / 3), rel=1e-13)
    assert its < 10


def test_damped_newton_reports_failure():
    # derivative sign is wrong, so no step decreases the residual
    with pytest.raises(ConvergenceError):
        damped_newton(lambda x: 1.0 - x, lambda x: sp.csr_matrix([[-1.0]]), np.array([0.0]), 1e-12,
                      max_halvings=5)


def test_static_init_zero_loads():
    p = toy_problem(N=8, amplitude=0.0, offset=0.0)
    np.testing.assert_array_equal(static_init(p), 0.0)


def test_static_init_linear_one_step():
    p = linear_toy()
    U0, its = static_init(p, return_iterations=True)
    np.testing.assert_allclose(U0[:, 0], p.f / 2.0, rtol=1e-14)
    assert max(its) == 1


def test_static_init_transformer(coarse_transformer):
    U0, its = static_init(coarse_transformer, return_iterations=True)
    s = coarse_transformer
    for n in range(s.N):
        r = np.linalg.norm(s.F[n] - s.op.apply(U0[n]))
        assert r <= 1e-8 * max(np.linalg.norm(s.F[n]), 1e-300) or np.linalg.norm(s.F[n]) == 0
    assert max(its) <= 25


def test_m1_exact_preconditioner_single_step():
    p = linear_toy()
    U, rep = solve_m1_fixed_point(p, U0=np.zeros((p.N, 1)), K_hat=sp.csr_matrix([[2.0]]))
    assert rep.iterations == 1 and rep.converged


def test_m1_toy_contraction():
    p = toy_problem(N=32, m=1.0)
    U_star = oracle_solve_dense(p)
    cfg = SolverConfig(tol=1e-10, residual_floor=0.0)
    U, rep = solve_m1_fixed_point(p, cfg, U0=np.zeros((p.N, 1)), K_hat=sp.csr_matrix([[1.0]]), reference=U_star)
    assert rep.converged
    assert max(rep.contraction_history) <= 0.5 + 1e-6
    np.testing.assert_allclose(U, U_star, atol=1e-8)


def test_m1_transformer_defaults(coarse_transformer):
    U, rep = solve_m1_fixed_point(coarse_transformer)
    assert rep.converged
    assert 0 < rep.q_estimate < 1
    assert set(rep.extra["nu_hat"]) == set(coarse_transformer.op.regions)
    assert all(r < 1 for r in rep.contraction_history)


def test_m1_fft_and_direct_same_iterations(coarse_transformer):
    U0 = static_init(coarse_transformer)
    _, a = solve_m1_fixed_point(coarse_transformer, SolverConfig(transform="fft"), U0=U0)
    _, b = solve_m1_fixed_point(coarse_transformer, SolverConfig(transform="direct"), U0=U0)
    assert a.iterations == b.iterations
    np.testing.assert_allclose(a.residual_history, b.residual_history, rtol=1e-6)


def test_m1_threads_identical(coarse_transformer):
    U0 = static_init(coarse_transformer)
    Ua, a = solve_m1_fixed_point(coarse_transformer, SolverConfig(workers=1), U0=U0)
    Ub, b = solve_m1_fixed_point(coarse_transformer, SolverConfig(workers=3), U0=U0)
    assert a.residual_history == b.residual_history
    np.testing.assert_array_equal(Ua, Ub)


def test_m2_linear_one_step():
    p = linear_toy()
    U, rep = solve_m2_newton(p, U0=np.zeros((p.N, 1)))
    assert rep.iterations == 1 and rep.converged


def test_m2_quadratic_tail():
    p = toy_problem(N=16, m=0.5, amplitude=3.0)
    cfg = SolverConfig(tol=1e-13, residual_floor=0.0, inner_tol=1e-14)
    U, rep = solve_m2_newton(p, cfg, U0=np.zeros((p.N, 1)))
    h = np.array(rep.residual_history) / rep.residual_history[0]
    # once in the quadratic regime each step at least squares the residual, up to a constant
    tail = [(a, b) for a, b in zip(h[:-1], h[1:]) if a < 1e-2 and b > 1e-14]
    assert tail and all(b <= 10 * a**2 for a, b in tail)


def test_m2_armijo_monotone(coarse_transformer):
    U, rep = solve_m2_newton(coarse_transformer)
    assert rep.converged
    h = rep.residual_history
    for a, b, alpha in zip(h[:-1], h[1:], rep.extra["step_lengths"]):
        assert b <= (1 - 1e-4 * alpha) * a


def test_m3_without_conductivity_is_immediate(small_mixed_mesh, materials):
    from tperiodic.assembly import build_system

    table = materials.with_overrides({"steel": {"sigma": 0.0}})
    system = build_system(small_mixed_mesh, table, N=8)
    U, rep = solve_m3_timestepping(system)
    assert rep.iterations == 0 and rep.converged


def test_m3_toy_rate_matches_linearization():
    p = toy_problem(N=8, m=1.0, amplitude=1.5)
    U_star = oracle_solve_dense(p)[:, 0]
    mt = p.m / p.tau
    rate = np.prod(mt / (mt + kappa_prime(U_star)))
    cfg = SolverConfig(tol=1e-12, residual_floor=0.0, m3_max_cycles=12)
    U, rep = solve_m3_timestepping(p, cfg, U0=np.zeros((p.N, 1)))
    late = [r for r, h in zip(rep.contraction_history, rep.residual_history[1:]) if h > 1e-6 * rep.residual_history[0]]
    assert late[-1] == pytest.approx(rate, rel=2e-2)


def test_m3_limit_cycle_matches_oracle():
    p = toy_problem(N=8, m=0.2)
    cfg = SolverConfig(tol=1e-10, residual_floor=0.0, m3_max_cycles=200)
    U, rep = solve_m3_timestepping(p, cfg, U0=np.zeros((p.N, 1)))
    assert rep.converged
    np.testing.assert_allclose(U, oracle_solve_dense(p), atol=1e-8)


def test_methods_agree_on_toy():
    p = toy_problem(N=16, m=0.3)
    cfg = SolverConfig(tol=1e-10, residual_floor=0.0, m3_max_cycles=500)
    U0 = np.zeros((p.N, 1))
    U1, _ = solve_m1_fixed_point(p, cfg, U0=U0, K_hat=sp.csr_matrix([[1.0]]))
    U2, _ = solve_m2_newton(p, cfg, U0=U0)
    U3, _ = solve_m3_timestepping(p, cfg, U0=U0)
    ref = oracle_solve_dense(p)
    for U in (U1, U2, U3):
        np.testing.assert_allclose(U, ref, atol=1e-8)
        assert np.linalg.norm(residual(p.op, p.M, U, p.F, p.tau)) <= 1e-8
