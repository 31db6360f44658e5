"""Scalar time-periodic toy problem with exactly known monotonicity constants.

``kappa(u) = u + 0.5 sin(u)`` has ``kappa' in [0.5, 1.5]``, so the strong
monotonicity and Lipschitz constants are ``gamma = 0.5`` and ``L = 1.5``.
The dense solver here is the ground truth the iterative solvers are
checked against.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .linalg import solve_dense
from .timeloop import backward_difference

GAMMA = 0.5
LIPSCHITZ = 1.5


def kappa(u):
    return u + 0.5 * np.sin(u)


def kappa_prime(u):
    return 1.0 + 0.5 * np.cos(u)


class ScalarOperator:
    """Pointwise nonlinearity acting on ``(n_dof,)`` or ``(N, n_dof)`` arrays."""

    def __init__(self, fn=kappa, dfn=kappa_prime, n_dof=1):
        self.fn = fn
        self.dfn = dfn
        self.n_dof = n_dof

    def apply(self, u):
        return self.fn(np.asarray(u, dtype=float))

    def jacobian(self, u):
        return sp.diags(self.dfn(np.asarray(u, dtype=float))).tocsr()


@dataclass
class ToyProblem:
    """``m d_tau u^n + kappa(u^n) = f^n`` with ``u^0 = u^N``."""

    m: float
    f: np.ndarray
    period: float = 1.0
    op: ScalarOperator = field(default_factory=ScalarOperator)
    gamma: float = GAMMA
    L: float = LIPSCHITZ
    materials: object = None

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("mass coefficient must be non-negative")
        self.f = np.asarray(self.f, dtype=float).reshape(-1)

    @property
    def N(self) -> int:
        return len(self.f)

    @property
    def tau(self) -> float:
        return self.period / self.N

    @property
    def F(self):
        return self.f[:, None]

    @property
    def M(self):
        return sp.csr_matrix([[self.m]])

    def apply(self, U):
        """Block operator ``A(U)`` for a length-N vector."""
        U = np.asarray(U, dtype=float).reshape(-1)
        return self.m * backward_difference(U, self.tau) + self.op.apply(U)

    def jacobian_dense(self, U):
        N = self.N
        shift = np.roll(np.eye(N), 1, axis=0)
        return self.m / self.tau * (np.eye(N) - shift) + np.diag(self.op.dfn(np.asarray(U).reshape(-1)))


def toy_problem(N=32, m=1.0, amplitude=2.0, period=1.0, offset=0.3):
    """Toy instance with a harmonic forcing large enough to exercise the nonlinearity."""
    t = np.arange(1, N + 1) * period / N
    f = amplitude * np.cos(2 * np.pi * t / period) + offset * np.sin(4 * np.pi * t / period)
    return ToyProblem(m=m, f=f, period=period)


def oracle_solve_dense(p: ToyProblem, tol=1e-12, max_iter=100):
    """All-at-once damped Newton with dense linear algebra; returns ``(N, 1)``."""
    if p.N > 1000:
        raise ValueError("dense oracle limited to N <= 1000")
    U = np.zeros(p.N)
    atol = tol * max(1.0, np.linalg.norm(p.f))
    r = p.f - p.apply(U)
    for _ in range(max_iter):
        nr = np.linalg.norm(r)
        if nr <= atol:
            break
        dU = solve_dense(p.jacobian_dense(U), r)
        alpha = 1.0
        while alpha > 1e-10:
            Ut = U + alpha * dU
            rt = p.f - p.apply(Ut)
            if np.linalg.norm(rt) <= (1 - 1e-4 * alpha) * nr:
                break
            alpha *= 0.5
        else:
            raise RuntimeError("dense oracle line search failed")
        U, r = Ut, rt
    else:
        raise RuntimeError("dense oracle Newton did not converge")
    if np.linalg.norm(p.f - p.apply(U)) > atol:
        raise RuntimeError("dense oracle self-check failed")
    return U[:, None]


def bisection(fn, target, lo=-1e3, hi=1e3, tol=1e-14):
    """Root of an increasing scalar ``fn(u) = target``."""
    while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if fn(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def verify_contraction(p: ToyProblem, nu_hat: float, k_iters: int = 25, U0=None):
    """Exact error ratios of the fixed-point iteration with scalar ``K_hat = nu_hat``."""
    from .solvers import SolverConfig, solve_m1_fixed_point

    if nu_hat <= 0:
        raise ValueError("nu_hat must be positive")
    U_star = oracle_solve_dense(p)
    cfg = SolverConfig(tol=1e-300, max_outer_m1=k_iters, residual_floor=0.0)
    U0 = np.zeros((p.N, 1)) if U0 is None else U0
    _, report = solve_m1_fixed_point(p, cfg, U0=U0, K_hat=sp.csr_matrix([[nu_hat]]), reference=U_star)
    return report.contraction_history


def verify_monotonicity(p: ToyProblem, trials: int = 1000, rng=None, scale=3.0):
    """Smallest ``<A(U) - A(V), U - V> - gamma |U - V|^2`` over random pairs."""
    rng = np.random.default_rng(rng)
    worst = np.inf
    for _ in range(trials):
        U = scale * rng.standard_normal(p.N)
        V = scale * rng.standard_normal(p.N)
        D = U - V
        worst = min(worst, float((p.apply(U) - p.apply(V)) @ D - p.gamma * D @ D))
    return worst


def block_monotonicity_margin(system, U, V, K_norm, gamma):
    """``<A(U) - A(V), U - V> - gamma * sum_n (u^n - v^n)^T K_norm (u^n - v^n)``."""
    from .timeloop import residual

    zero = np.zeros_like(U)
    AU = -residual(system.op, system.M, U, zero, system.tau)
    AV = -residual(system.op, system.M, V, zero, system.tau)
    D = U - V
    lhs = float(np.sum((AU - AV) * D))
    rhs = float(gamma * np.sum(D * (K_norm @ D.T).T))
    return lhs - rhs, lhs


def riesz_contraction_factor(omega, gamma, L):
    """Contraction bound ``sqrt(1 - 2 omega gamma + omega^2 L^2)`` of a scaled Riesz map."""
    return float(np.sqrt(1 - 2 * omega * gamma + omega**2 * L**2))


def optimal_omega(gamma, L):
    """Minimizer ``gamma / L^2`` of :func:`riesz_contraction_factor`; admissible range is ``(0, 2 gamma / L^2)``."""
    return gamma / L**2
