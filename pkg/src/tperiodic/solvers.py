"""Outer solvers for the discrete time-periodic problem.

* M1: fixed-point iteration with a frozen linear stiffness; each step is a
  linear time-invariant periodic solve done in the frequency domain.
* M2: Newton's method on the all-at-once system with Armijo backtracking.
* M3: sequential implicit Euler over whole periods until the limit cycle.

All three accept any ``system`` exposing ``op`` (with ``apply``,
``jacobian`` and ``n_dof``), ``M``, ``F``, ``N`` and ``tau``.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .assembly import NU_HAT_MODES, choose_nu_hat
from .linalg import LinearSolver, fgmres
from .timeloop import PeriodicSolver, backward_difference, block_norm_khat, residual

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    tol: float = 1e-4
    max_outer_m1: int = 200
    max_outer_m2: int = 50
    armijo_slope: float = 1e-4
    armijo_backtrack: float = 0.5
    armijo_max_halvings: int = 30
    m3_max_cycles: int = 10
    nu_hat_mode: str = "riesz"
    nu_hat_margin: float = 0.2
    riesz_omega: str = "average"
    static_tol: float = 1e-8
    static_max_iter: int = 50
    inner_tol: float = 1e-8
    residual_floor: float = 1e-8  # absolute stop at residual_floor * ||F||
    workers: int = 1
    transform: str = "fft"

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if not (0 < self.armijo_slope < 1 and 0 < self.armijo_backtrack < 1):
            raise ValueError("Armijo factors must lie in (0, 1)")
        if self.nu_hat_mode not in NU_HAT_MODES:
            raise ValueError(f"unknown nu_hat_mode {self.nu_hat_mode!r}")


@dataclass
class SolveReport:
    method: str
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    contraction_history: list = field(default_factory=list)
    q_estimate: float | None = None
    wall_time: float = 0.0
    status: str = "max_iter"
    extra: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self):
        return asdict(self)


def stopping_check(history, tol, atol=0.0) -> bool:
    """``last <= tol * first`` on the l2 residual norms (inclusive).

    ``atol`` accepts residuals already at the accuracy of the static solves,
    where a relative reduction is meaningless.
    """
    if not history:
        raise ValueError("empty residual history")
    return history[-1] <= tol * history[0] or history[-1] <= atol


def _norm(R):
    return float(np.linalg.norm(R))


def damped_newton(res_fn, jac_fn, x0, atol, max_iter=50, slope=1e-4, backtrack=0.5, max_halvings=30):
    """Newton with Armijo backtracking on ``||res||``; returns ``(x, iterations)``.

    ``res_fn(x)`` is the residual (target zero), ``jac_fn(x)`` the derivative
    of ``-res_fn``, i.e. of the operator being inverted.
    """
    x = np.array(x0, dtype=float)
    r = res_fn(x)
    nr = _norm(r)
    for it in range(max_iter + 1):
        if nr <= atol:
            return x, it
        if it == max_iter:
            break
        dx = LinearSolver(jac_fn(x)).solve(r)
        alpha = 1.0
        for _ in range(max_halvings + 1):
            xt = x + alpha * dx
            rt = res_fn(xt)
            nt = _norm(rt)
            if nt <= (1 - slope * alpha) * nr:
                break
            alpha *= backtrack
        else:
            raise ConvergenceError(f"line search failed at residual {nr:.3e}")
        x, r, nr = xt, rt, nt
    raise ConvergenceError(f"Newton did not reach {atol:.3e} in {max_iter} steps (residual {nr:.3e})")


def static_init(system, config: SolverConfig | None = None, return_iterations=False):
    """Decoupled static solves ``K(u^n) = f^n`` (conductivity dropped)."""
    config = config or SolverConfig()
    op, F = system.op, np.asarray(system.F, dtype=float)

    def one(n):
        f = F[n]
        nf = _norm(f)
        if nf == 0:
            return np.zeros_like(f), 0
        try:
            return damped_newton(lambda u: f - op.apply(u), op.jacobian, np.zeros_like(f),
                                 config.static_tol * nf, config.static_max_iter,
                                 config.armijo_slope, config.armijo_backtrack, config.armijo_max_halvings)
        except ConvergenceError as exc:
            raise ConvergenceError(f"static solve for time step {n + 1} failed: {exc}") from exc

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            out = list(pool.map(one, range(len(F))))
    else:
        out = [one(n) for n in range(len(F))]
    U0 = np.array([u for u, _ in out])
    if return_iterations:
        return U0, [it for _, it in out]
    return U0


def _contraction_ratios(iterates, K_hat, reference, floor=1e-11):
    # ratios below the rounding floor of the reference are noise
    cutoff = floor * block_norm_khat(reference, K_hat)
    errs = [block_norm_khat(U - reference, K_hat) for U in iterates]
    return [e1 / e0 for e0, e1 in zip(errs[:-1], errs[1:]) if e0 > cutoff and e1 > cutoff]


def solve_m1_fixed_point(system, config: SolverConfig | None = None, U0=None, K_hat=None,
                         reference=None, keep_iterates=True):
    """Fixed-point iteration ``(M d_tau + K_hat) U^{k+1} = F + K_hat U^k - K(U^k)``.

    ``K_hat`` defaults to the frozen-reluctivity stiffness chosen by
    ``config.nu_hat_mode``. Contraction ratios are measured in the block
    ``K_hat`` norm against ``reference`` if given, else against the final
    iterate.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    op, M, F, tau = system.op, system.M, np.asarray(system.F, dtype=float), system.tau
    if U0 is None:
        U0 = static_init(system, config)
    report = SolveReport("M1")
    if K_hat is None:
        nu_hat_of, q, q_of = choose_nu_hat(config.nu_hat_mode, system.materials, op=op, U_init=U0,
                                           margin=config.nu_hat_margin, omega=config.riesz_omega)
        K_hat = op.frozen_stiffness(nu_hat_of)
        report.q_estimate = q
        report.extra["nu_hat"] = {k: float(v) for k, v in nu_hat_of.items() if k in op.regions}
        report.extra["q_by_region"] = {k: float(v) for k, v in q_of.items() if k in op.regions}
    psolver = PeriodicSolver(M, K_hat, system.N, tau, workers=config.workers, transform=config.transform)

    U = np.array(U0, dtype=float)
    KU = op.apply(U)
    atol = config.residual_floor * _norm(F)
    hist = [_norm(residual(op, M, U, F, tau, KU))]
    iterates = [U] if keep_iterates or reference is not None else []
    report.status = "max_iter"
    for _ in range(config.max_outer_m1):
        if stopping_check(hist, config.tol, atol):
            report.status = "converged"
            break
        G = F + (K_hat @ U.T).T - KU
        U = psolver.solve(G)
        KU = op.apply(U)
        hist.append(_norm(residual(op, M, U, F, tau, KU)))
        if iterates:
            iterates.append(U)
        log.debug("M1 iteration %d: residual %.3e", len(hist) - 1, hist[-1] / hist[0])
    else:
        if stopping_check(hist, config.tol, atol):
            report.status = "converged"

    report.iterations = len(hist) - 1
    report.residual_history = hist
    if iterates:
        ref = iterates[-1] if reference is None else reference
        ratios = _contraction_ratios(iterates, K_hat, ref)
        report.contraction_history = ratios if reference is not None else ratios[:-1]
    report.extra["condition_indicators"] = psolver.condition_indicators()
    report.wall_time = time.perf_counter() - t0
    return U, report


def _linearized_periodic(M, J, tau):
    N = len(J)

    def apply(x):
        X = x.reshape(N, -1)
        Y = (M @ backward_difference(X, tau).T).T
        for n in range(N):
            Y[n] += J[n] @ X[n]
        return Y.ravel()

    return apply


def solve_m2_newton(system, config: SolverConfig | None = None, U0=None):
    """Newton on the all-at-once system with Armijo backtracking.

    The time-varying linearized periodic system is solved by flexible GMRES,
    preconditioned with the frequency-domain solver for the time-averaged
    Jacobian.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    op, M, F, tau, N = system.op, system.M, np.asarray(system.F, dtype=float), system.tau, system.N
    if U0 is None:
        U0 = static_init(system, config)
    report = SolveReport("M2")
    U = np.array(U0, dtype=float)
    R = residual(op, M, U, F, tau)
    atol = config.residual_floor * _norm(F)
    hist = [_norm(R)]
    inner, steps = [], []
    report.status = "max_iter"
    for _ in range(config.max_outer_m2):
        if stopping_check(hist, config.tol, atol):
            report.status = "converged"
            break
        J = [op.jacobian(U[n]) for n in range(N)]
        Jbar = sum(J[1:], J[0]) / N
        pre = PeriodicSolver(M, Jbar, N, tau, workers=config.workers, transform=config.transform)
        D, info = fgmres(_linearized_periodic(M, J, tau), R.ravel(),
                         lambda v: pre.solve(v.reshape(N, -1)).ravel(), rtol=config.inner_tol,
                         restart=40, maxiter=400)
        inner.append(info["iterations"])
        D = D.reshape(N, -1)
        alpha = 1.0
        for _ in range(config.armijo_max_halvings + 1):
            Ut = U + alpha * D
            Rt = residual(op, M, Ut, F, tau)
            if _norm(Rt) <= (1 - config.armijo_slope * alpha) * hist[-1]:
                break
            alpha *= config.armijo_backtrack
        else:
            report.status = "stalled"
            break
        steps.append(alpha)
        U, R = Ut, Rt
        hist.append(_norm(R))
        log.debug("M2 iteration %d: residual %.3e (step %.3g, %d inner)", len(hist) - 1,
                  hist[-1] / hist[0], alpha, info["iterations"])
    else:
        if stopping_check(hist, config.tol, atol):
            report.status = "converged"
    report.iterations = len(hist) - 1
    report.residual_history = hist
    report.contraction_history = [b / a for a, b in zip(hist[:-1], hist[1:]) if a > 0]
    report.extra.update(inner_iterations=inner, step_lengths=steps)
    report.wall_time = time.perf_counter() - t0
    return U, report


def solve_m3_timestepping(system, config: SolverConfig | None = None, U0=None):
    """March implicit Euler period after period from the static state at t = 0."""
    config = config or SolverConfig()
    t0 = time.perf_counter()
    op, M, F, tau, N = system.op, system.M, np.asarray(system.F, dtype=float), system.tau, system.N
    if U0 is None:
        U0 = static_init(system, config)
    report = SolveReport("M3")
    U = np.array(U0, dtype=float)
    atol = config.residual_floor * _norm(F)
    hist = [_norm(residual(op, M, U, F, tau))]
    Mt = M / tau
    u_prev = U[-1].copy()
    newton_steps = []
    report.status = "max_iter"
    for _ in range(config.m3_max_cycles):
        if stopping_check(hist, config.tol, atol):
            report.status = "converged"
            break
        U = np.empty_like(U)
        for n in range(N):
            rhs = F[n] + Mt @ u_prev
            scale = _norm(F[n]) + _norm(op.apply(u_prev)) + _norm(rhs)
            try:
                u, it = damped_newton(lambda v: rhs - Mt @ v - op.apply(v), lambda v: Mt + op.jacobian(v),
                                      u_prev, 1e-10 * scale, config.static_max_iter, config.armijo_slope,
                                      config.armijo_backtrack, config.armijo_max_halvings)
            except ConvergenceError as exc:
                raise ConvergenceError(f"time step {n + 1} of cycle {len(hist)}: {exc}") from exc
            newton_steps.append(it)
            U[n] = u
            u_prev = u
        hist.append(_norm(residual(op, M, U, F, tau)))
        log.debug("M3 cycle %d: residual %.3e", len(hist) - 1, hist[-1] / hist[0])
    else:
        if stopping_check(hist, config.tol, atol):
            report.status = "converged"
    report.iterations = len(hist) - 1
    report.residual_history = hist
    report.contraction_history = [b / a for a, b in zip(hist[:-1], hist[1:]) if a > 0]
    report.extra["newton_steps_total"] = int(sum(newton_steps))
    report.wall_time = time.perf_counter() - t0
    return U, report


METHODS = {"m1": solve_m1_fixed_point, "m2": solve_m2_newton, "m3": solve_m3_timestepping}
