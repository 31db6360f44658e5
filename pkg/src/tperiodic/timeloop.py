"""Block structures of the time-periodic implicit Euler system.

A periodic state is an array ``U`` of shape ``(N, n_dof)`` with
``U[n - 1] = u^n``; the predecessor of ``u^1`` is ``u^N``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .linalg import LinearSolver, SolverError

IMAG_TOL = 1e-9


def backward_difference(U, tau):
    """``(u^n - u^{n-1}) / tau`` with periodic wrap."""
    U = np.asarray(U)
    return (U - np.roll(U, 1, axis=0)) / tau


def residual(op, M, U, F, tau, KU=None):
    """Block residual ``F - A(U)`` with ``A(U)^n = M d_tau u^n + K(u^n)``."""
    U = np.asarray(U, dtype=float)
    F = np.asarray(F, dtype=float)
    if U.shape != F.shape or U.ndim != 2:
        raise ValueError(f"state {U.shape} and right-hand side {F.shape} must be matching (N, n_dof) blocks")
    if KU is None:
        KU = op.apply(U)
    return F - (M @ backward_difference(U, tau).T).T - KU


def circulant_symbols(N, tau):
    """Eigenvalues ``(1 - exp(-2 pi i k / N)) / tau`` of the periodic backward difference."""
    k = np.arange(N)
    return (1.0 - np.exp(-2j * np.pi * k / N)) / tau


def _dft_matrix(N):
    n = np.arange(N)
    return np.exp(-2j * np.pi * np.outer(n, n) / N)


class PeriodicSolver:
    """Solver for ``M d_tau u^n + K u^n = g^n`` with ``u^0 = u^N``.

    The circulant time coupling is diagonalized by the DFT; frequency ``k``
    leaves the complex symmetric block ``lam_k M + K``. Only
    ``k = 0..N//2`` are factorized; the rest follow by conjugation.
    Factorizations are kept, so repeated solves (one per fixed-point step)
    cost only the back substitutions.

    ``transform="fft"`` uses numpy's FFT, ``"direct"`` a dense DFT matrix;
    both give the same solution to rounding.
    """

    def __init__(self, M, K, N, tau, workers=1, transform="fft"):
        if N < 1 or tau <= 0:
            raise ValueError("need N >= 1 and tau > 0")
        if transform not in ("fft", "direct"):
            raise ValueError(f"unknown transform {transform!r}")
        self.M = M.tocsr()
        self.K = K.tocsr()
        self.N = N
        self.tau = tau
        self.workers = max(1, int(workers))
        self.transform = transform
        self.symbols = circulant_symbols(N, tau)
        self.n_freq = N // 2 + 1
        self._solvers = self._map(self._factor, range(self.n_freq))

    def _map(self, fn, items):
        items = list(items)
        if self.workers == 1 or len(items) < 2:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(self.workers) as pool:
            return list(pool.map(fn, items))

    def _factor(self, k):
        lam = self.symbols[k]
        if k == 0:
            A = self.K.astype(complex)
        else:
            A = (lam * self.M + self.K).astype(complex)
        return LinearSolver(A.tocsc())

    def condition_indicators(self):
        """Per-frequency ``|lam_k| * max(diag M) / max(diag K)``, a cheap stiffness ratio."""
        mdiag = np.abs(self.M.diagonal()).max() if self.M.nnz else 0.0
        kdiag = np.abs(self.K.diagonal()).max()
        return [float(abs(self.symbols[k]) * mdiag / kdiag) for k in range(self.n_freq)]

    def _forward(self, G):
        if self.transform == "fft":
            return np.fft.rfft(G, axis=0)
        return (_dft_matrix(self.N) @ G)[: self.n_freq]

    def _inverse(self, Uhat):
        N = self.N
        if self.transform == "fft":
            return np.fft.irfft(Uhat, n=N, axis=0)
        full = np.empty((N,) + Uhat.shape[1:], dtype=complex)
        full[: self.n_freq] = Uhat
        for k in range(self.n_freq, N):
            full[k] = np.conj(Uhat[N - k])
        U = (np.conj(_dft_matrix(N)) @ full) / N
        scale = max(np.abs(U.real).max(), np.finfo(float).tiny)
        if np.abs(U.imag).max() > IMAG_TOL * scale:
            raise SolverError("periodic solve left an imaginary residue", float(np.abs(U.imag).max() / scale))
        return U.real

    def solve(self, G):
        G = np.asarray(G, dtype=float)
        if G.shape[0] != self.N:
            raise ValueError(f"expected {self.N} time blocks, got {G.shape[0]}")
        Ghat = self._forward(G)
        Uhat = np.empty_like(Ghat, dtype=complex)

        def one(k):
            Uhat[k] = self._solvers[k].solve(Ghat[k])

        self._map(one, range(self.n_freq))
        # DC and Nyquist blocks must come out real for real data
        scale = max(np.abs(Uhat).max(), np.finfo(float).tiny)
        real_modes = [0] + ([self.N // 2] if self.N % 2 == 0 else [])
        for k in real_modes:
            if np.abs(Uhat[k].imag).max() > IMAG_TOL * scale:
                raise SolverError("periodic solve left an imaginary residue",
                                  float(np.abs(Uhat[k].imag).max() / scale))
        return self._inverse(Uhat)


def dft_periodic_solve(M, K_hat, G, tau, workers=1, transform="fft"):
    G = np.asarray(G, dtype=float)
    return PeriodicSolver(M, K_hat, G.shape[0], tau, workers=workers, transform=transform).solve(G)


def all_at_once_matrix(M, K, N, tau):
    """Sparse ``(N n) x (N n)`` matrix of the linear periodic system (for checks)."""
    import scipy.sparse as sp

    eye = sp.identity(N, format="csr")
    shift = sp.csr_matrix((np.ones(N), (np.arange(N), (np.arange(N) - 1) % N)), shape=(N, N))
    return (sp.kron(eye, M / tau + K) - sp.kron(shift, M / tau)).tocsr()


def block_norm_khat(U, K_hat):
    U = np.atleast_2d(np.asarray(U, dtype=float))
    return float(np.sqrt(max(np.sum(U * (K_hat @ U.T).T), 0.0)))


def block_dualnorm_khat(F, K_hat_solver):
    """``sqrt(sum_n f_n^T K^{-1} f_n)``; pass a :class:`LinearSolver` or a matrix."""
    if not isinstance(K_hat_solver, LinearSolver):
        K_hat_solver = LinearSolver(K_hat_solver)
    F = np.atleast_2d(np.asarray(F, dtype=float))
    X = K_hat_solver.solve(F.T)
    return float(np.sqrt(max(np.sum(F.T * X), 0.0)))
