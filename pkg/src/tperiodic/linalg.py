"""Sparse storage and linear solves with an explicit residual contract.

Storage is scipy CSR. Complex matrices of the form ``lam * M + K`` are
complex *symmetric* (not Hermitian); they are factorized with a general
sparse LU, so no Hermitian shortcut is ever taken.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SPARSE_RTOL = 1e-10
DENSE_RTOL = 1e-12


class SolverError(RuntimeError):
    """A linear solve missed its residual contract."""

    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (relative residual {residual:.3e})")
        self.residual = residual


def assemble_from_triplets(n_rows, n_cols, triplets=None, *, rows=None, cols=None, values=None):
    """Canonical CSR matrix with duplicate entries summed.

    Accepts either an iterable of ``(row, col, value)`` or parallel arrays.
    """
    if triplets is not None:
        triplets = list(triplets)
        rows = np.array([t[0] for t in triplets], dtype=np.int64)
        cols = np.array([t[1] for t in triplets], dtype=np.int64)
        values = np.array([t[2] for t in triplets]) if triplets else np.zeros(0)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values)
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
        raise IndexError(f"triplet index out of range for a {n_rows}x{n_cols} matrix")
    A = sp.coo_matrix((values, (rows, cols)), shape=(n_rows, n_cols)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def is_symmetric(A, tol=1e-13) -> bool:
    """Plain transpose check (complex symmetric, never conjugated)."""
    D = (A - A.T).tocoo()
    if D.nnz == 0:
        return True
    scale = max(abs(A).max(), 1.0)
    return bool(np.abs(D.data).max() <= tol * scale)


def _rel_residual(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


class LinearSolver:
    """Sparse LU bound to one matrix; ``solve`` enforces the residual bound.

    Instances are safe to share across threads for solves; scipy's SuperLU
    handle is read-only after factorization.
    """

    def __init__(self, A, rtol=SPARSE_RTOL, check=True):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.A = A
        self.rtol = rtol
        self.check = check
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc

    @property
    def shape(self):
        return self.A.shape

    def solve(self, b):
        b = np.asarray(b)
        if np.iscomplexobj(self.A.data):
            x = self._lu.solve(b.astype(complex))
        elif np.iscomplexobj(b):
            x = self._lu.solve(np.ascontiguousarray(b.real)) + 1j * self._lu.solve(np.ascontiguousarray(b.imag))
        else:
            x = self._lu.solve(b.astype(float))
        if self.check:
            res = _rel_residual(self.A, x, b)
            if not np.isfinite(res) or res > self.rtol:
                # one step of iterative refinement before giving up
                x = x + self._lu.solve(b - self.A @ x)
                res = _rel_residual(self.A, x, b)
                if not np.isfinite(res) or res > self.rtol:
                    raise SolverError("sparse solve missed residual contract", res)
        return x


def solve_sparse(A, b, rtol=SPARSE_RTOL):
    return LinearSolver(A, rtol=rtol).solve(b)


def solve_dense(A, b, rtol=DENSE_RTOL):
    A = np.asarray(A)
    b = np.asarray(b)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    try:
        x = sla.solve(A, b)
    except (sla.LinAlgError, ValueError) as exc:
        raise SolverError(f"dense solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("dense solve produced non-finite values")
    return x


def fgmres(apply_A, b, apply_P, x0=None, rtol=1e-8, restart=60, maxiter=600):
    """Flexible GMRES with right preconditioning (real arithmetic).

    Returns ``(x, info)`` where ``info`` holds iteration count and achieved
    relative residual. The preconditioner may vary between iterations.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros(n), {"iterations": 0, "residual": 0.0}
    total = 0
    r = b - apply_A(x)
    beta = np.linalg.norm(r)
    while total < maxiter:
        if beta <= rtol * nb:
            break
        m = min(restart, maxiter - total)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_used = 0
        for j in range(m):
            Z[j] = apply_P(V[j])
            w = apply_A(Z[j])
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            if H[j + 1, j] > 0:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_used = j + 1
            if abs(g[j + 1]) <= rtol * nb or H[j, j] == 0:
                break
        y = sla.solve_triangular(H[:j_used, :j_used], g[:j_used])
        x = x + y @ Z[:j_used]
        r = b - apply_A(x)
        beta = np.linalg.norm(r)
    return x, {"iterations": total, "residual": float(beta / nb)}
