"""P1 finite element assembly for the 2D magnetoquasistatic model.

All operators act on the free (interior) vertices only; the homogeneous
Dirichlet condition on the outer rectangle is imposed by elimination.

The element gradient map ``G`` (two rows per triangle) is the workhorse:
``K(u) = G^T W nu(|Gu|) Gu`` with ``W`` the element areas, and frozen or
linearized stiffness matrices are ``G^T D G`` for a block-diagonal ``D``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .linalg import assemble_from_triplets
from .materials import Bounds, MaterialTable, flux_bounds
from .mesh import Mesh

_P1_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def element_geometry(mesh: Mesh):
    """Triangle areas and barycentric gradients, shape ``(nt,)`` and ``(nt, 3, 2)``."""
    p = mesh.vertices[mesh.triangles]
    area = mesh.signed_areas()
    if np.any(area <= 0):
        raise ValueError("mesh has non-positively oriented triangles")
    nxt = p[:, [1, 2, 0]]
    prv = p[:, [2, 0, 1]]
    grads = np.empty_like(p)
    grads[..., 0] = (nxt[..., 1] - prv[..., 1]) / (2 * area[:, None])
    grads[..., 1] = (prv[..., 0] - nxt[..., 0]) / (2 * area[:, None])
    return area, grads


def _elementwise(mesh: Mesh, values_per_elem, local):
    """Scatter per-element 3x3 matrices ``values_per_elem[e] * local[e]`` onto free dofs."""
    dof = mesh.dof_map()[mesh.triangles]
    rows = np.repeat(dof, 3, axis=1)
    cols = np.tile(dof, (1, 3))
    vals = (values_per_elem[:, None, None] * local).reshape(len(dof), 9)
    keep = (rows >= 0) & (cols >= 0)
    return assemble_from_triplets(mesh.n_dof, mesh.n_dof, rows=rows[keep], cols=cols[keep], values=vals[keep])


def assemble_mass(mesh: Mesh, materials: MaterialTable):
    """Conductivity-weighted P1 mass matrix (positive semi-definite)."""
    area, _ = element_geometry(mesh)
    sigma = np.array([materials.material(lab).sigma for lab in mesh.region_of])
    local = np.broadcast_to(_P1_MASS, (mesh.n_triangles, 3, 3))
    M = _elementwise(mesh, sigma * area, local)
    M.eliminate_zeros()  # keeps the nonconducting pattern empty
    return M


def assemble_stiffness_frozen(mesh: Mesh, nu_hat_of: dict[str, float]):
    """Stiffness with a fixed reluctivity per region."""
    for lab, v in nu_hat_of.items():
        if not v > 0:
            raise ValueError(f"frozen reluctivity for {lab!r} must be positive, got {v}")
    area, grads = element_geometry(mesh)
    try:
        nu_e = np.array([nu_hat_of[lab] for lab in mesh.region_of], dtype=float)
    except KeyError as exc:
        raise KeyError(f"no frozen reluctivity for region {exc.args[0]!r}") from None
    local = np.einsum("eik,ejk->eij", grads, grads)
    return _elementwise(mesh, nu_e * area, local)


def assemble_loads(mesh: Mesh, materials: MaterialTable, N: int, period: float) -> np.ndarray:
    """Load blocks ``f^n``, n = 1..N, at ``t^n = n * period / N``; shape ``(N, n_dof)``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    area, _ = element_geometry(mesh)
    j_amp = np.array([materials.material(lab).j_amp for lab in mesh.region_of])
    dof = mesh.dof_map()[mesh.triangles]
    contrib = np.repeat((j_amp * area / 3.0)[:, None], 3, axis=1)
    keep = dof >= 0
    profile = np.bincount(dof[keep], weights=contrib[keep], minlength=mesh.n_dof)
    t = np.arange(1, N + 1) * period / N
    return np.cos(2 * np.pi * t / period)[:, None] * profile[None, :]


class NonlinearOperator:
    """``u -> (int nu(|grad u|) grad u . grad phi_i)_i`` over the free dofs.

    ``apply`` and ``element_flux_density`` accept a single vector ``(n_dof,)``
    or a block ``(N, n_dof)``.
    """

    def __init__(self, mesh: Mesh, materials: MaterialTable):
        self.mesh = mesh
        self.materials = materials
        self.n_dof = mesh.n_dof
        self.area, grads = element_geometry(mesh)
        nt = mesh.n_triangles
        dof = mesh.dof_map()[mesh.triangles]
        rows = np.repeat(np.arange(2 * nt).reshape(nt, 2, 1), 3, axis=2)  # (nt, 2, 3)
        cols = np.broadcast_to(dof[:, None, :], (nt, 2, 3))
        vals = grads.transpose(0, 2, 1)
        keep = cols >= 0
        self.G = assemble_from_triplets(2 * nt, self.n_dof, rows=rows[keep], cols=cols[keep], values=vals[keep])
        self.GT = self.G.T.tocsr()
        labels = mesh.region_of
        self.regions = sorted(set(labels.tolist()))
        mats = [materials.material(lab) for lab in labels]
        self._a = np.array([m.a for m in mats])
        self._b = np.array([m.b for m in mats])
        self._logc = np.log(np.array([max(m.c, 1.0) for m in mats]))
        self._d = np.array([m.d for m in mats])

    def _grad(self, u):
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            return (self.G @ u).reshape(-1, 2)
        return (self.G @ u.T).T.reshape(u.shape[0], -1, 2)

    def element_flux_density(self, u):
        """``|grad u|`` per triangle."""
        g = self._grad(u)
        return np.sqrt((g * g).sum(axis=-1))

    def nu_elem(self, s):
        e = np.minimum(self._b * s * s, self._logc)
        return self._a * np.exp(e) + self._d

    def nu_prime_elem(self, s):
        bs2 = self._b * s * s
        e = np.minimum(bs2, self._logc)
        return np.where(bs2 < self._logc, 2 * self._a * self._b * s * np.exp(e), 0.0)

    def apply(self, u):
        g = self._grad(u)
        s = np.sqrt((g * g).sum(axis=-1))
        flux = (self.area * self.nu_elem(s))[..., None] * g
        if flux.ndim == 2:
            return self.GT @ flux.ravel()
        return (self.GT @ flux.reshape(flux.shape[0], -1).T).T

    def _block_diag(self, d11, d12, d22):
        nt = len(d11)
        i = np.arange(nt)
        rows = np.concatenate([2 * i, 2 * i, 2 * i + 1, 2 * i + 1])
        cols = np.concatenate([2 * i, 2 * i + 1, 2 * i, 2 * i + 1])
        vals = np.concatenate([d11, d12, d12, d22])
        return sp.csr_matrix((vals, (rows, cols)), shape=(2 * nt, 2 * nt))

    def weighted_stiffness(self, nu_e):
        """``G^T diag(area * nu_e) G`` for per-element coefficients."""
        w = self.area * np.asarray(nu_e, dtype=float)
        D = sp.diags(np.repeat(w, 2))
        K = self.GT @ D @ self.G
        return _symmetrize(K)

    def frozen_stiffness(self, nu_hat_of: dict[str, float]):
        nu_e = np.array([nu_hat_of[lab] for lab in self.mesh.region_of], dtype=float)
        if np.any(nu_e <= 0):
            raise ValueError("frozen reluctivity must be positive")
        return self.weighted_stiffness(nu_e)

    def laplacian(self):
        return self.weighted_stiffness(np.ones(self.mesh.n_triangles))

    def jacobian(self, u):
        """Derivative of :meth:`apply` at ``u`` (symmetric sparse)."""
        g = self._grad(u)
        s = np.sqrt((g * g).sum(axis=-1))
        nu = self.nu_elem(s)
        nup = self.nu_prime_elem(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(s > 0, nup / s, 0.0)
        w = self.area
        D = self._block_diag(w * (nu + c * g[:, 0] ** 2), w * c * g[:, 0] * g[:, 1], w * (nu + c * g[:, 1] ** 2))
        return _symmetrize(self.GT @ D @ self.G)


def _symmetrize(K):
    K = 0.5 * (K + K.T)
    K = K.tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


def assemble_jacobian(op: NonlinearOperator, u):
    return op.jacobian(u)


def apply_nonlinear(op: NonlinearOperator, u):
    return op.apply(u)


NU_HAT_MODES = ("theory", "frozen-field", "riesz")


def choose_nu_hat(mode: str, materials: MaterialTable, bounds: dict[str, Bounds] | None = None,
                  op: NonlinearOperator | None = None, U_init=None, margin: float = 0.2,
                  s_max: float = 3.0, samples: int = 4001, omega: str = "average"):
    """Per-region frozen reluctivity and the implied contraction bound.

    ``theory``
        midpoint of each region's flux-slope bounds on ``[0, s_max]``.
    ``frozen-field``
        the same, over the range of ``|grad u|`` found in each region of
        ``U_init`` widened by ``margin`` on both ends.
    ``riesz``
        a scaled Riesz map of the space with inner product
        ``int d grad u . grad v`` (``d`` the reluctivity floor), i.e.
        ``nu_hat_i = d_i / omega``. With ``gamma, L`` the extreme slope/d
        ratios over all regions, ``omega="average"`` takes
        ``omega = 2 / (gamma + L)`` and ``omega="optimal"`` minimizes
        ``1 - 2 omega gamma + omega**2 L**2``, i.e. ``omega = gamma / L**2``.
        Ranges come from ``U_init`` when given, else from ``[0, s_max]``.

    Returns ``(nu_hat_of, q, q_of)`` with ``q`` the worst regional bound
    over the regions present in ``op`` (all regions if ``op`` is None).
    """
    if mode not in NU_HAT_MODES:
        raise ValueError(f"unknown nu_hat mode {mode!r}")
    if bounds is None:
        bounds = flux_bounds(materials, s_max=s_max, samples=samples)
    ranges = {lab: (b.lam, b.Lam) for lab, b in bounds.items()}
    if mode == "frozen-field" and (op is None or U_init is None):
        raise ValueError("frozen-field mode needs the operator and an initial state")
    if mode in ("frozen-field", "riesz") and op is not None and U_init is not None:
        s = np.atleast_2d(op.element_flux_density(U_init))
        for lab in op.regions:
            vals = s[:, op.mesh.region_of == lab]
            lo, hi = float(vals.min()) / (1 + margin), float(vals.max()) * (1 + margin)
            ranges[lab] = materials.material(lab).slope_range(lo, hi, samples)
    present = set(op.regions) if op is not None else set(ranges)

    nu_hat_of, q_of = {}, {}
    if mode == "riesz":
        ratios = {lab: (lam / materials.material(lab).d, Lam / materials.material(lab).d)
                  for lab, (lam, Lam) in ranges.items()}
        gamma = min(r[0] for lab, r in ratios.items() if lab in present)
        L = max(r[1] for lab, r in ratios.items() if lab in present)
        if omega == "average":
            w = 2.0 / (gamma + L)
        elif omega == "optimal":
            w = gamma / L**2
        else:
            raise ValueError(f"unknown omega rule {omega!r}")
        for lab, (rlo, rhi) in ratios.items():
            nu_hat_of[lab] = materials.material(lab).d / w
            if omega == "average":
                q_of[lab] = max(abs(1 - w * rlo), abs(1 - w * rhi))
            else:
                q_of[lab] = float(np.sqrt(max(1 - 2 * w * rlo + w**2 * rhi**2, 0.0)))
    else:
        for lab, (lam, Lam) in ranges.items():
            nu_hat_of[lab] = 0.5 * (lam + Lam)
            q_of[lab] = (Lam - lam) / (Lam + lam)
    q = max(v for lab, v in q_of.items() if lab in present)
    return nu_hat_of, float(q), q_of


@dataclass
class FemSystem:
    """Discrete periodic transformer problem: mesh, operators and loads."""

    mesh: Mesh
    materials: MaterialTable
    op: NonlinearOperator
    M: sp.csr_matrix
    F: np.ndarray
    period: float
    nu_hat_of: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.F.shape[0]

    @property
    def n_dof(self) -> int:
        return self.op.n_dof

    @property
    def tau(self) -> float:
        return self.period / self.N


def build_system(mesh: Mesh, materials: MaterialTable, N: int, period: float = 0.02) -> FemSystem:
    op = NonlinearOperator(mesh, materials)
    return FemSystem(
        mesh=mesh,
        materials=materials,
        op=op,
        M=assemble_mass(mesh, materials),
        F=assemble_loads(mesh, materials, N, period),
        period=period,
    )
