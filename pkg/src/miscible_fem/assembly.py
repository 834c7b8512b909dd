"""Vectorised assembly of FE forms and the discrete projection operators.

Coefficient conventions used throughout:

* scalar fields are numbers or callables ``f(x, y, t)``;
* tensor fields are callables ``A(x, y, t)`` returning a scalar or a
  :class:`~miscible_fem.dispersion.SymMatrix2`;
* velocity-dependent tensors are a :class:`DispersionParams` (Bear-Scheidegger)
  or any callable ``D(u) -> SymMatrix2`` together with a velocity;
* velocities are callables ``u(x, y, t) -> (ux, uy)`` or objects exposing
  ``values_at(lam) -> (T, nq, 2)`` (the discrete Darcy velocity);
* boundary data are callables ``g(x, y, t, nx, ny)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .dispersion import DispersionParams, SymMatrix2, bear_scheidegger, ellipticity_bounds
from .fe import (EDGE_GAUSS_POINTS, EDGE_GAUSS_WEIGHTS, FeFunction, FeSpace, basis_values,
                 quadrature_rule)
from .sparse import SolverError, SparseMatrix, solve_spd

DEFAULT_ORDER = 4
DATA_ORDER = 6


class AssemblyError(ValueError):
    pass


def _pattern(space: FeSpace):
    """CSR structure of the space and a sparse operator scattering local entries.

    The scatter operator maps the flattened ``(T, nloc, nloc)`` local matrices
    onto the CSR data array; applying it is a fixed-order sparse product.
    """
    if "pattern" not in space._cache:
        dofs = space.element_dofs
        n = space.n_dofs
        rows = np.repeat(dofs[:, :, None], space.n_local, axis=2).ravel()
        cols = np.repeat(dofs[:, None, :], space.n_local, axis=1).ravel()
        keys, slot = np.unique(rows * n + cols, return_inverse=True)
        indptr = np.concatenate([[0], np.cumsum(np.bincount(keys // n, minlength=n))])
        slot = slot.ravel()
        scatter = scipy.sparse.csr_matrix(
            (np.ones(len(slot)), (slot, np.arange(len(slot)))), shape=(len(keys), len(slot)))
        space._cache["pattern"] = (indptr, keys % n, scatter)
    return space._cache["pattern"]


def _vector_scatter(space: FeSpace):
    if "vector_scatter" not in space._cache:
        dofs = space.element_dofs.ravel()
        space._cache["vector_scatter"] = scipy.sparse.csr_matrix(
            (np.ones(len(dofs)), (dofs, np.arange(len(dofs)))), shape=(space.n_dofs, len(dofs)))
    return space._cache["vector_scatter"]


def matrix_from_local(space: FeSpace, local: np.ndarray) -> SparseMatrix:
    indptr, indices, scatter = _pattern(space)
    data = scatter @ local.ravel()
    return SparseMatrix(indptr, indices, data, (space.n_dofs, space.n_dofs))


def vector_from_local(space: FeSpace, local: np.ndarray) -> np.ndarray:
    return _vector_scatter(space) @ local.ravel()


def _scalar_at(coef, xq, t):
    if callable(coef):
        val = coef(xq[..., 0], xq[..., 1], t)
    else:
        val = coef
    return np.broadcast_to(np.asarray(val, dtype=float), xq.shape[:-1])


def velocity_at(velocity, space: FeSpace, lam: np.ndarray, t: float) -> np.ndarray:
    """Velocity at barycentric points of every triangle -> ``(T, nq, 2)``."""
    if hasattr(velocity, "values_at"):
        return velocity.values_at(lam)
    xq = space.physical_points(lam)
    ux, uy = velocity(xq[..., 0], xq[..., 1], t)
    ux, uy = np.broadcast_arrays(np.asarray(ux, float), np.asarray(uy, float))
    ux = np.broadcast_to(ux, xq.shape[:-1])
    uy = np.broadcast_to(uy, xq.shape[:-1])
    return np.stack([ux, uy], axis=-1)


def _tensor_at(tensor, space, rule, xq, t, velocity):
    if velocity is not None:
        u = velocity_at(velocity, space, rule.points, t)
        if isinstance(tensor, DispersionParams):
            val = bear_scheidegger(u, tensor)
        else:
            val = tensor(u)
        return val, u
    val = tensor(xq[..., 0], xq[..., 1], t) if callable(tensor) else tensor
    return val, None


def _check_ellipticity(a11, a12, a22, xq, tensor, u):
    lo, hi = SymMatrix2(a11, a12, a22).eigvalsh()
    bad = ~(lo > 0.0) | ~np.isfinite(hi)
    if isinstance(tensor, DispersionParams) and u is not None:
        k_lo, k_hi = ellipticity_bounds(tensor, float(np.max(np.linalg.norm(u, axis=-1))))
        slack = 1e-12 * max(1.0, k_hi)
        bad |= (lo < k_lo - slack) | (hi > k_hi + slack)
    if np.any(bad):
        t_idx, q_idx = np.argwhere(bad)[0]
        x, y = xq[t_idx, q_idx]
        raise AssemblyError(
            f"coefficient not uniformly elliptic at quadrature point {q_idx} of triangle "
            f"{t_idx} ({x:.6g}, {y:.6g}): eigenvalues {lo[t_idx, q_idx]:.3e}, "
            f"{hi[t_idx, q_idx]:.3e}")


def assemble_mass(space: FeSpace, weight=1.0, t: float = 0.0,
                  order: int = DEFAULT_ORDER) -> SparseMatrix:
    """``M_ij = int weight psi_i psi_j``."""
    rule, xq, wq = space.quadrature(order)
    c = _scalar_at(weight, xq, t)
    if np.any(~(c > 0.0)):
        raise AssemblyError("mass weight must be positive at every quadrature point")
    phi, _ = space.tabulate(rule.points)
    pp = (phi[:, :, None] * phi[:, None, :]).reshape(len(phi), -1)
    local = np.broadcast_to(c * wq, wq.shape) @ pp
    return matrix_from_local(space, local)


def lumped_mass(space: FeSpace, weight=1.0, t: float = 0.0) -> SparseMatrix:
    """Row-sum lumped mass matrix (used only as a deliberately degraded scheme)."""
    M = assemble_mass(space, weight, t)
    d = np.asarray(M.to_scipy().sum(axis=1)).ravel()
    n = space.n_dofs
    return SparseMatrix(np.arange(n + 1), np.arange(n), d, (n, n))


def assemble_stiffness(space: FeSpace, tensor=1.0, t: float = 0.0, velocity=None,
                       order: int = DEFAULT_ORDER, check: bool = True) -> SparseMatrix:
    """``K_ij = int (A grad psi_j) . grad psi_i``.

    ``tensor`` is evaluated pointwise at quadrature points; with ``velocity``
    it is a function of the local velocity instead of ``(x, y, t)``.
    """
    rule, xq, wq = space.quadrature(order)
    val, u = _tensor_at(tensor, space, rule, xq, t, velocity)
    if isinstance(val, SymMatrix2):
        a11, a12, a22 = (np.broadcast_to(np.asarray(a, float), wq.shape) for a in val)
        if check:
            _check_ellipticity(a11, a12, a22, xq, tensor, u)
        G = space.gradient_matrix(rule.points)
        T, nloc, _ = G.shape
        g = G.reshape(T, nloc, -1, 2)
        w11, w12, w22 = ((wq * a)[:, None, :] for a in (a11, a12, a22))
        AG = np.empty_like(g)
        AG[..., 0] = w11 * g[..., 0] + w12 * g[..., 1]
        AG[..., 1] = w12 * g[..., 0] + w22 * g[..., 1]
        local = np.matmul(G, AG.reshape(T, nloc, -1).transpose(0, 2, 1))
    else:
        a = np.broadcast_to(np.asarray(val, float), wq.shape)
        if check and not np.all(a > 0.0):
            _check_ellipticity(a, np.zeros_like(a), a, xq, tensor, u)
        kernel = _gradient_kernel(space, order)
        T, nq = wq.shape
        if space.degree == 1:
            # P1 gradients are constant on each triangle
            local = (a * wq).sum(axis=1)[:, None] * kernel[:, 0, :]
        else:
            local = np.einsum("tq,tqk->tk", a * wq, kernel)
        local = local.reshape(T, space.n_local, space.n_local)
    return matrix_from_local(space, local)


def _gradient_kernel(space: FeSpace, order: int) -> np.ndarray:
    """``grad psi_i . grad psi_j`` at quadrature points, shape ``(T, nq, nloc**2)``."""
    key = ("grad_kernel", order)
    if key not in space._cache:
        rule = quadrature_rule(order)
        _, grads = space.tabulate(rule.points)
        gg = np.einsum("tqid,tqjd->tqij", grads, grads)
        space._cache[key] = gg.reshape(gg.shape[0], gg.shape[1], -1)
    return space._cache[key]


def assemble_convection(space: FeSpace, velocity, t: float = 0.0,
                        order: int = DEFAULT_ORDER) -> SparseMatrix:
    """``C_ij = int (u . grad psi_j) psi_i``."""
    rule, xq, wq = space.quadrature(order)
    phi, _ = space.tabulate(rule.points)
    u = velocity_at(velocity, space, rule.points, t)
    if not np.all(np.isfinite(u)):
        raise AssemblyError("non-finite velocity at a quadrature point")
    G = space.gradient_matrix(rule.points)
    T, nloc, _ = G.shape
    g = G.reshape(T, nloc, -1, 2)
    ugrad = g[..., 0] * u[:, None, :, 0] + g[..., 1] * u[:, None, :, 1]     # (T, j, q)
    wphi = wq[:, :, None] * phi[None]                                      # (T, q, i)
    local = np.matmul(wphi.transpose(0, 2, 1), ugrad.transpose(0, 2, 1))
    return matrix_from_local(space, local)


def assemble_load(space: FeSpace, f, t: float = 0.0, order: int = DEFAULT_ORDER) -> np.ndarray:
    """``b_i = int f psi_i``."""
    rule, xq, wq = space.quadrature(order)
    phi, _ = space.tabulate(rule.points)
    fq = _scalar_at(f, xq, t)
    return vector_from_local(space, (fq * wq) @ phi)


def assemble_flux_load(space: FeSpace, g, t: float = 0.0, order: int = DEFAULT_ORDER) -> np.ndarray:
    """``b_i = int g . grad psi_i`` for a vector field ``g(x, y, t) -> (gx, gy)``."""
    rule, xq, wq = space.quadrature(order)
    gq = velocity_at(g, space, rule.points, t)
    return vector_from_local(space, _grad_test(space, rule, wq[..., None] * gq))


def _grad_test(space: FeSpace, rule, wflux: np.ndarray) -> np.ndarray:
    """``sum_q wflux(q) . grad psi_i(q)`` per triangle, ``wflux`` of shape ``(T, nq, 2)``."""
    G = space.gradient_matrix(rule.points)
    return np.matmul(G, wflux.reshape(len(G), -1, 1))[..., 0]


def _boundary_tabulation(space: FeSpace):
    if "boundary" not in space._cache:
        mesh = space.mesh
        edges, tris = mesh.boundary_edges, mesh.boundary_triangles
        tri_v = mesh.triangles[tris]
        la = np.argmax(tri_v == edges[:, :1], axis=1)
        lb = np.argmax(tri_v == edges[:, 1:], axis=1)
        s = EDGE_GAUSS_POINTS
        lam = np.zeros((len(edges), len(s), 3))
        rows = np.arange(len(edges))[:, None]
        lam[rows, :, la[:, None]] = 1.0 - s
        lam[rows, :, lb[:, None]] = s
        phi = basis_values(space.degree, lam)
        pa, pb = mesh.vertices[edges[:, 0]], mesh.vertices[edges[:, 1]]
        xq = pa[:, None, :] * (1.0 - s)[None, :, None] + pb[:, None, :] * s[None, :, None]
        length = np.linalg.norm(pb - pa, axis=1)
        wq = length[:, None] * EDGE_GAUSS_WEIGHTS[None, :]
        space._cache["boundary"] = (xq, wq, phi, space.element_dofs[tris])
    return space._cache["boundary"]


def boundary_quadrature(space: FeSpace):
    """Boundary Gauss points ``(B, 3, 2)``, weights ``(B, 3)`` and normals ``(B, 2)``."""
    xq, wq, _, _ = _boundary_tabulation(space)
    return xq, wq, space.mesh.boundary_normals


def assemble_boundary_load(space: FeSpace, g, t: float = 0.0) -> np.ndarray:
    """``b_i = oint g psi_i ds`` with 3-point Gauss on each boundary edge."""
    xq, wq, phi, dofs = _boundary_tabulation(space)
    n = space.mesh.boundary_normals
    if callable(g):
        gq = g(xq[..., 0], xq[..., 1], t, n[:, None, 0], n[:, None, 1])
    else:
        gq = g
    gq = np.broadcast_to(np.asarray(gq, dtype=float), wq.shape)
    local = np.einsum("bq,bqi->bi", gq * wq, phi)
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=space.n_dofs)


def integrate(space: FeSpace, f, t: float = 0.0, order: int = DATA_ORDER) -> float:
    _, xq, wq = space.quadrature(order)
    return float(np.sum(_scalar_at(f, xq, t) * wq))


@dataclass(frozen=True)
class SourceTerms:
    """Injection ``q_i``, production ``q_p`` and injected concentration ``c_hat``."""
    injection: object = 0.0
    production: object = 0.0
    injected_concentration: object = 0.0

    def compatibility_defect(self, space: FeSpace, t: float) -> float:
        return integrate(space, self.injection, t) - integrate(space, self.production, t)

    def check_compatibility(self, space: FeSpace, t: float, tol: float = 1e-10) -> None:
        defect = self.compatibility_defect(space, t)
        if abs(defect) > tol:
            raise AssemblyError(f"sources violate compatibility at t={t}: "
                                f"int(q_i - q_p) = {defect:.3e}")


def l2_project(space: FeSpace, field, t: float = 0.0, tol: float = 1e-12,
               x0=None) -> FeFunction:
    """L2 projection P_h: ``(field - P_h field, v) = 0`` for all ``v``."""
    M = _unit_mass(space)
    b = assemble_load(space, field, t, order=DATA_ORDER)
    x, rep = solve_spd(M, b, tol=tol, x0=x0, check_symmetry=False)
    _require(rep, "L2 projection")
    return FeFunction(space, x)


def _unit_mass(space: FeSpace) -> SparseMatrix:
    if "unit_mass" not in space._cache:
        space._cache["unit_mass"] = assemble_mass(space, 1.0, order=DATA_ORDER)
    return space._cache["unit_mass"]


def _require(rep, what):
    if not rep.converged:
        raise SolverError(f"{what}: solver stopped at residual {rep.residual_norm:.3e} "
                          f"after {rep.iterations} iterations")


def ritz_operator(space: FeSpace, A, t: float) -> SparseMatrix:
    """``K_A + M`` at time ``t``, the matrix of the shifted elliptic form."""
    return (assemble_stiffness(space, A, t, order=DATA_ORDER)
            + _unit_mass(space))


def ritz_project(space: FeSpace, field, grad, A, t: float = 0.0,
                 tol: float = 1e-12, x0=None) -> FeFunction:
    """Ritz projection R_h(t) for the form ``(A(t) grad u, grad v) + (u, v)``.

    ``grad(x, y, t)`` returns the exact gradient ``(gx, gy)`` of ``field``.
    """
    rhs = ritz_rhs(space, field, grad, A, t)
    x, rep = solve_spd(ritz_operator(space, A, t), rhs, tol=tol, x0=x0, check_symmetry=False)
    _require(rep, "Ritz projection")
    return FeFunction(space, x)


def ritz_rhs(space: FeSpace, field, grad, A, t: float) -> np.ndarray:
    rule, xq, wq = space.quadrature(DATA_ORDER)
    phi, _ = space.tabulate(rule.points)
    val = A(xq[..., 0], xq[..., 1], t) if callable(A) else A
    gx, gy = grad(xq[..., 0], xq[..., 1], t)
    gx = np.broadcast_to(gx, wq.shape)
    gy = np.broadcast_to(gy, wq.shape)
    if isinstance(val, SymMatrix2):
        fx = val.a11 * gx + val.a12 * gy
        fy = val.a12 * gx + val.a22 * gy
    else:
        fx, fy = val * gx, val * gy
    flux = np.stack(np.broadcast_arrays(fx, fy), axis=-1)
    local = (_grad_test(space, rule, wq[..., None] * flux)
             + (_scalar_at(field, xq, t) * wq) @ phi)
    return vector_from_local(space, local)


def apply_Ah(f: FeFunction, A, t: float = 0.0, tol: float = 1e-12) -> FeFunction:
    """FE function representing ``A_h(t) f = M^{-1} (K_A + M) f``."""
    space = f.space
    b = ritz_operator(space, A, t) @ f.coeffs
    x, rep = solve_spd(_unit_mass(space), b, tol=tol, check_symmetry=False)
    _require(rep, "A_h application")
    return FeFunction(space, x)
