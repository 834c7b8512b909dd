"""Lagrange P1/P2 spaces on triangles, quadrature and point evaluation."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import Mesh


class EvaluationError(ValueError):
    pass


class LocationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadRule:
    """Quadrature on the reference triangle in barycentric coordinates.

    Weights sum to one, so ``area * sum(w * f(points))`` integrates ``f`` over a
    triangle of the given area.
    """
    points: np.ndarray
    weights: np.ndarray
    order: int


def _orbit(*bary):
    return sorted(set(itertools.permutations(bary)))


def _rule(groups, order):
    pts, wts = [], []
    for w, bary in groups:
        for p in _orbit(*bary):
            pts.append(p)
            wts.append(w)
    return QuadRule(np.array(pts), np.array(wts), order)


def _sym3(a):
    return (a, a, 1.0 - 2.0 * a)


_S15 = np.sqrt(15.0)
_DEG4 = [
    (0.223381589678011465695, _sym3(0.4459484909159648863183)),
    (0.1099517436553218676383, _sym3(0.09157621350977074345957)),
]
_RULES = {
    1: _rule([(1.0, (1 / 3, 1 / 3, 1 / 3))], 1),
    2: _rule([(1 / 3, (2 / 3, 1 / 6, 1 / 6))], 2),
    # no positive 4-point degree-3 rule exists; the 6-point degree-4 rule serves
    3: _rule(_DEG4, 4),
    4: _rule(_DEG4, 4),
    5: _rule([
        (0.225, (1 / 3, 1 / 3, 1 / 3)),
        ((155.0 - _S15) / 1200.0, _sym3((6.0 - _S15) / 21.0)),
        ((155.0 + _S15) / 1200.0, _sym3((6.0 + _S15) / 21.0)),
    ], 5),
    6: _rule([
        (0.1167862757263793660253, _sym3(0.2492867451709104212916)),
        (0.05084490637020681692094, _sym3(0.06308901449150222834033)),
        (0.08285107561837357519355, (0.05314504984481694735325, 0.3103524510337844054166,
                                     1.0 - 0.05314504984481694735325 - 0.3103524510337844054166)),
    ], 6),
}


def quadrature_rule(order: int) -> QuadRule:
    """Symmetric positive-weight rule exact for polynomials of degree ``order``."""
    if order not in _RULES:
        raise ValueError(f"unsupported quadrature order {order!r}; use 1..6")
    return _RULES[order]


# 3-point Gauss-Legendre on [0, 1], used on boundary edges
EDGE_GAUSS_POINTS = 0.5 + 0.5 * np.sqrt(3.0 / 5.0) * np.array([-1.0, 0.0, 1.0])
EDGE_GAUSS_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


def n_local_dofs(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


def basis_values(degree: int, lam: np.ndarray) -> np.ndarray:
    """Reference basis at barycentric points ``lam[..., 3]`` -> ``[..., nloc]``."""
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    if degree == 1:
        return np.stack([l0, l1, l2], axis=-1)
    if degree == 2:
        return np.stack([
            l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
            4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
        ], axis=-1)
    raise ValueError(f"degree must be 1 or 2, got {degree!r}")


def basis_dlam(degree: int, lam: np.ndarray) -> np.ndarray:
    """Derivatives with respect to the three barycentrics -> ``[..., nloc, 3]``."""
    shape = lam.shape[:-1]
    if degree == 1:
        return np.broadcast_to(np.eye(3), shape + (3, 3)).copy()
    if degree == 2:
        l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
        d = np.zeros(shape + (6, 3))
        d[..., 0, 0] = 4 * l0 - 1
        d[..., 1, 1] = 4 * l1 - 1
        d[..., 2, 2] = 4 * l2 - 1
        d[..., 3, 0], d[..., 3, 1] = 4 * l1, 4 * l0
        d[..., 4, 1], d[..., 4, 2] = 4 * l2, 4 * l1
        d[..., 5, 2], d[..., 5, 0] = 4 * l0, 4 * l2
        return d
    raise ValueError(f"degree must be 1 or 2, got {degree!r}")


class FeSpace:
    """Continuous Lagrange space of degree 1 or 2 on a triangle mesh.

    Dofs are numbered vertices first (mesh order) and then edge midpoints in
    the sorted edge order of :attr:`Mesh.edges`.
    """

    def __init__(self, mesh: Mesh, degree: int):
        if degree not in (1, 2):
            raise ValueError(f"degree must be 1 or 2, got {degree!r}")
        self.mesh = mesh
        self.degree = degree
        self.n_local = n_local_dofs(degree)
        if degree == 1:
            self.element_dofs = mesh.triangles.copy()
            self.dof_coords = mesh.vertices.copy()
        else:
            nv = mesh.n_vertices
            self.element_dofs = np.hstack([mesh.triangles, nv + mesh.triangle_edges])
            mids = mesh.vertices[mesh.edges].mean(axis=1)
            self.dof_coords = np.vstack([mesh.vertices, mids])
        self.element_dofs.setflags(write=False)
        self.dof_coords.setflags(write=False)
        self.n_dofs = len(self.dof_coords)
        self._cache = {}

    def __repr__(self):
        return f"FeSpace(P{self.degree}, n_dofs={self.n_dofs})"

    @cached_property
    def areas(self) -> np.ndarray:
        return self.mesh.signed_areas

    @cached_property
    def grad_lambda(self) -> np.ndarray:
        """Gradients of the barycentric coordinates, shape ``(T, 3, 2)``."""
        p = self.mesh.vertices[self.mesh.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        Jinv = np.linalg.inv(J)
        g = np.empty((len(p), 3, 2))
        g[:, 1:] = Jinv
        g[:, 0] = -Jinv[:, 0] - Jinv[:, 1]
        return g

    def physical_points(self, lam: np.ndarray) -> np.ndarray:
        """Map barycentric points ``(nq, 3)`` to every triangle -> ``(T, nq, 2)``."""
        key = ("points", lam.tobytes())
        if key not in self._cache:
            p = self.mesh.vertices[self.mesh.triangles]
            xq = np.einsum("qk,tkd->tqd", lam, p)
            xq.setflags(write=False)
            self._cache[key] = xq
        return self._cache[key]

    def tabulate(self, lam: np.ndarray):
        """Basis values ``(nq, nloc)`` and physical gradients ``(T, nq, nloc, 2)``."""
        key = lam.tobytes()
        if key not in self._cache:
            phi = basis_values(self.degree, lam)
            dphi = basis_dlam(self.degree, lam)
            grads = np.einsum("qik,tkd->tqid", dphi, self.grad_lambda)
            self._cache[key] = (phi, grads)
        return self._cache[key]

    def gradient_matrix(self, lam: np.ndarray) -> np.ndarray:
        """Physical gradients rearranged to ``(T, nloc, nq * 2)`` for batched products."""
        key = ("gradient_matrix", lam.tobytes())
        if key not in self._cache:
            _, grads = self.tabulate(lam)
            T, nq, nloc, _ = grads.shape
            G = np.ascontiguousarray(grads.transpose(0, 2, 1, 3).reshape(T, nloc, nq * 2))
            G.setflags(write=False)
            self._cache[key] = G
        return self._cache[key]

    def quadrature(self, order: int):
        """``(rule, physical points (T,nq,2), weights (T,nq) incl. area)``."""
        key = ("quadrature", order)
        if key not in self._cache:
            rule = quadrature_rule(order)
            xq = self.physical_points(rule.points)
            wq = self.areas[:, None] * rule.weights[None, :]
            xq.setflags(write=False)
            wq.setflags(write=False)
            self._cache[key] = (rule, xq, wq)
        return self._cache[key]

    def locate(self, point, tol: float = 1e-12):
        """Triangle index and barycentrics of ``point`` (brute-force scan)."""
        x = np.asarray(point, dtype=float)
        p0 = self.mesh.vertices[self.mesh.triangles[:, 0]]
        lam12 = np.einsum("tkd,td->tk", self.grad_lambda[:, 1:], x - p0)
        lam = np.column_stack([1.0 - lam12.sum(axis=1), lam12])
        inside = np.nonzero(np.all(lam >= -tol, axis=1))[0]
        if len(inside) == 0:
            raise LocationError(f"point {tuple(x)} lies outside the mesh")
        t = int(inside[0])
        return t, lam[t]


def build_space(mesh: Mesh, degree: int) -> FeSpace:
    return FeSpace(mesh, degree)


class FeFunction:
    """Coefficient vector over an :class:`FeSpace`."""

    def __init__(self, space: FeSpace, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.n_dofs,):
            raise ValueError(f"expected {space.n_dofs} coefficients, got shape {coeffs.shape}")
        self.space = space
        self.coeffs = coeffs

    def __repr__(self):
        return f"FeFunction({self.space!r})"

    def values_at(self, lam: np.ndarray) -> np.ndarray:
        """Values at barycentric points on every triangle -> ``(T, nq)``."""
        phi, _ = self.space.tabulate(lam)
        return self.coeffs[self.space.element_dofs] @ phi.T

    def gradients_at(self, lam: np.ndarray) -> np.ndarray:
        """Gradients at barycentric points on every triangle -> ``(T, nq, 2)``."""
        G = self.space.gradient_matrix(lam)
        c = self.coeffs[self.space.element_dofs]
        return np.matmul(c[:, None, :], G).reshape(len(c), len(lam), 2)

    def evaluate(self, point):
        return evaluate(self, point)


def interpolate(space: FeSpace, field, t: float = 0.0) -> FeFunction:
    """Lagrange interpolant: ``coeffs[i] = field(x_i, y_i, t)``."""
    x, y = space.dof_coords[:, 0], space.dof_coords[:, 1]
    vals = np.broadcast_to(np.asarray(field(x, y, t), dtype=float), x.shape).copy()
    bad = np.nonzero(~np.isfinite(vals))[0]
    if len(bad):
        i = int(bad[0])
        raise EvaluationError(f"non-finite field value at dof {i} "
                              f"({space.dof_coords[i, 0]:.6g}, {space.dof_coords[i, 1]:.6g})")
    return FeFunction(space, vals)


def evaluate(f: FeFunction, point):
    """Value and gradient of ``f`` at ``point``."""
    space = f.space
    t, lam = space.locate(point)
    lam = lam[None, :]
    phi = basis_values(space.degree, lam)[0]
    dphi = basis_dlam(space.degree, lam)[0] @ space.grad_lambda[t]
    c = f.coeffs[space.element_dofs[t]]
    return float(c @ phi), c @ dphi


def write_fe_csv(f: FeFunction, path, time: float | None = None, append: bool = False) -> None:
    """CSV ``dof_index,x,y,value`` (plus a leading ``time`` column for snapshots)."""
    xy = f.space.dof_coords
    lines = []
    if not append:
        lines.append(("time," if time is not None else "") + "dof_index,x,y,value")
    prefix = f"{time:.17g}," if time is not None else ""
    for i, ((x, y), v) in enumerate(zip(xy, f.coeffs)):
        lines.append(f"{prefix}{i},{x:.17g},{y:.17g},{v:.17g}")
    with open(path, "a" if append else "w") as fh:
        fh.write("\n".join(lines) + "\n")
