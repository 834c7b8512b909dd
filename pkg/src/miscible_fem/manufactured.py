"""Exact solutions, derived data and error norms for the two test problems.

Problem "ex51" is a linear parabolic equation on the unit square with a
Lipschitz (but not C^2) scalar coefficient and no closed-form solution.
Problem "ex52" is the coupled pressure/concentration system on the disk with
manufactured solution

    p = 100 (x - t)^2 e^{-t},    c = 0.5 + 0.2 e^{-t} cos(x) sin(y),

viscosity ``mu(c) = 1 + c``, Darcy velocity ``u = -(2 / mu) grad p`` and the
isotropic dispersion ``D(u) = (1 + 0.1 |u|) I``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .dispersion import example51_coefficient, example51_coefficient_ds
from .fe import FeFunction, quadrature_rule

# ---------------------------------------------------------------- ex51 data


def forcing51(x, y, t):
    return np.exp(t) * np.sin(np.pi * x) + 0.0 * y


def initial51(x, y):
    return np.cos(np.pi * x) * np.cos(np.pi * y)


# ---------------------------------------------------------------- ex52 data

EX52_DISPERSIVITY = 0.1
EX52_PERMEABILITY = 2.0


def viscosity52(c):
    return 1.0 + c


class Fields52(NamedTuple):
    p: np.ndarray
    grad_p: tuple
    c: np.ndarray
    grad_c: tuple
    dc_dt: np.ndarray
    u: tuple
    speed: np.ndarray


def exact52(x, y, t) -> Fields52:
    E = np.exp(-t)
    p = 100.0 * (x - t) ** 2 * E
    px = 200.0 * (x - t) * E
    py = np.zeros_like(px + y)
    cs = np.cos(x) * np.sin(y)
    c = 0.5 + 0.2 * E * cs
    cx = -0.2 * E * np.sin(x) * np.sin(y)
    cy = 0.2 * E * np.cos(x) * np.cos(y)
    ct = -0.2 * E * cs
    mu = viscosity52(c)
    u1 = -EX52_PERMEABILITY * px / mu
    u2 = np.zeros_like(u1)
    return Fields52(p, (px, py), c, (cx, cy), ct, (u1, u2), np.abs(u1))


class Forcing52(NamedTuple):
    f: np.ndarray
    g: np.ndarray
    psi: np.ndarray
    flux: np.ndarray


def forcing52(x, y, t, nx=0.0, ny=0.0) -> Forcing52:
    """Right-hand sides and boundary data matching :func:`exact52`.

    ``f = -div(grad p / mu(c))`` (pressure source), ``g`` the transport
    source, ``psi = u . n`` and ``flux = D(u) grad c . n`` for the normal
    ``(nx, ny)``.
    """
    E = np.exp(-t)
    s = x - t
    px = 200.0 * s * E
    pxx = 200.0 * E
    cs = np.cos(x) * np.sin(y)
    c = 0.5 + 0.2 * E * cs
    cx = -0.2 * E * np.sin(x) * np.sin(y)
    cy = 0.2 * E * np.cos(x) * np.cos(y)
    ct = -0.2 * E * cs
    lap_c = -0.4 * E * cs
    mu = viscosity52(c)

    f = -(pxx / mu - px * cx / mu ** 2)
    k = EX52_PERMEABILITY
    u1 = -k * px / mu
    du1_dx = -k * (pxx / mu - px * cx / mu ** 2)
    du1_dy = k * px * cy / mu ** 2
    sgn = np.sign(u1)
    a = EX52_DISPERSIVITY
    D = 1.0 + a * np.abs(u1)
    Dx = a * sgn * du1_dx
    Dy = a * sgn * du1_dy
    g = ct - (D * lap_c + Dx * cx + Dy * cy) + u1 * cx
    psi = u1 * nx
    flux = D * (cx * nx + cy * ny)
    return Forcing52(f, g, psi, flux)


def initial52(x, y):
    return exact52(x, y, 0.0).c


# ------------------------------------------------- projection-lab solution

def lab_phi(x, y, t):
    return np.exp(-t) * np.cos(np.pi * x) * np.cos(np.pi * y)


def lab_phi_grad(x, y, t):
    E = np.exp(-t)
    return (-np.pi * E * np.sin(np.pi * x) * np.cos(np.pi * y),
            -np.pi * E * np.cos(np.pi * x) * np.sin(np.pi * y))


def lab_source(x, y, t):
    """Source for ``phi_t - div(A grad phi) + phi = f`` with A the ex51 coefficient.

    ``phi_t + phi = 0`` and ``-A lap(phi) = 2 pi^2 A phi``; the remaining
    term is ``-A'(s) (phi_x + phi_y)`` with ``s = x + y - t``.
    """
    s = x + y - t
    A = example51_coefficient(x, y, t)
    dA = example51_coefficient_ds(s)
    gx, gy = lab_phi_grad(x, y, t)
    return 2.0 * np.pi ** 2 * A * lab_phi(x, y, t) - dA * (gx + gy)


@dataclass(frozen=True)
class ExactSolution:
    value: Callable
    gradient: Callable
    time_derivative: Callable | None = None


LAB_SOLUTION = ExactSolution(lab_phi, lab_phi_grad, lambda x, y, t: -lab_phi(x, y, t))
EX52_CONCENTRATION = ExactSolution(
    lambda x, y, t: exact52(x, y, t).c,
    lambda x, y, t: exact52(x, y, t).grad_c,
    lambda x, y, t: exact52(x, y, t).dc_dt,
)
EX52_PRESSURE = ExactSolution(
    lambda x, y, t: exact52(x, y, t).p,
    lambda x, y, t: exact52(x, y, t).grad_p,
)


def exact_velocity52(x, y, t):
    return exact52(x, y, t).u


# ------------------------------------------------------------ error norms

@dataclass(frozen=True)
class ErrorReport:
    kind: str
    value: float
    sampling: str


# Linf sample set: the three vertices of every triangle plus its
# order-4 quadrature points
_LINF_POINTS = np.vstack([np.eye(3), quadrature_rule(4).points])


def _values_at(fe, lam):
    vals = fe.values_at(lam)
    return vals


def _exact_at(exact, xq, t, shape):
    val = exact(xq[..., 0], xq[..., 1], t)
    if isinstance(val, tuple):
        return np.stack([np.broadcast_to(v, shape) for v in val], axis=-1)
    return np.broadcast_to(np.asarray(val, dtype=float), shape)


def pointwise_difference(fe, exact, t, lam):
    """``fe - exact`` at barycentric points of every triangle (Euclidean norm for vectors)."""
    space = fe.space
    vals = _values_at(fe, lam)
    xq = space.physical_points(lam)
    ex = _exact_at(exact, xq, t, xq.shape[:-1])
    diff = vals - ex
    if diff.ndim == 3:
        diff = np.linalg.norm(diff, axis=-1)
    return diff


def error_norm(fe, exact, t: float = 0.0, kind: str = "Linf",
               exact_grad=None) -> ErrorReport:
    """Error of an FE function (or element-wise field with ``values_at``).

    ``Linf`` samples all triangle vertices and order-4 quadrature points;
    ``L2`` and ``H1semi`` use order-6 quadrature. ``exact`` may be ``None``
    to measure the norm of ``fe`` itself.
    """
    if exact is None:
        exact = _zero
        exact_grad = exact_grad or (lambda x, y, t: (0.0, 0.0))
    space = fe.space
    if kind == "Linf":
        diff = pointwise_difference(fe, exact, t, _LINF_POINTS)
        return ErrorReport(kind, float(np.max(np.abs(diff))), "vertices+order-4 points")
    rule, xq, wq = space.quadrature(6)
    if kind == "L2":
        diff = pointwise_difference(fe, exact, t, rule.points)
        return ErrorReport(kind, float(np.sqrt(np.sum(wq * diff ** 2))), "order-6 quadrature")
    if kind == "H1semi":
        if exact_grad is None:
            raise ValueError("H1semi error needs exact_grad")
        g = fe.gradients_at(rule.points)
        gx, gy = exact_grad(xq[..., 0], xq[..., 1], t)
        d2 = (g[..., 0] - gx) ** 2 + (g[..., 1] - gy) ** 2
        return ErrorReport(kind, float(np.sqrt(np.sum(wq * d2))), "order-6 quadrature")
    raise ValueError(f"unknown norm kind {kind!r}")


def _zero(x, y, t):
    return 0.0


def lq_norm(fe: FeFunction, q: float, t: float = 0.0, exact=None) -> float:
    """``||fe - exact||_{L^q}`` by order-6 quadrature."""
    rule, _, wq = fe.space.quadrature(6)
    diff = pointwise_difference(fe, exact or _zero, t, rule.points)
    return float(np.sum(wq * np.abs(diff) ** q) ** (1.0 / q))


def w1q_norm(fe: FeFunction, q: float) -> float:
    """``(||f||_q^q + ||grad f||_q^q)^{1/q}`` with the Euclidean gradient norm."""
    rule, _, wq = fe.space.quadrature(6)
    v = fe.values_at(rule.points)
    g = np.linalg.norm(fe.gradients_at(rule.points), axis=-1)
    return float(np.sum(wq * (np.abs(v) ** q + g ** q)) ** (1.0 / q))


def vertex_difference(fine: FeFunction, coarse: FeFunction) -> float:
    """Max difference at the vertices of the coarse mesh (meshes must be nested)."""
    cv = coarse.space.mesh.vertices
    fv = fine.space.mesh.vertices
    lookup = {tuple(p): i for i, p in enumerate(fv)}
    try:
        idx = np.array([lookup[tuple(p)] for p in cv])
    except KeyError as exc:
        raise ValueError("coarse vertex missing from the fine mesh; meshes not nested") from exc
    return float(np.max(np.abs(fine.coeffs[idx] - coarse.coeffs[:len(cv)])))
