"""Time stepping: backward Euler for linear parabolic problems and the
linearised Crank-Nicolson pressure/concentration scheme."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import (DATA_ORDER, assemble_boundary_load, assemble_convection,
                       assemble_flux_load, assemble_load, assemble_mass, assemble_stiffness,
                       lumped_mass)
from .dispersion import DispersionParams
from .fe import FeFunction, FeSpace, build_space, interpolate, write_fe_csv
from .mesh import generate_disk_mesh, generate_square_mesh
from .sparse import SolverError, SparseMatrix, solve_general, solve_spd

log = logging.getLogger(__name__)


class TimeStepError(RuntimeError):
    pass


def _steps(final_time: float, dt: float) -> int:
    if dt <= 0:
        raise ValueError("time step must be positive")
    n = int(round(final_time / dt))
    if n < 1 or abs(n * dt - final_time) > 1e-12 * max(1.0, final_time):
        raise ValueError(f"dt={dt!r} does not divide T={final_time!r}")
    return n


def _axpy(a: float, A: SparseMatrix, b: float, B: SparseMatrix) -> SparseMatrix:
    """``a*A + b*B``; cheap when both share one sparsity pattern."""
    if A.indptr is B.indptr or (A.nnz == B.nnz and np.array_equal(A.indptr, B.indptr)
                                and np.array_equal(A.indices, B.indices)):
        return SparseMatrix(A.indptr, A.indices, a * A.data + b * B.data, A.shape)
    return A * a + B * b


def _time_grid(n_steps, dt):
    return np.arange(n_steps + 1) * dt


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    final: FeFunction | None = None
    iterations: int = 0

    def write_csv(self, path) -> None:
        for k, (t, f) in enumerate(zip(self.times, self.snapshots)):
            write_fe_csv(f, path, time=t, append=k > 0)


# ------------------------------------------------------------ linear problem

@dataclass(frozen=True)
class LinearParabolicProblem:
    """``phi_t - div(A grad phi) [+ phi] = f - div g`` with ``A grad phi . n = g . n``.

    ``coefficient`` is a scalar/tensor field ``A(x, y, t)``; ``flux`` is a
    vector field ``g(x, y, t) -> (gx, gy)`` or ``None``; ``initial`` is
    ``phi0(x, y)``. ``zeroth_order`` toggles the ``+ phi`` term.
    """
    coefficient: object
    source: Callable
    initial: Callable
    final_time: float
    flux: Callable | None = None
    zeroth_order: bool = False
    domain: str = "square"

    def __post_init__(self):
        if not self.final_time > 0:
            raise ValueError("final time must be positive")


def backward_euler_solve(problem: LinearParabolicProblem, space: FeSpace, dt: float,
                         store_every: int | None = None, lumped: bool = False,
                         tol: float = 1e-10, callback=None) -> Trajectory:
    """Backward Euler with coefficient and data frozen at the new time level.

    The initial state is the Lagrange interpolant of ``problem.initial``.
    ``callback(step, t, phi_h)`` is invoked at every time level including 0.
    """
    n_steps = _steps(problem.final_time, dt)
    M = lumped_mass(space) if lumped else assemble_mass(space)
    M_rhs = M
    if problem.zeroth_order:
        M_lhs = _axpy(1.0 + dt, M, 0.0, M)
    else:
        M_lhs = M
    c = interpolate(space, lambda x, y, t: problem.initial(x, y)).coeffs
    traj = Trajectory()
    times = _time_grid(n_steps, dt)
    if callback is not None:
        callback(0, 0.0, FeFunction(space, c))
    if store_every:
        traj.times.append(0.0)
        traj.snapshots.append(FeFunction(space, c.copy()))
    c_old = c
    for n in range(n_steps):
        t1 = times[n + 1]
        K = assemble_stiffness(space, problem.coefficient, t1)
        A = _axpy(1.0, M_lhs, dt, K) if not lumped else M_lhs + K * dt
        b = M_rhs @ c + dt * assemble_load(space, problem.source, t1)
        if problem.flux is not None:
            b += dt * assemble_flux_load(space, problem.flux, t1)
        guess = 2.0 * c - c_old
        c_new, rep = solve_spd(A, b, tol=tol, x0=guess, check_symmetry=(n == 0))
        if not rep.converged:
            raise TimeStepError(f"backward Euler solve failed at step {n + 1} "
                                f"(residual {rep.residual_norm:.3e})")
        traj.iterations += rep.iterations
        c_old, c = c, c_new
        if callback is not None:
            callback(n + 1, t1, FeFunction(space, c))
        if store_every and ((n + 1) % store_every == 0 or n + 1 == n_steps):
            traj.times.append(float(t1))
            traj.snapshots.append(FeFunction(space, c.copy()))
    traj.final = FeFunction(space, c)
    return traj


# ----------------------------------------------------------- coupled system

@dataclass(frozen=True)
class CoupledProblem:
    """Miscible displacement data.

    Pressure: ``-div((k / mu(c)) grad P) = pressure_source`` with
    ``u . n = normal_velocity`` and ``u = -(k / mu(c)) grad P``.
    Concentration: ``porosity c_t - div(D(u) grad c) + u . grad c
    + production c = transport_source`` with ``D(u) grad c . n = dispersive_flux``.
    Boundary data are callables ``(x, y, t, nx, ny)``.
    """
    viscosity: Callable
    permeability: object
    dispersion: DispersionParams
    pressure_source: Callable
    transport_source: Callable
    initial: Callable
    final_time: float
    normal_velocity: Callable | None = None
    dispersive_flux: Callable | None = None
    porosity: float = 1.0
    production: Callable | None = None
    domain: str = "disk"
    mu_min: float = 0.1

    def __post_init__(self):
        if not self.final_time > 0:
            raise ValueError("final time must be positive")
        if not self.mu_min > 0:
            raise ValueError("viscosity floor must be positive")


@dataclass
class ClampLog:
    events: int = 0

    def record(self, n: int) -> None:
        if n:
            self.events += int(n)
            log.warning("viscosity clamped at %d quadrature points", n)


def _mobility(problem: CoupledProblem, c_vals, xq, clamp_log: ClampLog | None):
    mu = np.asarray(problem.viscosity(c_vals), dtype=float)
    low = mu < problem.mu_min
    if np.any(low):
        if clamp_log is not None:
            clamp_log.record(int(np.sum(low)))
        mu = np.maximum(mu, problem.mu_min)
    k = problem.permeability
    k = k(xq[..., 0], xq[..., 1]) if callable(k) else k
    return k / mu


class DiscreteVelocity:
    """Darcy velocity ``-(k / mu(c_h)) grad P_h``, evaluated element by element."""

    def __init__(self, pressure: FeFunction, concentration: FeFunction,
                 problem: CoupledProblem, clamp_log: ClampLog | None = None):
        if pressure.space.mesh is not concentration.space.mesh:
            raise ValueError("pressure and concentration must share one mesh")
        self.pressure = pressure
        self.concentration = concentration
        self.problem = problem
        self.space = concentration.space
        self.clamp_log = clamp_log
        self.solve_report = None

    def values_at(self, lam: np.ndarray) -> np.ndarray:
        grad_p = self.pressure.gradients_at(lam)
        c_vals = self.concentration.values_at(lam)
        xq = self.space.physical_points(lam)
        mob = _mobility(self.problem, c_vals, xq, self.clamp_log)
        return -mob[..., None] * grad_p

    def __call__(self, point) -> np.ndarray:
        t, lam = self.space.locate(point)
        vals = self.values_at(lam[None, :])
        return vals[t, 0]


def _load_of_one(space: FeSpace) -> np.ndarray:
    if "load_one" not in space._cache:
        space._cache["load_one"] = assemble_load(space, 1.0, order=DATA_ORDER)
    return space._cache["load_one"]


def pressure_solve(space_p: FeSpace, c_h: FeFunction, problem: CoupledProblem, t: float,
                   tol: float = 1e-10, compat_tol: float = 1e-8, clamp_log=None, x0=None):
    """Mean-zero pressure and the induced Darcy velocity at time ``t``.

    ``compat_tol`` bounds the solvability defect ``|int q - oint psi|``
    relative to ``int |q| + oint |psi|`` (quadrature of the data).
    """
    if space_p.mesh is not c_h.space.mesh:
        raise ValueError("pressure space must live on the concentration mesh")
    if space_p.degree != c_h.space.degree + 1:
        raise ValueError("pressure degree must be concentration degree + 1")
    if not np.all(np.isfinite(c_h.coeffs)):
        raise TimeStepError("non-finite concentration passed to the pressure solve")
    rule, xq, _ = space_p.quadrature(4)
    mob = _mobility(problem, c_h.values_at(rule.points), xq, clamp_log)
    K = assemble_stiffness(space_p, lambda x, y, tt: mob, t)
    b = assemble_load(space_p, problem.pressure_source, t, order=DATA_ORDER)
    scale = float(np.sum(np.abs(b)))
    if problem.normal_velocity is not None:
        bn = assemble_boundary_load(space_p, problem.normal_velocity, t)
        b = b - bn
        scale += float(np.sum(np.abs(bn)))
    defect = abs(float(b.sum()))
    if scale > 0 and defect > compat_tol * scale:
        raise TimeStepError(f"pressure data incompatible at t={t}: defect {defect:.3e} "
                            f"(relative {defect / scale:.3e})")
    p, rep = solve_spd(K, b, tol=tol, nullspace_mean_zero=True,
                       mass_weights=_load_of_one(space_p), x0=x0, check_symmetry=False)
    if not rep.converged:
        raise SolverError(f"pressure solve did not converge at t={t} "
                          f"(residual {rep.residual_norm:.3e}, {rep.iterations} iterations)")
    P = FeFunction(space_p, p)
    u = DiscreteVelocity(P, c_h, problem, clamp_log)
    u.solve_report = rep
    return P, u


def transport_operator(space_c: FeSpace, velocity, problem: CoupledProblem, t: float):
    """``K_{D(u)} + C_u (+ production mass)`` at time ``t``."""
    K = assemble_stiffness(space_c, problem.dispersion, t, velocity=velocity)
    C = assemble_convection(space_c, velocity, t)
    L = _axpy(1.0, K, 1.0, C)
    if problem.production is not None:
        L = _axpy(1.0, L, 1.0, assemble_mass(space_c, problem.production, t))
    return L


def cn_transport_step(space_c: FeSpace, c_n: FeFunction, velocity, problem: CoupledProblem,
                      t_n: float, dt: float, tol: float = 1e-10, step_index: int = 0):
    """One Crank-Nicolson step for the concentration with a frozen velocity.

    The operator and data are evaluated at ``t_n + dt/2``; ``velocity`` is the
    (extrapolated) velocity at that time.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    t_half = t_n + 0.5 * dt
    M = _porosity_mass(space_c, problem.porosity)
    L = transport_operator(space_c, velocity, problem, t_half)
    A = _axpy(1.0, M, 0.5 * dt, L)
    B = _axpy(1.0, M, -0.5 * dt, L)
    b = B @ c_n.coeffs + dt * assemble_load(space_c, problem.transport_source, t_half,
                                            order=DATA_ORDER)
    if problem.dispersive_flux is not None:
        b += dt * assemble_boundary_load(space_c, problem.dispersive_flux, t_half)
    try:
        c, rep = solve_general(A, b, tol=tol, x0=c_n.coeffs)
    except SolverError as exc:
        raise TimeStepError(f"transport solve failed at step {step_index}: {exc}") from exc
    if not rep.converged:
        raise TimeStepError(f"transport solve failed at step {step_index} "
                            f"(residual {rep.residual_norm:.3e})")
    return FeFunction(space_c, c), rep


def _porosity_mass(space: FeSpace, porosity: float) -> SparseMatrix:
    key = ("porosity_mass", porosity)
    if key not in space._cache:
        space._cache[key] = assemble_mass(space, porosity)
    return space._cache[key]


@dataclass
class CoupledResult:
    pressure: FeFunction
    velocity: DiscreteVelocity
    concentration: FeFunction
    n_steps: int
    pressure_iterations: int
    transport_iterations: int
    clamp_events: int


def build_mesh(domain: str, M: int):
    if domain == "disk":
        return generate_disk_mesh(M)
    if domain == "square":
        return generate_square_mesh(M)
    raise ValueError(f"unknown domain {domain!r}")


def run_coupled(problem: CoupledProblem, M: int, r: int = 1, dt: float = 2.0 ** -10,
                tol: float = 1e-10, callback=None) -> CoupledResult:
    """Integrate the coupled system to ``problem.final_time``.

    Each step extrapolates ``c* = (3 c^n - c^{n-1}) / 2`` (``c^0`` on the first
    step), solves for the pressure with ``mu(c*)`` at ``t^{n+1/2}`` and advances
    the concentration by Crank-Nicolson with the resulting velocity. The
    returned pressure/velocity are recomputed from the final concentration.
    """
    n_steps = _steps(problem.final_time, dt)
    mesh = build_mesh(problem.domain, M)
    space_c = build_space(mesh, r)
    space_p = build_space(mesh, r + 1)
    clamp = ClampLog()
    c_prev = None
    c = interpolate(space_c, lambda x, y, t: problem.initial(x, y))
    p_iters = t_iters = 0
    p_guess = None
    for n in range(n_steps):
        t_n = n * dt
        if c_prev is None:
            c_star = c
        else:
            c_star = FeFunction(space_c, 1.5 * c.coeffs - 0.5 * c_prev.coeffs)
        P, u_half = pressure_solve(space_p, c_star, problem, t_n + 0.5 * dt, tol=tol,
                                   clamp_log=clamp, x0=p_guess)
        p_guess = P.coeffs
        p_iters += u_half.solve_report.iterations
        c_new, rep = cn_transport_step(space_c, c, u_half, problem, t_n, dt, tol=tol,
                                       step_index=n + 1)
        t_iters += rep.iterations
        c_prev, c = c, c_new
        if callback is not None:
            callback(n + 1, (n + 1) * dt, c, P)
    P, u = pressure_solve(space_p, c, problem, n_steps * dt, tol=tol, clamp_log=clamp,
                          x0=p_guess)
    return CoupledResult(P, u, c, n_steps, p_iters, t_iters, clamp.events)
