"""Convergence studies, the projection stability lab and the tensor probes.

Every study takes a :class:`StudyConfig` and returns a report object that
can write a CSV (deterministic, no timestamps) and a JSON summary (runtimes,
iteration counts and a timestamp).
"""
from __future__ import annotations

import datetime
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .assembly import l2_project, ritz_project
from .dispersion import (DispersionParams, bear_scheidegger, example51_coefficient,
                         lipschitz_probe, mixed_derivative_probe)
from .fe import FeFunction, build_space
from .manufactured import (exact52, exact_velocity52, error_norm, forcing51, forcing52,
                           initial51, initial52, lab_phi, lab_phi_grad, lab_source, lq_norm,
                           vertex_difference, viscosity52, w1q_norm, EX52_DISPERSIVITY,
                           EX52_PERMEABILITY)
from .mesh import generate_square_mesh
from .timestep import (CoupledProblem, LinearParabolicProblem, backward_euler_solve,
                       run_coupled)

EXPERIMENTS = ("ex51", "ex52", "projection-lab", "tensor-probe")
DT_POLICIES = ("h2/2", "h2/4", "h", "fixed")
REFERENCE_EX52_DT = 2.0 ** -14
DEFAULT_PROBE_EPS = (0.1, 0.05, 0.025, 0.0125, 0.00625)

_DEFAULTS = {
    "ex51": dict(mesh_levels=(16, 32, 64, 128), dt_policy="h2/2"),
    "ex52": dict(mesh_levels=(16, 32, 64), dt_policy="fixed", dt=2.0 ** -10),
    "projection-lab": dict(mesh_levels=(8, 16, 32, 64), dt_policy="h2/4"),
    "tensor-probe": dict(mesh_levels=(), dt_policy="fixed"),
}


class ConfigError(ValueError):
    pass


class RateError(ValueError):
    pass


@dataclass(frozen=True)
class StudyConfig:
    experiment: str
    mesh_levels: tuple = ()
    degree: int = 1
    dt: float | None = None
    dt_policy: str = "fixed"
    final_time: float = 1.0
    p: float = 5.0
    q: float = 5.0
    seed: int = 0
    output: str | None = None
    mass_lumping: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; "
                              f"expected one of {', '.join(EXPERIMENTS)}")
        if self.dt_policy not in DT_POLICIES:
            raise ConfigError(f"unknown dt_policy {self.dt_policy!r}")
        if not self.final_time > 0:
            raise ConfigError("final_time must be positive")
        if self.degree not in (1, 2):
            raise ConfigError("degree must be 1 or 2")
        if self.dt_policy == "fixed" and self.experiment != "tensor-probe":
            if self.dt is None or not self.dt > 0:
                raise ConfigError("dt_policy 'fixed' needs a positive dt")
        levels = tuple(int(m) for m in self.mesh_levels)
        object.__setattr__(self, "mesh_levels", levels)
        if self.experiment != "tensor-probe":
            if len(levels) < 3:
                raise ConfigError("at least 3 mesh levels are needed for a rate")
            if any(b <= a for a, b in zip(levels, levels[1:])):
                raise ConfigError("mesh levels must be strictly increasing")
        if self.p < 1 or self.q < 1:
            raise ConfigError("exponents p and q must be >= 1")

    @classmethod
    def default(cls, experiment: str, **overrides) -> StudyConfig:
        if experiment not in _DEFAULTS:
            raise ConfigError(f"unknown experiment {experiment!r}")
        values = dict(_DEFAULTS[experiment])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(experiment=experiment, **values)

    @classmethod
    def from_dict(cls, data: dict) -> StudyConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "experiment" not in data:
            raise ConfigError("config needs an 'experiment' key")
        data = dict(data)
        return cls.default(data.pop("experiment"), **data)

    @classmethod
    def from_json(cls, path) -> StudyConfig:
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def reference_setup(self) -> StudyConfig:
        """Reference mesh lists and, for ex52, dt = 2^-14."""
        if self.experiment == "ex52":
            return replace(self, mesh_levels=(16, 32, 64), dt_policy="fixed", dt=REFERENCE_EX52_DT)
        if self.experiment == "ex51":
            return replace(self, mesh_levels=(16, 32, 64, 128))
        return self


def time_step(config: StudyConfig, h: float) -> float:
    policy = config.dt_policy
    if policy == "h2/2":
        return 0.5 * h * h
    if policy == "h2/4":
        return 0.25 * h * h
    if policy == "h":
        return h
    return float(config.dt)


def rate(errors, hs) -> list:
    """Observed orders ``ln(e_k / e_{k+1}) / ln(h_k / h_{k+1})`` for consecutive pairs."""
    errors = [float(e) for e in errors]
    hs = [float(h) for h in hs]
    if len(errors) != len(hs) or len(errors) < 2:
        raise RateError("errors and hs need equal lengths of at least 2")
    if any(not (e > 0) or not math.isfinite(e) for e in errors):
        raise RateError("rates are undefined for zero, negative or non-finite errors")
    if any(not (h > 0) for h in hs):
        raise RateError("mesh sizes must be positive")
    out = []
    for (e0, e1), (h0, h1) in zip(zip(errors, errors[1:]), zip(hs, hs[1:])):
        if h0 == h1:
            raise RateError("consecutive mesh sizes must differ")
        out.append(math.log(e0 / e1) / math.log(h0 / h1))
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _write_json(summary: dict, path) -> None:
    summary = dict(summary)
    summary["timestamp"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


class _Report:
    header: tuple = ()

    def csv_rows(self):
        raise NotImplementedError

    def csv_text(self) -> str:
        return _csv_text(self.header, self.csv_rows())

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.csv_text())

    def summary(self) -> dict:
        raise NotImplementedError

    def write_json(self, path) -> None:
        _write_json(self.summary(), path)


# ------------------------------------------------------------ problems

def example51_problem(final_time: float = 1.0) -> LinearParabolicProblem:
    return LinearParabolicProblem(example51_coefficient, forcing51, initial51, final_time,
                                  domain="square")


def example52_problem(final_time: float = 1.0) -> CoupledProblem:
    """Coupled disk problem whose exact solution is :func:`exact52`.

    The weak pressure form carries the mobility ``k / mu`` with ``k = 2``, so
    the pressure source is ``k f`` where ``f = -div(grad p / mu)``.
    """
    k = EX52_PERMEABILITY
    return CoupledProblem(
        viscosity=viscosity52,
        permeability=k,
        dispersion=DispersionParams.isotropic(1.0, EX52_DISPERSIVITY),
        pressure_source=lambda x, y, t: k * forcing52(x, y, t).f,
        transport_source=lambda x, y, t: forcing52(x, y, t).g,
        initial=initial52,
        final_time=final_time,
        normal_velocity=lambda x, y, t, nx, ny: forcing52(x, y, t, nx, ny).psi,
        dispersive_flux=lambda x, y, t, nx, ny: forcing52(x, y, t, nx, ny).flux,
        domain="disk",
    )


def _example52_concentration(x, y, t):
    return exact52(x, y, t).c


# -------------------------------------------------------- convergence

@dataclass
class ConvergenceReport(_Report):
    experiment: str
    columns: tuple
    rows: list
    rates: dict
    pair_rates: dict
    monotone: dict
    metadata: dict = field(default_factory=dict)

    @property
    def header(self):
        return self.columns

    def csv_rows(self):
        return self.rows

    def summary(self) -> dict:
        return {"experiment": self.experiment, "rates": self.rates,
                "pair_rates": self.pair_rates, "monotone": self.monotone,
                "columns": list(self.columns), "rows": [list(r) for r in self.rows],
                **self.metadata}


def run_convergence(config: StudyConfig, progress: Callable | None = None) -> ConvergenceReport:
    if config.experiment == "ex51":
        return _run_ex51(config, progress)
    if config.experiment == "ex52":
        return _run_ex52(config, progress)
    raise ConfigError(f"run_convergence does not handle {config.experiment!r}")


def _note(progress, msg):
    if progress is not None:
        progress(msg)


def _run_ex51(config: StudyConfig, progress) -> ConvergenceReport:
    problem = example51_problem(config.final_time)
    finals, runtimes, iterations, dts = {}, {}, {}, {}
    for M in config.mesh_levels:
        h = 1.0 / M
        dt = time_step(config, h)
        start = time.perf_counter()
        space = build_space(generate_square_mesh(M), config.degree)
        traj = backward_euler_solve(problem, space, dt, lumped=config.mass_lumping)
        finals[M] = traj.final
        runtimes[M] = time.perf_counter() - start
        iterations[M] = traj.iterations
        dts[M] = dt
        _note(progress, f"ex51 M={M}: {runtimes[M]:.1f}s, {traj.iterations} CG iterations")
    levels = config.mesh_levels
    hs = [1.0 / M for M in levels[:-1]]
    diffs = [vertex_difference(finals[b], finals[a]) for a, b in zip(levels, levels[1:])]
    pair = rate(diffs, hs)
    rows = [(h, d, None if k == 0 else pair[k - 1]) for k, (h, d) in enumerate(zip(hs, diffs))]
    monotone = all(b < a for a, b in zip(diffs, diffs[1:]))
    return ConvergenceReport(
        "ex51", ("h", "diff_Linf", "rate"), rows,
        rates={"diff_Linf": pair[-1]}, pair_rates={"diff_Linf": pair},
        monotone={"diff_Linf": monotone},
        metadata={"mesh_levels": list(levels), "degree": config.degree,
                  "mass_lumping": config.mass_lumping, "dt": _keyed(dts),
                  "runtime_s": _keyed(runtimes), "cg_iterations": _keyed(iterations),
                  "clamp_events": 0})


def _keyed(d):
    return {str(k): v for k, v in d.items()}


def _run_ex52(config: StudyConfig, progress) -> ConvergenceReport:
    problem = example52_problem(config.final_time)
    T = config.final_time
    err_u, err_c = [], []
    runtimes, p_iters, t_iters, clamps, dts = {}, {}, {}, {}, {}
    levels = config.mesh_levels
    # nominal mesh size: spacing of the M boundary nodes on the circle of radius 1/2
    hs = [math.pi / M for M in levels]
    for M, h in zip(levels, hs):
        dt = time_step(config, h)
        start = time.perf_counter()
        res = run_coupled(problem, M, r=config.degree, dt=dt)
        err_u.append(error_norm(res.velocity, exact_velocity52, T).value)
        err_c.append(error_norm(res.concentration, _example52_concentration, T).value)
        runtimes[M] = time.perf_counter() - start
        p_iters[M] = res.pressure_iterations
        t_iters[M] = res.transport_iterations
        clamps[M] = res.clamp_events
        dts[M] = dt
        _note(progress, f"ex52 M={M}: |u_h-u|={err_u[-1]:.4e} |c_h-c|={err_c[-1]:.4e} "
                        f"({runtimes[M]:.1f}s)")
    ru, rc = rate(err_u, hs), rate(err_c, hs)
    rows = [(M, h, eu, ec, None if k == 0 else ru[k - 1], None if k == 0 else rc[k - 1])
            for k, (M, h, eu, ec) in enumerate(zip(levels, hs, err_u, err_c))]
    dec = lambda e: all(b < a for a, b in zip(e, e[1:]))
    return ConvergenceReport(
        "ex52", ("M", "h", "err_u_Linf", "err_c_Linf", "rate_u", "rate_c"), rows,
        rates={"err_u_Linf": ru[-1], "err_c_Linf": rc[-1]},
        pair_rates={"err_u_Linf": ru, "err_c_Linf": rc},
        monotone={"err_u_Linf": dec(err_u), "err_c_Linf": dec(err_c)},
        metadata={"mesh_levels": list(levels), "degree": config.degree, "dt": _keyed(dts),
                  "runtime_s": _keyed(runtimes), "pressure_cg_iterations": _keyed(p_iters),
                  "transport_iterations": _keyed(t_iters), "clamp_events": _keyed(clamps)})


# ----------------------------------------------------- projection lab

@dataclass(frozen=True)
class LabProblem:
    """``phi_t - div(A grad phi) + phi = f - div g`` with exact solution ``phi``."""
    phi: Callable
    gradient: Callable
    coefficient: Callable
    source: Callable
    flux: Callable | None = None
    name: str = "lab"


def smooth_lab_problem() -> LabProblem:
    """``phi = e^-t cos(pi x) cos(pi y)`` with the rough ex51 coefficient."""
    return LabProblem(lab_phi, lab_phi_grad, example51_coefficient, lab_source, None, "smooth")


def affine_lab_problem() -> LabProblem:
    """A P1 function as exact solution: ``phi = x + y`` with ``A = 2 + x``.

    The flux ``g = A grad phi`` cancels the diffusion term, leaving
    ``phi_t + phi = f`` with ``f = phi``.
    """
    coef = lambda x, y, t: 2.0 + x + 0.0 * y
    return LabProblem(
        phi=lambda x, y, t: x + y,
        gradient=lambda x, y, t: (np.ones_like(x), np.ones_like(x)),
        coefficient=coef,
        source=lambda x, y, t: x + y,
        flux=lambda x, y, t: (coef(x, y, t), coef(x, y, t)),
        name="affine",
    )


@dataclass(frozen=True)
class StabilityRow:
    M: int
    h: float
    lhs: float
    initial_term: float
    ritz_term: float
    c_emp: float
    ritz_l2_error: float
    solution_w1q: float
    data_norm: float
    regularity_ratio: float


@dataclass
class StabilityReport(_Report):
    rows: list
    p: float
    q: float
    problem: str
    metadata: dict = field(default_factory=dict)
    header = ("M", "h", "lhs", "initial_term", "ritz_term", "c_emp", "ritz_L2_error",
              "solution_W1q", "data_norm", "regularity_ratio")

    def csv_rows(self):
        return [tuple(asdict(r).values()) for r in self.rows]

    @property
    def c_emp(self) -> list:
        return [r.c_emp for r in self.rows]

    @property
    def c_emp_spread(self) -> float:
        c = self.c_emp
        return max(c) / min(c) if min(c) > 0 else math.inf

    @property
    def ritz_rate(self) -> float:
        return rate([r.ritz_l2_error for r in self.rows], [r.h for r in self.rows])[-1]

    def summary(self) -> dict:
        out = {"experiment": "projection-lab", "problem": self.problem, "p": self.p,
               "q": self.q, "rows": [asdict(r) for r in self.rows], **self.metadata}
        if all(r.c_emp > 0 for r in self.rows):
            out["c_emp_spread"] = self.c_emp_spread
        if all(r.ritz_l2_error > 0 for r in self.rows):
            out["ritz_l2_rate"] = self.ritz_rate
        return out


class _TimeNorm:
    """Accumulates ``(int_0^T ||e(t)||^p dt)^(1/p)`` by the trapezoid rule."""

    def __init__(self, p: float):
        self.p = p
        self.total = 0.0
        self.last = None
        self.last_t = None

    def add(self, t: float, value: float) -> None:
        v = value ** self.p
        if self.last is not None:
            self.total += 0.5 * (t - self.last_t) * (self.last + v)
        self.last, self.last_t = v, t

    @property
    def value(self) -> float:
        return self.total ** (1.0 / self.p)


def _field_lq(space, f, t, q) -> float:
    rule, xq, wq = space.quadrature(6)
    vals = f(xq[..., 0], xq[..., 1], t)
    if isinstance(vals, tuple):
        vals = np.hypot(*np.broadcast_arrays(*vals))
    vals = np.broadcast_to(vals, wq.shape)
    return float(np.sum(wq * np.abs(vals) ** q) ** (1.0 / q))


def _data_norm(space, problem: LabProblem, T: float, p: float, q: float,
               n_times: int = 256) -> float:
    """``||f||_{L^p(L^q)} + ||g||_{L^p(L^q)}`` on a fixed trapezoid grid in time."""
    norm = _TimeNorm(p)
    for t in np.linspace(0.0, T, n_times + 1):
        d = _field_lq(space, problem.source, t, q)
        if problem.flux is not None:
            d += _field_lq(space, problem.flux, t, q)
        norm.add(float(t), d)
    return norm.value


def projection_lab(config: StudyConfig, problem: LabProblem | None = None,
                   progress: Callable | None = None, max_samples: int = 2048
                   ) -> StabilityReport:
    """Measure both sides of the parabolic-projection stability estimate.

    For each mesh level the FE solution ``phi_h`` (backward Euler, Lagrange
    interpolant as initial value) is compared with the L2 projection
    ``P_h phi`` and the Ritz projection ``R_h(t) phi``. ``L^p(0,T; L^q)``
    norms use the trapezoid rule over time levels and order-6 quadrature in
    space. Every time level is sampled while there are at most
    ``max_samples`` steps; beyond that an even stride keeps the sample count
    at ``max_samples`` (the stride always includes ``t = 0`` and ``t = T``).
    """
    if config.experiment != "projection-lab":
        raise ConfigError("projection_lab needs a projection-lab config")
    problem = problem or smooth_lab_problem()
    p, q, T = config.p, config.q, config.final_time
    rows, runtimes = [], {}
    for M in config.mesh_levels:
        h = 1.0 / M
        dt = time_step(config, h)
        start = time.perf_counter()
        space = build_space(generate_square_mesh(M), config.degree)
        lin = LinearParabolicProblem(problem.coefficient, problem.source,
                                     lambda x, y: problem.phi(x, y, 0.0), T,
                                     flux=problem.flux, zeroth_order=True)
        n_steps = int(round(T / dt))
        stride = max(1, -(-n_steps // max_samples))
        lhs, ritz_term, sol_norm = (_TimeNorm(p) for _ in range(3))
        state = {"P": None, "R": None, "initial": None}

        def observe(step, t, phi_h):
            if step % stride and step != n_steps:
                return
            P = l2_project(space, problem.phi, t, x0=state["P"])
            R = ritz_project(space, problem.phi, problem.gradient, problem.coefficient, t,
                             x0=state["R"])
            state["P"], state["R"] = P.coeffs, R.coeffs
            e = lq_norm(FeFunction(space, P.coeffs - phi_h.coeffs), q)
            if step == 0:
                state["initial"] = e
                state["initial_w1q"] = w1q_norm(phi_h, q)
            lhs.add(t, e)
            ritz_term.add(t, lq_norm(FeFunction(space, P.coeffs - R.coeffs), q))
            sol_norm.add(t, w1q_norm(phi_h, q))
            state["R_final"] = R

        backward_euler_solve(lin, space, dt, callback=observe)
        denom = state["initial"] + ritz_term.value
        c_emp = lhs.value / denom if denom > 0 else 0.0
        ritz_err = error_norm(state["R_final"], problem.phi, T, "L2").value
        data = state["initial_w1q"] + _data_norm(space, problem, T, p, q)
        rows.append(StabilityRow(M, h, lhs.value, state["initial"], ritz_term.value, c_emp,
                                 ritz_err, sol_norm.value, data, sol_norm.value / data))
        runtimes[M] = time.perf_counter() - start
        _note(progress, f"projection-lab M={M}: C_emp={c_emp:.4f} ({runtimes[M]:.1f}s)")
    return StabilityReport(rows, p, q, problem.name,
                           metadata={"mesh_levels": list(config.mesh_levels),
                                     "dt_policy": config.dt_policy,
                                     "max_time_samples": max_samples,
                                     "runtime_s": _keyed(runtimes)})


# ------------------------------------------------------- tensor probe

@dataclass
class TensorProbeReport(_Report):
    eps_rows: list
    eigen_residual: float
    lipschitz_isotropic: float
    lipschitz_bound: float
    lipschitz_general: float
    alpha: float
    header = ("eps", "first_diff_max", "second_diff_max")

    def csv_rows(self):
        return self.eps_rows

    @property
    def growth(self) -> list:
        s = [r[2] for r in self.eps_rows]
        return [b / a for a, b in zip(s, s[1:])]

    def summary(self) -> dict:
        return {"experiment": "tensor-probe", "alpha": self.alpha,
                "eigen_residual": self.eigen_residual,
                "lipschitz_isotropic": self.lipschitz_isotropic,
                "lipschitz_bound": self.lipschitz_bound,
                "lipschitz_general": self.lipschitz_general,
                "second_diff_growth": self.growth,
                "first_diff_max": max(r[1] for r in self.eps_rows)}


def eigen_residual(params: DispersionParams, n_samples: int = 10_000, speed_cap: float = 1.0,
                   seed: int = 0) -> float:
    """Max of ``|D(u) u - (floor + alpha_L |u|) u|`` over random ``|u| <= speed_cap``."""
    rng = np.random.default_rng(seed)
    r = speed_cap * np.sqrt(rng.random(n_samples))
    a = 2.0 * np.pi * rng.random(n_samples)
    u = np.stack([r * np.cos(a), r * np.sin(a)], axis=1)
    Du = bear_scheidegger(u, params).matvec(u)
    expected = (params.floor + params.alpha_l * r)[:, None] * u
    return float(np.max(np.linalg.norm(Du - expected, axis=1)))


def tensor_probe(config: StudyConfig, eps_list=DEFAULT_PROBE_EPS, alpha: float = 0.1
                 ) -> TensorProbeReport:
    general = DispersionParams(porosity=1.0, molecular_diffusion=1.0, alpha_l=1.0, alpha_t=0.1)
    iso = DispersionParams.isotropic(1.0, alpha)
    return TensorProbeReport(
        eps_rows=mixed_derivative_probe(eps_list, alpha=alpha),
        eigen_residual=eigen_residual(general, seed=config.seed),
        lipschitz_isotropic=lipschitz_probe(iso, seed=config.seed),
        lipschitz_bound=alpha * math.sqrt(2.0),
        lipschitz_general=lipschitz_probe(general, seed=config.seed),
        alpha=alpha,
    )
