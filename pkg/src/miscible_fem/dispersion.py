"""Bear-Scheidegger diffusion-dispersion tensor and its regularity probes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class DispersionParams:
    porosity: float = 1.0
    molecular_diffusion: float = 1.0
    alpha_l: float = 0.0
    alpha_t: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.porosity <= 1.0:
            raise ValueError(f"porosity must lie in (0, 1], got {self.porosity}")
        if not self.molecular_diffusion > 0.0:
            raise ValueError("molecular diffusion must be positive")
        if self.alpha_l < 0.0 or self.alpha_t < 0.0:
            raise ValueError("dispersivities must be non-negative")

    @property
    def floor(self) -> float:
        """Porosity times molecular diffusion, the ellipticity floor."""
        return self.porosity * self.molecular_diffusion

    @classmethod
    def isotropic(cls, floor: float, alpha: float) -> DispersionParams:
        return cls(porosity=1.0, molecular_diffusion=floor, alpha_l=alpha, alpha_t=alpha)


class SymMatrix2(NamedTuple):
    """Symmetric 2x2 matrix (entries may be arrays of matching shape)."""
    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray

    def matvec(self, v):
        v = np.asarray(v)
        return np.stack([self.a11 * v[..., 0] + self.a12 * v[..., 1],
                         self.a12 * v[..., 0] + self.a22 * v[..., 1]], axis=-1)

    def eigvalsh(self):
        """Eigenvalues (smaller, larger)."""
        mean = 0.5 * (self.a11 + self.a22)
        rad = np.hypot(0.5 * (self.a11 - self.a22), self.a12)
        return mean - rad, mean + rad

    def to_array(self) -> np.ndarray:
        return np.stack([np.stack([self.a11, self.a12], -1),
                         np.stack([self.a12, self.a22], -1)], -2)

    def frobenius(self):
        return np.sqrt(self.a11 ** 2 + 2.0 * self.a12 ** 2 + self.a22 ** 2)

    def __sub__(self, other):
        return SymMatrix2(self.a11 - other.a11, self.a12 - other.a12, self.a22 - other.a22)


def bear_scheidegger(u, params: DispersionParams) -> SymMatrix2:
    """D(u) = phi d_m I + |u| (alpha_T I + (alpha_L - alpha_T) u u^T / |u|^2).

    ``u`` has shape ``(..., 2)``. At ``u = 0`` the continuous limit
    ``phi d_m I`` is returned.
    """
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite velocity passed to bear_scheidegger")
    ux, uy = u[..., 0], u[..., 1]
    speed = np.hypot(ux, uy)
    safe = np.where(speed > 0.0, speed, 1.0)
    # |u| e e^T with the unit direction e; dividing first avoids overflow for tiny |u|
    ex, ey = ux / safe, uy / safe
    dl = (params.alpha_l - params.alpha_t) * speed
    diag = params.floor + params.alpha_t * speed
    a11 = diag + dl * ex * ex
    a12 = dl * ex * ey
    a22 = diag + dl * ey * ey
    return SymMatrix2(a11, a12, a22)


def ellipticity_bounds(params: DispersionParams, u_max: float):
    """Bounds on the spectrum of D(u) over ``|u| <= u_max``."""
    if u_max < 0:
        raise ValueError("u_max must be non-negative")
    lo = params.floor
    hi = params.floor + max(params.alpha_l, params.alpha_t) * u_max
    return lo, hi


def lipschitz_probe(params: DispersionParams, n_samples: int = 10_000,
                    speed_cap: float = 1.0, seed: int = 0) -> float:
    """Largest sampled ``||D(u) - D(v)||_F / |u - v|`` over ``|u|, |v| <= speed_cap``.

    Half the pairs are independent uniform draws from the disk; the other half
    are close pairs, which resolve the local slope where the supremum lives.
    """
    if n_samples < 10_000:
        raise ValueError("lipschitz_probe needs at least 1e4 samples")
    rng = np.random.default_rng(seed)

    def disk(n):
        r = speed_cap * np.sqrt(rng.random(n))
        a = 2.0 * np.pi * rng.random(n)
        return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)

    n_far = n_samples // 2
    u_far, v_far = disk(n_far), disk(n_far)
    n_near = n_samples - n_far
    u_near = disk(n_near)
    step = speed_cap * 10.0 ** rng.uniform(-6, -1, n_near)
    ang = 2.0 * np.pi * rng.random(n_near)
    v_near = u_near + step[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    # keep the perturbed point inside the admissible disk
    norm = np.linalg.norm(v_near, axis=1)
    v_near *= np.minimum(1.0, speed_cap / norm)[:, None]

    u = np.vstack([u_far, u_near])
    v = np.vstack([v_far, v_near])
    dist = np.linalg.norm(u - v, axis=1)
    keep = dist > 0
    diff = (bear_scheidegger(u[keep], params) - bear_scheidegger(v[keep], params)).frobenius()
    return float(np.max(diff / dist[keep]))


def _spectral_norm(m: SymMatrix2):
    lo, hi = m.eigvalsh()
    return np.maximum(np.abs(lo), np.abs(hi))


def _counterexample_tensor(x1, x2, t, alpha, floor):
    # u = (x1 - x2 - t, 0) with alpha_L = alpha_T = alpha
    u = np.stack([x1 - x2 - t, np.zeros_like(x1 - x2 - t)], axis=-1)
    return bear_scheidegger(u, DispersionParams.isotropic(floor, alpha))


def mixed_difference(x1, x2, t, eps, alpha: float = 0.1, floor: float = 1.0):
    """First difference in ``x1`` and mixed ``x1``-``t`` second difference of D.

    Differences are measured in the spectral norm and divided by ``eps`` and
    ``eps**2`` respectively.
    """
    D = lambda a, b: _counterexample_tensor(a, x2, b, alpha, floor)
    d00 = D(x1, t)
    d10 = D(x1 + eps, t)
    d01 = D(x1, t + eps)
    d11 = D(x1 + eps, t + eps)
    first = _spectral_norm(d10 - d00) / eps
    mixed = SymMatrix2(d11.a11 - d10.a11 - d01.a11 + d00.a11,
                       d11.a12 - d10.a12 - d01.a12 + d00.a12,
                       d11.a22 - d10.a22 - d01.a22 + d00.a22)
    second = _spectral_norm(mixed) / eps ** 2
    return first, second


def mixed_derivative_probe(eps_list, alpha: float = 0.1, floor: float = 1.0,
                           n_grid: int = 17):
    """Sup of first and mixed second differences near the kink ``x1 - x2 = t``.

    For each ``eps`` the sample set is an ``n_grid x n_grid`` grid in
    ``(x1, x2) in [0, 1]^2`` with times placed at offsets
    ``-2 eps .. 2 eps`` from the kink, so every grid point straddles it.
    Returns rows ``(eps, first_diff_max, second_diff_max)``.
    """
    eps_arr = np.asarray(list(eps_list), dtype=float)
    if np.any(eps_arr <= 0) or np.any(np.diff(eps_arr) >= 0):
        raise ValueError("eps_list must be positive and strictly decreasing")
    g = np.linspace(0.0, 1.0, n_grid)
    X1, X2 = np.meshgrid(g, g)
    rows = []
    for eps in eps_arr:
        offsets = np.linspace(-2.0, 2.0, 9) * eps
        t = (X1 - X2)[..., None] - offsets
        first, second = mixed_difference(X1[..., None], X2[..., None], t, eps, alpha, floor)
        rows.append((float(eps), float(first.max()), float(second.max())))
    return rows


def write_probe_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("eps,first_diff_max,second_diff_max\n")
        for eps, a, b in rows:
            fh.write(f"{eps:.17g},{a:.17g},{b:.17g}\n")


EX51_GUARD = 1e-8


def example51_coefficient(x, y, t):
    """3 + 0.1 s^3 sin(1/s^2) with s = x + y - t, extended by 3 at s = 0."""
    s = np.asarray(x + y - t, dtype=float)
    if s.ndim == 0:
        return 3.0 if abs(s) < EX51_GUARD else float(3.0 + 0.1 * s ** 3 * np.sin(1.0 / s ** 2))
    s2 = s * s
    small = s2 < EX51_GUARD ** 2
    any_small = small.any()
    if any_small:
        s2[small] = 1.0
    out = np.sin(np.reciprocal(s2))
    out *= s2
    out *= s
    out *= 0.1
    out += 3.0
    if any_small:
        out[small] = 3.0
    return out


def example51_coefficient_ds(s):
    """Derivative of the coefficient with respect to s = x + y - t."""
    s = np.asarray(s, dtype=float)
    small = np.abs(s) < EX51_GUARD
    s_safe = np.where(small, 1.0, s)
    inv2 = 1.0 / s_safe ** 2
    val = 0.1 * (3.0 * s_safe ** 2 * np.sin(inv2) - 2.0 * np.cos(inv2))
    # the derivative has no limit at s = 0; the guard value is a bounded stand-in
    return np.where(small, 0.0, val)
