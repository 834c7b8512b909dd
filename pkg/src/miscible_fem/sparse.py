"""Compressed-row matrices and Jacobi-preconditioned Krylov solvers.

Storage and matrix-vector products are delegated to :mod:`scipy.sparse`; the
iterations themselves (PCG with an optional constant-nullspace projection,
BiCGStab) are written out so their operation order is fixed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class SparseMatrix:
    """Immutable CSR matrix with sorted, duplicate-free column indices."""

    def __init__(self, indptr, indices, data, shape):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=float)
        self.shape = (int(shape[0]), int(shape[1]))
        if len(self.indptr) != self.shape[0] + 1 or self.indptr[-1] != len(self.indices) \
                or len(self.indices) != len(self.data):
            raise ValueError("inconsistent CSR arrays")
        for a in (self.indptr, self.indices, self.data):
            a.setflags(write=False)
        self._csr = scipy.sparse.csr_matrix((self.data, self.indices, self.indptr),
                                            shape=self.shape)

    @classmethod
    def from_scipy(cls, A) -> SparseMatrix:
        A = scipy.sparse.csr_matrix(A)
        A.sum_duplicates()
        A.sort_indices()
        return cls(A.indptr, A.indices, A.data, A.shape)

    @property
    def nnz(self) -> int:
        return len(self.data)

    def to_scipy(self) -> scipy.sparse.csr_matrix:
        return self._csr

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def matvec(self, x) -> np.ndarray:
        return self._csr @ np.asarray(x, dtype=float)

    def __matmul__(self, x):
        return self.matvec(x)

    def transpose(self) -> SparseMatrix:
        return SparseMatrix.from_scipy(self._csr.T.tocsr())

    @property
    def T(self) -> SparseMatrix:
        return self.transpose()

    def _same_pattern(self, other: SparseMatrix) -> bool:
        return self.indptr is other.indptr and self.indices is other.indices

    def __add__(self, other: SparseMatrix) -> SparseMatrix:
        if self._same_pattern(other):
            return SparseMatrix(self.indptr, self.indices, self.data + other.data, self.shape)
        return SparseMatrix.from_scipy(self._csr + other._csr)

    def __sub__(self, other: SparseMatrix) -> SparseMatrix:
        if self._same_pattern(other):
            return SparseMatrix(self.indptr, self.indices, self.data - other.data, self.shape)
        return SparseMatrix.from_scipy(self._csr - other._csr)

    def __mul__(self, scalar: float) -> SparseMatrix:
        return SparseMatrix(self.indptr, self.indices, float(scalar) * self.data, self.shape)

    __rmul__ = __mul__

    def write_coo(self, path) -> None:
        """Debug dump, one ``i j value`` line per stored entry."""
        rows = np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))
        with open(path, "w") as fh:
            for i, j, v in zip(rows, self.indices, self.data):
                fh.write(f"{i} {j} {v:.17g}\n")


def csr_from_triplets(n_rows: int, n_cols: int, triplets) -> SparseMatrix:
    """Build a CSR matrix, summing duplicates.

    Duplicates are summed in ascending value order, so any permutation of the
    same triplets produces a bit-identical matrix.
    """
    trip = list(triplets)
    if trip:
        arr = np.array(trip, dtype=float).reshape(-1, 3)
        i = arr[:, 0].astype(np.int64)
        j = arr[:, 1].astype(np.int64)
        v = arr[:, 2]
        if np.any(i != arr[:, 0]) or np.any(j != arr[:, 1]):
            raise ValueError("non-integer triplet index")
    else:
        i = j = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    if len(i) and (i.min() < 0 or i.max() >= n_rows or j.min() < 0 or j.max() >= n_cols):
        raise IndexError(f"triplet index outside {n_rows}x{n_cols}")
    order = np.lexsort((v, j, i))
    i, j, v = i[order], j[order], v[order]
    if len(i):
        start = np.concatenate([[True], (np.diff(i) != 0) | (np.diff(j) != 0)])
        heads = np.nonzero(start)[0]
        vals = np.add.reduceat(v, heads)
        i, j = i[heads], j[heads]
    else:
        vals = v
    indptr = np.concatenate([[0], np.cumsum(np.bincount(i, minlength=n_rows))])
    return SparseMatrix(indptr, j, vals, (n_rows, n_cols))


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual_norm: float
    converged: bool


def _max_iter(n: int) -> int:
    return max(50, int(20 * np.sqrt(n)))


def _check_symmetric(A: SparseMatrix, n_samples: int = 64, tol: float = 1e-12):
    rng = np.random.default_rng(0)
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix is not square")
    if A.nnz == 0:
        return
    csr = A.to_scipy()
    picks = rng.integers(0, A.nnz, size=min(n_samples, A.nnz))
    rows = np.searchsorted(A.indptr, picks, side="right") - 1
    cols = A.indices[picks]
    a = A.data[picks]
    at = np.asarray(csr[cols, rows]).ravel()
    scale = max(1.0, float(np.abs(A.data).max()))
    if np.any(np.abs(a - at) > tol * scale):
        raise ValueError(f"matrix of size {n} is not symmetric")


def solve_spd(A: SparseMatrix, b, tol: float = 1e-10, nullspace_mean_zero: bool = False,
              mass_weights=None, x0=None, maxiter: int | None = None,
              check_symmetry: bool = True):
    """Jacobi-preconditioned conjugate gradients.

    With ``nullspace_mean_zero`` the matrix is taken to have the constants as
    kernel (pure Neumann). The right-hand side is made compatible by
    subtracting ``sum(b) / sum(m) * m`` where ``m`` is ``mass_weights`` (the
    FE load vector of the constant 1, i.e. removing the mean of the source),
    and the solution is shifted by a constant so that ``m @ x = 0``. Residuals
    of a compatible system stay orthogonal to the kernel, so the iteration
    itself needs no projection.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    if check_symmetry:
        _check_symmetric(A)
    maxiter = maxiter or _max_iter(n)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("non-positive diagonal entry in SPD solve")
    inv_d = 1.0 / diag

    if nullspace_mean_zero:
        m = np.ones(n) if mass_weights is None else np.asarray(mass_weights, dtype=float)
        msum = m.sum()
        b = b - (b.sum() / msum) * m

        def project_sol(x):
            return x - (m @ x) / msum
    else:
        def project_sol(x):
            return x

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)
    x = np.zeros(n) if x0 is None else project_sol(np.array(x0, dtype=float))
    it = 0
    for _restart in range(3):
        r = b - A @ x
        res = np.linalg.norm(r) / bnorm
        if res <= tol or it >= maxiter:
            break
        z = inv_d * r
        p = z.copy()
        rz = r @ z
        while it < maxiter:
            it += 1
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0:
                break
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            if np.linalg.norm(r) / bnorm <= tol:
                break
            z = inv_d * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
    x = project_sol(x)
    # recurrence residuals drift; the report uses a fresh one
    res = np.linalg.norm(b - A @ x) / bnorm
    return x, SolveReport(it, float(res), bool(res <= tol))


def _direct(A: SparseMatrix, b):
    n = A.shape[0]
    try:
        if n <= 2000:
            lu = scipy.linalg.lu_factor(A.toarray(), check_finite=True)
            x = scipy.linalg.lu_solve(lu, b)
        else:
            x = scipy.sparse.linalg.splu(A.to_scipy().tocsc()).solve(b)
    except (scipy.linalg.LinAlgError, RuntimeError) as exc:
        raise SolverError(f"direct solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("matrix is singular to working precision")
    return x


def solve_general(A: SparseMatrix, b, tol: float = 1e-10, x0=None, maxiter: int | None = None):
    """Jacobi-preconditioned BiCGStab, with an LU fallback when it stalls."""
    b = np.asarray(b, dtype=float)
    n = len(b)
    if A.shape != (n, n):
        raise ValueError(f"shape mismatch: {A.shape} vs rhs {n}")
    maxiter = maxiter or _max_iter(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)
    diag = A.diagonal()
    inv_d = np.where(diag != 0.0, 1.0 / np.where(diag != 0.0, diag, 1.0), 1.0)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    res = np.linalg.norm(r) / bnorm
    it = 0
    if res > tol:
        r_hat = r.copy()
        rho = alpha = omega = 1.0
        v = np.zeros(n)
        p = np.zeros(n)
        while it < maxiter:
            it += 1
            rho_new = r_hat @ r
            if rho_new == 0.0 or omega == 0.0:
                break
            beta = (rho_new / rho) * (alpha / omega)
            rho = rho_new
            p = r + beta * (p - omega * v)
            y = inv_d * p
            v = A @ y
            denom = r_hat @ v
            if denom == 0.0:
                break
            alpha = rho / denom
            s = r - alpha * v
            if np.linalg.norm(s) / bnorm <= tol:
                x += alpha * y
                r = s
                break
            z = inv_d * s
            t = A @ z
            tt = t @ t
            if tt == 0.0:
                break
            omega = (t @ s) / tt
            x += alpha * y + omega * z
            r = s - omega * t
            if np.linalg.norm(r) / bnorm <= tol:
                break
        res = np.linalg.norm(b - A @ x) / bnorm
    if res <= tol:
        return x, SolveReport(it, float(res), True)

    log.info("BiCGStab stalled at residual %.3e after %d iterations; using LU", res, it)
    x = _direct(A, b)
    res = np.linalg.norm(b - A @ x) / bnorm
    if not res <= 1e-6:
        raise SolverError(f"linear system is singular to tolerance (residual {res:.3e})")
    return x, SolveReport(it, float(res), bool(res <= tol))
