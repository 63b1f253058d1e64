"""Sparse storage and the two linear solvers used by every PDE module.

Storage is scipy's CSR in canonical form (sorted column indices, duplicates
summed). ``solve_spd`` is a hand-written Jacobi-preconditioned CG so that the
zero-mean projection can be applied inside the iteration; ``solve_general``
wraps SuperLU for the non-symmetric drift systems.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, NonConvergenceError, SingularMatrixError, SolverError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SparseMatrix:
    csr: sp.csr_matrix
    symmetric: bool = False

    @property
    def shape(self):
        return self.csr.shape

    @property
    def offsets(self):
        return self.csr.indptr

    @property
    def columns(self):
        return self.csr.indices

    @property
    def values(self):
        return self.csr.data

    def __matmul__(self, x):
        return self.csr @ x

    def diagonal(self):
        return self.csr.diagonal()

    def toarray(self):
        return self.csr.toarray()

    def submatrix(self, keep):
        sub = self.csr[keep][:, keep]
        return SparseMatrix(_canonical(sub), self.symmetric)

    def transpose(self):
        return SparseMatrix(_canonical(self.csr.T.tocsr()), self.symmetric)

    def dump(self, path):
        """Write Matrix Market coordinate text."""
        scipy.io.mmwrite(str(path), self.csr.tocoo(), field="real",
                         symmetry="general")


def _canonical(m):
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    m.sort_indices()
    m.eliminate_zeros()
    return m


def is_symmetric(m, rtol=1e-12):
    m = sp.csr_matrix(m)
    if m.shape[0] != m.shape[1]:
        return False
    scale = np.abs(m.data).max() if m.nnz else 0.0
    diff = (m - m.T).tocsr()
    return bool(diff.nnz == 0 or np.abs(diff.data).max() <= rtol * scale)


def assemble_from_triplets(triplets, shape=None, *, check_symmetry=True):
    """Build a canonical CSR matrix from ``(i, j, value)`` triplets.

    ``triplets`` is either a sequence of 3-tuples or a ``(rows, cols, vals)``
    tuple of equal-length arrays. Duplicates are summed.
    """
    if isinstance(triplets, tuple) and len(triplets) == 3 and np.ndim(triplets[0]) == 1:
        rows, cols, vals = (np.asarray(a) for a in triplets)
    else:
        t = list(triplets)
        rows = np.array([a[0] for a in t], dtype=np.int64)
        cols = np.array([a[1] for a in t], dtype=np.int64)
        vals = np.array([a[2] for a in t], dtype=float)
    if shape is None:
        n = int(max(rows.max(initial=-1), cols.max(initial=-1))) + 1
        shape = (n, n)
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= shape[0]
                      or cols.max() >= shape[1]):
        raise AssemblyError(f"triplet index out of range for shape {shape}")
    if not np.all(np.isfinite(vals)):
        raise AssemblyError("non-finite matrix entry")
    m = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    sym = is_symmetric(m) if check_symmetry else False
    return SparseMatrix(m, sym)


@dataclass(frozen=True)
class LinearSolveReport:
    iterations: int
    residual_norm: float
    method: str


def project_zero_mean(v, weights=None):
    """Subtract the weighted mean so that ``sum(weights * v) / sum(weights) == 0``."""
    v = np.asarray(v, dtype=float)
    if weights is None:
        return v - v.mean()
    w = np.asarray(weights, dtype=float)
    return v - np.dot(w, v) / w.sum()


def solve_spd(m: SparseMatrix, rhs, tol=1e-10, max_iter=None, *, x0=None, zero_mean=None):
    """Jacobi-preconditioned conjugate gradients.

    ``tol`` bounds the relative residual ``|b - Ax| / |b|``. With
    ``zero_mean`` set to a weight vector (or ``True`` for uniform weights) the
    iterates, the right-hand side and the preconditioned residual are
    projected onto the zero-mean subspace at every step, which handles the
    constant nullspace of periodic stiffness matrices.
    """
    A = m.csr
    n = A.shape[0]
    max_iter = max_iter or max(10 * n, 1000)
    w = None
    if zero_mean is not None and zero_mean is not False:
        w = None if zero_mean is True else np.asarray(zero_mean, dtype=float)
        proj = lambda v: project_zero_mean(v, w)  # noqa: E731
    else:
        proj = lambda v: v  # noqa: E731
    b = proj(np.asarray(rhs, dtype=float))
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else proj(np.array(x0, dtype=float))
    if bnorm == 0.0:
        return np.zeros(n), LinearSolveReport(0, 0.0, "cg")
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("solve_spd needs a positive diagonal")
    dinv = 1.0 / d
    r = b - A @ x
    z = proj(dinv * r)
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r)
    it = 0
    while res > tol * bnorm:
        if it >= max_iter:
            raise NonConvergenceError(
                f"CG did not converge in {max_iter} iterations (relative residual {res / bnorm:.3e})",
                residual=res / bnorm, iterations=it)
        q = A @ p
        pq = p @ q
        if pq <= 0:
            raise SolverError("CG breakdown: matrix not positive definite on the search space")
        a = rz / pq
        x += a * p
        r -= a * q
        if w is not None:
            x = proj(x)
            r = proj(r)
        z = proj(dinv * r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        res = np.linalg.norm(r)
        it += 1
    # report the true residual, not the recurrence
    true = np.linalg.norm(b - A @ x) / bnorm
    return x, LinearSolveReport(it, float(true), "cg")


def solve_general(m: SparseMatrix, rhs, rtol=1e-10):
    """Sparse LU with partial pivoting (SuperLU) and one refinement step if needed."""
    A = m.csr.tocsc()
    b = np.asarray(rhs, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(A.shape[0]), LinearSolveReport(0, 0.0, "lu")
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise SingularMatrixError(str(exc)) from exc
    x = lu.solve(b)
    res = np.linalg.norm(b - A @ x) / bnorm
    steps = 0
    while res > rtol and steps < 3:
        x += lu.solve(b - A @ x)
        res = np.linalg.norm(b - A @ x) / bnorm
        steps += 1
    if not np.isfinite(res) or res > rtol:
        raise SolverError(f"LU residual {res:.3e} above {rtol:.1e}")
    return x, LinearSolveReport(steps, float(res), "lu")


def solve(m: SparseMatrix, rhs, tol=1e-10, **kw):
    """Dispatch: CG for symmetric matrices, LU otherwise."""
    if m.symmetric:
        return solve_spd(m, rhs, tol, **kw)
    return solve_general(m, rhs, rtol=max(tol, 1e-10))
