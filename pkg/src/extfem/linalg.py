"""Sparse linear algebra: preconditioned CG, a dense direct oracle, and
condition-number estimation (power iteration + inverse iteration)."""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "NonConvergence",
    "solve_cg",
    "solve_direct_dense",
    "solve_sparse_direct",
    "estimate_cond",
    "read_matrix_market",
]

DENSE_LIMIT = 20_000


class NonConvergence(RuntimeError):
    def __init__(self, message, iterations, residual):
        self.iterations = int(iterations)
        self.residual = float(residual)
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")


def solve_cg(A, b, tol=1e-10, maxit=None, precond="jacobi", x0=None, callback=None):
    """Conjugate gradients with optional Jacobi preconditioning.

    Terminates when ``||b - A x|| <= tol * ||b||``; raises
    :class:`NonConvergence` carrying the final residual after ``maxit``
    iterations (default ``10 n``).  Returns ``(x, iterations)``.

    ``callback`` receives the 2-norm of the residual after every step.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = len(b)
    maxit = int(maxit) if maxit else 10 * n
    if precond not in ("none", "jacobi"):
        raise ValueError("precond must be 'none' or 'jacobi'")
    if precond == "jacobi":
        d = A.diagonal()
        if np.any(d == 0):
            raise ValueError("zero diagonal entry; Jacobi preconditioner undefined")
        minv = 1.0 / d
    else:
        minv = None

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x * 0.0, 0
    z = minv * r if minv is not None else r
    p = z.copy()
    rz = r @ z
    rnorm = np.linalg.norm(r)
    if callback:
        callback(rnorm)
    if rnorm <= tol * bnorm:
        return x, 0
    for it in range(1, maxit + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise NonConvergence("matrix is not positive definite", it, rnorm / bnorm)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        if callback:
            callback(rnorm)
        if rnorm <= tol * bnorm:
            return x, it
        z = minv * r if minv is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonConvergence("CG did not converge", maxit, rnorm / bnorm)


def solve_direct_dense(A, b):
    """Dense LU solve with partial pivoting (oracle for small systems)."""
    if sp.issparse(A):
        n = A.shape[0]
        if n > DENSE_LIMIT:
            raise ValueError(f"system too large for the dense oracle (n={n})")
        A = A.toarray()
    A = np.asarray(A, dtype=float)
    if A.shape[0] > DENSE_LIMIT:
        raise ValueError(f"system too large for the dense oracle (n={A.shape[0]})")
    return scipy.linalg.solve(A, np.asarray(b, dtype=float))


def solve_sparse_direct(A, b):
    """Sparse LU solve (SuperLU); the default path of the study driver."""
    return spla.spsolve(sp.csc_matrix(A), np.asarray(b, dtype=float))


def _power_iteration(A, tol, maxit, rng):
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(maxit):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            raise np.linalg.LinAlgError("power iteration hit the null space")
        v = w / nw
        lam_new = float(v @ (A @ v))
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    return lam


def estimate_cond(A, tol=1e-6, maxit=2000, seed=0):
    """Estimate ``lambda_max / lambda_min`` of an SPD matrix.

    The largest eigenvalue comes from power iteration, the smallest from
    inverse iteration through a sparse (or dense, for small systems) LU
    factorisation.  Scale invariant by construction.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    lam_max = _power_iteration(A, tol, maxit, rng)
    if n <= 2000:
        lu = scipy.linalg.lu_factor(A.toarray())
        solve = lambda v: scipy.linalg.lu_solve(lu, v)
    else:
        f = spla.splu(sp.csc_matrix(A))
        solve = f.solve
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam_min = None
    for _ in range(maxit):
        w = solve(v)
        nw = np.linalg.norm(w)
        if nw == 0 or not np.isfinite(nw):
            raise np.linalg.LinAlgError("inverse iteration breakdown (singular A?)")
        v = w / nw
        lam_new = float(v @ (A @ v))
        if lam_min is not None and abs(lam_new - lam_min) <= tol * abs(lam_new):
            lam_min = lam_new
            break
        lam_min = lam_new
    if lam_min <= 0:
        raise np.linalg.LinAlgError(
            f"inverse iteration found a nonpositive eigenvalue {lam_min:.3e};"
            " the matrix is not SPD"
        )
    return lam_max / lam_min


def read_matrix_market(path):
    """Read a Matrix Market file (coordinate -> CSR, array -> ndarray)."""
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("%%MatrixMarket"):
            raise ValueError("not a Matrix Market file")
        kind = header.split()
        while True:
            line = fh.readline()
            if not line.startswith("%"):
                break
        dims = line.split()
        if "coordinate" in kind:
            nr, nc, nnz = int(dims[0]), int(dims[1]), int(dims[2])
            rows = np.empty(nnz, dtype=np.int64)
            cols = np.empty(nnz, dtype=np.int64)
            vals = np.empty(nnz)
            for k in range(nnz):
                i, j, v = fh.readline().split()
                rows[k], cols[k], vals[k] = int(i) - 1, int(j) - 1, float(v)
            return sp.csr_matrix((vals, (rows, cols)), shape=(nr, nc))
        nr, nc = int(dims[0]), int(dims[1])
        vals = np.array([float(fh.readline()) for _ in range(nr * nc)])
        return vals.reshape(nc, nr).T if nc > 1 else vals
