"""Dense symmetric linear algebra used throughout the package.

Covariance matrices are plain ``numpy`` arrays. Factorizations are returned
as small immutable records so they can be shared between callers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, NoConvergence, NotPositiveDefinite

LOG_2PI = np.log(2.0 * np.pi)

JITTER_START = 1e-10
JITTER_CAP = 1e-4
JITTER_FACTOR = 10.0


def as_sym(m) -> np.ndarray:
    """Return a float copy of ``m`` made exactly symmetric."""
    m = np.array(m, dtype=float, ndmin=2)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {m.shape}")
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class CholFactor:
    """Lower Cholesky factor of ``source + jitter * I``."""

    lower: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def solve(self, b) -> np.ndarray:
        return sla.cho_solve((self.lower, True), b, check_finite=False)

    def inverse(self) -> np.ndarray:
        """Explicit inverse of the factored matrix (LAPACK potri)."""
        inv, info = sla.lapack.dpotri(self.lower, lower=1)
        if info != 0:
            raise NotPositiveDefinite(f"potri failed with info={info}")
        return np.tril(inv) + np.tril(inv, -1).T

    def half_solve(self, b) -> np.ndarray:
        """Solve ``lower @ x = b``."""
        return sla.solve_triangular(self.lower, b, lower=True, check_finite=False)


@dataclass(frozen=True)
class SymEigen:
    eigvals: np.ndarray
    eigvecs: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.eigvecs * self.eigvals) @ self.eigvecs.T


def _try_cholesky(a):
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(lower)) or np.any(np.diag(lower) <= 0.0):
        return None
    return lower


def cholesky(m, jitter: float = 0.0) -> CholFactor:
    """Cholesky factor with escalating diagonal jitter.

    The factorization of ``m + jitter * I`` is attempted first. On failure the
    jitter restarts at ``1e-10 * mean(diag)`` and grows by 10x per attempt up to
    ``1e-4 * mean(diag)``; past that :class:`NotPositiveDefinite` is raised.
    """
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    a = as_sym(m)
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    n = a.shape[0]
    lower = _try_cholesky(a + jitter * np.eye(n) if jitter else a)
    if lower is not None:
        return CholFactor(lower, float(jitter))

    scale = float(np.mean(np.diag(a)))
    if not scale > 0:
        raise NotPositiveDefinite("matrix has non-positive mean diagonal")
    cap = JITTER_CAP * scale
    extra = JITTER_START * scale
    while extra <= cap * (1 + 1e-12):
        total = jitter + extra
        lower = _try_cholesky(a + total * np.eye(n))
        if lower is not None:
            return CholFactor(lower, float(total))
        extra *= JITTER_FACTOR
    raise NotPositiveDefinite(
        f"matrix of size {n} is not positive definite even with jitter {cap:.3g}"
    )


def sym_eigen(m) -> SymEigen:
    """Full eigendecomposition of a symmetric matrix, eigenvalues ascending."""
    a = as_sym(m)
    try:
        w, u = sla.eigh(a, driver="evr", check_finite=True)
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise NoConvergence(str(exc)) from exc
    except ValueError as exc:
        raise NoConvergence(str(exc)) from exc
    return SymEigen(w, u)


def mvn_logpdf(x, mean, cov, chol: CholFactor | None = None) -> float:
    """Log density of ``N(mean, cov)`` at ``x`` via a Cholesky factor."""
    x = np.asarray(x, dtype=float).ravel()
    mean = np.broadcast_to(np.asarray(mean, dtype=float), x.shape)
    if chol is None:
        cov = as_sym(cov)
        if cov.shape[0] != x.size:
            raise DimensionMismatch(f"cov is {cov.shape}, x has length {x.size}")
        chol = cholesky(cov)
    elif chol.dim != x.size:
        raise DimensionMismatch(f"factor has dim {chol.dim}, x has length {x.size}")
    z = chol.half_solve(x - mean)
    return float(-0.5 * (z @ z) - 0.5 * chol.logdet() - 0.5 * x.size * LOG_2PI)


def kron_mvprod(a, b, v) -> np.ndarray:
    """Compute ``kron(a, b) @ v`` without forming the Kronecker product.

    ``v`` is ordered with the index of ``a`` varying slowest, so it reshapes to
    ``(len(a), len(b))`` row-major; then ``kron(a, b) @ v == vec(a @ V @ b.T)``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    v = np.asarray(v, dtype=float)
    m, n = a.shape[1], b.shape[1]
    if v.shape[0] != m * n:
        raise DimensionMismatch(f"vector of length {v.shape[0]} does not match {m}x{n}")
    tail = v.shape[1:]
    vm = v.reshape(m, n, -1)
    out = np.einsum("ij,jkr,lk->ilr", a, vm, b, optimize=True)
    return out.reshape((a.shape[0] * b.shape[0],) + tail)
