"""Minimal dense symmetric linear algebra.

Cholesky factorization doubles as the positive-definiteness test that decides
membership in the dual solver's domain; the solve runs forward and backward
substitution on the stored lower factor. Dense storage only; problem sizes
here never justify anything sparse.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels


class NotPositiveDefinite(Exception):
    """A pivot fell below the PD threshold during factorization."""


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular factor L with L L^T equal to the factored matrix."""

    n: int
    lower: np.ndarray


def as_sym_matrix(a) -> np.ndarray:
    """Validate and return a float64 symmetric matrix (exact symmetry)."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("matrix is not stored symmetric")
    return a


def cholesky(a) -> CholFactor:
    """Factor a symmetric matrix, raising NotPositiveDefinite on failure.

    Failure means some pivot was <= 1e-12 * max(diag(a)); callers treating
    this as a domain-membership test must shrink their step and retry.
    """
    a = as_sym_matrix(a)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    lower, ok = _kernels.chol_factor(np.ascontiguousarray(a))
    if not ok:
        raise NotPositiveDefinite(
            f"nonpositive pivot during factorization of a {a.shape[0]}x{a.shape[0]} matrix"
        )
    return CholFactor(n=a.shape[0], lower=lower)


def solve(factor: CholFactor, b) -> np.ndarray:
    """Solve A x = b where A = L L^T was factored by cholesky()."""
    b = np.ascontiguousarray(b, dtype=np.float64)
    if b.ndim != 1 or b.shape[0] != factor.n:
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({factor.n},)")
    return _kernels.chol_solve(factor.lower, b)
