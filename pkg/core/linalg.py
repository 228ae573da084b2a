"""Dense linear algebra primitives.

Thin wrappers over numpy/scipy that symmetrize their inputs, translate LAPACK
failures into :class:`core.errors.NotPositiveDefinite` and never form explicit
inverses unless asked to.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.linalg as la

from core.errors import NotPositiveDefinite

SYMMETRY_RTOL = 1e-10


def symmetrize(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def is_symmetric(a: np.ndarray, rtol: float = SYMMETRY_RTOL) -> bool:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    scale = max(np.abs(a).max(initial=0.0), 1.0)
    return bool(np.abs(a - a.T).max(initial=0.0) <= rtol * scale)


def _check_square(a: np.ndarray, label: Optional[str]) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries", label=label)
    return a


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Block matrix whose (i, j) block is ``a[i, j] * b``."""
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def cholesky(a: np.ndarray, label: Optional[str] = None) -> np.ndarray:
    """Lower triangular ``L`` with ``a = L L^T``.

    The input is symmetrized first; any non-positive pivot raises
    :class:`NotPositiveDefinite`.
    """
    a = symmetrize(_check_square(a, label))
    try:
        low = la.cholesky(a, lower=True, check_finite=False)
    except la.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}", label=label) from exc
    if np.any(np.diag(low) <= 0.0):
        raise NotPositiveDefinite("non-positive Cholesky pivot", label=label)
    return low


def logdet_from_cholesky(low: np.ndarray) -> float:
    return float(2.0 * np.log(np.diag(low)).sum())


def logdet_spd(a: np.ndarray, label: Optional[str] = None) -> float:
    return logdet_from_cholesky(cholesky(a, label=label))


def spd_solve(a: np.ndarray, b: np.ndarray, label: Optional[str] = None) -> np.ndarray:
    """Solve ``a x = b`` for symmetric positive definite ``a``."""
    low = cholesky(a, label=label)
    return la.cho_solve((low, True), np.asarray(b, dtype=float), check_finite=False)


def spd_inverse_from_cholesky(low: np.ndarray) -> np.ndarray:
    eye = np.eye(low.shape[0])
    return symmetrize(la.cho_solve((low, True), eye, check_finite=False))


def check_conditioning(a: np.ndarray, rtol: float = 1e-12, label: Optional[str] = None) -> np.ndarray:
    """Eigenvalues of ``a``; raises when the smallest is below ``rtol`` times the largest."""
    vals = np.linalg.eigvalsh(symmetrize(a))
    top = vals[-1]
    if top <= 0.0 or vals[0] <= rtol * top:
        raise NotPositiveDefinite(
            f"matrix is singular or nearly so (eigenvalue ratio {vals[0] / top if top > 0 else 0.0:.3e})",
            label=label,
        )
    return vals


def sym_inv_sqrt(a: np.ndarray, label: Optional[str] = None) -> np.ndarray:
    """Symmetric ``m`` with ``m a m = I`` via the symmetric eigendecomposition."""
    a = symmetrize(_check_square(a, label))
    vals, vecs = np.linalg.eigh(a)
    if vals[0] <= 0.0:
        raise NotPositiveDefinite("matrix has a non-positive eigenvalue", label=label)
    return symmetrize((vecs / np.sqrt(vals)) @ vecs.T)


def spectral_norm(a: np.ndarray) -> float:
    """Largest singular value; symmetric inputs go through ``eigvalsh``."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    if is_symmetric(a):
        return float(np.abs(np.linalg.eigvalsh(symmetrize(a))).max())
    return float(np.sqrt(max(np.linalg.eigvalsh(a.T @ a)[-1], 0.0)))
