"""Separable correlation model: data, parameter types and objectives.

Layout convention: an observation ``y_i`` of length ``q = r * c`` is the
column-stacked vec of an ``r x c`` data matrix whose rows are indexed by the
V factor (locations) and whose columns are indexed by the U factor (time).
Position ``k * r + j`` (0-based) holds cell ``(j, k)``, so ``U kron V``
correlates cell ``(j, k)`` with ``(j', k')`` through ``U[k, k'] * V[j, j']``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Protocol, Tuple, Union

import numpy as np
import scipy.linalg as la

from core.errors import InputError, NotPositiveDefinite, SingularDesign
from core.linalg import (
    check_conditioning,
    cholesky,
    is_symmetric,
    kronecker,
    logdet_from_cholesky,
    logdet_spd,
    sym_inv_sqrt,
    symmetrize,
)

DESIGN_RCOND = 1e-12
UNIT_DIAG_TOL = 1e-12
SINGULAR_RTOL = 1e-12


# --- Data ---------------------------------------------------------------


def _rcond_of_gram(rfac: np.ndarray) -> float:
    """Reciprocal condition number of X'X from the R factor of X = QR."""
    sv = np.linalg.svd(rfac, compute_uv=False)
    if sv[0] == 0.0:
        return 0.0
    return float((sv[-1] / sv[0]) ** 2)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Responses ``y`` (n x q), design ``x`` (n x p) and the ``r x c`` cell layout."""

    y: np.ndarray
    r: int
    c: int
    x: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        y = np.array(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2:
            raise InputError("y must be a matrix", [f"got {y.ndim} dimensions"])
        n, q = y.shape
        if int(self.r) < 1 or int(self.c) < 1:
            raise InputError("invalid layout", [f"r={self.r} and c={self.c} must be positive"])
        if int(self.r) * int(self.c) != q:
            raise InputError("layout does not match data", [f"r*c={int(self.r) * int(self.c)} != q={q}"])
        if n < 2:
            raise InputError("too few observations", [f"n={n} < 2"])
        if not np.all(np.isfinite(y)):
            raise InputError("y has non-finite entries")
        x = np.ones((n, 1)) if self.x is None else np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != n:
            raise InputError("design does not match data", [f"x has {x.shape[0]} rows, y has {n}"])
        if not np.all(np.isfinite(x)):
            raise InputError("x has non-finite entries")
        if x.shape[1] > n or _rcond_of_gram(np.linalg.qr(x)[1]) < DESIGN_RCOND:
            raise SingularDesign("design matrix does not have full column rank")
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "r", int(self.r))
        object.__setattr__(self, "c", int(self.c))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.y.shape[1]

    @cached_property
    def beta_hat(self) -> np.ndarray:
        return least_squares_beta(self)

    @cached_property
    def residuals(self) -> np.ndarray:
        return self.y - self.x @ self.beta_hat

    @cached_property
    def scatter(self) -> np.ndarray:
        """``S = S*(beta_hat)``."""
        return residual_scatter(self, self.beta_hat)


def cells(scaled_residuals: np.ndarray, r: int, c: int) -> np.ndarray:
    """Reshape n x q rows into the n stacked ``r x c`` matrices ``E_i``."""
    n = scaled_residuals.shape[0]
    return scaled_residuals.reshape(n, c, r).transpose(0, 2, 1)


# --- Parameter types ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class CorrelationFactor:
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"correlation factor must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NotPositiveDefinite("correlation factor has non-finite entries")
        if not is_symmetric(m):
            raise ValueError("correlation factor must be symmetric")
        if np.abs(np.diag(m) - 1.0).max() > UNIT_DIAG_TOL:
            raise ValueError("correlation factor must have a unit diagonal")
        m = symmetrize(m)
        np.fill_diagonal(m, 1.0)
        off = m[~np.eye(m.shape[0], dtype=bool)]
        if off.size and np.abs(off).max() >= 1.0:
            raise NotPositiveDefinite("correlation factor has an off-diagonal entry outside (-1, 1)")
        check_conditioning(m, SINGULAR_RTOL)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "CorrelationFactor":
        return cls(np.eye(dim))


@dataclass(frozen=True, eq=False)
class StdDevVector:
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("standard deviation vector is empty")
        if not np.all(np.isfinite(v)) or np.any(v <= 0.0):
            raise ValueError("standard deviations must be positive and finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class RelaxedParams:
    """A point of the relaxed space: covariance factors plus scales."""

    u: np.ndarray
    v: np.ndarray
    w: StdDevVector

    def __post_init__(self) -> None:
        u = symmetrize(self.u)
        v = symmetrize(self.v)
        cholesky(u, label="u")
        cholesky(v, label="v")
        w = self.w if isinstance(self.w, StdDevVector) else StdDevVector(self.w)
        if len(w) != u.shape[0] * v.shape[0]:
            raise ValueError(f"w has length {len(w)}, expected {u.shape[0] * v.shape[0]}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)


@dataclass(frozen=True, eq=False)
class SepCorParams:
    """Identified point ``(beta, U, V, w)``."""

    beta: np.ndarray
    u: CorrelationFactor
    v: CorrelationFactor
    w: StdDevVector

    def __post_init__(self) -> None:
        beta = np.array(self.beta, dtype=float)
        if beta.ndim == 1:
            beta = beta[None, :]
        q = self.u.dim * self.v.dim
        if len(self.w) != q or beta.shape[1] != q:
            raise ValueError(f"inconsistent dimensions: q={q}, w={len(self.w)}, beta={beta.shape}")
        object.__setattr__(self, "beta", beta)

    @property
    def correlation(self) -> np.ndarray:
        return kronecker(self.u.matrix, self.v.matrix)

    @property
    def std_devs(self) -> np.ndarray:
        return self.w.values

    @property
    def sigma(self) -> np.ndarray:
        return assemble_sigma(self.u, self.v, self.w)


class CovarianceParams(Protocol):
    beta: np.ndarray

    @property
    def sigma(self) -> np.ndarray: ...


class Termination(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    INDEFINITE_U = "IndefiniteU"
    INDEFINITE_V = "IndefiniteV"

    @property
    def indefinite(self) -> bool:
        return self in (Termination.INDEFINITE_U, Termination.INDEFINITE_V)


@dataclass(frozen=True, eq=False)
class FitReport:
    params: CovarianceParams
    nll: float
    objective_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    termination: Termination = Termination.CONVERGED
    model: str = "sepcor"

    @property
    def sigma(self) -> np.ndarray:
        return self.params.sigma

    @property
    def converged(self) -> bool:
        return self.termination is Termination.CONVERGED


# --- Parameter counting -------------------------------------------------


def parameter_count(model: str, r: int, c: int) -> int:
    """Number of free covariance parameters of ``sepcor``, ``sepcov`` or ``unrestricted``."""
    q = r * c
    corr = c * (c - 1) // 2 + r * (r - 1) // 2
    if model == "sepcor":
        return corr + q
    if model == "sepcov":
        return corr + r + c - 1
    if model == "unrestricted":
        return q * (q + 1) // 2
    raise ValueError(f"unknown model {model!r}")


def extra_parameters(r: int, c: int) -> int:
    """Parameters separable correlation needs beyond separable covariance: rc - r - c + 1."""
    return parameter_count("sepcor", r, c) - parameter_count("sepcov", r, c)


# --- Estimating equations -----------------------------------------------


def least_squares_beta(d: Dataset) -> np.ndarray:
    """``(X'X)^{-1} X'Y`` through a QR solve."""
    qfac, rfac = np.linalg.qr(d.x)
    if _rcond_of_gram(rfac) < DESIGN_RCOND:
        raise SingularDesign("X'X is numerically singular")
    return la.solve_triangular(rfac, qfac.T @ d.y, lower=False, check_finite=False)


def residual_scatter(d: Dataset, beta: np.ndarray) -> np.ndarray:
    resid = d.y - d.x @ np.asarray(beta, dtype=float)
    return symmetrize(resid.T @ resid / d.n)


def _as_matrix(a: Union[np.ndarray, CorrelationFactor]) -> np.ndarray:
    return a.matrix if isinstance(a, CorrelationFactor) else np.asarray(a, dtype=float)


def _as_values(w: Union[np.ndarray, StdDevVector]) -> np.ndarray:
    return w.values if isinstance(w, StdDevVector) else np.asarray(w, dtype=float).ravel()


def assemble_sigma(u, v, w) -> np.ndarray:
    """``W (U kron V) W``."""
    u, v, w = _as_matrix(u), _as_matrix(v), _as_values(w)
    if w.size != u.shape[0] * v.shape[0]:
        raise ValueError(f"w has length {w.size}, expected {u.shape[0] * v.shape[0]}")
    return w[:, None] * kronecker(u, v) * w[None, :]


def gram_u(e: np.ndarray, lv: np.ndarray) -> np.ndarray:
    """``sum_i E_i^T V^{-1} E_i`` given the lower Cholesky factor of V."""
    n, r, c = e.shape
    flat = e.transpose(1, 0, 2).reshape(r, n * c)
    solved = la.cho_solve((lv, True), flat, check_finite=False).reshape(r, n, c).transpose(1, 0, 2)
    return symmetrize(np.einsum("nrc,nrd->cd", e, solved))


def gram_v(e: np.ndarray, lu: np.ndarray) -> np.ndarray:
    """``sum_i E_i U^{-1} E_i^T`` given the lower Cholesky factor of U."""
    n, r, c = e.shape
    flat = e.transpose(2, 0, 1).reshape(c, n * r)
    solved = la.cho_solve((lu, True), flat, check_finite=False).reshape(c, n, r).transpose(1, 0, 2)
    return symmetrize(np.einsum("nrc,ncs->rs", e, solved))


def objective_from_factors(resid: np.ndarray, lu: np.ndarray, lv: np.ndarray, w: np.ndarray) -> float:
    """Eq. (2) form of the objective from residual rows and Cholesky factors of U and V."""
    n = resid.shape[0]
    c, r = lu.shape[0], lv.shape[0]
    e = cells(resid / w, r, c)
    m = gram_u(e, lv)
    trace = float(np.trace(la.cho_solve((lu, True), m, check_finite=False))) / n
    logdet = 2.0 * float(np.log(w).sum()) + r * logdet_from_cholesky(lu) + c * logdet_from_cholesky(lv)
    return logdet + trace


def gaussian_nll(s: np.ndarray, sigma: np.ndarray) -> float:
    """``log|Sigma| + tr(S Sigma^{-1})`` for an arbitrary SPD ``Sigma``."""
    low = cholesky(sigma, label="sigma")
    solved = la.cho_solve((low, True), np.asarray(s, dtype=float), check_finite=False)
    return logdet_from_cholesky(low) + float(np.trace(solved))


def nll_g(d: Dataset, beta, u, v, w) -> float:
    """Negative log-likelihood, up to scaling and constants, at any ``beta``."""
    u, v, w = _as_matrix(u), _as_matrix(v), _as_values(w)
    if u.shape[0] * v.shape[0] != d.q or (u.shape[0], v.shape[0]) != (d.c, d.r):
        raise ValueError(f"factor dims {u.shape[0]}x{v.shape[0]} do not match layout c={d.c}, r={d.r}")
    resid = d.y - d.x @ np.asarray(beta, dtype=float)
    return objective_from_factors(resid, cholesky(u, label="u"), cholesky(v, label="v"), w)


def nll_g1(d: Dataset, u, v, w) -> float:
    """Profiled objective ``g1(U, V, W) = g(beta_hat, U, V, W)``."""
    return nll_g(d, d.beta_hat, u, v, w)


def nll_unrestricted(d: Dataset) -> float:
    """Minimum of the objective over all SPD Sigma: ``log|S| + q``."""
    return logdet_spd(d.scatter, label="sigma") + d.q


# --- Identification -----------------------------------------------------


def rescale(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Move ``diag(U)`` and ``diag(V)`` into ``w`` keeping ``W (U kron V) W`` fixed."""
    su = np.sqrt(np.diag(u))
    sv = np.sqrt(np.diag(v))
    u_id = u / np.outer(su, su)
    v_id = v / np.outer(sv, sv)
    np.fill_diagonal(u_id, 1.0)
    np.fill_diagonal(v_id, 1.0)
    return symmetrize(u_id), symmetrize(v_id), w * np.kron(su, sv)


def identify(y: RelaxedParams) -> Tuple[CorrelationFactor, CorrelationFactor, StdDevVector]:
    """The unique identified point with the same Sigma as ``y``."""
    u_id, v_id, w_id = rescale(y.u, y.v, y.w.values)
    try:
        u = CorrelationFactor(u_id)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(str(exc), label="u") from exc
    try:
        v = CorrelationFactor(v_id)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(str(exc), label="v") from exc
    return u, v, StdDevVector(w_id)


# --- Diagnostics --------------------------------------------------------


def standardized_residuals(d: Dataset, fit: CovarianceParams) -> np.ndarray:
    """Rows ``Sigma^{-1/2} (y_i - beta' x_i)``."""
    resid = d.y - d.x @ np.asarray(fit.beta, dtype=float)
    return resid @ sym_inv_sqrt(fit.sigma, label="sigma")


def random_stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


def random_correlation(dim: int, df: int, rng: np.random.Generator) -> np.ndarray:
    """Wishart(df, I) draw rescaled to a unit diagonal."""
    z = rng.standard_normal((df, dim))
    a = z.T @ z
    s = np.sqrt(np.diag(a))
    out = symmetrize(a / np.outer(s, s))
    np.fill_diagonal(out, 1.0)
    return out
