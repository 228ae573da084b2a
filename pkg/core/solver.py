"""Maximum likelihood estimators for the three covariance models.

* :func:`fit_sepcor` - block coordinate descent for separable correlation
  (updates of U and V over covariance matrices, rescaling back to
  correlation matrices, then cyclic closed-form updates of each w_j).
* :func:`fit_sepcov` - the flip-flop algorithm for separable covariance.
* :func:`fit_unrestricted` - the residual scatter ``S*(beta_hat)``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from functools import partial
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.errors import DegenerateScatter, IndefiniteU, IndefiniteV, NotEstimable, NotPositiveDefinite
from core.linalg import (
    check_conditioning,
    cholesky,
    kronecker,
    spd_inverse_from_cholesky,
    symmetrize,
)
from core.model import (
    SINGULAR_RTOL,
    CorrelationFactor,
    Dataset,
    FitReport,
    RelaxedParams,
    SepCorParams,
    StdDevVector,
    Termination,
    cells,
    gram_u,
    gram_v,
    identify,
    objective_from_factors,
    random_correlation,
    random_stream,
    rescale,
)
from core.parallel import map_ordered

logger = logging.getLogger(__name__)

W_FLOOR = 1e-8


class InitStrategy(str, enum.Enum):
    IDENTITY = "identity"
    SAMPLE = "sample"
    RANDOM = "random"


class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(default=1e-10, gt=0)
    max_iterations: int = Field(default=10000, ge=1)
    init: InitStrategy = InitStrategy.IDENTITY
    seed: int = Field(default=0, ge=0)


@dataclass(frozen=True, eq=False)
class SepCovParams:
    """Separable covariance point ``(beta, U~, V~)`` normalized so ``U~[0, 0] = 1``."""

    beta: np.ndarray
    u_tilde: np.ndarray
    v_tilde: np.ndarray

    def __post_init__(self) -> None:
        u = symmetrize(self.u_tilde)
        v = symmetrize(self.v_tilde)
        cholesky(u, label="u")
        cholesky(v, label="v")
        if u[0, 0] != 1.0:
            raise ValueError(f"U~ must be normalized to U~[0, 0] = 1, got {u[0, 0]!r}")
        object.__setattr__(self, "u_tilde", u)
        object.__setattr__(self, "v_tilde", v)
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))

    @property
    def sigma(self) -> np.ndarray:
        return kronecker(self.u_tilde, self.v_tilde)

    @property
    def std_devs(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sigma))


# --- Closed-form partial minimizers -------------------------------------


def _update_u(e: np.ndarray, lv: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n, r, _ = e.shape
    u = gram_u(e, lv) / (n * r)
    try:
        lu = cholesky(u, label="u")
        check_conditioning(u, SINGULAR_RTOL, label="u")
    except NotPositiveDefinite as exc:
        raise IndefiniteU(str(exc)) from exc
    return u, lu


def _update_v(e: np.ndarray, lu: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n, _, c = e.shape
    v = gram_v(e, lu) / (n * c)
    try:
        lv = cholesky(v, label="v")
        check_conditioning(v, SINGULAR_RTOL, label="v")
    except NotPositiveDefinite as exc:
        raise IndefiniteV(str(exc)) from exc
    return v, lv


def update_u(e: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``sum_i E_i^T V^{-1} E_i / (n r)``; raises :class:`IndefiniteU`."""
    return _update_u(np.asarray(e, dtype=float), cholesky(v, label="v"))[0]


def update_v(e: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``sum_i E_i U^{-1} E_i^T / (n c)``; raises :class:`IndefiniteV`."""
    return _update_v(np.asarray(e, dtype=float), cholesky(u, label="u"))[0]


def _solve_w(uinv: np.ndarray, vinv: np.ndarray, w: np.ndarray, s: np.ndarray, j: int) -> float:
    k, l = divmod(j, vinv.shape[0])
    rinv_row = np.kron(uinv[k], vinv[l])
    s_jj = s[j, j]
    if not s_jj > 0.0:
        raise DegenerateScatter(f"S[{j}, {j}] = {s_jj!r} is not positive")
    terms = rinv_row * s[:, j] / w
    a = float(terms.sum() - terms[j])
    b = 4.0 * float(rinv_row[j]) * s_jj
    root = np.sqrt(a * a + b)
    if a >= 0.0:
        return 0.5 * (a + root)
    # same root, written to avoid cancellation
    return b / (2.0 * (root - a))


def update_w(u, v, w_current, s: np.ndarray, j: int) -> float:
    """Positive root of ``w^2 - a w - R^{-1}_{jj} S_{jj} = 0``, the partial minimizer in ``w_j``."""
    u = u.matrix if isinstance(u, CorrelationFactor) else np.asarray(u, dtype=float)
    v = v.matrix if isinstance(v, CorrelationFactor) else np.asarray(v, dtype=float)
    w = w_current.values if isinstance(w_current, StdDevVector) else np.asarray(w_current, dtype=float)
    uinv = spd_inverse_from_cholesky(cholesky(u, label="u"))
    vinv = spd_inverse_from_cholesky(cholesky(v, label="v"))
    return _solve_w(uinv, vinv, w, np.asarray(s, dtype=float), j)


# --- Initialization ------------------------------------------------------


def _sample_factors(d: Dataset, sd: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    corr = d.scatter / np.outer(sd, sd)
    blocks = corr.reshape(d.c, d.r, d.c, d.r)
    u = np.einsum("kjlj->kl", blocks) / d.r
    v = np.einsum("kjkl->jl", blocks) / d.c
    return u, v


def initialize(
    d: Dataset, strategy: InitStrategy = InitStrategy.IDENTITY, seed: int = 0
) -> Tuple[CorrelationFactor, CorrelationFactor, StdDevVector]:
    """Starting point; ``w`` is always the marginal standard deviations."""
    strategy = InitStrategy(strategy)
    sd = np.maximum(np.sqrt(np.clip(np.diag(d.scatter), 0.0, None)), W_FLOOR)
    w = StdDevVector(sd)
    if strategy is InitStrategy.SAMPLE:
        u, v = _sample_factors(d, sd)
        try:
            return CorrelationFactor(u), CorrelationFactor(v), w
        except (NotPositiveDefinite, ValueError) as exc:
            logger.warning("sample-based start is not positive definite (%s); using identity", exc)
    elif strategy is InitStrategy.RANDOM:
        rng = random_stream(seed)
        u = random_correlation(d.c, d.c + 2, rng)
        v = random_correlation(d.r, d.r + 2, rng)
        return CorrelationFactor(u), CorrelationFactor(v), w
    return CorrelationFactor.identity(d.c), CorrelationFactor.identity(d.r), w


# --- Separable correlation -------------------------------------------------


def _sepcor_step(resid, s, lv, w, r, c):
    e = cells(resid / w, r, c)
    u_t, lu_t = _update_u(e, lv)
    v_t, lv_t = _update_v(e, lu_t)
    u_id, v_id, w_id = rescale(u_t, v_t, w)
    try:
        CorrelationFactor(u_id)
    except NotPositiveDefinite as exc:
        raise IndefiniteU(str(exc)) from exc
    try:
        CorrelationFactor(v_id)
    except NotPositiveDefinite as exc:
        raise IndefiniteV(str(exc)) from exc
    lu_id = lu_t / np.sqrt(np.diag(u_t))[:, None]
    lv_id = lv_t / np.sqrt(np.diag(v_t))[:, None]
    uinv = spd_inverse_from_cholesky(lu_id)
    vinv = spd_inverse_from_cholesky(lv_id)
    for j in range(w_id.size):
        w_id[j] = _solve_w(uinv, vinv, w_id, s, j)
    return u_id, v_id, w_id, lu_id, lv_id


def fit_sepcor(d: Dataset, cfg: Optional[SolverConfig] = None, start: Optional[RelaxedParams] = None) -> FitReport:
    """Separable correlation MLE by block coordinate descent.

    Indefinite updates of U or V end the run with the matching termination
    status and the last accepted iterate; nothing is raised for them.
    ``start`` overrides ``cfg.init`` and is identified before use.
    """
    cfg = cfg or SolverConfig()
    if d.n <= d.p + d.q:
        logger.warning("n=%d <= p + q=%d: a maximum likelihood estimate may not exist", d.n, d.p + d.q)
    s = d.scatter
    if np.any(np.diag(s) <= 0.0):
        raise DegenerateScatter("residual scatter has a zero diagonal entry (constant response column)")
    if start is None:
        u0, v0, w0 = initialize(d, cfg.init, cfg.seed)
    else:
        u0, v0, w0 = identify(start)
    u, v, w = u0.matrix, v0.matrix, w0.values.copy()
    lu, lv = cholesky(u, label="u"), cholesky(v, label="v")
    resid = d.residuals

    g = objective_from_factors(resid, lu, lv, w)
    trace = [g]
    termination = Termination.MAX_ITERATIONS
    iterations = 0
    for _ in range(cfg.max_iterations):
        try:
            u_new, v_new, w_new, lu_new, lv_new = _sepcor_step(resid, s, lv, w, d.r, d.c)
        except IndefiniteU:
            termination = Termination.INDEFINITE_U
            break
        except IndefiniteV:
            termination = Termination.INDEFINITE_V
            break
        g_new = objective_from_factors(resid, lu_new, lv_new, w_new)
        u, v, w, lu, lv = u_new, v_new, w_new, lu_new, lv_new
        iterations += 1
        trace.append(g_new)
        change = abs(g - g_new)
        g = g_new
        if change <= cfg.epsilon:
            termination = Termination.CONVERGED
            break

    logger.debug("sepcor: %s after %d iterations, g1=%.12g", termination.value, iterations, g)
    params = SepCorParams(d.beta_hat, CorrelationFactor(u), CorrelationFactor(v), StdDevVector(w))
    return FitReport(params, g, trace, iterations, termination, model="sepcor")


@dataclass(frozen=True, eq=False)
class MultiStartResult:
    best: FitReport
    best_index: int
    reports: List[FitReport]


def fit_sepcor_multistart(
    d: Dataset, cfg: Optional[SolverConfig] = None, starts: int = 5, workers: int = 1
) -> MultiStartResult:
    """Random starts ``seed, seed + 1, ...``; keeps the lowest final objective.

    Runs that ended on an indefinite update rank after every other run; ties
    go to the lowest start index.
    """
    cfg = cfg or SolverConfig()
    configs = [cfg.model_copy(update={"init": InitStrategy.RANDOM, "seed": cfg.seed + i}) for i in range(starts)]
    reports = map_ordered(partial(_run_start, d), configs, workers)
    best_index = min(range(len(reports)), key=lambda i: (reports[i].termination.indefinite, reports[i].nll, i))
    return MultiStartResult(reports[best_index], best_index, reports)


def _run_start(d: Dataset, cfg: SolverConfig) -> FitReport:
    return fit_sepcor(d, cfg)


# --- Separable covariance ---------------------------------------------------


def fit_sepcov(d: Dataset, cfg: Optional[SolverConfig] = None) -> FitReport:
    """Flip-flop MLE of ``Sigma = U~ kron V~`` with ``U~[0, 0] = 1``."""
    cfg = cfg or SolverConfig()
    if d.n <= d.r / d.c + d.c / d.r + 1:
        logger.warning("n=%d is below the flip-flop uniqueness bound r/c + c/r + 1", d.n)
    resid = d.residuals
    ones = np.ones(d.q)
    e = cells(resid, d.r, d.c)
    u0, v0, _ = initialize(d, cfg.init, cfg.seed)
    u, v = u0.matrix.copy(), v0.matrix.copy()
    lu, lv = cholesky(u, label="u"), cholesky(v, label="v")

    g = objective_from_factors(resid, lu, lv, ones)
    trace = [g]
    termination = Termination.MAX_ITERATIONS
    iterations = 0
    for _ in range(cfg.max_iterations):
        try:
            u_new, lu_new = _update_u(e, lv)
        except IndefiniteU:
            termination = Termination.INDEFINITE_U
            break
        try:
            v_new, lv_new = _update_v(e, lu_new)
        except IndefiniteV:
            termination = Termination.INDEFINITE_V
            break
        scale = u_new[0, 0]
        u_new, v_new = u_new / scale, v_new * scale
        lu_new, lv_new = lu_new / np.sqrt(scale), lv_new * np.sqrt(scale)
        u_new[0, 0] = 1.0
        g_new = objective_from_factors(resid, lu_new, lv_new, ones)
        u, v, lu, lv = u_new, v_new, lu_new, lv_new
        iterations += 1
        trace.append(g_new)
        change = abs(g - g_new)
        g = g_new
        if change <= cfg.epsilon:
            termination = Termination.CONVERGED
            break

    if u[0, 0] != 1.0:
        scale = u[0, 0]
        u, v = u / scale, v * scale
        u[0, 0] = 1.0
    logger.debug("sepcov: %s after %d iterations, g1=%.12g", termination.value, iterations, g)
    return FitReport(SepCovParams(d.beta_hat, u, v), g, trace, iterations, termination, model="sepcov")


# --- Unrestricted -----------------------------------------------------------


def fit_unrestricted(d: Dataset) -> np.ndarray:
    """``S*(beta_hat)``; exists only when ``n - p > q``."""
    if d.n - d.p <= d.q:
        raise NotEstimable(f"unrestricted MLE needs n - p > q (n={d.n}, p={d.p}, q={d.q})")
    s = d.scatter
    try:
        check_conditioning(s, SINGULAR_RTOL, label="sigma")
    except NotPositiveDefinite as exc:
        raise NotEstimable(f"residual scatter is singular: {exc}") from exc
    return s.copy()
