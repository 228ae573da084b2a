"""Likelihood ratios and parametric bootstrap tests of separability.

Two tests are supported:

* ``cov-vs-cor``: H0 separable covariance against HA separable correlation.
* ``cor-vs-unrestricted``: H0 separable correlation against HA an
  unrestricted covariance matrix (requires ``n >= p + q``).

All ratios are handled on the log scale. The reject rule compares the
observed ratio with the ``ceil(alpha * B)``-th smallest bootstrap ratio.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from functools import partial
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.errors import (
    DegenerateScatter,
    InsufficientReplicates,
    NotEstimable,
    NotPositiveDefinite,
    SingularDesign,
)
from core.linalg import cholesky
from core.model import (
    Dataset,
    RelaxedParams,
    Termination,
    gaussian_nll,
    nll_unrestricted,
    random_stream,
    residual_scatter,
)
from core.parallel import map_ordered
from core.solver import SolverConfig, fit_sepcor, fit_sepcov, fit_unrestricted

logger = logging.getLogger(__name__)

MAX_FAILED_FRACTION = 0.10


class HypothesisKind(str, enum.Enum):
    COV_VS_COR = "cov-vs-cor"
    COR_VS_UNRESTRICTED = "cor-vs-unrestricted"


class HypothesisTest(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: HypothesisKind
    b_replicates: int = Field(default=99, ge=1)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0, lt=2**64)

    def check_dataset(self, d: Dataset) -> None:
        if self.kind is HypothesisKind.COR_VS_UNRESTRICTED and d.n < d.p + d.q:
            raise NotEstimable(
                f"cor-vs-unrestricted needs n >= p + q (n={d.n}, p={d.p}, q={d.q}); "
                "the likelihood under the alternative is unbounded otherwise"
            )


@dataclass(frozen=True, eq=False)
class TestResult:
    __test__ = False

    log_lr_observed: float
    log_xi: List[float]
    p_value: float
    reject: bool
    alpha: float
    failed_replicates: int = 0

    @property
    def lr_observed(self) -> float:
        return math.exp(self.log_lr_observed)

    @property
    def xi(self) -> List[float]:
        return [math.exp(v) for v in self.log_xi]

    @property
    def b_effective(self) -> int:
        return len(self.log_xi)


# --- Sampling and ratios -----------------------------------------------------


def sample_mvn(beta: np.ndarray, sigma: np.ndarray, x: np.ndarray, seed: int, replicate: int = 0) -> np.ndarray:
    """``n x q`` draws with rows ``beta' x_i + L z_i``.

    ``z`` is read row-major from the Philox stream keyed by
    ``(seed, replicate)``, so row ``i`` depends only on ``(seed, replicate, i)``.
    """
    x = np.asarray(x, dtype=float)
    beta = np.asarray(beta, dtype=float)
    low = cholesky(sigma, label="sigma")
    z = random_stream(seed, replicate).standard_normal((x.shape[0], low.shape[0]))
    return x @ beta + z @ low.T


def log_likelihood_ratio(d: Dataset, sigma0: np.ndarray, sigma_a: np.ndarray, beta: np.ndarray) -> float:
    """``log L(Sigma0, beta) - log L(SigmaA, beta)``."""
    s = residual_scatter(d, beta)
    return -0.5 * d.n * (gaussian_nll(s, sigma0) - gaussian_nll(s, sigma_a))


def likelihood_ratio(d: Dataset, sigma0: np.ndarray, sigma_a: np.ndarray, beta: np.ndarray) -> float:
    return math.exp(log_likelihood_ratio(d, sigma0, sigma_a, beta))


@dataclass(frozen=True, eq=False)
class NestedFit:
    """Null and alternative fits of one dataset, both profiled at ``beta_hat``."""

    n: int
    beta: np.ndarray
    null_sigma: np.ndarray
    alt_sigma: np.ndarray
    g_null: float
    g_alt: float
    terminations: Tuple[Termination, ...]

    @property
    def failed(self) -> bool:
        return any(t.indefinite for t in self.terminations)

    @property
    def log_ratio(self) -> float:
        return -0.5 * self.n * (self.g_null - self.g_alt)


def nested_fit(d: Dataset, kind: HypothesisKind, cfg: Optional[SolverConfig] = None) -> NestedFit:
    """Fit the null and alternative models of ``kind``.

    For ``cov-vs-cor`` the separable correlation fit starts from the
    separable covariance estimate, so its objective can only be lower.
    """
    kind = HypothesisKind(kind)
    cfg = cfg or SolverConfig()
    if kind is HypothesisKind.COV_VS_COR:
        cov = fit_sepcov(d, cfg)
        if cov.termination.indefinite:
            return NestedFit(d.n, d.beta_hat, cov.sigma, cov.sigma, cov.nll, cov.nll, (cov.termination,))
        start = RelaxedParams(cov.params.u_tilde, cov.params.v_tilde, np.ones(d.q))
        cor = fit_sepcor(d, cfg, start=start)
        return NestedFit(d.n, d.beta_hat, cov.sigma, cor.sigma, cov.nll, cor.nll, (cov.termination, cor.termination))
    cor = fit_sepcor(d, cfg)
    unrestricted = fit_unrestricted(d)
    return NestedFit(d.n, d.beta_hat, cor.sigma, unrestricted, cor.nll, nll_unrestricted(d), (cor.termination,))


# --- Bootstrap --------------------------------------------------------------


def quantile_decision(
    log_lr_observed: float, log_xi: Sequence[float], alpha: float, failed_replicates: int = 0
) -> TestResult:
    """Reject when the observed log ratio is below the ``ceil(alpha B)``-th smallest ``log xi``."""
    b = len(log_xi)
    if b == 0:
        raise InsufficientReplicates("no bootstrap replicate succeeded")
    ordered = sorted(log_xi)
    k = min(max(1, math.ceil(alpha * b - 1e-9)), b)
    reject = log_lr_observed < ordered[k - 1]
    p_value = (1 + sum(1 for v in log_xi if v <= log_lr_observed)) / (b + 1)
    return TestResult(float(log_lr_observed), [float(v) for v in log_xi], p_value, bool(reject), alpha, failed_replicates)


def _bootstrap_replicate(
    x: np.ndarray,
    beta: np.ndarray,
    sigma0: np.ndarray,
    r: int,
    c: int,
    t: HypothesisTest,
    cfg: SolverConfig,
    replicate: int,
) -> Optional[float]:
    y = sample_mvn(beta, sigma0, x, t.seed, replicate)
    try:
        fits = nested_fit(Dataset(y, r, c, x), t.kind, cfg)
    except (NotEstimable, NotPositiveDefinite, DegenerateScatter, SingularDesign) as exc:
        logger.debug("bootstrap replicate %d failed: %s", replicate, exc)
        return None
    if fits.failed:
        return None
    return fits.log_ratio


def bootstrap_test(
    d: Dataset,
    t: HypothesisTest,
    cfg: Optional[SolverConfig] = None,
    workers: int = 1,
    observed: Optional[NestedFit] = None,
) -> TestResult:
    """Parametric bootstrap likelihood ratio test.

    Replicate ``j`` is simulated from ``(beta_hat, Sigma0_hat)`` with the
    stream ``(t.seed, j)`` and refitted under both models (``beta`` is
    re-estimated). Replicates whose refits hit an indefinite update are
    excluded and counted. ``observed`` reuses fits of ``d`` made with the
    same ``t.kind`` and ``cfg``.
    """
    cfg = cfg or SolverConfig()
    t.check_dataset(d)
    if observed is None:
        observed = nested_fit(d, t.kind, cfg)
    if observed.failed:
        statuses = ", ".join(s.value for s in observed.terminations)
        raise NotEstimable(f"fit on the observed data did not produce a valid estimate ({statuses})")

    job = partial(_bootstrap_replicate, d.x, observed.beta, observed.null_sigma, d.r, d.c, t, cfg)
    logger.info("bootstrap %s: %d replicates on %d worker(s)", t.kind.value, t.b_replicates, workers)
    outcomes = map_ordered(job, range(t.b_replicates), workers)
    log_xi = [v for v in outcomes if v is not None]
    failed = t.b_replicates - len(log_xi)
    if failed > MAX_FAILED_FRACTION * t.b_replicates:
        raise InsufficientReplicates(f"{failed} of {t.b_replicates} bootstrap refits failed")
    if failed:
        logger.warning("excluded %d of %d bootstrap replicates with indefinite refits", failed, t.b_replicates)
    return quantile_decision(observed.log_ratio, log_xi, t.alpha, failed)
