"""Monte-Carlo study of estimation error and test size/power.

Each replicate ``j`` of a :class:`Scenario` draws data with ``x_i = 1`` and
``beta = 0`` from ``Sigma = W (U kron V) W`` using the stream
``(scenario.seed, j)``, fits all three estimators and optionally runs the
naive chi-square and bootstrap likelihood ratio tests. Replicates are
independent, so reports do not depend on the worker count.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Annotated, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats

from core.errors import InvalidRho, NotEstimable, SepcorError
from core.inference import HypothesisKind, HypothesisTest, NestedFit, bootstrap_test, nested_fit, sample_mvn
from core.linalg import spectral_norm
from core.model import (
    CorrelationFactor,
    Dataset,
    StdDevVector,
    Termination,
    assemble_sigma,
    extra_parameters,
    parameter_count,
    random_correlation,
    random_stream,
)
from core.parallel import map_ordered
from core.solver import SolverConfig, fit_sepcor, fit_sepcov, fit_unrestricted

logger = logging.getLogger(__name__)

ESTIMATORS = ("sepcor", "sepcov")


# --- Scenario description ----------------------------------------------------


class AR1(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["ar1"] = "ar1"
    rho: float = 0.5


class CompoundSymmetric(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["cs"] = "cs"
    rho: float


class RescaledWishart(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["wishart"] = "wishart"
    df: int
    seed: int = Field(default=0, ge=0)


FactorKind = Annotated[Union[AR1, CompoundSymmetric, RescaledWishart], Field(discriminator="kind")]


class WKind(str, enum.Enum):
    IDENTITY = "identity"
    EVENLY_SPACED = "evenly_spaced"


class Scenario(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=2)
    r: int = Field(ge=1)
    c: int = Field(ge=1)
    u_kind: FactorKind = AR1()
    v_kind: FactorKind = AR1()
    w_kind: WKind = WKind.IDENTITY
    w_lo: float = Field(default=0.1, gt=0.0)
    w_hi: float = Field(default=10.0, gt=0.0)
    m: int = Field(default=200, ge=1)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _factors_fit_dims(self) -> "Scenario":
        try:
            gen_factor(self.u_kind, self.c)
            gen_factor(self.v_kind, self.r)
        except InvalidRho as exc:
            raise ValueError(str(exc)) from exc
        return self

    @property
    def q(self) -> int:
        return self.r * self.c

    def truth(self) -> Tuple[CorrelationFactor, CorrelationFactor, StdDevVector, np.ndarray]:
        u = gen_factor(self.u_kind, self.c)
        v = gen_factor(self.v_kind, self.r)
        w = gen_w(self.q, self.w_kind, self.w_lo, self.w_hi)
        return u, v, w, assemble_sigma(u, v, w)


class InferencePlan(BaseModel):
    """Which tests ``run_scenario`` runs on every replicate."""

    model_config = ConfigDict(frozen=True)

    naive: bool = True
    bootstrap: bool = False
    b_replicates: int = Field(default=99, ge=1)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)


class SimulationConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    scenarios: List[Scenario] = Field(min_length=1)
    solver: SolverConfig = SolverConfig()
    tests: Optional[InferencePlan] = None


# --- Generators --------------------------------------------------------------


def gen_ar1(dim: int, rho: float) -> CorrelationFactor:
    if not -1.0 < rho < 1.0:
        raise InvalidRho(f"AR(1) needs |rho| < 1, got {rho}")
    idx = np.arange(dim)
    return CorrelationFactor(np.power(float(rho), np.abs(idx[:, None] - idx[None, :])))


def gen_cs(dim: int, rho: float) -> CorrelationFactor:
    lower = -1.0 / (dim - 1) if dim > 1 else -math.inf
    if not lower < rho < 1.0:
        raise InvalidRho(f"compound symmetry of dimension {dim} needs {lower:.6g} < rho < 1, got {rho}")
    m = np.full((dim, dim), float(rho))
    np.fill_diagonal(m, 1.0)
    return CorrelationFactor(m)


def gen_rescaled_wishart(dim: int, df: int, seed: int) -> CorrelationFactor:
    if df < dim:
        raise ValueError(f"Wishart degrees of freedom {df} must be at least the dimension {dim}")
    return CorrelationFactor(random_correlation(dim, df, random_stream(seed)))


def gen_factor(kind: FactorKind, dim: int) -> CorrelationFactor:
    if isinstance(kind, AR1):
        return gen_ar1(dim, kind.rho)
    if isinstance(kind, CompoundSymmetric):
        return gen_cs(dim, kind.rho)
    return gen_rescaled_wishart(dim, kind.df, kind.seed)


def gen_w(q: int, kind: WKind = WKind.IDENTITY, lo: float = 0.1, hi: float = 10.0) -> StdDevVector:
    """Identity, or ``q`` evenly spaced values from ``lo`` to ``hi`` in vec order."""
    if q < 1:
        raise ValueError("q must be positive")
    if WKind(kind) is WKind.IDENTITY:
        return StdDevVector(np.ones(q))
    return StdDevVector(np.linspace(lo, hi, q))


def spectral_error(est: np.ndarray, truth: np.ndarray) -> float:
    est, truth = np.asarray(est, dtype=float), np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {truth.shape}")
    return spectral_norm(est - truth)


# --- Naive tests -------------------------------------------------------------


def separability_df(kind: HypothesisKind, r: int, c: int) -> int:
    """Degrees of freedom of the chi-square reference for ``kind``."""
    if HypothesisKind(kind) is HypothesisKind.COV_VS_COR:
        return extra_parameters(r, c)
    return parameter_count("unrestricted", r, c) - parameter_count("sepcor", r, c)


def naive_decision(fits: NestedFit, kind: HypothesisKind, r: int, c: int, alpha: float = 0.05) -> bool:
    df = separability_df(kind, r, c)
    if df <= 0:
        return False
    statistic = -2.0 * fits.log_ratio
    return bool(statistic > stats.chi2.ppf(1.0 - alpha, df))


def naive_lrt(
    d: Dataset, kind: HypothesisKind, cfg: Optional[SolverConfig] = None, alpha: float = 0.05
) -> bool:
    """Classical likelihood ratio test against the asymptotic chi-square."""
    kind = HypothesisKind(kind)
    fits = nested_fit(d, kind, cfg)
    if fits.failed:
        raise NotEstimable(f"{kind.value}: a fit ended on an indefinite update")
    return naive_decision(fits, kind, d.r, d.c, alpha)


# --- Replicates and aggregation ----------------------------------------------


@dataclass(frozen=True)
class Estimate:
    value: Optional[float] = None
    se: Optional[float] = None


@dataclass(frozen=True)
class ReplicateOutcome:
    errors: Dict[str, Optional[float]]
    rejections: Dict[str, Optional[bool]]
    terminations: Dict[str, Termination]


@dataclass(frozen=True)
class ScenarioReport:
    scenario: Scenario
    err_cor: Estimate
    err_cov: Estimate
    err_ur: Estimate
    rej_cov: Estimate
    rej_cov_b: Estimate
    rej_cor: Estimate
    rej_cor_b: Estimate
    termination_histogram: Dict[str, Dict[Termination, int]] = field(default_factory=dict)

    def row(self) -> Dict[str, object]:
        s = self.scenario
        hist = self.termination_histogram.get("sepcor", {})
        return {
            "n": s.n,
            "r": s.r,
            "c": s.c,
            "w_kind": s.w_kind.value,
            "err_cor": self.err_cor.value,
            "se_err_cor": self.err_cor.se,
            "err_cov": self.err_cov.value,
            "se_err_cov": self.err_cov.se,
            "err_ur": self.err_ur.value,
            "se_err_ur": self.err_ur.se,
            "rej_cov": self.rej_cov.value,
            "rej_cov_b": self.rej_cov_b.value,
            "rej_cor": self.rej_cor.value,
            "rej_cor_b": self.rej_cor_b.value,
            "term_converged": hist.get(Termination.CONVERGED, 0),
            "term_maxiter": hist.get(Termination.MAX_ITERATIONS, 0),
            "term_indef_u": hist.get(Termination.INDEFINITE_U, 0),
            "term_indef_v": hist.get(Termination.INDEFINITE_V, 0),
        }


REPORT_COLUMNS = (
    "n", "r", "c", "w_kind",
    "err_cor", "se_err_cor", "err_cov", "se_err_cov", "err_ur", "se_err_ur",
    "rej_cov", "rej_cov_b", "rej_cor", "rej_cor_b",
    "term_converged", "term_maxiter", "term_indef_u", "term_indef_v",
)  # fmt: skip


def _bootstrap_seed(seed: int, replicate: int, kind: HypothesisKind) -> int:
    tag = 0 if kind is HypothesisKind.COV_VS_COR else 1
    return int(np.random.SeedSequence([seed, replicate, tag]).generate_state(1, dtype=np.uint64)[0])


def _test_outcomes(
    d: Dataset, s: Scenario, cfg: SolverConfig, plan: InferencePlan, replicate: int
) -> Dict[str, Optional[bool]]:
    out: Dict[str, Optional[bool]] = {"rej_cov": None, "rej_cov_b": None, "rej_cor": None, "rej_cor_b": None}
    kinds = [(HypothesisKind.COV_VS_COR, "rej_cov")]
    if d.n - d.p > d.q:
        kinds.append((HypothesisKind.COR_VS_UNRESTRICTED, "rej_cor"))
    if not (plan.naive or plan.bootstrap):
        return out
    for kind, key in kinds:
        try:
            fits = nested_fit(d, kind, cfg)
        except SepcorError as exc:
            logger.debug("replicate %d: %s fits failed: %s", replicate, kind.value, exc)
            continue
        if plan.naive and not fits.failed:
            out[key] = naive_decision(fits, kind, d.r, d.c, plan.alpha)
        if plan.bootstrap:
            test = HypothesisTest(
                kind=kind,
                b_replicates=plan.b_replicates,
                alpha=plan.alpha,
                seed=_bootstrap_seed(s.seed, replicate, kind),
            )
            try:
                out[f"{key}_b"] = bootstrap_test(d, test, cfg, observed=fits).reject
            except SepcorError as exc:
                logger.debug("replicate %d: bootstrap %s failed: %s", replicate, kind.value, exc)
    return out


def run_replicate(
    s: Scenario, cfg: SolverConfig, plan: Optional[InferencePlan], replicate: int
) -> ReplicateOutcome:
    _, _, _, sigma = s.truth()
    x = np.ones((s.n, 1))
    y = sample_mvn(np.zeros((1, s.q)), sigma, x, s.seed, replicate)
    d = Dataset(y, s.r, s.c, x)

    cor = fit_sepcor(d, cfg)
    cov = fit_sepcov(d, cfg)
    errors: Dict[str, Optional[float]] = {
        "err_cor": spectral_error(cor.sigma, sigma) if cor.converged else None,
        "err_cov": spectral_error(cov.sigma, sigma) if cov.converged else None,
        "err_ur": None,
    }
    if d.n - d.p > d.q:
        try:
            errors["err_ur"] = spectral_error(fit_unrestricted(d), sigma)
        except NotEstimable:
            pass
    rejections = _test_outcomes(d, s, cfg, plan, replicate) if plan is not None else {}
    return ReplicateOutcome(errors, rejections, {"sepcor": cor.termination, "sepcov": cov.termination})


def _mean_se(values: Sequence[Optional[float]]) -> Estimate:
    vals = np.array([v for v in values if v is not None], dtype=float)
    if vals.size == 0:
        return Estimate()
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else None
    return Estimate(float(vals.mean()), se)


def _rate(flags: Sequence[Optional[bool]]) -> Estimate:
    vals = [bool(f) for f in flags if f is not None]
    if not vals:
        return Estimate()
    p = sum(vals) / len(vals)
    return Estimate(p, math.sqrt(p * (1.0 - p) / len(vals)))


def summarize(s: Scenario, outcomes: Sequence[ReplicateOutcome]) -> ScenarioReport:
    hist = {name: {t: 0 for t in Termination} for name in ESTIMATORS}
    for o in outcomes:
        for name, status in o.terminations.items():
            hist[name][status] += 1
    return ScenarioReport(
        scenario=s,
        err_cor=_mean_se([o.errors["err_cor"] for o in outcomes]),
        err_cov=_mean_se([o.errors["err_cov"] for o in outcomes]),
        err_ur=_mean_se([o.errors["err_ur"] for o in outcomes]),
        rej_cov=_rate([o.rejections.get("rej_cov") for o in outcomes]),
        rej_cov_b=_rate([o.rejections.get("rej_cov_b") for o in outcomes]),
        rej_cor=_rate([o.rejections.get("rej_cor") for o in outcomes]),
        rej_cor_b=_rate([o.rejections.get("rej_cor_b") for o in outcomes]),
        termination_histogram=hist,
    )


def run_scenario(
    s: Scenario,
    cfg: Optional[SolverConfig] = None,
    tests: Optional[InferencePlan] = None,
    workers: int = 1,
) -> ScenarioReport:
    cfg = cfg or SolverConfig()
    logger.info("scenario n=%d r=%d c=%d w=%s: %d replicates", s.n, s.r, s.c, s.w_kind.value, s.m)
    outcomes = map_ordered(partial(run_replicate, s, cfg, tests), range(s.m), workers)
    report = summarize(s, outcomes)
    bad = s.m - report.termination_histogram["sepcor"][Termination.CONVERGED]
    if bad:
        logger.warning("scenario n=%d r=%d c=%d: %d of %d sepcor fits did not converge", s.n, s.r, s.c, bad, s.m)
    return report


def run_simulation(config: SimulationConfig, workers: int = 1) -> List[ScenarioReport]:
    return [run_scenario(s, config.solver, config.tests, workers) for s in config.scenarios]
