import os

import numpy as np
import pytest

from core.errors import InvalidRho
from core.inference import HypothesisKind
from core.model import Termination
from core.simulation import (
    REPORT_COLUMNS,
    AR1,
    CompoundSymmetric,
    InferencePlan,
    RescaledWishart,
    Scenario,
    SimulationConfig,
    WKind,
    gen_ar1,
    gen_cs,
    gen_rescaled_wishart,
    gen_w,
    naive_lrt,
    run_scenario,
    run_simulation,
    separability_df,
    spectral_error,
)
from core.solver import SolverConfig

ALL_CORES = os.cpu_count() or 1


def test_ar1_entries():
    u = gen_ar1(4, 0.5).matrix
    assert u[0, 3] == pytest.approx(0.125)
    assert u[2, 1] == pytest.approx(0.5)
    np.testing.assert_array_equal(gen_ar1(3, 0.0).matrix, np.eye(3))
    with pytest.raises(InvalidRho):
        gen_ar1(3, 1.0)


def test_compound_symmetry_range():
    m = gen_cs(3, 0.3).matrix
    assert m[0, 2] == 0.3 and m[1, 1] == 1.0
    gen_cs(3, -0.49)
    with pytest.raises(InvalidRho):
        gen_cs(3, -0.5)
    with pytest.raises(InvalidRho):
        gen_cs(2, 1.0)


def test_rescaled_wishart_is_reproducible():
    a = gen_rescaled_wishart(4, 6, seed=9).matrix
    b = gen_rescaled_wishart(4, 6, seed=9).matrix
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(np.diag(a), 1.0)
    with pytest.raises(ValueError):
        gen_rescaled_wishart(4, 3, seed=9)


def test_std_dev_patterns():
    np.testing.assert_allclose(gen_w(4, WKind.EVENLY_SPACED).values, [0.1, 3.4, 6.7, 10.0])
    np.testing.assert_array_equal(gen_w(3).values, np.ones(3))


def test_spectral_error():
    assert spectral_error(np.diag([1.0, 2.0]), np.eye(2)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        spectral_error(np.eye(2), np.eye(3))


def test_separability_degrees_of_freedom():
    assert separability_df(HypothesisKind.COV_VS_COR, 5, 5) == 16
    assert separability_df(HypothesisKind.COR_VS_UNRESTRICTED, 5, 5) == 325 - 45


def test_scenario_validation():
    s = Scenario(n=20, r=3, c=2)
    assert s.q == 6 and isinstance(s.u_kind, AR1)
    with pytest.raises(ValueError):
        Scenario(n=20, r=3, c=2, v_kind=CompoundSymmetric(rho=-0.6))
    with pytest.raises(ValueError):
        Scenario(n=20, r=3, c=4, u_kind=RescaledWishart(df=3))
    with pytest.raises(ValueError):
        Scenario(n=1, r=2, c=2)
    s = Scenario.model_validate({"n": 10, "r": 2, "c": 2, "u_kind": {"kind": "cs", "rho": 0.2}})
    assert isinstance(s.u_kind, CompoundSymmetric)


def test_naive_test_returns_decision(make_dataset):
    d = make_dataset(60, 2, 2, seed=14)
    assert naive_lrt(d, HypothesisKind.COV_VS_COR) in (True, False)
    assert naive_lrt(d, HypothesisKind.COR_VS_UNRESTRICTED) in (True, False)


def test_single_replicate_row_is_deterministic():
    s = Scenario(n=30, r=2, c=2, m=1, seed=3)
    first = run_scenario(s).row()
    second = run_scenario(s).row()
    assert list(first) == list(REPORT_COLUMNS)
    assert first == second
    assert first["term_converged"] == 1
    assert first["se_err_cor"] is None
    assert first["err_ur"] is not None
    assert first["rej_cov"] is None


def test_rows_do_not_depend_on_workers():
    s = Scenario(n=25, r=2, c=3, w_kind=WKind.EVENLY_SPACED, m=4, seed=11)
    plan = InferencePlan(naive=True)
    serial = run_scenario(s, SolverConfig(), plan, workers=1).row()
    pooled = run_scenario(s, SolverConfig(), plan, workers=2).row()
    assert serial == pooled


def test_unrestricted_error_only_when_estimable():
    rep = run_scenario(Scenario(n=10, r=2, c=9, m=2, seed=1))
    assert rep.err_ur.value is None
    assert rep.rej_cor.value is None


def test_bootstrap_columns_filled_when_requested():
    s = Scenario(n=30, r=2, c=2, m=2, seed=5)
    rep = run_scenario(s, tests=InferencePlan(naive=True, bootstrap=True, b_replicates=9))
    assert 0.0 <= rep.rej_cov.value <= 1.0
    for est in (rep.rej_cov_b, rep.rej_cor_b):
        assert est.value is None or 0.0 <= est.value <= 1.0


def test_termination_modes_for_tiny_samples():
    tiny = run_scenario(Scenario(n=4, r=2, c=9, m=100, seed=902))
    assert tiny.termination_histogram["sepcor"][Termination.INDEFINITE_U] >= 90
    assert tiny.row()["term_indef_u"] >= 90
    assert tiny.err_cor.value is None
    enough = run_scenario(Scenario(n=10, r=2, c=9, m=100, seed=910))
    assert enough.termination_histogram["sepcor"][Termination.CONVERGED] == 100


def test_bootstrap_reuses_the_replicate_fits(monkeypatch):
    import core.inference as inference
    import core.simulation as simulation

    real = inference.nested_fit
    calls = []

    def counting(d, kind, cfg=None):
        calls.append(HypothesisKind(kind))
        return real(d, kind, cfg)

    monkeypatch.setattr(inference, "nested_fit", counting)
    monkeypatch.setattr(simulation, "nested_fit", counting)
    plan = InferencePlan(naive=True, bootstrap=True, b_replicates=9)
    rep = run_scenario(Scenario(n=40, r=2, c=2, m=1, seed=5), tests=plan)
    assert rep.rej_cov.value is not None
    # one observed fit per hypothesis plus one per bootstrap replicate
    assert calls.count(HypothesisKind.COV_VS_COR) == 1 + 9
    assert calls.count(HypothesisKind.COR_VS_UNRESTRICTED) == 1 + 9


def test_run_simulation_keeps_scenario_order():
    cfg = SimulationConfig(scenarios=[Scenario(n=12, r=2, c=2, m=1, seed=1), Scenario(n=14, r=2, c=2, m=1, seed=2)])
    reports = run_simulation(cfg)
    assert [rep.scenario.n for rep in reports] == [12, 14]


# --- desk-scale acceptance runs ------------------------------------------------


@pytest.mark.slow
def test_error_row_n160_identity():
    rep = run_scenario(Scenario(n=160, r=5, c=5, m=200, seed=160), workers=ALL_CORES)
    assert abs(rep.err_cor.value - 0.57) <= 0.12
    assert abs(rep.err_cov.value - 0.52) <= 0.12


@pytest.mark.slow
def test_error_ordering_n320_evenly_spaced():
    rep = run_scenario(Scenario(n=320, r=5, c=5, w_kind=WKind.EVENLY_SPACED, m=100, seed=320), workers=ALL_CORES)
    assert rep.err_cor.value < rep.err_cov.value
    assert rep.err_ur.value > rep.err_cor.value


@pytest.mark.slow
def test_bootstrap_size_and_naive_conservatism_under_null():
    plan = InferencePlan(naive=True, bootstrap=True, b_replicates=99, alpha=0.05)
    rep = run_scenario(Scenario(n=160, r=5, c=5, m=200, seed=1600), tests=plan, workers=ALL_CORES)
    assert 0.02 <= rep.rej_cov_b.value <= 0.10
    assert 0.02 <= rep.rej_cor_b.value <= 0.10
    assert rep.rej_cor.value > 0.15


@pytest.mark.slow
def test_bootstrap_power_evenly_spaced():
    plan = InferencePlan(naive=False, bootstrap=True, b_replicates=99)
    s = Scenario(n=320, r=5, c=5, w_kind=WKind.EVENLY_SPACED, m=50, seed=3200)
    rep = run_scenario(s, tests=plan, workers=ALL_CORES)
    assert rep.rej_cov_b.value >= 0.95
