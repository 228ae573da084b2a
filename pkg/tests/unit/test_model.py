from dataclasses import dataclass

import numpy as np
import pytest

from core.errors import InputError, NotPositiveDefinite, SingularDesign
from core.model import (
    CorrelationFactor,
    Dataset,
    RelaxedParams,
    StdDevVector,
    assemble_sigma,
    cells,
    extra_parameters,
    gaussian_nll,
    identify,
    nll_g,
    nll_g1,
    nll_unrestricted,
    parameter_count,
    random_correlation,
    random_stream,
    rescale,
    standardized_residuals,
)


def _random_spd(dim, rng):
    a = rng.standard_normal((dim + 2, dim))
    return a.T @ a + 0.05 * np.eye(dim)


def test_dataset_layout_mismatch_message():
    with pytest.raises(InputError) as info:
        Dataset(np.zeros((4, 5)), 3, 2)
    assert "r*c=6 != q=5" in str(info.value)


def test_dataset_needs_two_rows_and_finite_values():
    with pytest.raises(InputError):
        Dataset(np.zeros((1, 4)), 2, 2)
    y = np.ones((3, 4))
    y[1, 2] = np.inf
    with pytest.raises(InputError):
        Dataset(y, 2, 2)


def test_dataset_rejects_rank_deficient_design():
    x = np.column_stack([np.ones(6), np.ones(6)])
    with pytest.raises(SingularDesign):
        Dataset(np.random.default_rng(0).standard_normal((6, 4)), 2, 2, x)


def test_dataset_defaults_to_intercept_and_is_read_only():
    y = np.random.default_rng(1).standard_normal((5, 6))
    d = Dataset(y, 2, 3)
    assert (d.n, d.p, d.q) == (5, 1, 6)
    np.testing.assert_allclose(d.beta_hat, y.mean(axis=0, keepdims=True))
    with pytest.raises(ValueError):
        d.y[0, 0] = 1.0


def test_cells_follow_column_stacked_layout():
    y = np.arange(6.0)[None, :]
    e = cells(y, 2, 3)
    np.testing.assert_array_equal(e[0], [[0.0, 2.0, 4.0], [1.0, 3.0, 5.0]])


def test_correlation_factor_validation():
    with pytest.raises(ValueError):
        CorrelationFactor(np.array([[1.0, 0.2], [0.3, 1.0]]))
    with pytest.raises(ValueError):
        CorrelationFactor(np.array([[2.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(NotPositiveDefinite):
        CorrelationFactor(np.array([[1.0, 1.0], [1.0, 1.0]]))
    u = CorrelationFactor.identity(3)
    assert u.dim == 3
    with pytest.raises(ValueError):
        StdDevVector(np.array([1.0, 0.0]))


def test_parameter_counts():
    assert parameter_count("sepcor", 5, 5) == 45
    assert parameter_count("sepcov", 5, 5) == 29
    assert parameter_count("unrestricted", 5, 5) == 325
    assert extra_parameters(5, 5) == 16
    assert extra_parameters(5, 15) == 5 * 15 - (5 + 15 - 1)
    with pytest.raises(ValueError):
        parameter_count("diagonal", 2, 2)


def test_structured_objective_matches_dense_gaussian():
    rng = np.random.default_rng(5)
    r, c, n = 3, 2, 30
    d = Dataset(rng.standard_normal((n, r * c)), r, c)
    u = random_correlation(c, c + 3, rng)
    v = random_correlation(r, r + 3, rng)
    w = rng.uniform(0.5, 2.0, r * c)
    dense = gaussian_nll(d.scatter, assemble_sigma(u, v, w))
    assert nll_g1(d, u, v, w) == pytest.approx(dense, rel=1e-10)
    beta = d.beta_hat + 0.1
    resid = d.y - d.x @ beta
    assert nll_g(d, beta, u, v, w) == pytest.approx(gaussian_nll(resid.T @ resid / n, assemble_sigma(u, v, w)), rel=1e-10)


def test_unrestricted_objective_is_minimum():
    rng = np.random.default_rng(9)
    d = Dataset(rng.standard_normal((40, 4)), 2, 2)
    assert nll_unrestricted(d) == pytest.approx(gaussian_nll(d.scatter, d.scatter), rel=1e-12)
    assert nll_unrestricted(d) <= gaussian_nll(d.scatter, np.eye(4))


def test_identify_preserves_sigma_and_is_idempotent():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        r, c = rng.integers(1, 5, size=2)
        u = _random_spd(c, rng)
        v = _random_spd(r, rng)
        w = rng.uniform(0.1, 10.0, r * c)
        point = RelaxedParams(u, v, w)
        u_id, v_id, w_id = identify(point)
        ref = assemble_sigma(point.u, point.v, point.w)
        got = assemble_sigma(u_id, v_id, w_id)
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())
        again = identify(RelaxedParams(u_id.matrix, v_id.matrix, w_id))
        np.testing.assert_array_equal(again[0].matrix, u_id.matrix)
        np.testing.assert_array_equal(again[1].matrix, v_id.matrix)
        np.testing.assert_array_equal(again[2].values, w_id.values)


def test_rescale_moves_diagonals_into_w():
    u = np.diag([4.0, 1.0])
    v = np.diag([9.0])
    u_id, v_id, w = rescale(u, v, np.ones(2))
    np.testing.assert_array_equal(u_id, np.eye(2))
    np.testing.assert_array_equal(v_id, np.eye(1))
    np.testing.assert_allclose(w, [6.0, 3.0])


@dataclass
class _Dense:
    beta: np.ndarray
    sigma: np.ndarray


def test_standardized_residuals_whiten_the_scatter():
    rng = np.random.default_rng(3)
    d = Dataset(rng.standard_normal((50, 4)) @ np.diag([1.0, 2.0, 3.0, 4.0]), 2, 2)
    z = standardized_residuals(d, _Dense(d.beta_hat, d.scatter))
    np.testing.assert_allclose(z.T @ z / d.n, np.eye(4), atol=1e-10)


def test_random_stream_is_keyed():
    a = random_stream(7, 1).standard_normal(5)
    b = random_stream(7, 1).standard_normal(5)
    c = random_stream(7, 2).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
