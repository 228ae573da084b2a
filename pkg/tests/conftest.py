from pathlib import Path

import numpy as np
import pytest

from core.inference import sample_mvn
from core.io import write_matrix_csv
from core.model import Dataset, assemble_sigma
from core.simulation import gen_ar1, gen_w, WKind

FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def identity_csv(tmp_path_factory) -> Path:
    """n=40, r=2, c=3 draws from N(0, I); regenerated so it never goes stale."""
    from scripts.make_fixtures import identity_fixture

    path = tmp_path_factory.mktemp("fixtures") / "identity_n40_r2_c3.csv"
    write_matrix_csv(path, identity_fixture())
    return path


def separable_sigma(r: int, c: int, rho: float = 0.5, w_kind: WKind = WKind.IDENTITY) -> np.ndarray:
    return assemble_sigma(gen_ar1(c, rho), gen_ar1(r, rho), gen_w(r * c, w_kind))


def simulated_dataset(n: int, r: int, c: int, seed: int, sigma=None, x=None) -> Dataset:
    q = r * c
    sigma = np.eye(q) if sigma is None else sigma
    x = np.ones((n, 1)) if x is None else x
    beta = np.zeros((x.shape[1], q))
    return Dataset(sample_mvn(beta, sigma, x, seed), r, c, x)


@pytest.fixture
def make_dataset():
    return simulated_dataset


@pytest.fixture
def make_sigma():
    return separable_sigma
