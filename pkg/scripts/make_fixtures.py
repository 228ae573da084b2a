#!/usr/bin/env python3
"""
Write the deterministic CSV fixtures used by the test suite and the README.

  identity_n40_r2_c3.csv   n=40 draws from N(0, I_6), seed 20240101
  evenly_n320_r5_c5.csv    n=320 draws from the separable correlation model
                           with AR(1)(0.5) factors and W evenly spaced in [0.1, 10]

Examples:
  python -m scripts.make_fixtures --outdir tests/fixtures
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from core.inference import sample_mvn
from core.io import write_matrix_csv
from core.simulation import Scenario, WKind

IDENTITY_SEED = 20240101
EVENLY_SEED = 320


def identity_fixture(n: int = 40, r: int = 2, c: int = 3, seed: int = IDENTITY_SEED) -> np.ndarray:
    q = r * c
    return sample_mvn(np.zeros((1, q)), np.eye(q), np.ones((n, 1)), seed)


def evenly_spaced_fixture(n: int = 320, seed: int = EVENLY_SEED) -> np.ndarray:
    s = Scenario(n=n, r=5, c=5, w_kind=WKind.EVENLY_SPACED, m=1, seed=seed)
    _, _, _, sigma = s.truth()
    return sample_mvn(np.zeros((1, s.q)), sigma, np.ones((n, 1)), seed)


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--outdir", type=str, default="tests/fixtures", help="output directory")
    args = ap.parse_args()

    out = Path(args.outdir).resolve()
    out.mkdir(parents=True, exist_ok=True)
    paths = [
        write_matrix_csv(out / "identity_n40_r2_c3.csv", identity_fixture()),
        write_matrix_csv(out / "evenly_n320_r5_c5.csv", evenly_spaced_fixture()),
    ]
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
