"""Shared fixtures: benchmark parameter sets used across recovery tests."""

from __future__ import annotations

import numpy as np
import pytest

from shotcox.shotnoise import MarginalShotParams
from shotcox.dependence import MarginalTail

# Motor portfolio scale: two margins with daily claim means near 84 and 81.
PARAMS_A = MarginalShotParams(rho=33.77, eta=0.17, kappa=2.37)
PARAMS_B = MarginalShotParams(rho=18.74, eta=0.18, kappa=1.28)
DELTA_BENCH = 0.4214

TAILS_BENCH = (
    MarginalTail(PARAMS_A.rho, PARAMS_A.eta),
    MarginalTail(PARAMS_B.rho, PARAMS_B.eta),
)


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
