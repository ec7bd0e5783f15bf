"""Shared fixtures: the two-asset reference parameter set used across the
test suite (matrix vol-of-vol A, mean reversion M, leverage rho, Wishart
shape alpha, initial covariance and spots), plus desk-scale profile knobs."""

from __future__ import annotations

import numpy as np
import pytest

# Two-asset reference parameter set (used by most integration-level tests).
A_REF = np.array([[0.21, 0.14], [0.14, 0.21]])
M_REF = np.array([[-2.5, -1.5], [-1.5, -2.5]])
RHO_REF = np.array([-0.6, -0.3])
ALPHA_REF = 7.14283
SIGMA0_REF = np.array([[0.10, 0.07], [0.07, 0.10]])
S0_REF = np.array([100.0, 100.0])
HORIZON_REF = 1.0
STEPS_REF = 250


@pytest.fixture(scope="session")
def wasc_ref():
    from covhedge import models

    return models.WascParams(
        d=2,
        mean_rev=M_REF.copy(),
        vol_of_vol=A_REF.copy(),
        leverage=RHO_REF.copy(),
        alpha=ALPHA_REF,
    )


@pytest.fixture(scope="session")
def bns_ref():
    from covhedge import models

    return models.BnsParams(
        d=2,
        mean_rev=M_REF.copy(),
        jump_intensity=3.0,
        wishart_shape=3.0,
        wishart_scale=np.array([[0.02, 0.008], [0.008, 0.02]]),
        leverage_diag=np.array([-0.8, -0.5]),
    )


@pytest.fixture(scope="session")
def state_ref():
    from covhedge import models

    return models.MarketState.from_spot(t=0.0, spot=S0_REF.copy(),
                                        cov=SIGMA0_REF.copy())
