"""Fourier pricing of transform-catalog payoffs under the affine models."""

from __future__ import annotations

import numpy as np

from .. import models, payoffs, transforms

__all__ = ["integrated_cov_rate", "fourier_price"]


def integrated_cov_rate(params, state: models.MarketState,
                        horizon: float) -> np.ndarray:
    """Mean integrated covariance over [t, T], divided by the span: the
    covariance-per-unit-time proxy used to adapt contour decay."""
    tau = horizon - state.t
    if tau <= 0:
        raise ValueError("horizon must exceed the state time")
    if params.kind == "wasc":
        imap = models.wasc_integrated_mean(params, state.t, horizon)
        from .. import matcalc
        total = matcalc.mat(imap.map @ matcalc.vec(state.cov) + imap.offset)
    else:
        total = models.bns_integrated_mean(params, state.cov, tau)
    return total / tau


def fourier_price(params, state: models.MarketState, horizon: float,
                  kernel: payoffs.PayoffKernel, damping=None,
                  nodes_per_dim: int = 24, decay=None,
                  max_skip_mass: float = 1e-3) -> float:
    """E[payoff(S_T)] by contour quadrature against the moment transform.

    Transform-domain failures at individual nodes are skipped; the
    evaluation refuses to produce a number when the skipped nodes carry
    more than max_skip_mass of the contour weight.
    """
    tau = horizon - state.t
    if decay is None:
        decay = payoffs.suggest_decay(
            kernel, integrated_cov_rate(params, state, horizon), tau,
            nodes_per_dim)
    ct = payoffs.build_contour(kernel, damping=damping,
                               nodes_per_dim=nodes_per_dim, decay=decay)
    grid = transforms.transform_grid(params, np.array([tau]), ct.model_args)
    expo = (grid.phi[0]
            + ct.model_args @ state.log_spot
            + np.einsum("mab,ab->m", grid.psi[0], state.cov))
    valid = grid.valid[0] & (expo.real <= 700.0)
    hv = np.where(valid, np.exp(np.where(valid, expo, 0.0)), np.nan)
    return payoffs.contour_price(ct, hv, valid=valid,
                                 max_skip_mass=max_skip_mass)
