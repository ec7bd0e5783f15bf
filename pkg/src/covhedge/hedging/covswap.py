"""Covariance swap valuation and hedging systems.

The swap pays the realized quadratic covariation of a log-price pair over
[0, T] minus the fair strike.  Under both affine models the conditional
expectation of the remaining covariation is linear in the current covariance
state, so the swap value decomposes as

    value_t = realized_t + Tr(G(t) Sigma_t) + c(t) - strike

with deterministic matrix/scalar coefficients built from drift flows of the
covariance process.  Everything deterministic is precomputed on the
rebalancing grid; pathwise values then come straight from the simulated
covariance panel and its integral.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import matcalc, models

__all__ = [
    "CovswapSystem",
    "wasc_covswap_system",
    "bns_covswap_system",
    "covswap_values",
    "covswap_payoff",
    "wasc_covswap_variance",
    "wishart_pair_mean",
    "wishart_pair_square",
    "wishart_pair_trace_cross",
    "wishart_trace_square",
]


def _lift_flows(lift: np.ndarray, deltas: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """exp(lift * delta), its time integral, and the double time integral,
    batched over deltas.  Power series with scaling and squaring, so large
    mean-reversion norms stay accurate."""
    n = lift.shape[0]
    deltas = np.asarray(deltas, dtype=float)
    dmax = float(deltas.max(initial=0.0))
    nrm = np.linalg.norm(lift, np.inf) * dmax
    doublings = max(0, int(np.ceil(np.log2(max(nrm, 1e-300))))) if nrm > 1 \
        else 0
    scaled = deltas / (2.0 ** doublings)

    eye = np.eye(n)
    flow = np.zeros(deltas.shape + (n, n))
    int1 = np.zeros_like(flow)
    int2 = np.zeros_like(flow)
    ej = eye.copy()                       # lift^j / j!
    tp = np.ones_like(scaled)             # delta^j
    for j in range(30):
        flow += tp[..., None, None] * ej
        int1 += (tp * scaled)[..., None, None] * (ej / (j + 1))
        int2 += (tp * scaled * scaled)[..., None, None] * (
            ej / ((j + 1) * (j + 2)))
        ej = ej @ lift / (j + 1)
        tp = tp * scaled
    for _ in range(doublings):
        step = scaled[..., None, None]
        int2 = int2 + step * int1 + flow @ int2
        int1 = int1 + flow @ int1
        flow = flow @ flow
        scaled = 2.0 * scaled
    return flow, int1, int2


def _pair_matrix(d: int, pair: tuple[int, int]) -> np.ndarray:
    i, j = pair
    if not (0 <= i < d and 0 <= j < d):
        raise ValueError(f"pair {pair} out of range for d={d}")
    e = np.zeros((d, d))
    e[i, j] += 0.5
    e[j, i] += 0.5
    return e


@dataclass(frozen=True)
class CovswapSystem:
    """Deterministic coefficients of one covariance swap on a time grid.

    theta_core is the precomputed state-free part of the hedge: for the
    continuous model the spot positions are theta_core[k] / S_t directly;
    for the jump model theta_core[k] is the jump covariation vector that
    still must be solved against the pathwise spot covariation matrix.
    """

    kind: str
    pair: tuple[int, int]
    horizon: float
    times: np.ndarray          # (K+1,)
    g_mats: np.ndarray         # (K+1, d, d)
    c_vals: np.ndarray         # (K+1,)
    fair_strike: float
    theta_core: np.ndarray     # (K+1, d)


def _time_grid(horizon: float, n_steps: int) -> np.ndarray:
    if n_steps < 1:
        raise ValueError("need at least one step")
    return np.linspace(0.0, horizon, n_steps + 1)


def wasc_covswap_system(params: models.WascParams, sigma0: np.ndarray,
                        horizon: float, pair: tuple[int, int],
                        n_steps: int) -> CovswapSystem:
    times = _time_grid(horizon, n_steps)
    e_pair = _pair_matrix(params.d, pair)
    lift = matcalc.kron_lift(params.mean_rev)
    _, int1, int2 = _lift_flows(lift, horizon - times)
    g_mats = np.array([matcalc.mat(a.T @ matcalc.vec(e_pair)) for a in int1])
    c_vals = np.einsum("a,kab,b->k", matcalc.vec(e_pair), int2,
                       matcalc.vec(params.omega))
    strike = float(np.trace(g_mats[0] @ sigma0) + c_vals[0])
    a_rho = params.vol_of_vol.T @ params.leverage
    theta_core = 2.0 * np.einsum("kab,b->ka", g_mats, a_rho)
    return CovswapSystem(kind="wasc", pair=tuple(pair), horizon=horizon,
                         times=times, g_mats=g_mats, c_vals=c_vals,
                         fair_strike=strike, theta_core=theta_core)


# ---------------------------------------------------------------------------
# Wishart mark moments (used by the jump model's swap coefficients and by
# the moment tests); n is the shape, theta the scale matrix
# ---------------------------------------------------------------------------

def wishart_pair_mean(theta: np.ndarray, n: float, i: int, j: int) -> float:
    return n * n * theta[i, i] * theta[j, j] + 2.0 * n * theta[i, j] ** 2


def wishart_pair_square(theta: np.ndarray, n: float, i: int, j: int) -> float:
    """E[(X_ii X_jj)^2] for X Wishart(n, theta)."""
    tii, tjj, tij = theta[i, i], theta[j, j], theta[i, j]
    return n * (n + 2.0) * (
        n * (n + 2.0) * tii ** 2 * tjj ** 2
        + 8.0 * (n + 2.0) * tii * tjj * tij ** 2
        + 8.0 * tij ** 4)


def wishart_pair_trace_cross(theta: np.ndarray, n: float, g: np.ndarray,
                             i: int, j: int) -> float:
    """E[X_ii X_jj Tr(G X)]."""
    tgt = theta @ g @ theta
    tr = float(np.trace(g @ theta))
    tii, tjj, tij = theta[i, i], theta[j, j], theta[i, j]
    return (n ** 3 * tii * tjj * tr
            + 8.0 * n * tij * tgt[i, j]
            + 2.0 * n * n * (tij ** 2 * tr + tii * tgt[j, j]
                             + tjj * tgt[i, i]))


def wishart_trace_square(theta: np.ndarray, n: float, g: np.ndarray) -> float:
    """E[Tr(G X)^2]."""
    gt = g @ theta
    return 2.0 * n * float(np.trace(gt @ gt)) + n * n * float(np.trace(gt)) ** 2


def _tilted_scale(params: models.BnsParams, r: np.ndarray) -> np.ndarray:
    theta = params.wishart_scale
    shifted = np.linalg.inv(theta) - 2.0 * r
    w = np.linalg.eigvalsh(shifted)
    if w.min() <= 0:
        raise ValueError("mark tilt leaves the transform strip")
    return np.linalg.inv(shifted)


def bns_covswap_system(params: models.BnsParams, sigma0: np.ndarray,
                       horizon: float, pair: tuple[int, int],
                       n_steps: int) -> CovswapSystem:
    d = params.d
    i, j = pair
    times = _time_grid(horizon, n_steps)
    e_pair = _pair_matrix(d, pair)
    lift = matcalc.kron_lift(params.mean_rev.T)   # vec(M'X + XM)
    _, int1, int2 = _lift_flows(lift, horizon - times)
    g_mats = np.array([matcalc.mat(a @ matcalc.vec(e_pair)) for a in int1])

    lam = params.jump_intensity
    n = params.wishart_shape
    theta = params.wishart_scale
    rho = params.leverage_diag
    a_ij = rho[i] * rho[j]
    jump_pair = lam * a_ij * wishart_pair_mean(theta, n, i, j)
    drive = lam * params.jump_mean()              # covariance drift from jumps
    c_vals = (np.einsum("a,kab,b->k", matcalc.vec(drive), int2,
                        matcalc.vec(e_pair))
              + (horizon - times) * jump_pair)
    strike = float(np.trace(g_mats[0] @ sigma0) + c_vals[0])

    # jump covariation of each spot with the swap value, per grid time
    theta_core = np.zeros((times.size, d))
    for k in range(d):
        r_k = np.zeros((d, d))
        r_k[k, k] = rho[k]
        mgf_k, ok = models.wishart_mgf(theta, n, r_k)
        if not ok:
            raise ValueError("spot jump transform outside the mark strip")
        tilted = _tilted_scale(params, r_k)
        pair_tilt = a_ij * wishart_pair_mean(tilted, n, i, j)
        pair_base = a_ij * wishart_pair_mean(theta, n, i, j)
        for kt in range(times.size):
            g = g_mats[kt]
            theta_core[kt, k] = lam * (
                mgf_k.real * (pair_tilt + n * np.trace(g @ tilted))
                - (pair_base + n * np.trace(g @ theta)))
    return CovswapSystem(kind="bns", pair=tuple(pair), horizon=horizon,
                         times=times, g_mats=g_mats, c_vals=c_vals,
                         fair_strike=strike, theta_core=theta_core)


def covswap_values(system: CovswapSystem, integrated_cov: np.ndarray,
                   cov: np.ndarray) -> np.ndarray:
    """Pathwise swap values on the grid: (P, K+1) from the simulated
    covariance panel (P, K+1, d, d) and its running integral."""
    i, j = system.pair
    realized = 0.5 * (integrated_cov[..., i, j] + integrated_cov[..., j, i])
    remaining = np.einsum("kab,pkab->pk", system.g_mats, cov)
    return realized + remaining + system.c_vals - system.fair_strike


def covswap_payoff(system: CovswapSystem, integrated_cov: np.ndarray
                   ) -> np.ndarray:
    i, j = system.pair
    final = integrated_cov[:, -1]
    return (0.5 * (final[:, i, j] + final[:, j, i])
            - system.fair_strike)


def wasc_covswap_variance(params: models.WascParams, sigma0: np.ndarray,
                          horizon: float, pair: tuple[int, int],
                          n_sub: int = 128) -> float:
    """Residual variance of the dynamically hedged swap, in closed form up
    to a one-dimensional time integral (composite Simpson).

    The swap's covariance exposure orthogonal to the spot moves carries
    variance rate 4 Tr(G Sigma G V_perp); taking expectations moves the
    mean covariance flow inside the trace.
    """
    if n_sub % 2 or n_sub < 2:
        raise ValueError("n_sub must be even and positive")
    e_pair = _pair_matrix(params.d, pair)
    lift = matcalc.kron_lift(params.mean_rev)
    ts = np.linspace(0.0, horizon, n_sub + 1)
    flow_t, int1_t, _ = _lift_flows(lift, ts)
    _, int1_rem, _ = _lift_flows(lift, horizon - ts)
    vperp = (params.vol_of_vol.T
             @ (np.eye(params.d) - np.outer(params.leverage, params.leverage))
             @ params.vol_of_vol)
    v0 = matcalc.vec(sigma0)
    vom = matcalc.vec(params.omega)
    vals = np.empty(ts.size)
    for k in range(ts.size):
        g = matcalc.mat(int1_rem[k].T @ matcalc.vec(e_pair))
        mean_cov = matcalc.mat(flow_t[k] @ v0 + int1_t[k] @ vom)
        vals[k] = 4.0 * np.trace(g @ mean_cov @ g @ vperp)
    h = horizon / n_sub
    weights = np.ones(n_sub + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    return float(h / 3.0 * weights @ vals)
