"""Model parameter containers, admissibility validation, and closed-form
first moments of the covariance state.

Two affine covariance classes are supported:

* ``WascParams`` -- matrix-valued Wishart covariance diffusion with vector
  correlation between return and covariance shocks.
* ``BnsParams``  -- covariance moves only by PSD jumps of a compound-Poisson
  matrix subordinator with Wishart-distributed marks and exponential decay;
  log prices jump through a diagonal leverage loading.

Parameter objects are immutable after construction and safe to share across
threads.  ``validate`` returns diagnostics instead of raising so the CLI can
report all violations at once; computational entry points call
``require_valid`` which raises on the first violation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matcalc

__all__ = [
    "WascParams",
    "BnsParams",
    "MarketState",
    "IntegratedMeanMap",
    "validate",
    "require_valid",
    "wishart_mgf",
    "wishart_strip_margin",
    "wasc_mean_cov",
    "wasc_integrated_mean",
    "bns_mean_cov",
    "bns_integrated_mean",
    "load_model",
    "model_to_dict",
]

COND_LIMIT = 1e12  # condition-number threshold for trusting closed-form inverses
_QUAD_NODES = 64   # Gauss-Legendre nodes for the quadrature fallbacks


def _as_matrix(x, d: int, name: str) -> np.ndarray:
    a = np.array(x, dtype=float)
    if a.shape != (d, d):
        raise ValueError(f"{name}: expected shape ({d}, {d}), got {a.shape}")
    return a


@dataclass(frozen=True)
class WascParams:
    """Wishart affine stochastic covariance parameters.

    The covariance drift is omega + mean_rev @ Sigma + Sigma @ mean_rev.T and
    the covariance noise loads through vol_of_vol; return shocks correlate
    with covariance shocks through the leverage vector.  When ``alpha`` is
    given, omega is materialized as alpha * vol_of_vol.T @ vol_of_vol at
    construction so every downstream formula sees one omega.
    """

    d: int
    mean_rev: np.ndarray
    vol_of_vol: np.ndarray
    leverage: np.ndarray
    alpha: float | None = None
    omega: np.ndarray | None = None

    def __post_init__(self):
        d = int(self.d)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "mean_rev", _as_matrix(self.mean_rev, d, "mean_rev"))
        object.__setattr__(self, "vol_of_vol", _as_matrix(self.vol_of_vol, d, "vol_of_vol"))
        lev = np.array(self.leverage, dtype=float).reshape(-1)
        if lev.size != d:
            raise ValueError(f"leverage: expected length {d}, got {lev.size}")
        object.__setattr__(self, "leverage", lev)
        if self.alpha is not None:
            om = float(self.alpha) * self.vol_of_vol.T @ self.vol_of_vol
            if self.omega is not None and not np.allclose(
                om, _as_matrix(self.omega, d, "omega"), rtol=1e-10, atol=1e-14
            ):
                raise ValueError("omega and alpha * A'A disagree; provide one of them")
        elif self.omega is not None:
            om = _as_matrix(self.omega, d, "omega")
        else:
            raise ValueError("provide either omega or alpha")
        object.__setattr__(self, "omega", om)
        for name in ("mean_rev", "vol_of_vol", "leverage", "omega"):
            getattr(self, name).setflags(write=False)

    @property
    def kind(self) -> str:
        return "wasc"


@dataclass(frozen=True)
class BnsParams:
    """Jump-driven covariance parameters with diagonal jump leverage.

    ``drift_comp`` (the vector making each discounted asset a martingale) is
    derived at construction from the Levy exponent of the leveraged jumps:
    kappa_k = jump_intensity * (mgf(rho_k E^kk) - 1).
    """

    d: int
    mean_rev: np.ndarray
    jump_intensity: float
    wishart_shape: float
    wishart_scale: np.ndarray
    leverage_diag: np.ndarray
    drift_comp: np.ndarray = field(init=False)

    def __post_init__(self):
        d = int(self.d)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "mean_rev", _as_matrix(self.mean_rev, d, "mean_rev"))
        object.__setattr__(self, "jump_intensity", float(self.jump_intensity))
        object.__setattr__(self, "wishart_shape", float(self.wishart_shape))
        object.__setattr__(self, "wishart_scale",
                           _as_matrix(self.wishart_scale, d, "wishart_scale"))
        lev = np.array(self.leverage_diag, dtype=float).reshape(-1)
        if lev.size != d:
            raise ValueError(f"leverage_diag: expected length {d}, got {lev.size}")
        object.__setattr__(self, "leverage_diag", lev)
        kappa = np.empty(d)
        for k in range(d):
            rk = np.zeros((d, d))
            rk[k, k] = lev[k]
            val, ok = wishart_mgf(self.wishart_scale, self.wishart_shape, rk)
            kappa[k] = self.jump_intensity * (val.real - 1.0) if ok else np.nan
        object.__setattr__(self, "drift_comp", kappa)
        for name in ("mean_rev", "wishart_scale", "leverage_diag", "drift_comp"):
            getattr(self, name).setflags(write=False)

    @property
    def kind(self) -> str:
        return "bns"

    def jump_mean(self) -> np.ndarray:
        """Mean of the compensator per unit time: intensity * shape * scale."""
        return self.jump_intensity * self.wishart_shape * self.wishart_scale


@dataclass(frozen=True)
class MarketState:
    """Joint market state (t, S_t, Y_t, Sigma_t) with Y = log S."""

    t: float
    spot: np.ndarray
    log_spot: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "spot", np.array(self.spot, dtype=float))
        object.__setattr__(self, "log_spot", np.array(self.log_spot, dtype=float))
        object.__setattr__(self, "cov", np.array(self.cov, dtype=float))
        if np.max(np.abs(self.log_spot - np.log(self.spot))) > 1e-12:
            raise ValueError("log_spot is not the log of spot")
        for name in ("spot", "log_spot", "cov"):
            getattr(self, name).setflags(write=False)

    @classmethod
    def from_spot(cls, t: float, spot, cov) -> "MarketState":
        spot = np.array(spot, dtype=float)
        return cls(t=t, spot=spot, log_spot=np.log(spot), cov=np.array(cov, dtype=float))

    @classmethod
    def from_log(cls, t: float, log_spot, cov) -> "MarketState":
        y = np.array(log_spot, dtype=float)
        return cls(t=t, spot=np.exp(y), log_spot=y, cov=np.array(cov, dtype=float))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate(params) -> list[str]:
    """Check every admissibility invariant; return a list of violations
    (empty when the parameter set is usable)."""
    out: list[str] = []
    if isinstance(params, WascParams):
        rho_sq = float(params.leverage @ params.leverage)
        if rho_sq > 1.0 + 1e-12:
            out.append(f"leverage norm violation: rho'rho = {rho_sq:.6g} > 1")
        gram = params.vol_of_vol.T @ params.vol_of_vol
        gap = params.omega - (params.d - 1) * gram
        tol = matcalc.psd_tolerance(params.omega) + matcalc.psd_tolerance(gram)
        lo = matcalc.min_eigenvalue(matcalc.sym_part(gap))
        if lo < -tol:
            out.append(
                "covariance-drift admissibility violated: "
                f"min eig of omega - (d-1) A'A is {lo:.6g} < -{tol:.3g}"
            )
        if not matcalc.is_symmetric(params.omega, rtol=1e-10):
            out.append("omega must be symmetric")
    elif isinstance(params, BnsParams):
        if params.jump_intensity <= 0:
            out.append(f"jump_intensity must be positive, got {params.jump_intensity}")
        if params.wishart_shape <= params.d - 1:
            out.append(
                f"wishart_shape must exceed d-1 = {params.d - 1}, "
                f"got {params.wishart_shape}"
            )
        if not matcalc.is_symmetric(params.wishart_scale, rtol=1e-10):
            out.append("wishart_scale must be symmetric")
        else:
            lo = matcalc.min_eigenvalue(params.wishart_scale)
            if lo <= 0:
                out.append(f"wishart_scale must be positive definite (min eig {lo:.6g})")
        if np.any(~np.isfinite(params.drift_comp)):
            bad = np.where(~np.isfinite(params.drift_comp))[0]
            out.append(
                "martingale compensator undefined for assets "
                f"{bad.tolist()}: 1 - 2 rho_k Theta_kk must stay positive"
            )
    else:
        out.append(f"unknown parameter type {type(params).__name__}")
    return out


def require_valid(params) -> None:
    """Raise ValueError with all diagnostics when params are inadmissible."""
    problems = validate(params)
    if problems:
        raise ValueError("invalid model parameters: " + "; ".join(problems))


# ---------------------------------------------------------------------------
# Wishart moment generating function
# ---------------------------------------------------------------------------

def wishart_mgf(scale: np.ndarray, shape: float, r: np.ndarray) -> tuple[complex, bool]:
    """E[exp(Tr(R X))] for X ~ Wishart(shape, scale): det(I - 2 R scale)^(-shape/2).

    Accepts complex symmetric R.  Validity requires the real part of R to lie
    in the convergence strip (see :func:`wishart_strip_margin`); inside it,
    every eigenvalue of I - 2 R scale has positive real part, so the principal
    log-determinant branch is analytic and safe.

    Returns:
        (value, ok): ok is False when R is outside the strip, in which case
        value is nan (transform failures are data, not exceptions).
    """
    r = np.asarray(r)
    scale = np.asarray(scale, dtype=float)
    if wishart_strip_margin(scale, r) <= 0.0:
        return complex(np.nan, np.nan), False
    z = np.eye(scale.shape[0]) - 2.0 * np.asarray(r) @ scale
    eigs = np.linalg.eigvals(z)
    logdet = complex(np.sum(np.log(eigs)))
    return complex(np.exp(-0.5 * shape * logdet)), True


def wishart_strip_margin(scale: np.ndarray, r: np.ndarray) -> float:
    """Smallest eigenvalue of scale^{-1} - 2 Re(R); positive inside the
    convergence strip of the Wishart MGF."""
    scale = np.asarray(scale, dtype=float)
    r_re = np.asarray(r).real
    m = np.linalg.inv(scale) - 2.0 * matcalc.sym_part(r_re)
    return matcalc.min_eigenvalue(m)


# ---------------------------------------------------------------------------
# first moments of the covariance state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntegratedMeanMap:
    """Affine map for the conditional integrated covariance mean:
    int_t^T E[vec Sigma_s | Sigma_t] ds = map @ vec(Sigma_t) + offset."""

    map: np.ndarray
    offset: np.ndarray
    exact: bool  # False when the quadrature fallback was used


def _lift_cond(lift: np.ndarray) -> float:
    try:
        return float(np.linalg.cond(lift))
    except np.linalg.LinAlgError:
        return np.inf


def wasc_mean_cov(params: WascParams, sigma0: np.ndarray, t: float) -> np.ndarray:
    """E[Sigma_t | Sigma_0]: the affine-drift mean flow, exact."""
    lift = matcalc.kron_lift(params.mean_rev)
    v0 = matcalc.vec(np.asarray(sigma0, dtype=float))
    et = matcalc.mat_exp(lift * t)
    vom = matcalc.vec(params.omega)
    if _lift_cond(lift) < COND_LIMIT:
        drift_part = np.linalg.solve(lift, (et - np.eye(lift.shape[0])) @ vom)
    else:
        x, w = matcalc.gauss_legendre(0.0, t, _QUAD_NODES) if t > 0 else (np.array([]), np.array([]))
        drift_part = sum(
            (wi * matcalc.mat_exp(lift * xi) @ vom for xi, wi in zip(x, w)),
            np.zeros(lift.shape[0]),
        )
    return matcalc.sym_part(matcalc.mat(et @ v0 + drift_part))


def wasc_integrated_mean(params: WascParams, t: float, T: float) -> IntegratedMeanMap:
    """The (map, offset) pair with int_t^T E[vec Sigma_s|Sigma_t] ds =
    map @ vec(Sigma_t) + offset; closed form via the lift inverse when well
    conditioned, else 64-node Gauss-Legendre quadrature (flagged)."""
    if T < t:
        raise ValueError("need T >= t")
    dt = T - t
    lift = matcalc.kron_lift(params.mean_rev)
    dim = lift.shape[0]
    vom = matcalc.vec(params.omega)
    if dt == 0.0:
        return IntegratedMeanMap(np.zeros((dim, dim)), np.zeros(dim), True)
    if _lift_cond(lift) < COND_LIMIT:
        e = matcalc.mat_exp(lift * dt)
        amap = np.linalg.solve(lift, e - np.eye(dim))
        offset = np.linalg.solve(lift, np.linalg.solve(lift, e - np.eye(dim)) - dt * np.eye(dim)) @ vom
        return IntegratedMeanMap(amap, offset, True)
    x, w = matcalc.gauss_legendre(0.0, dt, _QUAD_NODES)
    amap = np.zeros((dim, dim))
    offset = np.zeros(dim)
    for xi, wi in zip(x, w):
        e = matcalc.mat_exp(lift * xi)
        amap += wi * e
        offset += wi * (dt - xi) * (e @ vom)
    return IntegratedMeanMap(amap, offset, False)


def bns_mean_cov(params: BnsParams, sigma0: np.ndarray, t: float) -> np.ndarray:
    """E[Sigma_t | Sigma_0] under pure-jump covariance with linear decay."""
    b = params.mean_rev
    ebt = matcalc.mat_exp(b * t)
    lift = matcalc.kron_lift(b)
    vml = matcalc.vec(params.jump_mean())
    if _lift_cond(lift) < COND_LIMIT:
        jump_part = np.linalg.solve(lift, (matcalc.mat_exp(lift * t) - np.eye(lift.shape[0])) @ vml)
    else:
        x, w = matcalc.gauss_legendre(0.0, t, _QUAD_NODES) if t > 0 else (np.array([]), np.array([]))
        jump_part = sum(
            (wi * matcalc.mat_exp(lift * xi) @ vml for xi, wi in zip(x, w)),
            np.zeros(lift.shape[0]),
        )
    return matcalc.sym_part(ebt @ np.asarray(sigma0, dtype=float) @ ebt.T + matcalc.mat(jump_part))


def bns_integrated_mean(params: BnsParams, sigma0: np.ndarray, T: float) -> np.ndarray:
    """int_0^T E[Sigma_s] ds.  Uses the Lyapunov identity
    B(int Sigma) = E[Sigma_T] - Sigma_0 - T * jump_mean with B(X) = bX + Xb',
    falling back to quadrature when the lift is ill conditioned."""
    sigma0 = np.asarray(sigma0, dtype=float)
    lift = matcalc.kron_lift(params.mean_rev)
    if _lift_cond(lift) < COND_LIMIT:
        rhs = bns_mean_cov(params, sigma0, T) - sigma0 - T * params.jump_mean()
        return matcalc.sym_part(matcalc.mat(np.linalg.solve(lift, matcalc.vec(rhs))))
    x, w = matcalc.gauss_legendre(0.0, T, _QUAD_NODES)
    out = np.zeros((params.d, params.d))
    for xi, wi in zip(x, w):
        out += wi * bns_mean_cov(params, sigma0, xi)
    return matcalc.sym_part(out)


# ---------------------------------------------------------------------------
# JSON model files
# ---------------------------------------------------------------------------

def model_to_dict(params) -> dict:
    if isinstance(params, WascParams):
        return {
            "model": "wasc",
            "mean_rev": params.mean_rev.tolist(),
            "vol_of_vol": params.vol_of_vol.tolist(),
            "leverage": params.leverage.tolist(),
            "alpha": params.alpha,
            "omega": params.omega.tolist(),
        }
    if isinstance(params, BnsParams):
        return {
            "model": "bns",
            "mean_rev": params.mean_rev.tolist(),
            "jump_intensity": params.jump_intensity,
            "wishart_shape": params.wishart_shape,
            "wishart_scale": params.wishart_scale.tolist(),
            "leverage_diag": params.leverage_diag.tolist(),
        }
    raise TypeError(f"not a model parameter object: {type(params).__name__}")


def load_model(source) -> WascParams | BnsParams:
    """Build a validated parameter object from a dict, JSON string, or path."""
    if isinstance(source, (str, Path)) and Path(str(source)).exists():
        payload = json.loads(Path(source).read_text())
    elif isinstance(source, str):
        payload = json.loads(source)
    else:
        payload = dict(source)
    kind = payload.get("model")
    if kind == "wasc":
        mats = {k: payload[k] for k in ("mean_rev", "vol_of_vol", "leverage")}
        d = len(payload["mean_rev"])
        params = WascParams(d=d, alpha=payload.get("alpha"),
                            omega=payload.get("omega"), **mats)
    elif kind == "bns":
        d = len(payload["mean_rev"])
        params = BnsParams(
            d=d,
            mean_rev=payload["mean_rev"],
            jump_intensity=payload["jump_intensity"],
            wishart_shape=payload["wishart_shape"],
            wishart_scale=payload["wishart_scale"],
            leverage_diag=payload["leverage_diag"],
        )
    else:
        raise ValueError(f'model field must be "wasc" or "bns", got {kind!r}')
    require_valid(params)
    return params
