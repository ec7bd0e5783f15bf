"""Payoff transform catalog and damped Fourier contours.

Transform orientation used throughout the package:

    hhat(u) = int exp(-u'x) h(x) dx         (x = log prices, u complex)
    h(x)    = (2 pi)^-M int exp((R+iv)'x) hhat(R+iv) dv

so a price is E[h(X)] = (2 pi)^-M int hhat(u) E[exp(u'X)] dv over the damped
contour u = R + iv.  Every kernel records the admissible damping region and
exposes the pathwise payoff for Monte Carlo use.

Kernels are defined in their own argument space (dimension n_args) and carry
an affine map into model log-price space: a transform argument u maps to
loading @ u + offset.  Selection payoffs use plain selection columns; payoffs
on log-linear combinations (geometric baskets, exchange ratios) use general
loadings.

Catalog (all strikes positive unless stated):
    call, put                K^{1-u} / (u(u-1)),  call Re u > 1, put Re u < 0
    quadrant products        product of one-leg factors, per-leg strips
    spread                   K^{1-u1-u2} G(u1+u2-1) G(-u2) / G(u1+1)
    basket spread            K^{1-su} G(su-1) prod_m G(-u_m) / G(u1+1)
    put on a sum             K^{1-su} prod_m G(-u_m) / G(2-su)
    worst-of call            K^{1-su} / ((su-1) prod_m u_m)
    exchange                 one-dimensional in the log ratio, offset leg
    geometric call/put       one-dimensional along the weight vector

with G the gamma function and su the argument sum.  Best-of decomposes as
call + call - worst-of and is returned as a weighted kernel list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gamma as _gamma

__all__ = [
    "PayoffKernel",
    "Contour",
    "call_option",
    "put_option",
    "quadrant_option",
    "spread_option",
    "basket_spread_option",
    "put_on_sum",
    "worst_of_call",
    "best_of_call",
    "exchange_option",
    "geometric_option",
    "build_contour",
    "suggest_decay",
    "contour_price",
]

_POLE_MARGIN = 1e-6


@dataclass(frozen=True)
class PayoffKernel:
    """One payoff: its transform, damping region, and pathwise evaluator."""

    name: str
    n_args: int
    loading: np.ndarray                       # (d, n_args)
    offset: np.ndarray                        # (d,)
    default_damping: np.ndarray               # (n_args,)
    transform: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    payoff: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    strip_margin: Callable[[np.ndarray], float] = field(repr=False)

    def model_args(self, args: np.ndarray) -> np.ndarray:
        """Map transform arguments (n, n_args) to model space (n, d)."""
        return np.atleast_2d(args) @ self.loading.T + self.offset


def _selection(d: int, assets: Sequence[int]) -> np.ndarray:
    out = np.zeros((d, len(assets)))
    for col, a in enumerate(assets):
        if not 0 <= a < d:
            raise ValueError(f"asset index {a} out of range for d={d}")
        out[a, col] = 1.0
    return out


def _vanilla_factor(strike: float, u: np.ndarray) -> np.ndarray:
    return np.exp((1.0 - u) * np.log(strike)) / (u * (u - 1.0))


def _require_strike(strike: float) -> float:
    if strike <= 0:
        raise ValueError("strike must be positive")
    return float(strike)


# ---------------------------------------------------------------------------
# single-asset kernels
# ---------------------------------------------------------------------------

def call_option(d: int, asset: int, strike: float) -> PayoffKernel:
    k = _require_strike(strike)

    def transform(u):
        return _vanilla_factor(k, u[..., 0])

    def payoff(spot):
        return np.maximum(spot[:, asset] - k, 0.0)

    return PayoffKernel(
        name=f"call_{asset}_{k:g}", n_args=1, loading=_selection(d, [asset]),
        offset=np.zeros(d), default_damping=np.array([1.5]),
        transform=transform, payoff=payoff,
        strip_margin=lambda r: float(r[0] - 1.0))


def put_option(d: int, asset: int, strike: float) -> PayoffKernel:
    k = _require_strike(strike)

    def transform(u):
        return _vanilla_factor(k, u[..., 0])

    def payoff(spot):
        return np.maximum(k - spot[:, asset], 0.0)

    return PayoffKernel(
        name=f"put_{asset}_{k:g}", n_args=1, loading=_selection(d, [asset]),
        offset=np.zeros(d), default_damping=np.array([-0.5]),
        transform=transform, payoff=payoff,
        strip_margin=lambda r: float(-r[0]))


def geometric_option(d: int, weights: Sequence[float], strike: float,
                     kind: str = "call") -> PayoffKernel:
    """Call or put on the geometric composite prod_m S_m^{w_m}."""
    k = _require_strike(strike)
    w = np.asarray(weights, dtype=float)
    if w.shape != (d,):
        raise ValueError("weights must have one entry per asset")
    if kind not in ("call", "put"):
        raise ValueError("kind must be 'call' or 'put'")
    sign = 1.0 if kind == "call" else -1.0

    def transform(u):
        return _vanilla_factor(k, u[..., 0])

    def payoff(spot):
        comp = np.exp(np.log(spot) @ w)
        return np.maximum(sign * (comp - k), 0.0)

    margin = ((lambda r: float(r[0] - 1.0)) if kind == "call"
              else (lambda r: float(-r[0])))
    damp = np.array([1.5]) if kind == "call" else np.array([-0.5])
    tag = "x".join(f"{x:g}" for x in w)
    return PayoffKernel(
        name=f"geo{kind}_{tag}_{k:g}", n_args=1,
        loading=w.reshape(d, 1), offset=np.zeros(d), default_damping=damp,
        transform=transform, payoff=payoff, strip_margin=margin)


# ---------------------------------------------------------------------------
# two-asset kernels
# ---------------------------------------------------------------------------

def quadrant_option(d: int, kind: str, assets: Sequence[int],
                    strikes: Sequence[float]) -> PayoffKernel:
    """Product payoff leg1 * leg2, kind in {'cc','cp','pc','pp'} where 'c'
    is (S-K)^+ and 'p' is (K-S)^+ for the corresponding asset."""
    if kind not in ("cc", "cp", "pc", "pp"):
        raise ValueError("kind must be one of cc, cp, pc, pp")
    i, j = assets
    k1, k2 = (_require_strike(s) for s in strikes)

    def transform(u):
        return _vanilla_factor(k1, u[..., 0]) * _vanilla_factor(k2, u[..., 1])

    def payoff(spot):
        a = spot[:, i] - k1 if kind[0] == "c" else k1 - spot[:, i]
        b = spot[:, j] - k2 if kind[1] == "c" else k2 - spot[:, j]
        return np.maximum(a, 0.0) * np.maximum(b, 0.0)

    def margin(r):
        m1 = r[0] - 1.0 if kind[0] == "c" else -r[0]
        m2 = r[1] - 1.0 if kind[1] == "c" else -r[1]
        return float(min(m1, m2))

    damp = np.array([1.5 if kind[0] == "c" else -0.5,
                     1.5 if kind[1] == "c" else -0.5])
    return PayoffKernel(
        name=f"{kind}_{k1:g}_{k2:g}", n_args=2,
        loading=_selection(d, [i, j]), offset=np.zeros(d),
        default_damping=damp, transform=transform, payoff=payoff,
        strip_margin=margin)


def spread_option(d: int, long_asset: int, short_asset: int,
                  strike: float) -> PayoffKernel:
    """(S_long - S_short - K)^+ with K > 0."""
    k = _require_strike(strike)

    def transform(u):
        u1, u2 = u[..., 0], u[..., 1]
        s = u1 + u2
        return (np.exp((1.0 - s) * np.log(k)) * _gamma(s - 1.0)
                * _gamma(-u2) / _gamma(u1 + 1.0))

    def payoff(spot):
        return np.maximum(spot[:, long_asset] - spot[:, short_asset] - k, 0.0)

    def margin(r):
        return float(min(-r[1], r[0] + r[1] - 1.0))

    return PayoffKernel(
        name=f"spread_{long_asset}m{short_asset}_{k:g}", n_args=2,
        loading=_selection(d, [long_asset, short_asset]), offset=np.zeros(d),
        default_damping=np.array([2.5, -1.0]), transform=transform,
        payoff=payoff, strip_margin=margin)


def exchange_option(d: int, long_asset: int, short_asset: int) -> PayoffKernel:
    """(S_long - S_short)^+; one-dimensional in the log ratio with the short
    leg folded into the affine offset."""

    def transform(u):
        uu = u[..., 0]
        return 1.0 / (uu * (uu - 1.0))

    def payoff(spot):
        return np.maximum(spot[:, long_asset] - spot[:, short_asset], 0.0)

    loading = np.zeros((d, 1))
    loading[long_asset, 0] = 1.0
    loading[short_asset, 0] = -1.0
    offset = np.zeros(d)
    offset[short_asset] = 1.0
    return PayoffKernel(
        name=f"exchange_{long_asset}m{short_asset}", n_args=1,
        loading=loading, offset=offset, default_damping=np.array([1.5]),
        transform=transform, payoff=payoff,
        strip_margin=lambda r: float(r[0] - 1.0))


# ---------------------------------------------------------------------------
# multi-asset kernels
# ---------------------------------------------------------------------------

def basket_spread_option(d: int, long_asset: int,
                         short_assets: Sequence[int],
                         strike: float) -> PayoffKernel:
    """(S_long - sum_m S_m - K)^+ over the short basket, K > 0."""
    k = _require_strike(strike)
    assets = [long_asset, *short_assets]
    n = len(assets)

    def transform(u):
        s = u.sum(axis=-1)
        out = (np.exp((1.0 - s) * np.log(k)) * _gamma(s - 1.0)
               / _gamma(u[..., 0] + 1.0))
        for m in range(1, n):
            out = out * _gamma(-u[..., m])
        return out

    def payoff(spot):
        short = spot[:, list(short_assets)].sum(axis=1)
        return np.maximum(spot[:, long_asset] - short - k, 0.0)

    def margin(r):
        parts = [-r[m] for m in range(1, n)]
        parts.append(float(np.sum(r) - 1.0))
        return float(min(parts))

    damp = np.concatenate([[1.5 + len(short_assets)],
                           -np.ones(len(short_assets))])
    return PayoffKernel(
        name=f"bspread_{long_asset}_{k:g}", n_args=n,
        loading=_selection(d, assets), offset=np.zeros(d),
        default_damping=damp, transform=transform, payoff=payoff,
        strip_margin=margin)


def put_on_sum(d: int, assets: Sequence[int], strike: float) -> PayoffKernel:
    """(K - sum_m S_m)^+."""
    k = _require_strike(strike)
    n = len(assets)

    def transform(u):
        s = u.sum(axis=-1)
        out = np.exp((1.0 - s) * np.log(k)) / _gamma(2.0 - s)
        for m in range(n):
            out = out * _gamma(-u[..., m])
        return out

    def payoff(spot):
        return np.maximum(k - spot[:, list(assets)].sum(axis=1), 0.0)

    def margin(r):
        return float(min(-r[m] for m in range(n)))

    return PayoffKernel(
        name=f"sumput_{k:g}", n_args=n, loading=_selection(d, assets),
        offset=np.zeros(d), default_damping=np.full(n, -0.5),
        transform=transform, payoff=payoff, strip_margin=margin)


def worst_of_call(d: int, assets: Sequence[int], strike: float
                  ) -> PayoffKernel:
    """(min_m S_m - K)^+."""
    k = _require_strike(strike)
    n = len(assets)

    def transform(u):
        s = u.sum(axis=-1)
        return (np.exp((1.0 - s) * np.log(k))
                / ((s - 1.0) * np.prod(u, axis=-1)))

    def payoff(spot):
        return np.maximum(spot[:, list(assets)].min(axis=1) - k, 0.0)

    def margin(r):
        parts = [float(r[m]) for m in range(n)]
        parts.append(float(np.sum(r) - 1.0))
        return float(min(parts))

    return PayoffKernel(
        name=f"worstcall_{k:g}", n_args=n, loading=_selection(d, assets),
        offset=np.zeros(d), default_damping=np.full(n, 1.1),
        transform=transform, payoff=payoff, strip_margin=margin)


def best_of_call(d: int, assets: Sequence[int], strike: float
                 ) -> list[tuple[float, PayoffKernel]]:
    """(max(S_i, S_j) - K)^+ as a weighted kernel list:
    call_i + call_j - worst_of."""
    i, j = assets
    return [(1.0, call_option(d, i, strike)),
            (1.0, call_option(d, j, strike)),
            (-1.0, worst_of_call(d, [i, j], strike))]


# ---------------------------------------------------------------------------
# contours
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Contour:
    """Damped Fourier quadrature rule for one payoff.

    Conjugate symmetry halves the node count: only nodes whose leading
    imaginary coordinate is positive are kept and the real part of the
    weighted sum is doubled (the factor 2 is folded into the weights).
    """

    kernel: PayoffKernel
    damping: np.ndarray       # (n_args,)
    nodes_per_dim: int
    decay: np.ndarray         # (n_args,)
    args: np.ndarray          # (n_nodes, n_args) complex
    model_args: np.ndarray    # (n_nodes, d) complex
    weights: np.ndarray       # (n_nodes,) complex, include hhat and 2/(2pi)^M

    @property
    def n_nodes(self) -> int:
        return self.args.shape[0]


def build_contour(kernel: PayoffKernel, damping=None, nodes_per_dim: int = 16,
                  decay=1.0) -> Contour:
    """Tensorized Gauss-Laguerre rule along the damped contour.

    decay rescales the node spread, scalar or one entry per transform
    dimension; larger values concentrate nodes near the real axis, which
    pays off when the moment transform decays fast along the contour.
    """
    m = kernel.n_args
    damping = np.asarray(kernel.default_damping if damping is None
                         else damping, dtype=float)
    if damping.shape != (m,):
        raise ValueError(f"damping must have {m} entries")
    if not 4 <= nodes_per_dim <= 64:
        raise ValueError("nodes_per_dim must be between 4 and 64")
    decay = np.broadcast_to(np.asarray(decay, dtype=float), (m,))
    if np.any(decay <= 0):
        raise ValueError("decay must be positive")
    margin = kernel.strip_margin(damping)
    if margin <= _POLE_MARGIN:
        raise ValueError(
            f"damping {damping} leaves margin {margin:.2e} to the admissible "
            f"region boundary of {kernel.name}; need more than {_POLE_MARGIN}")

    x, w = np.polynomial.laguerre.laggauss(nodes_per_dim)
    w = np.exp(np.log(w) + x)              # weights for int_0^inf f(v) dv
    vg = np.meshgrid(*[np.concatenate([x, -x]) / g for g in decay],
                     indexing="ij")
    wg = np.meshgrid(*[np.concatenate([w, w]) / g for g in decay],
                     indexing="ij")
    v = np.stack([g.ravel() for g in vg], axis=-1)          # ((2n)^M, M)
    wprod = np.prod(np.stack([g.ravel() for g in wg]), axis=0)
    keep = v[:, 0] > 0.0
    args = damping + 1j * v[keep]
    hhat = kernel.transform(args)
    if not np.all(np.isfinite(hhat)):
        raise ValueError(f"transform of {kernel.name} is not finite on the "
                         "contour; move the damping away from the boundary")
    weights = wprod[keep] * hhat * (2.0 / (2.0 * np.pi) ** m)
    return Contour(kernel=kernel, damping=damping,
                   nodes_per_dim=nodes_per_dim, decay=decay.copy(), args=args,
                   model_args=kernel.model_args(args), weights=weights)


def suggest_decay(kernel: PayoffKernel, cov_rate: np.ndarray, horizon: float,
                  nodes_per_dim: int, width: float = 5.0) -> np.ndarray:
    """Per-dimension decay matched to the moment transform's falloff.

    The transform magnitude along the contour drops roughly like a Gaussian
    whose per-dimension scale is the total log volatility seen through the
    kernel loading, so the outermost Laguerre node is placed `width` of
    those scales out.  cov_rate is a covariance-per-unit-time proxy (for
    stochastic covariance models, the mean integrated covariance divided by
    the horizon works well).
    """
    cov_rate = np.asarray(cov_rate, dtype=float)
    x_max = np.polynomial.laguerre.laggauss(nodes_per_dim)[0][-1]
    seff = np.sqrt(np.einsum("am,ab,bm->m", kernel.loading, cov_rate,
                             kernel.loading) * horizon)
    return np.maximum(1.0, x_max * seff / width)


def contour_price(contour: Contour, transform_values: np.ndarray,
                  valid: np.ndarray | None = None,
                  max_skip_mass: float = 1e-3) -> float:
    """Collapse transform values at the contour nodes into a price.

    Invalid nodes (transform-domain failures) are treated as missing data:
    they are skipped, and the evaluation aborts when the skipped nodes carry
    more than max_skip_mass of the total absolute weight mass.
    """
    w = contour.weights
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if not np.all(valid):
            total = float(np.sum(np.abs(w)))
            skipped = float(np.sum(np.abs(w[~valid])))
            if total > 0 and skipped > max_skip_mass * total:
                raise ValueError(
                    f"{skipped / total:.2%} of contour weight mass is on "
                    "invalid transform nodes; shrink the damping")
            w = w[valid]
            transform_values = transform_values[valid]
    return float(np.real(np.sum(w * transform_values)))
