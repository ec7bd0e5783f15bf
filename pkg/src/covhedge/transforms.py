"""Conditional exponential-affine transforms for both covariance classes.

For a model state (Y, Sigma) the conditional transform of the terminal log
price is exponential-affine,

    E[exp(u' Y_T) | F_t] = exp(phi(tau, u) + u' Y_t + Tr(psi(tau, u) Sigma_t)),

with tau = T - t.  This module computes (phi, psi):

* Wishart diffusion: psi solves a matrix Riccati equation whose flow
  linearizes through a 2d x 2d Hamiltonian matrix.  With
  F = M + (A'rho) u', G = A'A and D = (u u' - diag u)/2 the Riccati is

      d psi / d tau = 2 psi G psi + psi F + F' psi + D,  psi(0) = V,

  and with Theta = expm(tau * Ham), Ham = [[F, -2G], [D, -F']], the flow is

      psi(tau) = (Theta_22 + V Theta_12)^{-1} (Theta_21 + V Theta_11).

  (Left inverse: substituting the first-order expansion of Theta shows this
  and only this block pairing reproduces the Riccati right-hand side.)

* Pure-jump covariance: the Riccati is linear,
  psi(tau) = e^{M' tau} V e^{M tau} + int_0^tau e^{M's} D e^{Ms} ds,
  and phi integrates the Levy exponent of the leveraged jumps through the
  Wishart MGF at the shifted argument R_s(u) = psi(s, u) + Diag(rho * u).

Transform-domain failures (blown-up flows, MGF strip violations, overflow in
the final exponential) are reported through a ``valid`` flag, never raised:
contour integration treats invalid nodes as missing data and accounts for
the skipped mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matcalc, models

__all__ = [
    "TransformEval",
    "TransformGrid",
    "wasc_hamiltonian",
    "wasc_psi",
    "wasc_phi",
    "bns_psi",
    "bns_phi",
    "transform",
    "basis_value",
    "transform_grid",
]

PHI_QUAD_NODES = 64
_COND_LIMIT = 1e12
_BLOWUP_LIMIT = 1e12
_OVERFLOW_RE = 700.0
_ASYM_TOL = 1e-6


@dataclass(frozen=True)
class TransformEval:
    """(phi, psi) at one (tau, u) together with a domain-validity flag."""

    tau: float
    u: np.ndarray
    phi: complex
    psi: np.ndarray
    valid: bool


def _nan_mat(d: int) -> np.ndarray:
    return np.full((d, d), np.nan + 1j * np.nan)


def _as_cvec(u, d: int) -> np.ndarray:
    a = np.asarray(u, dtype=complex).reshape(-1)
    if a.size != d:
        raise ValueError(f"u: expected length {d}, got {a.size}")
    return a


# ---------------------------------------------------------------------------
# Wishart diffusion transform
# ---------------------------------------------------------------------------

def wasc_hamiltonian(params: models.WascParams, u) -> np.ndarray:
    """The 2d x 2d linearization matrix [[F, -2A'A], [(uu'-diag u)/2, -F']]."""
    d = params.d
    u = _as_cvec(u, d)
    a_rho = params.vol_of_vol.T @ params.leverage
    f = params.mean_rev + np.outer(a_rho, u)
    gram = params.vol_of_vol.T @ params.vol_of_vol
    dmat = 0.5 * (np.outer(u, u) - np.diag(u))
    ham = np.zeros((2 * d, 2 * d), dtype=complex)
    ham[:d, :d] = f
    ham[:d, d:] = -2.0 * gram
    ham[d:, :d] = dmat
    ham[d:, d:] = -f.T
    return ham


def _psi_from_blocks(theta: np.ndarray, v: np.ndarray | None, d: int
                     ) -> tuple[np.ndarray, bool]:
    th11, th12 = theta[:d, :d], theta[:d, d:]
    th21, th22 = theta[d:, :d], theta[d:, d:]
    if v is None:
        lhs, rhs = th22, th21
    else:
        lhs, rhs = th22 + v @ th12, th21 + v @ th11
    if not np.all(np.isfinite(lhs)) or np.linalg.cond(lhs) > _COND_LIMIT:
        return _nan_mat(d), False
    psi = np.linalg.solve(lhs, rhs)
    scale = max(float(np.max(np.abs(psi))), 1.0)
    # magnitude guard: near a singular flow crossing the solve stays
    # well conditioned for d = 1 yet the solution itself diverges
    if (not np.all(np.isfinite(psi)) or scale > _BLOWUP_LIMIT
            or np.max(np.abs(psi - psi.T)) > _ASYM_TOL * scale):
        return _nan_mat(d), False
    return matcalc.sym_part(psi), True


def wasc_psi(params: models.WascParams, tau: float, u, v=None
             ) -> tuple[np.ndarray, bool]:
    """State coefficient psi(tau, u, V) of the Wishart-diffusion transform.

    Closed form through the Hamiltonian matrix exponential; the returned flag
    is False when the flow inverse is numerically singular (transform
    blow-up), in which case callers should shrink the damping strip.
    """
    d = params.d
    u = _as_cvec(u, d)
    if v is not None:
        v = np.asarray(v, dtype=complex)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0.0:
        return (np.zeros((d, d), dtype=complex) if v is None else v.copy()), True
    theta = matcalc.mat_exp(tau * wasc_hamiltonian(params, u))
    return _psi_from_blocks(theta, v, d)


def wasc_phi(params: models.WascParams, tau: float, u, v=None
             ) -> tuple[complex, bool]:
    """phi(tau, u, V) = int_0^tau Tr(Omega psi(s)) ds by Gauss-Legendre."""
    u = _as_cvec(u, params.d)
    if tau == 0.0:
        return 0.0 + 0.0j, True
    x, w = matcalc.gauss_legendre(0.0, tau, PHI_QUAD_NODES)
    total = 0.0 + 0.0j
    for s, ws in zip(x, w):
        psi, ok = wasc_psi(params, float(s), u, v)
        if not ok:
            return complex(np.nan, np.nan), False
        total += ws * np.trace(params.omega @ psi)
    return complex(total), True


# ---------------------------------------------------------------------------
# pure-jump covariance transform
# ---------------------------------------------------------------------------

def bns_psi(params: models.BnsParams, tau: float, u, v=None
            ) -> tuple[np.ndarray, bool]:
    """psi(tau,u,V) = e^{M'tau} V e^{M tau} + int_0^tau e^{M's} D e^{Ms} ds."""
    d = params.d
    u = _as_cvec(u, d)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0.0:
        return (np.zeros((d, d), dtype=complex) if v is None
                else np.asarray(v, dtype=complex).copy()), True
    m = params.mean_rev
    dmat = 0.5 * (np.outer(u, u) - np.diag(u))
    emt = matcalc.mat_exp(m * tau)
    lift = matcalc.kron_lift(m.T)
    if np.isfinite(np.linalg.cond(lift)) and np.linalg.cond(lift) < _COND_LIMIT:
        rhs = emt.T @ dmat @ emt - dmat
        integ = matcalc.mat(np.linalg.solve(lift, matcalc.vec(rhs)))
    else:
        x, w = matcalc.gauss_legendre(0.0, tau, PHI_QUAD_NODES)
        integ = np.zeros((d, d), dtype=complex)
        for s, ws in zip(x, w):
            es = matcalc.mat_exp(m * float(s))
            integ += ws * (es.T @ dmat @ es)
    if v is None:
        psi = integ
    else:
        vc = np.asarray(v, dtype=complex)
        psi = emt.T @ vc @ emt + integ
    return matcalc.sym_part(psi), True


def bns_phi(params: models.BnsParams, tau: float, u, v=None
            ) -> tuple[complex, bool]:
    """phi(tau,u,V): integrated Levy exponent of the leveraged jumps minus
    the martingale drift, int_0^tau lam*(mgf(R_s(u)) - 1) ds - tau * u'kappa.

    The MGF strip condition is checked at every quadrature node; the first
    violation invalidates the whole evaluation.
    """
    d = params.d
    u = _as_cvec(u, d)
    if tau == 0.0:
        return 0.0 + 0.0j, True
    lam = params.jump_intensity
    diag_ru = np.diag(params.leverage_diag * u)
    x, w = matcalc.gauss_legendre(0.0, tau, PHI_QUAD_NODES)
    total = 0.0 + 0.0j
    for s, ws in zip(x, w):
        psi_s, ok = bns_psi(params, float(s), u, v)
        if not ok:
            return complex(np.nan, np.nan), False
        mgf, ok = models.wishart_mgf(params.wishart_scale, params.wishart_shape,
                                     psi_s + diag_ru)
        if not ok:
            return complex(np.nan, np.nan), False
        total += ws * lam * (mgf - 1.0)
    total -= tau * complex(u @ params.drift_comp)
    return complex(total), True


# ---------------------------------------------------------------------------
# dispatch and basis-claim evaluation
# ---------------------------------------------------------------------------

def transform(params, tau: float, u, v=None) -> TransformEval:
    """(phi, psi) bundle for either model class."""
    u = _as_cvec(u, params.d)
    if params.kind == "wasc":
        psi, ok1 = wasc_psi(params, tau, u, v)
        phi, ok2 = (wasc_phi(params, tau, u, v) if ok1
                    else (complex(np.nan, np.nan), False))
    else:
        psi, ok1 = bns_psi(params, tau, u, v)
        phi, ok2 = (bns_phi(params, tau, u, v) if ok1
                    else (complex(np.nan, np.nan), False))
    return TransformEval(tau=tau, u=u, phi=phi, psi=psi, valid=ok1 and ok2)


def basis_value(params, state: models.MarketState, horizon: float, u
                ) -> tuple[complex, bool]:
    """H_t(u) = E[exp(u'Y_T) | F_t] evaluated at the given market state.

    Returns (nan, False) on transform-domain failure or when the real part of
    the exponent exceeds the overflow guard.
    """
    tau = horizon - state.t
    ev = transform(params, tau, u)
    if not ev.valid:
        return complex(np.nan, np.nan), False
    expo = ev.phi + ev.u @ state.log_spot + np.trace(ev.psi @ state.cov)
    if expo.real > _OVERFLOW_RE:
        return complex(np.nan, np.nan), False
    return complex(np.exp(expo)), True


# ---------------------------------------------------------------------------
# batched evaluation on a (time grid) x (contour nodes) lattice
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransformGrid:
    """(phi, psi) for V = 0 on a lattice of times-to-maturity and u nodes.

    phi has shape (K, M), psi has shape (K, M, d, d), valid (K, M); row k
    corresponds to taus[k] and column m to nodes[m].
    """

    taus: np.ndarray
    nodes: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    valid: np.ndarray


def _eig_flow(mat_: np.ndarray, svals: np.ndarray) -> np.ndarray | None:
    """expm(mat * s) for every s in svals via one eigendecomposition;
    None when the eigenvector basis is too ill conditioned to trust."""
    lam, q = np.linalg.eig(mat_)
    if np.linalg.cond(q) > 1e10:
        return None
    qinv = np.linalg.inv(q)
    expo = np.exp(np.multiply.outer(svals, lam))  # (S, n)
    return np.einsum("ab,sb,bc->sac", q, expo, qinv)


def _wasc_grid_node(params: models.WascParams, taus: np.ndarray, u: np.ndarray,
                    quad_x: np.ndarray, quad_w: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """phi(tau_k), psi(tau_k), valid(tau_k) for one contour node."""
    d = params.d
    k_times = taus.size
    ham = wasc_hamiltonian(params, u)
    # s-values: the grid taus plus the phi quadrature nodes for each tau
    phi_nodes = np.multiply.outer(taus, quad_x)           # (K, Q)
    svals = np.concatenate([taus, phi_nodes.ravel()])
    flows = _eig_flow(ham, svals)
    if flows is None:
        flows = np.stack([matcalc.mat_exp(s * ham) for s in svals])
    th21 = flows[:, d:, :d]
    th22 = flows[:, d:, d:]
    psi_all = np.full((svals.size, d, d), np.nan, dtype=complex)
    ok_all = np.zeros(svals.size, dtype=bool)
    finite = np.all(np.isfinite(th22.reshape(svals.size, -1)), axis=1)
    if np.any(finite):
        cond = np.full(svals.size, np.inf)
        cond[finite] = np.linalg.cond(th22[finite])
        good = finite & (cond < _COND_LIMIT)
        if np.any(good):
            sol = np.linalg.solve(th22[good], th21[good])
            asym = np.max(np.abs(sol - sol.swapaxes(1, 2)), axis=(1, 2))
            scale = np.maximum(np.max(np.abs(sol), axis=(1, 2)), 1.0)
            sol_ok = (np.all(np.isfinite(sol.reshape(sol.shape[0], -1)),
                             axis=1)
                      & (scale <= _BLOWUP_LIMIT)
                      & (asym <= _ASYM_TOL * scale))
            psi_all[good] = matcalc.sym_part(sol)
            ok_all[good] = sol_ok
    psi_taus = psi_all[:k_times]
    ok_taus = ok_all[:k_times]
    psi_phi = psi_all[k_times:].reshape(k_times, quad_x.size, d, d)
    ok_phi = ok_all[k_times:].reshape(k_times, quad_x.size)
    tr = np.einsum("ab,kqba->kq", params.omega + 0j, np.nan_to_num(psi_phi))
    phi = np.einsum("kq,q->k", tr, quad_w) * taus       # scaled below
    valid = ok_taus & np.all(ok_phi, axis=1)
    return phi, psi_taus, valid


def transform_grid(params, taus, nodes) -> TransformGrid:
    """Evaluate (phi, psi) with V = 0 on a times x nodes lattice.

    taus: array (K,) of nonnegative times-to-maturity (0 allowed).
    nodes: array (M, d) of complex arguments.
    """
    taus = np.asarray(taus, dtype=float).reshape(-1)
    nodes = np.atleast_2d(np.asarray(nodes, dtype=complex))
    if np.any(taus < 0):
        raise ValueError("times-to-maturity must be nonnegative")
    k_times, m_nodes = taus.size, nodes.shape[0]
    d = params.d
    phi = np.zeros((k_times, m_nodes), dtype=complex)
    psi = np.zeros((k_times, m_nodes, d, d), dtype=complex)
    valid = np.zeros((k_times, m_nodes), dtype=bool)
    # phi quadrature on [0, tau] mapped from fixed nodes on [0, 1]
    qx, qw = matcalc.gauss_legendre(0.0, 1.0, PHI_QUAD_NODES)
    if params.kind == "wasc":
        for m in range(m_nodes):
            ph, ps, ok = _wasc_grid_node(params, taus, nodes[m], qx, qw)
            phi[:, m], psi[:, m], valid[:, m] = ph, ps, ok
    else:
        for m in range(m_nodes):
            ph, ps, ok = _bns_grid_node(params, taus, nodes[m], qx, qw)
            phi[:, m], psi[:, m], valid[:, m] = ph, ps, ok
    zero = taus == 0.0
    if np.any(zero):
        phi[zero] = 0.0
        psi[zero] = 0.0
        valid[zero] = True
    return TransformGrid(taus=taus, nodes=nodes, phi=phi, psi=psi, valid=valid)


def _bns_grid_node(params: models.BnsParams, taus: np.ndarray, u: np.ndarray,
                   quad_x: np.ndarray, quad_w: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d = params.d
    k_times = taus.size
    m = params.mean_rev
    dmat = 0.5 * (np.outer(u, u) - np.diag(u))
    phi_nodes = np.multiply.outer(taus, quad_x)            # (K, Q)
    svals = np.concatenate([taus, phi_nodes.ravel()])
    flows = _eig_flow(m, svals)
    if flows is None:
        flows = np.stack([matcalc.mat_exp(s * m) for s in svals])
    lift = matcalc.kron_lift(m.T)
    # rhs_s = e^{M's} D e^{Ms} - D, stacked over s
    rhs = np.einsum("sba,bc,scd->sad", flows, dmat, flows) - dmat
    if np.isfinite(np.linalg.cond(lift)) and np.linalg.cond(lift) < _COND_LIMIT:
        # column-stacked vec, batched over s
        rhs_vec = rhs.transpose(1, 2, 0).reshape(d * d, svals.size, order="F")
        sol = np.linalg.solve(lift, rhs_vec)
        psi_all = sol.reshape(d, d, svals.size, order="F").transpose(2, 0, 1)
    else:
        psi_all = np.empty((svals.size, d, d), dtype=complex)
        for i, s in enumerate(svals):
            psi_all[i], _ = bns_psi(params, float(s), u)
    psi_all = matcalc.sym_part(psi_all)
    diag_ru = np.diag(params.leverage_diag * u)
    r_all = psi_all + diag_ru
    # strip margin: eigmin of Theta^{-1} - 2 Re(R) for every s
    theta_inv = np.linalg.inv(params.wishart_scale)
    strip = theta_inv - 2.0 * matcalc.sym_part(r_all.real)
    margins = np.linalg.eigvalsh(strip)[:, 0]
    ok_all = margins > 0.0
    z = np.eye(d) - 2.0 * np.einsum("sab,bc->sac", r_all, params.wishart_scale)
    eigs = np.linalg.eigvals(z)
    logdet = np.sum(np.log(np.where(ok_all[:, None], eigs, 1.0)), axis=1)
    mgf = np.exp(-0.5 * params.wishart_shape * logdet)
    lam = params.jump_intensity
    integrand = lam * (mgf - 1.0)
    integ_phi = integrand[k_times:].reshape(k_times, quad_x.size)
    ok_phi = ok_all[k_times:].reshape(k_times, quad_x.size)
    phi = np.einsum("kq,q->k", integ_phi, quad_w) * taus
    phi = phi - taus * complex(u @ params.drift_comp)
    valid = np.all(ok_phi, axis=1)
    return phi, psi_all[:k_times], valid
