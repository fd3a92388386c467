"""Small-cost expansions and the stationary trading-volume distribution.

Costs are written as Lambda = lam * Lambda_bar with lam = ``lambda_scale``.
To leading order in lam the price volatility, the initial price and the
average expected return move by terms of order lam^(1/2), all built from

    M = (c' Gamma^(1/2)) kron (Lambda_bar (Lambda_bar # aa')^(-1) alpha),

while the agents' trading rates behave like an Ornstein-Uhlenbeck process
with drift kappa1 and loading kappa2.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from . import matrix_kit as mk
from .equilibrium import equilibrium_coefficients
from .errors import OutOfDomain, UnstableDrift
from .market import ModelParams, RiskAggregates, require_valid, risk_aggregates
from .riccati import solve_riccati


def _agg(params: ModelParams, agg: RiskAggregates | None) -> RiskAggregates:
    return risk_aggregates(params) if agg is None else agg


def _cost_mean(lam: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    return mk.riemannian_mean(lam, alpha @ alpha.T)


def hat_F(params: ModelParams, agg: RiskAggregates | None = None) -> np.ndarray:
    """Long-maturity limit of F / lam^(1/2): Gamma^(1/2) kron (Lambda_bar # aa')."""
    agg = _agg(params, agg)
    return np.kron(agg.gamma_sqrt, _cost_mean(params.lambda_bar, params.alpha))


def m_matrix(params: ModelParams, agg: RiskAggregates | None = None) -> np.ndarray:
    """K x (N-1)D loading matrix of the leading-order corrections."""
    agg = _agg(params, agg)
    lb, a = params.lambda_bar, params.alpha
    right = lb @ np.linalg.solve(_cost_mean(lb, a), a)
    return np.kron((agg.c @ agg.gamma_sqrt)[None, :], right)


def two_agent_m_matrix(params: ModelParams) -> np.ndarray:
    """Closed form of :func:`m_matrix` for two agents."""
    g1, g2 = params.gammas
    lb, a = params.lambda_bar, params.alpha
    return (g2 - g1) / math.sqrt(2.0 * (g1 + g2)) * lb @ np.linalg.solve(_cost_mean(lb, a), a)


@dataclass
class AsymptoticReport:
    M: np.ndarray
    sigma_correction: np.ndarray
    price_correction: np.ndarray
    delta_mu_bar: np.ndarray
    lambda_scale: float
    relative_adjustments: np.ndarray | None = None
    kappa1: np.ndarray | None = None
    kappa2: np.ndarray | None = None
    Omega: np.ndarray | None = None
    volume_moments: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {"lambda_scale": self.lambda_scale}
        for name in ("M", "sigma_correction", "price_correction", "delta_mu_bar", "relative_adjustments",
                     "kappa1", "kappa2", "Omega", "volume_moments"):
            val = getattr(self, name)
            out[name] = None if val is None else np.asarray(val).tolist()
        return out


def leading_order_corrections(params: ModelParams, agg: RiskAggregates | None = None,
                              prices=None) -> AsymptoticReport:
    """Volatility, initial-price and mean-return corrections of order lam^(1/2).

    ``prices`` (average price levels) adds relative return adjustments
    delta_mu_bar / prices.
    """
    agg = _agg(params, agg)
    a, s, T = params.alpha, params.supply, params.horizon
    M = m_matrix(params, agg)
    Mxi = M @ params.xi
    root = math.sqrt(params.lambda_scale)
    core = root * agg.gamma_bar * (Mxi @ a.T + a @ Mxi.T) @ s
    rel = None if prices is None else core / np.asarray(prices, dtype=float)
    return AsymptoticReport(
        M=M,
        sigma_correction=root * Mxi,
        price_correction=-core * T,
        delta_mu_bar=core,
        lambda_scale=params.lambda_scale,
        relative_adjustments=rel,
    )


def _check_drift(k1: np.ndarray) -> np.ndarray:
    ev = np.linalg.eigvals(k1)
    if np.any(ev.real <= 0):
        raise UnstableDrift(f"OU drift has eigenvalues with non-positive real part: {ev[ev.real <= 0]}")
    return k1


def _kappa2(params: ModelParams, k1: np.ndarray) -> np.ndarray:
    a = params.alpha
    load = np.kron(np.eye(params.n_agents - 1), np.linalg.solve(a @ a.T, a))
    return -k1 @ load @ params.xi


def ou_parameters(params: ModelParams, agg: RiskAggregates | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(kappa1, kappa2) with the cost matrix Lambda = lam * Lambda_bar used whole."""
    agg = _agg(params, agg)
    lam = params.Lambda
    k1 = np.kron(agg.gamma_sqrt, np.linalg.solve(lam, _cost_mean(lam, params.alpha)))
    k1 = _check_drift(k1)
    return k1, _kappa2(params, k1)


def ou_parameters_scaled(params: ModelParams, agg: RiskAggregates | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Same as :func:`ou_parameters`, with lam^(-1/2) pulled out of Lambda_bar."""
    agg = _agg(params, agg)
    lb = params.lambda_bar
    k1 = np.kron(agg.gamma_sqrt, np.linalg.solve(lb, _cost_mean(lb, params.alpha)))
    k1 = _check_drift(k1 / math.sqrt(params.lambda_scale))
    return k1, _kappa2(params, k1)


def two_agent_kappa1(params: ModelParams) -> np.ndarray:
    g1, g2 = params.gammas
    lam = params.Lambda
    return math.sqrt(0.5 * (g1 + g2)) * np.linalg.solve(lam, _cost_mean(lam, params.alpha))


def stationary_covariance(kappa1, kappa2, tol: float = mk.DEFAULT_TOL) -> np.ndarray:
    """Omega solving kappa1 Omega + Omega kappa1' = kappa2 kappa2'."""
    k2 = np.asarray(kappa2, dtype=float)
    return mk.solve_lyapunov(kappa1, k2 @ k2.T, tol)


def abs_product_moment(var_i: float, var_j: float, cov: float, tol: float = 1e-10) -> float:
    """E|X Y| for a centred Gaussian pair with the given (co)variances."""
    scale = math.sqrt(var_i * var_j)
    if scale == 0.0:
        return 0.0
    rho = cov / scale
    if abs(rho) > 1.0 + tol:
        raise OutOfDomain(f"correlation {rho:.6g} outside [-1, 1]")
    rho = max(-1.0, min(1.0, rho))
    return 2.0 * scale / math.pi * mk.gauss_2f1_abs_moment(rho)


def volume_second_moments(Omega, tol: float = 1e-10) -> np.ndarray:
    """Table of E|v_i v_j| for v ~ N(0, Omega); the diagonal is Omega_ii."""
    om = mk.as_matrix(Omega, "Omega")
    if om.shape[0] != om.shape[1]:
        raise OutOfDomain("Omega must be square")
    d = np.diag(om)
    if np.any(d < -tol * max(np.max(np.abs(d)), 1e-300)):
        raise OutOfDomain("Omega has negative variances")
    d = np.clip(d, 0.0, None)
    n = om.shape[0]
    out = np.diag(d).astype(float)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = abs_product_moment(d[i], d[j], 0.5 * (om[i, j] + om[j, i]), tol)
    return out


def moment_vector(table: np.ndarray) -> np.ndarray:
    """Upper triangle, row by row: (11, 12, ..., 1n, 22, ..., nn)."""
    return np.asarray(table)[np.triu_indices(np.shape(table)[0])]


def scaling_factor(k: float) -> float:
    """(k-1)(k+1)^(-1/2) k^(-1/4): how return adjustments scale with k = gamma2/gamma1."""
    k = float(k)
    if not k >= 1.0:
        raise OutOfDomain(f"heterogeneity k must be >= 1, got {k}")
    return (k - 1.0) / math.sqrt(k + 1.0) / k**0.25


def asymptotic_report(params: ModelParams, agg: RiskAggregates | None = None, prices=None) -> AsymptoticReport:
    require_valid(params)
    agg = _agg(params, agg)
    rep = leading_order_corrections(params, agg, prices)
    rep.kappa1, rep.kappa2 = ou_parameters(params, agg)
    rep.Omega = stationary_covariance(rep.kappa1, rep.kappa2)
    rep.volume_moments = volume_second_moments(rep.Omega)
    return rep


def k_scan_rows(premium_ref: float, k_grid, k_ref: float = 2.0) -> list[tuple[float, float, float]]:
    f_ref = scaling_factor(k_ref)
    if f_ref == 0.0:
        raise OutOfDomain("reference k must exceed 1")
    return [(float(k), scaling_factor(k), premium_ref * scaling_factor(k) / f_ref) for k in k_grid]


def write_k_scan(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "factor", "premium"])
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


# --- comparison against the full solver ---------------------------------

@dataclass
class ConvergenceRow:
    lam: float
    e_sigma: float  # int ||sigma - alpha - lam^(1/2) M xi||_op dt
    e_s0: float  # |S0 - S0_bar - price correction|
    e0: float  # int ||sigma - alpha||_op dt

    def ratios(self) -> tuple[float, float, float]:
        return self.e_sigma / self.lam, self.e_s0 / self.lam, self.e0 / math.sqrt(self.lam)


@dataclass
class ConvergenceReport:
    rows: list[ConvergenceRow]
    band: float = 3.0
    spreads: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = np.array([r.ratios() for r in self.rows])
        for name, col in zip(("e_sigma", "e_s0", "e0"), cols.T):
            self.spreads[name] = _spread(col)

    @property
    def passed(self) -> bool:
        return all(v <= self.band for v in self.spreads.values())

    def to_dict(self) -> dict:
        return {
            "band": self.band,
            "passed": self.passed,
            "spreads": dict(self.spreads),
            "rows": [
                {"lambda": r.lam, "e_sigma": r.e_sigma, "e_s0": r.e_s0, "e0": r.e0,
                 "e_sigma_over_lambda": r.ratios()[0], "e_s0_over_lambda": r.ratios()[1],
                 "e0_over_sqrt_lambda": r.ratios()[2]}
                for r in self.rows
            ],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "e_sigma", "e_s0", "e0", "e_sigma_over_lambda", "e_s0_over_lambda",
                        "e0_over_sqrt_lambda"])
            for r in self.rows:
                w.writerow([repr(v) for v in (r.lam, r.e_sigma, r.e_s0, r.e0, *r.ratios())])


def _spread(col: np.ndarray) -> float:
    """max/min of a column of positive ratios; an all-zero column counts as flat."""
    if np.all(col == 0.0):
        return 1.0
    if np.any(col <= 0.0):
        return math.inf
    return float(col.max() / col.min())


def _convergence_row(params: ModelParams, lam: float, steps: int) -> ConvergenceRow:
    p = params.replace(lambda_scale=lam, initial_positions=None)
    sol = solve_riccati(p, steps=steps)
    coef = equilibrium_coefficients(p, sol)
    rep = leading_order_corrections(p, sol.agg)
    sig = sol.vol_at(sol.tau)  # on the tau grid; the integral over t is the same
    dev = sig - p.alpha
    e0 = trapezoid(np.linalg.norm(dev, ord=2, axis=(1, 2)), sol.tau)
    e_sig = trapezoid(np.linalg.norm(dev - rep.sigma_correction, ord=2, axis=(1, 2)), sol.tau)
    e_s0 = float(np.linalg.norm(coef.s0 - coef.s0_bar - rep.price_correction))
    return ConvergenceRow(lam=float(lam), e_sigma=float(e_sig), e_s0=e_s0, e0=float(e0))


def asymptotic_convergence_check(params: ModelParams, lambdas=(1e-1, 1e-2, 1e-3), steps: int = 4000,
                                 band: float = 3.0, threads: int = 1) -> ConvergenceReport:
    """Solve the full model for each lam and compare with the expansions."""
    lams = [float(v) for v in lambdas]
    if not lams or any(v <= 0 for v in lams):
        raise OutOfDomain("lambda values must be positive")
    if any(b >= a for a, b in zip(lams, lams[1:])):
        raise OutOfDomain("lambda values must be strictly decreasing")
    require_valid(params)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(lambda v: _convergence_row(params, v, steps), lams))
    else:
        rows = [_convergence_row(params, v, steps) for v in lams]
    return ConvergenceReport(rows=rows, band=band)
