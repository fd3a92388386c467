"""Matrix Riccati system for the frictional equilibrium.

Time-to-maturity ``tau`` runs from 0 to T.  With n = K(N-1) and the
volatility candidate A = alpha + (c kron I_K)' H the system reads

    F' = Gamma kron A A' - F (I kron Lambda^-1) F,     F(0) = 0,
    H' = (Gamma kron A) xi - F (I kron Lambda^-1) H,   H(0) = 0.

F is n x n and positive semidefinite in the sense b'Fb >= 0, but it is not
symmetric in general.  Everything is integrated by classical fixed-step RK4
and evaluated off-grid by cubic Hermite interpolation through the stored
derivatives.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import matrix_kit as mk
from .errors import DimensionMismatch, NonFinite, OutOfRange
from .market import ModelParams, RiskAggregates, require_valid, risk_aggregates


@dataclass(frozen=True)
class System:
    """Constant matrices entering the right-hand side."""

    Gamma: np.ndarray
    c_kron: np.ndarray  # (c kron I_K), shape (n, K)
    alpha: np.ndarray
    xi: np.ndarray
    lam_inv_big: np.ndarray  # I kron Lambda^-1
    lam_half_big: np.ndarray  # I kron Lambda^(1/2)
    lam_mhalf_big: np.ndarray  # I kron Lambda^(-1/2)
    gamma_xi: np.ndarray  # (Gamma kron I_D) xi, as (N-1) blocks of D x D

    @classmethod
    def build(cls, params: ModelParams, agg: RiskAggregates) -> "System":
        k, d = params.n_assets, params.n_brownians
        m = params.n_agents - 1
        lam = params.Lambda
        eye = np.eye(m)
        return cls(
            Gamma=agg.Gamma,
            c_kron=np.kron(agg.c.reshape(-1, 1), np.eye(k)),
            alpha=params.alpha,
            xi=params.xi,
            lam_inv_big=np.kron(eye, np.linalg.inv(lam)),
            lam_half_big=np.kron(eye, mk.spd_power(lam, 0.5)),
            lam_mhalf_big=np.kron(eye, mk.spd_power(lam, -0.5)),
            gamma_xi=np.einsum("ij,jab->iab", agg.Gamma, params.xi.reshape(m, d, d)),
        )

    def vol(self, H: np.ndarray) -> np.ndarray:
        return self.alpha + self.c_kron.T @ H

    def rhs(self, F: np.ndarray, H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        A = self.alpha + self.c_kron.T @ H
        FL = F @ self.lam_inv_big
        dF = _kron(self.Gamma, A @ A.T) - FL @ F
        # (Gamma kron A) xi = (I kron A)(Gamma kron I) xi
        dH = (A @ self.gamma_xi).reshape(-1, H.shape[1]) - FL @ H
        return dF, dH


def _kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, n = a.shape
    p, q = b.shape
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(m * p, n * q)


def riccati_rhs(F, H, agg: RiskAggregates, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    n = params.n_assets * (params.n_agents - 1)
    F = np.asarray(F, dtype=float)
    H = np.asarray(H, dtype=float)
    if F.shape != (n, n) or H.shape != (n, params.n_brownians):
        raise DimensionMismatch(f"F {F.shape} / H {H.shape} do not match n={n}, D={params.n_brownians}")
    return System.build(params, agg).rhs(F, H)


def hermite(grid: np.ndarray, y: np.ndarray, dy: np.ndarray, x) -> np.ndarray:
    """Cubic Hermite interpolation on a uniform grid.

    ``y`` and ``dy`` carry the sample axis first; ``x`` may be scalar or array.
    """
    x = np.asarray(x, dtype=float)
    h = grid[1] - grid[0]
    m = len(grid) - 1
    idx = np.clip(np.floor((x - grid[0]) / h).astype(int), 0, m - 1)
    s = (x - grid[idx]) / h
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    extra = (slice(None),) + (None,) * (y.ndim - 1)
    if x.ndim == 0:
        return (h00 * y[idx] + h10 * h * dy[idx] + h01 * y[idx + 1] + h11 * h * dy[idx + 1])
    return (
        h00[extra] * y[idx]
        + h10[extra] * h * dy[idx]
        + h01[extra] * y[idx + 1]
        + h11[extra] * h * dy[idx + 1]
    )


def rk4_linear(nodes: np.ndarray, mids: np.ndarray, h: float, y0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Integrate Y' = A(x) Y with classical RK4 on a uniform grid.

    ``nodes[i]`` is A at grid point i and ``mids[i]`` is A half a step later,
    so ``mids`` has one entry fewer.  Returns values and derivatives at every
    grid point.
    """
    m = len(nodes)
    ys = np.empty((m,) + y0.shape)
    y = y0.astype(float)
    half = 0.5 * h
    for i in range(m - 1):
        a1 = mids[i]
        ys[i] = y
        k1 = nodes[i] @ y
        k2 = a1 @ (y + half * k1)
        k3 = a1 @ (y + half * k2)
        k4 = nodes[i + 1] @ (y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    ys[-1] = y
    return ys, nodes @ ys


@dataclass
class RiccatiSolution:
    """Grid solution of the Riccati system and the associated transitions.

    ``F``/``H`` live on the time-to-maturity grid ``tau``.  ``phi`` is the
    forward-time transition (t = T - tau), sampled at ``t_grid``, solving
    phi'(t) = (I kron Lambda^-1/2) F'(T-t) (I kron Lambda^-1/2) phi(t).
    ``phi_F`` is the companion transition on the tau grid solving
    phi_F'(tau) = (I kron Lambda^-1/2) F'(tau) (I kron Lambda^-1/2) phi_F(tau).
    """

    params: ModelParams
    agg: RiskAggregates
    system: System
    tau: np.ndarray
    F: np.ndarray
    H: np.ndarray
    dF: np.ndarray
    dH: np.ndarray
    t_grid: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    phi_F: np.ndarray
    dphi_F: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def horizon(self) -> float:
        return self.params.horizon

    @property
    def steps(self) -> int:
        return len(self.tau) - 1

    def F_at(self, tau):
        return hermite(self.tau, self.F, self.dF, tau)

    def H_at(self, tau):
        return hermite(self.tau, self.H, self.dH, tau)

    def phi_at(self, t):
        return hermite(self.t_grid, self.phi, self.dphi, t)

    def phi_F_at(self, tau):
        return hermite(self.tau, self.phi_F, self.dphi_F, tau)

    def scaled_FT(self, tau) -> np.ndarray:
        """(I kron Lambda^-1/2) F'(tau) (I kron Lambda^-1/2)."""
        L = self.system.lam_mhalf_big
        F = self.F_at(tau)
        return L @ np.swapaxes(F, -1, -2) @ L

    def vol_at(self, tau) -> np.ndarray:
        return self.system.vol(self.H_at(tau))

    def to_csv(self, path) -> None:
        """Write (tau, vec F, vec H) in row-major order, one row per grid point."""
        n = self.F.shape[1]
        d = self.H.shape[2]
        header = ["tau"]
        header += [f"F_{i}_{j}" for i in range(n) for j in range(n)]
        header += [f"H_{i}_{j}" for i in range(n) for j in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, F, H in zip(self.tau, self.F, self.H):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in F.ravel()] + [repr(float(v)) for v in H.ravel()])


def _rk4_riccati(system: System, tau: np.ndarray, n: int, d: int):
    h = tau[1] - tau[0]
    m = len(tau)
    Fs = np.empty((m, n, n))
    Hs = np.empty((m, n, d))
    dFs = np.empty_like(Fs)
    dHs = np.empty_like(Hs)
    F = np.zeros((n, n))
    H = np.zeros((n, d))
    f = system.rhs
    for i in range(m - 1):
        k1F, k1H = f(F, H)
        k2F, k2H = f(F + 0.5 * h * k1F, H + 0.5 * h * k1H)
        k3F, k3H = f(F + 0.5 * h * k2F, H + 0.5 * h * k2H)
        k4F, k4H = f(F + h * k3F, H + h * k3H)
        Fs[i], Hs[i], dFs[i], dHs[i] = F, H, k1F, k1H
        F = F + h / 6.0 * (k1F + 2 * k2F + 2 * k3F + k4F)
        H = H + h / 6.0 * (k1H + 2 * k2H + 2 * k3H + k4H)
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(H))):
            raise NonFinite(f"Riccati solution overflowed at tau={tau[i + 1]:.6g}; refine the grid")
    Fs[-1], Hs[-1] = F, H
    dFs[-1], dHs[-1] = f(F, H)
    return Fs, Hs, dFs, dHs


def solve_riccati(params: ModelParams, steps: int = 4000, tol: float = mk.DEFAULT_TOL) -> RiccatiSolution:
    """Solve for (F, H) on [0, T] and integrate both transition matrices."""
    require_valid(params)
    if steps < 2:
        raise OutOfRange("steps must be at least 2")
    agg = risk_aggregates(params, tol)
    system = System.build(params, agg)
    n = params.n_assets * (params.n_agents - 1)
    d = params.n_brownians
    T = params.horizon
    tau = np.linspace(0.0, T, steps + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        F, H, dF, dH = _rk4_riccati(system, tau, n, d)

    sol = RiccatiSolution(
        params=params, agg=agg, system=system, tau=tau, F=F, H=H, dF=dF, dH=dH,
        t_grid=tau.copy(), phi=None, dphi=None, phi_F=None, dphi_F=None,
        metadata={"method": "rk4", "steps": steps, "interpolation": "cubic-hermite"},
    )
    eye = np.eye(n)
    h = tau[1] - tau[0]
    nodes = sol.scaled_FT(tau)
    mids = sol.scaled_FT(tau[:-1] + 0.5 * h)
    # forward time t = T - tau walks the maturity grid backwards
    sol.phi, sol.dphi = rk4_linear(nodes[::-1], mids[::-1], h, eye)
    sol.phi_F, sol.dphi_F = rk4_linear(nodes, mids, h, eye)
    for name in ("phi", "phi_F"):
        if not np.all(np.isfinite(getattr(sol, name))):
            raise NonFinite(f"{name} overflowed; refine the grid")
    return sol


def _right_divide(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a b^-1 via a linear solve (broadcasts over leading axes of ``a``)."""
    return np.swapaxes(np.linalg.solve(np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2)), -1, -2)


def psi(sol: RiccatiSolution, r, t) -> np.ndarray:
    """Psi(r; t) = (I kron Lambda^1/2) phi(r) phi(t)^-1 (I kron Lambda^-1/2).

    ``r`` may be an array of times, all required to lie in [0, t].
    """
    T = sol.horizon
    r_arr = np.asarray(r, dtype=float)
    eps = 1e-12 * T
    if not (-eps <= t <= T + eps) or np.any(r_arr < -eps) or np.any(r_arr > t + eps):
        raise OutOfRange(f"need 0 <= r <= t <= T, got r={r}, t={t}")
    x = _right_divide(sol.phi_at(r_arr), sol.phi_at(t))
    return sol.system.lam_half_big @ x @ sol.system.lam_mhalf_big


def psi_F(sol: RiccatiSolution, r, tau) -> np.ndarray:
    """Companion transition phi_F(r) phi_F(tau)^-1 on the maturity grid."""
    return _right_divide(sol.phi_F_at(r), sol.phi_F_at(tau))


# --- structural diagnostics -----------------------------------------------


def psd_profile(sol: RiccatiSolution, rel_tol: float = 1e-8) -> np.ndarray:
    """Boolean PSD flag for every grid F with tolerance scaled by |F|."""
    return np.array([mk.is_psd(F, rel_tol * mk.frobenius(F)) for F in sol.F])


def _rk4_maps(sol: RiccatiSolution, start: np.ndarray, q: float) -> np.ndarray:
    """RK4 propagators of phi_F over [start, start + q], one per start point."""
    a = sol.scaled_FT(start)
    b = sol.scaled_FT(start + 0.5 * q)
    c = sol.scaled_FT(start + q)
    eye = np.eye(a.shape[-1])
    k1 = a
    k2 = b @ (eye + 0.5 * q * k1)
    k3 = b @ (eye + 0.5 * q * k2)
    k4 = c @ (eye + q * k3)
    return eye + q / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _step_maps(sol: RiccatiSolution) -> np.ndarray:
    """One-step RK4 propagators E_i with phi_F[i+1] = E_i phi_F[i]."""
    tau = sol.tau
    return _rk4_maps(sol, tau[:-1], tau[1] - tau[0])


def psi_F_norms(sol: RiccatiSolution, stride: int = 1) -> np.ndarray:
    """Largest |Psi_F(r; tau)|_op over grid points r <= tau, for each tau on the strided grid.

    Psi_F(r; tau) is accumulated as E_r^-1 ... E_(tau-1)^-1 from the one-step
    propagators.  Dividing phi_F(r) by phi_F(tau) directly loses about
    cond(phi_F(tau)) * eps, which is visible at the 1e-8 level on long
    horizons.
    """
    E = _step_maps(sol)
    idx = list(range(0, sol.steps + 1, stride))
    if idx[-1] != sol.steps:
        idx.append(sol.steps)
    n = E.shape[-1]
    blocks = []
    for a, b in zip(idx, idx[1:]):
        C = np.eye(n)
        for i in range(a, b):
            C = E[i] @ C
        blocks.append(C)
    m = len(idx)
    out = np.zeros(m)
    stack = np.empty((m, n, n))
    for i in range(m - 1, -1, -1):
        if i < m - 1:
            stack[i + 1:] = np.linalg.solve(blocks[i][None], stack[i + 1:])
        stack[i] = np.eye(n)
        X = stack[i:]
        norms = np.sqrt(np.max(np.linalg.eigvalsh(np.swapaxes(X, -1, -2) @ X), axis=-1))
        np.maximum(out[i:], norms, out=out[i:])
    return out


def gronwall_envelope(sol: RiccatiSolution) -> tuple[np.ndarray, np.ndarray]:
    """(|A(tau)|_op, |alpha| exp(|c| |Lambda|^1/2 |Lambda^-1|^1/2 |Gamma| |xi| tau)).

    Norms on the right are Frobenius.
    """
    p, agg = sol.params, sol.agg
    lam = p.Lambda
    rate = (
        mk.frobenius(agg.c)
        * np.sqrt(mk.frobenius(lam))
        * np.sqrt(mk.frobenius(np.linalg.inv(lam)))
        * mk.frobenius(agg.Gamma)
        * mk.frobenius(p.xi)
    )
    lhs = np.array([mk.op_norm(sol.system.vol(H)) for H in sol.H])
    rhs = mk.frobenius(p.alpha) * np.exp(rate * sol.tau)
    return lhs, rhs


@dataclass
class IntegralCheckReport:
    deviation_F: float
    deviation_H: float
    transition_discrepancy: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.deviation_F, self.deviation_H) <= self.tol

    def to_dict(self) -> dict:
        return {
            "deviation_F": self.deviation_F,
            "deviation_H": self.deviation_H,
            "transition_discrepancy": self.transition_discrepancy,
            "tol": self.tol,
            "passed": self.passed,
        }


def _forcing(sol: RiccatiSolution, H: np.ndarray, lmh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sy = sol.system
    A = sy.alpha[None] + np.swapaxes(sy.c_kron, 0, 1)[None] @ H
    gF = np.stack([np.kron(sy.Gamma, lmh @ a @ a.T) for a in A])
    gH = np.stack([np.kron(sy.Gamma, lmh @ a) @ sy.xi for a in A])
    return gF, gH


def integral_representation(sol: RiccatiSolution) -> tuple[np.ndarray, np.ndarray]:
    """Rebuild F and H from the variation-of-constants identities.

    (I kron Lambda^-1/2) F(tau) = int_0^tau Psi_F(r; tau)' (Gamma kron Lambda^-1/2 A A')(r) dr
    and the same with (Gamma kron Lambda^-1/2 A) xi for H.  With
    J(tau) the right-hand side, J(tau_i+1) = E_i^-T J(tau_i) + (integral over
    one step), where E_i is the one-step propagator of phi_F; each step is
    integrated by Simpson's rule using the half-step propagator for the
    midpoint.  Going through phi_F(tau)^-T instead would cost a factor
    cond(phi_F(tau)), which reaches 1e14 on fast instances.
    """
    sy = sol.system
    lmh = mk.spd_power(sol.params.Lambda, -0.5)
    tau = sol.tau
    h = tau[1] - tau[0]
    mid = tau[:-1] + 0.5 * h
    gF, gH = _forcing(sol, sol.H, lmh)
    mF, mH = _forcing(sol, sol.H_at(mid), lmh)
    back = np.swapaxes(np.linalg.inv(_step_maps(sol)), -1, -2)  # Psi_F(tau_i; tau_i+1)'
    back_mid = np.swapaxes(np.linalg.inv(_rk4_maps(sol, mid, 0.5 * h)), -1, -2)  # Psi_F(mid; tau_i+1)'
    JF = np.zeros_like(sol.F)
    JH = np.zeros_like(sol.H)
    for i in range(len(tau) - 1):
        JF[i + 1] = back[i] @ (JF[i] + h / 6.0 * gF[i]) + h / 6.0 * (4.0 * back_mid[i] @ mF[i] + gF[i + 1])
        JH[i + 1] = back[i] @ (JH[i] + h / 6.0 * gH[i]) + h / 6.0 * (4.0 * back_mid[i] @ mH[i] + gH[i + 1])
    return sy.lam_half_big @ JF, sy.lam_half_big @ JH


def transition_discrepancy(sol: RiccatiSolution, stride: int = 50) -> float:
    """Largest relative gap between phi(r) phi(t)^-1 and Psi_F(T-t; T-r)'.

    The two coincide when the scaled F is symmetric (for instance with two
    agents) and differ in general otherwise.  Sampled on a strided grid.
    """
    T = sol.horizon
    ts = sol.t_grid[::stride]
    worst = 0.0
    for t in ts:
        rs = ts[ts <= t]
        a = _right_divide(sol.phi_at(rs), sol.phi_at(t))
        b = np.swapaxes(psi_F(sol, T - t, T - rs), -1, -2)
        num = np.linalg.norm(a - b, axis=(1, 2))
        den = np.maximum(np.linalg.norm(a, axis=(1, 2)), 1e-300)
        worst = max(worst, float(np.max(num / den)))
    return worst


def integral_representation_check(sol: RiccatiSolution, tol: float = 1e-5) -> IntegralCheckReport:
    F_rep, H_rep = integral_representation(sol)
    scaleF = max(np.max(np.linalg.norm(sol.F, axis=(1, 2))), 1e-300)
    scaleH = np.max(np.linalg.norm(sol.H, axis=(1, 2)))
    devF = float(np.max(np.linalg.norm(F_rep - sol.F, axis=(1, 2))) / scaleF)
    devH_abs = float(np.max(np.linalg.norm(H_rep - sol.H, axis=(1, 2))))
    devH = devH_abs / scaleH if scaleH > 0 else devH_abs
    return IntegralCheckReport(devF, devH, transition_discrepancy(sol), tol)
