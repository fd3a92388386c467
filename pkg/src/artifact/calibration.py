"""Calibration of the two-agent model to daily price and volume data.

Pipeline: ILLIQ and summary statistics from per-portfolio panels, the
aggregate risk aversion by regression through the origin, the endowment
loading xi by matching stationary volume moments, and the resulting
liquidity premia as functions of the heterogeneity k = gamma2 / gamma1.

The model is run in trading-day time units: alpha is a Cholesky factor of
Sigma_hat / periods_per_year, Lambda and the volume moments are daily, and
return adjustments are annualized at the end.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import bisect, minimize

from . import asymptotics as asy
from . import matrix_kit as mk
from . import reference
from .errors import (
    DegenerateRegressor,
    DimensionMismatch,
    InsufficientData,
    NoImprovement,
    NonPositiveVolume,
    OutOfDomain,
    SingularSystem,
    ValidationError,
)
from .market import ModelParams, gamma_bar as harmonic_gamma, risk_aggregates

PERIODS_PER_YEAR = 252
PANEL_COLUMNS = ("date", "price", "volume", "dollar_volume", "shares_outstanding")


# --- panels ---------------------------------------------------------------

@dataclass
class Panel:
    name: str
    dates: list
    price: np.ndarray
    volume: np.ndarray
    dollar_volume: np.ndarray
    shares_outstanding: np.ndarray

    def __post_init__(self):
        for col in PANEL_COLUMNS[1:]:
            setattr(self, col, np.asarray(getattr(self, col), dtype=float))
        n = len(self.dates)
        if any(getattr(self, c).shape != (n,) for c in PANEL_COLUMNS[1:]):
            raise DimensionMismatch(f"panel {self.name}: columns have different lengths")

    def __len__(self) -> int:
        return len(self.dates)


def read_panel(path, name: str | None = None) -> Panel:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in PANEL_COLUMNS):
            raise ValidationError(f"{path}: header must contain {','.join(PANEL_COLUMNS)}")
        rows = list(reader)
    try:
        dates = [dt.date.fromisoformat(r["date"]) for r in rows]
        cols = {c: [float(r[c]) for r in rows] for c in PANEL_COLUMNS[1:]}
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    return Panel(name or path.stem, dates, **cols)


def write_panel(path, panel: Panel) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PANEL_COLUMNS)
        for i, d in enumerate(panel.dates):
            w.writerow([d.isoformat() if hasattr(d, "isoformat") else d]
                       + [repr(float(getattr(panel, c)[i])) for c in PANEL_COLUMNS[1:]])


def check_panel(panel: Panel) -> None:
    if len(panel) < 2:
        raise InsufficientData(f"panel {panel.name}: need at least two observations")
    if np.any(panel.price <= 0) or not np.all(np.isfinite(panel.price)):
        raise ValidationError(f"panel {panel.name}: prices must be positive")
    if np.any(panel.volume <= 0) or np.any(panel.dollar_volume <= 0):
        raise NonPositiveVolume(f"panel {panel.name}: volumes must be positive")
    if any(b <= a for a, b in zip(panel.dates, panel.dates[1:])):
        raise ValidationError(f"panel {panel.name}: dates must be strictly increasing")


def compute_illiq(panel: Panel) -> float:
    """Amihud ILLIQ: average of |daily return| / dollar volume."""
    if len(panel) < 2:
        raise InsufficientData(f"panel {panel.name}: need at least two observations")
    if np.any(panel.dollar_volume[1:] <= 0):
        raise NonPositiveVolume(f"panel {panel.name}: dollar volume must be positive")
    p = panel.price
    r = p[1:] / p[:-1] - 1.0
    return float(np.mean(np.abs(r) / panel.dollar_volume[1:]))


def read_moments(path, size: int | None = None) -> np.ndarray:
    """Empirical E|v_i v_j| table from a CSV with columns i,j,moment (1-based)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        entries = [(int(r["i"]) - 1, int(r["j"]) - 1, float(r["moment"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: expected columns i,j,moment") from exc
    n = size or 1 + max(max(i, j) for i, j, _ in entries)
    table = np.full((n, n), np.nan)
    for i, j, v in entries:
        table[i, j] = table[j, i] = v
    if np.any(np.isnan(table)):
        raise InsufficientData(f"{path}: moment table is incomplete")
    return table


def write_moments(path, table: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "moment"])
        n = table.shape[0]
        for i in range(n):
            for j in range(i, n):
                w.writerow([i + 1, j + 1, repr(float(table[i, j]))])


# --- dataset ----------------------------------------------------------------

@dataclass
class CalibrationDataset:
    """Summary statistics in the units the calibration consumes.

    ``mu_hat`` is in dollars per year, ``Sigma_hat`` in dollars squared per
    year and ``volume_moments`` holds daily E|v_i v_j| in shares squared.
    """

    names: tuple
    average_prices: np.ndarray
    supply: np.ndarray
    mu_hat: np.ndarray
    Sigma_hat: np.ndarray
    volume_moments: np.ndarray | None = None
    illiq: np.ndarray | None = None
    periods_per_year: int = PERIODS_PER_YEAR
    n_days: int | None = None

    def __post_init__(self):
        self.average_prices = np.asarray(self.average_prices, dtype=float)
        self.supply = np.asarray(self.supply, dtype=float)
        self.mu_hat = np.asarray(self.mu_hat, dtype=float)
        self.Sigma_hat = mk.as_matrix(self.Sigma_hat, "Sigma_hat")
        k = self.supply.size
        if self.Sigma_hat.shape != (k, k) or self.mu_hat.shape != (k,) or self.average_prices.shape != (k,):
            raise DimensionMismatch("dataset statistics have inconsistent sizes")
        if not mk.is_psd(self.Sigma_hat, 1e-12 * mk.frobenius(self.Sigma_hat)) or \
                mk.frobenius(self.Sigma_hat - self.Sigma_hat.T) > 1e-12 * mk.frobenius(self.Sigma_hat):
            raise ValidationError("Sigma_hat must be symmetric positive semidefinite")
        if self.volume_moments is not None:
            self.volume_moments = mk.as_matrix(self.volume_moments, "volume_moments")
            if self.volume_moments.shape != (k, k):
                raise DimensionMismatch("volume moment table must be K x K")
        if self.illiq is not None:
            self.illiq = np.asarray(self.illiq, dtype=float)

    @property
    def n_assets(self) -> int:
        return self.supply.size

    @classmethod
    def from_panels(cls, panels: list[Panel], periods_per_year: int = PERIODS_PER_YEAR) -> "CalibrationDataset":
        if not panels:
            raise InsufficientData("no panels given")
        for p in panels:
            check_panel(p)
        dates = panels[0].dates
        if any(p.dates != dates for p in panels[1:]):
            raise ValidationError("panels must share the same dates")
        P = np.column_stack([p.price for p in panels])
        V = np.column_stack([p.volume for p in panels])
        dP = np.diff(P, axis=0)
        if dP.shape[0] < 2:
            raise InsufficientData("need at least three observations for a covariance")
        return cls(
            names=tuple(p.name for p in panels),
            average_prices=P.mean(axis=0),
            supply=np.column_stack([p.shares_outstanding for p in panels]).mean(axis=0),
            mu_hat=dP.mean(axis=0) * periods_per_year,
            Sigma_hat=np.cov(dP, rowvar=False, ddof=1).reshape(len(panels), len(panels)) * periods_per_year,
            # |signed volume| is the share volume, so E|v_i v_j| = E[V_i V_j]
            volume_moments=V.T @ V / V.shape[0],
            illiq=np.array([compute_illiq(p) for p in panels]),
            periods_per_year=periods_per_year,
            n_days=len(dates),
        )

    @classmethod
    def from_files(cls, paths, moments_path=None, periods_per_year: int = PERIODS_PER_YEAR) -> "CalibrationDataset":
        ds = cls.from_panels([read_panel(p) for p in paths], periods_per_year)
        if moments_path is not None:
            ds.volume_moments = read_moments(moments_path, ds.n_assets)
        return ds

    def to_dict(self) -> dict:
        def opt(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "names": list(self.names),
            "average_prices": self.average_prices.tolist(),
            "supply": self.supply.tolist(),
            "mu_hat": self.mu_hat.tolist(),
            "Sigma_hat": self.Sigma_hat.tolist(),
            "volume_moments": opt(self.volume_moments),
            "illiq": opt(self.illiq),
            "periods_per_year": self.periods_per_year,
            "n_days": self.n_days,
        }


def moment_table(vector, size: int) -> np.ndarray:
    """Inverse of :func:`asymptotics.moment_vector`."""
    table = np.zeros((size, size))
    iu = np.triu_indices(size)
    table[iu] = vector
    return table + np.triu(table, 1).T


def reference_dataset(supply_scale: str = "e11") -> CalibrationDataset:
    """The three-portfolio summary in :mod:`artifact.reference`."""
    supply = {"e11": reference.SUPPLY, "e10": reference.SUPPLY_E10}[supply_scale]
    lam = np.diag(reference.LAMBDA_DIAG)
    return CalibrationDataset(
        names=reference.NAMES,
        average_prices=reference.AVERAGE_PRICES,
        supply=supply,
        mu_hat=reference.MU_HAT,
        Sigma_hat=reference.SIGMA_HAT,
        volume_moments=moment_table(reference.VOLUME_MOMENTS, 3),
        illiq=np.diag(lam) / 9.0,
    )


# --- frictionless step ------------------------------------------------------

def estimate_gamma_bar(mu_hat, Sigma_hat, s) -> float:
    """Least squares through the origin of mu_hat = gamma_bar * Sigma_hat s."""
    x = np.asarray(Sigma_hat, dtype=float) @ np.asarray(s, dtype=float)
    xx = float(x @ x)
    if not xx > 0.0:
        raise DegenerateRegressor("Sigma_hat s vanishes")
    return float(x @ np.asarray(mu_hat, dtype=float)) / xx


def frictionless_returns(gamma_bar: float, Sigma_hat, s, prices) -> np.ndarray:
    """Relative (Black-Scholes) expected returns gamma_bar Sigma s / prices."""
    return gamma_bar * np.asarray(Sigma_hat) @ np.asarray(s) / np.asarray(prices)


# --- model assembly -----------------------------------------------------------

def two_agent_gammas(gamma_bar: float, k: float) -> np.ndarray:
    """Risk aversions with harmonic aggregate gamma_bar and ratio gamma2/gamma1 = k."""
    if not k >= 1.0:
        raise OutOfDomain(f"heterogeneity k must be >= 1, got {k}")
    return np.array([gamma_bar * (1.0 + k) / k, gamma_bar * (1.0 + k)])


def cost_matrix(dataset: CalibrationDataset, mode: str = "illiq", values=None) -> np.ndarray:
    """Lambda either given directly or as diag(K^2 * ILLIQ)."""
    if mode == "direct":
        if values is None:
            raise ValidationError("direct cost mode needs explicit Lambda values")
        lam = np.asarray(values, dtype=float)
        return np.diag(lam) if lam.ndim == 1 else lam
    if mode == "illiq":
        if dataset.illiq is None:
            raise InsufficientData("dataset carries no ILLIQ estimates")
        return np.diag(dataset.n_assets**2 * dataset.illiq)
    raise ValidationError(f"unknown cost mode {mode!r}")


def daily_alpha(dataset: CalibrationDataset) -> np.ndarray:
    try:
        return np.linalg.cholesky(dataset.Sigma_hat / dataset.periods_per_year)
    except np.linalg.LinAlgError as exc:
        raise ValidationError("Sigma_hat is not positive definite") from exc


def calibration_params(dataset: CalibrationDataset, gammas, Lambda, xi=None) -> ModelParams:
    k = dataset.n_assets
    return ModelParams(
        gammas=gammas,
        alpha=daily_alpha(dataset),
        beta=np.zeros(k),
        xi=np.zeros((k, k)) if xi is None else xi,
        lambda_bar=Lambda,
        supply=dataset.supply,
    )


# --- xi fit -------------------------------------------------------------------

class MomentModel:
    """Volume moments as a function of a symmetric xi, with the xi-free parts cached."""

    def __init__(self, params: ModelParams):
        if params.n_agents != 2 or params.n_assets != params.n_brownians:
            raise DimensionMismatch("the symmetric xi fit needs two agents and D = K")
        self.params = params
        self.kappa1, _ = asy.ou_parameters(params.replace(xi=np.zeros_like(params.xi)))
        a = params.alpha
        self._load = -self.kappa1 @ np.linalg.solve(a @ a.T, a)
        self.size = params.n_assets
        self._iu = np.triu_indices(self.size)
        # kappa1 does not depend on xi, so the Lyapunov operator is inverted once
        # (an explicit inverse keeps the hot path to one matmul, which is also
        # safe to share between restart threads)
        n = self.size
        eye = np.eye(n)
        op = np.kron(eye, self.kappa1) + np.kron(self.kappa1, eye)
        if np.linalg.cond(op) > 1e13:
            raise SingularSystem("Lyapunov operator is numerically singular")
        self._lyap_inv = np.linalg.inv(op)

    def xi_from_vector(self, theta) -> np.ndarray:
        x = np.zeros((self.size, self.size))
        x[self._iu] = theta
        return x + np.triu(x, 1).T

    def moments(self, xi) -> np.ndarray:
        k2 = self._load @ xi
        n = self.size
        omega = (self._lyap_inv @ (k2 @ k2.T).reshape(-1, order="F")).reshape(n, n, order="F")
        return asy.moment_vector(asy.volume_second_moments(0.5 * (omega + omega.T)))

    def moments_checked(self, xi) -> np.ndarray:
        """Same as :meth:`moments` through the residual-checked Lyapunov solver."""
        omega = asy.stationary_covariance(self.kappa1, self._load @ xi)
        return asy.moment_vector(asy.volume_second_moments(omega))


@dataclass
class XiFit:
    xi: np.ndarray
    objective: float
    initial_objective: float
    model_moments: np.ndarray
    iterations: int
    evaluations: int
    restarts: int
    best_restart: int
    restart_objectives: list
    history: list = field(repr=False, default_factory=list)
    weighting: str = "relative"

    def diagnostics(self) -> dict:
        return {
            "objective": self.objective,
            "initial_objective": self.initial_objective,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "restarts": self.restarts,
            "best_restart": self.best_restart,
            "restart_objectives": list(self.restart_objectives),
            "weighting": self.weighting,
        }


def _objective_fn(model: MomentModel, target: np.ndarray, scale: float, weighting: str):
    if weighting == "relative":
        w = np.where(target != 0.0, np.abs(target), 1.0)
    elif weighting == "absolute":
        w = np.full_like(target, max(float(np.max(np.abs(target))), 1e-300))
    else:
        raise ValidationError(f"unknown weighting {weighting!r}")

    def f(theta) -> float:
        try:
            m = model.moments(model.xi_from_vector(np.asarray(theta) * scale))
        except (ArithmeticError, ValueError):
            return math.inf
        return float(np.sum(((m - target) / w) ** 2))

    return f


def _run_restart(f, theta0: np.ndarray, maxiter: int, polish: int) -> tuple:
    history = []

    def cb(intermediate_result):
        history.append(float(intermediate_result.fun))

    opts = {"maxiter": maxiter, "maxfev": 2 * maxiter, "xatol": 1e-10, "fatol": 1e-16, "adaptive": True}
    x, nit, nfev = theta0, 0, 0
    res = None
    for _ in range(1 + polish):
        res = minimize(f, x, method="Nelder-Mead", options=opts, callback=cb)
        x, nit, nfev = res.x, nit + res.nit, nfev + res.nfev
    return x, float(res.fun), nit, nfev, history


def fit_xi(dataset: CalibrationDataset, params: ModelParams, init=None, restarts: int = 8, seed: int = 0,
           weighting: str = "relative", threads: int = 1, maxiter: int = 4000, polish: int = 1) -> XiFit:
    """Match model volume moments to the dataset's over symmetric xi.

    Restart 0 starts from ``init`` (default -I at the natural scale of the
    moments); the others start from ``init`` plus a Gaussian kick drawn from
    their own stream ``default_rng([seed, r])``.  The smallest objective
    wins, ties going to the lowest restart index.  The sign of xi is not
    identified by the moments; it is fixed by making the trace negative.
    """
    if dataset.volume_moments is None:
        raise InsufficientData("dataset carries no volume moments")
    if restarts < 1:
        raise ValidationError("need at least one restart")
    model = MomentModel(params)
    target = asy.moment_vector(dataset.volume_moments)
    diag_mean = float(np.mean(np.diag(dataset.volume_moments)))
    unit = float(np.mean(np.diag(moment_table(model.moments(np.eye(model.size)), model.size))))
    scale = math.sqrt(diag_mean / unit) if diag_mean > 0 else 1.0
    if init is None:
        init = -np.eye(model.size) * scale
    init = mk.as_matrix(init, "init")
    if init.shape != (model.size, model.size):
        raise DimensionMismatch(f"init must be {model.size} x {model.size}")
    theta_init = 0.5 * (init + init.T)[model._iu] / scale
    f = _objective_fn(model, target, scale, weighting)
    f_init = f(theta_init)

    def start(r: int) -> np.ndarray:
        if r == 0:
            return theta_init
        return theta_init + np.random.default_rng([seed, r]).standard_normal(theta_init.size)

    def job(r: int):
        return _run_restart(f, start(r), maxiter, polish)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            runs = list(ex.map(job, range(restarts)))
    else:
        runs = [job(r) for r in range(restarts)]
    objs = [run[1] for run in runs]
    best = min(range(restarts), key=lambda r: (objs[r], r))
    theta, obj, _, _, history = runs[best]
    if f_init > 0 and not obj < f_init:
        raise NoImprovement(f"no restart improved on the initial objective {f_init:.3e}")
    if not math.isfinite(obj):
        raise NoImprovement("all restarts ended at non-finite objective")
    xi = model.xi_from_vector(theta * scale)
    if np.trace(xi) > 0:
        xi = -xi
    return XiFit(
        xi=xi,
        objective=obj,
        initial_objective=f_init,
        model_moments=model.moments_checked(xi),
        iterations=sum(run[2] for run in runs),
        evaluations=sum(run[3] for run in runs),
        restarts=restarts,
        best_restart=best,
        restart_objectives=objs,
        history=history,
        weighting=weighting,
    )


# --- premia -------------------------------------------------------------------

def premium_from_adjustments(relative) -> float:
    """Least liquid (last) minus most liquid (first) relative return adjustment."""
    return float(relative[-1] - relative[0])


@dataclass
class CalibrationResult:
    gamma_bar: float
    gammas: np.ndarray
    gamma_mode: str
    k_ref: float
    frictionless_returns: np.ndarray
    Lambda: np.ndarray
    xi: np.ndarray
    model_volume_moments: np.ndarray
    empirical_volume_moments: np.ndarray
    absolute_adjustments: np.ndarray  # annualized dollars
    return_adjustments: np.ndarray  # annualized, relative to average prices
    premium_ref: float
    fit_diagnostics: dict
    periods_per_year: int = PERIODS_PER_YEAR

    def premium(self, k: float) -> float:
        """Liquidity premium at heterogeneity k by rescaling the reference value."""
        f_ref = asy.scaling_factor(self.k_ref)
        return self.premium_ref * asy.scaling_factor(k) / f_ref

    def to_dict(self) -> dict:
        return {
            "gamma_bar": self.gamma_bar,
            "gammas": self.gammas.tolist(),
            "gamma_mode": self.gamma_mode,
            "k_ref": self.k_ref,
            "frictionless_returns": self.frictionless_returns.tolist(),
            "Lambda": self.Lambda.tolist(),
            "xi": self.xi.tolist(),
            "model_volume_moments": self.model_volume_moments.tolist(),
            "empirical_volume_moments": self.empirical_volume_moments.tolist(),
            "absolute_adjustments": self.absolute_adjustments.tolist(),
            "return_adjustments": self.return_adjustments.tolist(),
            "premium_ref": self.premium_ref,
            "fit_diagnostics": self.fit_diagnostics,
            "periods_per_year": self.periods_per_year,
        }


def calibrate(dataset: CalibrationDataset, k: float = 2.0, gamma_mode: str = "formula", gammas=None,
              lambda_mode: str = "illiq", Lambda=None, gamma_bar: float | None = None, init=None,
              restarts: int = 8, seed: int = 0, weighting: str = "relative", threads: int = 1) -> CalibrationResult:
    """Run the full pipeline.

    ``gamma_mode`` is "formula" (gammas from gamma_bar and k) or "given"
    (explicit ``gammas``; gamma_bar is then their harmonic aggregate, since
    that is what the model uses).
    """
    gb_fit = estimate_gamma_bar(dataset.mu_hat, dataset.Sigma_hat, dataset.supply) if gamma_bar is None \
        else float(gamma_bar)
    if gamma_mode == "formula":
        g = two_agent_gammas(gb_fit, k)
    elif gamma_mode == "given":
        if gammas is None:
            raise ValidationError("gamma mode 'given' needs explicit gammas")
        g = np.sort(np.asarray(gammas, dtype=float))
    else:
        raise ValidationError(f"unknown gamma mode {gamma_mode!r}")
    lam = cost_matrix(dataset, lambda_mode, Lambda)
    base = calibration_params(dataset, g, lam)
    fit = fit_xi(dataset, base, init=init, restarts=restarts, seed=seed, weighting=weighting, threads=threads)
    params = base.replace(xi=fit.xi)
    rep = asy.leading_order_corrections(params, risk_aggregates(params))
    absolute = rep.delta_mu_bar * dataset.periods_per_year
    relative = absolute / dataset.average_prices
    return CalibrationResult(
        gamma_bar=harmonic_gamma(g),
        gammas=g,
        gamma_mode=gamma_mode,
        k_ref=float(g[1] / g[0]),
        frictionless_returns=frictionless_returns(gb_fit, dataset.Sigma_hat, dataset.supply,
                                                  dataset.average_prices),
        Lambda=lam,
        xi=fit.xi,
        model_volume_moments=fit.model_moments,
        empirical_volume_moments=asy.moment_vector(dataset.volume_moments),
        absolute_adjustments=absolute,
        return_adjustments=relative,
        premium_ref=premium_from_adjustments(relative),
        fit_diagnostics=fit.diagnostics(),
        periods_per_year=dataset.periods_per_year,
    )


@dataclass
class PremiumScan:
    rows: list  # (k, factor, premium)
    target: float | None = None
    k_target: float | None = None

    def write_csv(self, path) -> None:
        asy.write_k_scan(path, self.rows)

    def to_dict(self) -> dict:
        return {"rows": [list(r) for r in self.rows], "target": self.target, "k_target": self.k_target}


def solve_k_for_premium(result: CalibrationResult, target: float, k_max: float = 1e6, xtol: float = 1e-12) -> float:
    """Heterogeneity k at which the rescaled premium equals ``target`` (bisection)."""
    if result.premium_ref == 0.0 or target / result.premium_ref < 0:
        raise OutOfDomain("target premium has the wrong sign or the reference premium is zero")
    g = lambda k: result.premium(k) - target  # noqa: E731
    hi = 2.0
    while g(hi) * math.copysign(1.0, result.premium_ref) < 0:
        hi *= 2.0
        if hi > k_max:
            raise OutOfDomain(f"target premium not reached for k <= {k_max:g}")
    return float(bisect(g, 1.0, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500))


def liquidity_premium_scan(result: CalibrationResult, k_grid, target: float | None = None) -> PremiumScan:
    rows = asy.k_scan_rows(result.premium_ref, k_grid, result.k_ref)
    k_t = None if target is None else solve_k_for_premium(result, target)
    return PremiumScan(rows=rows, target=target, k_target=k_t)
