"""Synthetic daily panels drawn from a fixed instance of the model.

Prices are Bachelier paths with the daily drift and covariance of the
instance.  Signed trading volume follows the stationary Ornstein-Uhlenbeck
approximation of the two-agent trading rate, sampled exactly on the daily
grid; the share volume is its absolute value.  The bundled CSV files under
``artifact/data/synthetic`` come from :func:`generate` with the defaults and
are rebuilt by ``scripts/make_synthetic_dataset.py``.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from . import asymptotics as asy
from . import reference
from .calibration import (
    PERIODS_PER_YEAR,
    CalibrationDataset,
    Panel,
    read_panel,
    two_agent_gammas,
    write_moments,
    write_panel,
)
from .market import ModelParams

SEED = 20240611
N_DAYS = 2520
START = dt.date(2000, 1, 3)


@dataclass
class SyntheticInstance:
    params: ModelParams  # daily units
    mu_daily: np.ndarray
    start_prices: np.ndarray

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "mu_daily": self.mu_daily.tolist(),
                "start_prices": self.start_prices.tolist()}


def default_instance() -> SyntheticInstance:
    """Three portfolios with the reference cost and loading structure and a quarter of its volatility."""
    sigma_daily = reference.SIGMA_HAT / 16.0 / PERIODS_PER_YEAR
    g = two_agent_gammas(reference.GAMMA_BAR, 2.0)
    params = ModelParams(
        gammas=g,
        alpha=np.linalg.cholesky(sigma_daily),
        beta=np.zeros(3),
        xi=reference.XI,
        lambda_bar=np.diag(reference.LAMBDA_DIAG),
        supply=reference.SUPPLY,
    )
    return SyntheticInstance(params, reference.MU_HAT / 16.0 / PERIODS_PER_YEAR, reference.AVERAGE_PRICES.copy())


def business_days(start: dt.date, n: int) -> list[dt.date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def generate(instance: SyntheticInstance | None = None, n_days: int = N_DAYS, seed: int = SEED) -> list[Panel]:
    inst = default_instance() if instance is None else instance
    p = inst.params
    k = p.n_assets
    rng = np.random.default_rng(seed)
    k1, k2 = asy.ou_parameters(p)
    omega = asy.stationary_covariance(k1, k2)
    decay = expm(-k1)
    step_cov = omega - decay @ omega @ decay.T
    step_chol = np.linalg.cholesky(0.5 * (step_cov + step_cov.T))

    dW = rng.standard_normal((n_days - 1, p.n_brownians))
    prices = inst.start_prices + np.vstack([np.zeros(k), np.cumsum(inst.mu_daily + dW @ p.alpha.T, axis=0)])
    if np.any(prices <= 0):
        raise ValueError("synthetic prices hit zero; choose another seed")
    rate = np.empty((n_days, k))
    rate[0] = np.linalg.cholesky(omega) @ rng.standard_normal(k)
    shocks = rng.standard_normal((n_days - 1, k)) @ step_chol.T
    for t in range(1, n_days):
        rate[t] = decay @ rate[t - 1] + shocks[t - 1]
    volume = np.abs(rate)
    dates = business_days(START, n_days)
    return [
        Panel(name, dates, prices[:, i], volume[:, i], prices[:, i] * volume[:, i],
              np.full(n_days, p.supply[i]))
        for i, name in enumerate(reference.NAMES)
    ]


def write_dataset(directory, instance: SyntheticInstance | None = None, n_days: int = N_DAYS,
                  seed: int = SEED) -> list[Path]:
    """Write one CSV per portfolio plus the instance and its stationary moments."""
    inst = default_instance() if instance is None else instance
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for panel in generate(inst, n_days, seed):
        path = out / f"{panel.name}.csv"
        write_panel(path, panel)
        paths.append(path)
    moments = asy.asymptotic_report(inst.params).volume_moments
    write_moments(out / "model_moments.csv", moments)
    meta = {"seed": seed, "n_days": n_days, "instance": inst.to_dict()}
    (out / "instance.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths


def bundled_dir() -> Path:
    return Path(str(resources.files("artifact") / "data" / "synthetic"))


def bundled_panel_paths() -> list[Path]:
    return [bundled_dir() / f"{name}.csv" for name in reference.NAMES]


def bundled_dataset() -> CalibrationDataset:
    return CalibrationDataset.from_panels([read_panel(p) for p in bundled_panel_paths()])
