import datetime as dt
import json

import numpy as np
import pytest

from artifact import asymptotics as asy
from artifact import calibration as cal
from artifact import reference
from artifact.errors import InsufficientData, NoImprovement, NonPositiveVolume, OutOfDomain, ValidationError
from artifact.synthetic import (
    SyntheticInstance,
    bundled_dataset,
    bundled_dir,
    business_days,
    default_instance,
    generate,
)


def make_panel(prices, dollar_volume, name="X"):
    n = len(prices)
    dates = business_days(dt.date(2010, 1, 4), n)
    prices = np.asarray(prices, dtype=float)
    dv = np.broadcast_to(np.asarray(dollar_volume, dtype=float), (n,)).copy()
    return cal.Panel(name, dates, prices, dv / prices, dv, np.full(n, 1e6))


def test_illiq_single_move():
    panel = make_panel([100.0, 101.0], 1e6)
    assert cal.compute_illiq(panel) == pytest.approx(1e-8, rel=1e-12, abs=0)


def test_illiq_constant_prices():
    assert cal.compute_illiq(make_panel([50.0] * 30, 2e5)) == 0.0


def test_illiq_scripted_year():
    rng = np.random.default_rng(1)
    prices = 20.0 * np.exp(np.cumsum(rng.normal(0, 0.01, 253)))
    dv = rng.uniform(1e5, 1e7, 253)
    panel = make_panel(prices, dv)
    total = 0.0
    for t in range(1, 253):
        total += abs(prices[t] / prices[t - 1] - 1.0) / dv[t]
    assert cal.compute_illiq(panel) == pytest.approx(total / 252, rel=1e-12, abs=0)


def test_illiq_errors():
    with pytest.raises(InsufficientData):
        cal.compute_illiq(make_panel([10.0], 1e5))
    with pytest.raises(NonPositiveVolume):
        cal.compute_illiq(make_panel([10.0, 11.0, 12.0], [1e5, 0.0, 1e5]))


def test_panel_checks():
    with pytest.raises(NonPositiveVolume):
        cal.check_panel(make_panel([10.0, 11.0], [1e5, -1.0]))
    p = make_panel([10.0, 11.0, 12.0], 1e5)
    p.dates = [p.dates[0], p.dates[0], p.dates[2]]
    with pytest.raises(ValidationError):
        cal.check_panel(p)


def test_gamma_bar_exact_data():
    S = np.array([[2.0, 0.3], [0.3, 1.0]])
    s = np.array([1.5, 0.7])
    est = cal.estimate_gamma_bar(2.0 * S @ s, S, s)
    assert abs(est - 2.0) <= 1e-12 * 2.0


def test_gamma_bar_reference_value():
    ds = cal.reference_dataset()
    gb = cal.estimate_gamma_bar(ds.mu_hat, ds.Sigma_hat, ds.supply)
    assert gb == pytest.approx(reference.GAMMA_BAR, rel=5e-3, abs=0)
    r = cal.frictionless_returns(gb, ds.Sigma_hat, ds.supply, ds.average_prices)
    assert np.allclose(r, reference.FRICTIONLESS_RETURNS, atol=5e-5)


def test_gamma_bar_degenerate():
    from artifact.errors import DegenerateRegressor

    with pytest.raises(DegenerateRegressor):
        cal.estimate_gamma_bar([1.0, 1.0], np.zeros((2, 2)), [1.0, 1.0])


def test_two_agent_gammas_harmonic():
    g = cal.two_agent_gammas(3e-13, 4.0)
    assert g[1] / g[0] == pytest.approx(4.0, rel=1e-14)
    assert 1.0 / (1 / g[0] + 1 / g[1]) == pytest.approx(3e-13, rel=1e-14, abs=0)
    with pytest.raises(OutOfDomain):
        cal.two_agent_gammas(1.0, 0.5)


def test_cost_matrix_modes():
    ds = cal.reference_dataset()
    assert np.allclose(cal.cost_matrix(ds), np.diag(reference.LAMBDA_DIAG), rtol=1e-14)
    assert np.array_equal(cal.cost_matrix(ds, "direct", [1.0, 2.0, 3.0]), np.diag([1.0, 2.0, 3.0]))
    with pytest.raises(ValidationError):
        cal.cost_matrix(ds, "direct")
    with pytest.raises(ValidationError):
        cal.cost_matrix(ds, "other")


def test_moment_model_paths_agree():
    inst = default_instance()
    model = cal.MomentModel(inst.params)
    fast = model.moments(reference.XI)
    slow = model.moments_checked(reference.XI)
    assert np.allclose(fast, slow, rtol=1e-10)
    assert np.allclose(model.moments(-reference.XI), fast, rtol=1e-12)


def _exact_dataset(xi_true):
    ds = cal.reference_dataset()
    p = cal.calibration_params(ds, cal.two_agent_gammas(reference.GAMMA_BAR, 2.0), np.diag(reference.LAMBDA_DIAG))
    model = cal.MomentModel(p)
    ds.volume_moments = cal.moment_table(model.moments_checked(xi_true), 3)
    return ds, p


def test_xi_roundtrip():
    xi_true = reference.XI * 0.8
    ds, p = _exact_dataset(xi_true)
    fit = cal.fit_xi(ds, p, restarts=4, threads=4, seed=3)
    target = asy.moment_vector(ds.volume_moments)
    assert np.allclose(fit.model_moments, target, rtol=1e-6)
    err = np.max(np.abs(fit.xi - xi_true)) / np.max(np.abs(xi_true))
    assert err <= 5e-3, (fit.xi, xi_true)
    assert np.allclose(fit.xi, fit.xi.T)
    assert np.trace(fit.xi) < 0


def test_zero_moments_give_zero_xi():
    ds, p = _exact_dataset(np.zeros((3, 3)))
    fit = cal.fit_xi(ds, p, init=np.zeros((3, 3)), restarts=1)
    assert fit.objective == 0.0
    assert np.all(fit.xi == 0.0)


def test_no_improvement():
    ds, p = _exact_dataset(reference.XI)
    with pytest.raises(NoImprovement):
        cal.fit_xi(ds, p, restarts=1, maxiter=0, polish=0)


def test_fit_history_non_increasing():
    ds = cal.reference_dataset()
    p = cal.calibration_params(ds, cal.two_agent_gammas(reference.GAMMA_BAR, 2.0), np.diag(reference.LAMBDA_DIAG))
    fit = cal.fit_xi(ds, p, restarts=1)
    h = np.array(fit.history)
    assert len(h) > 10
    assert np.all(np.diff(h) <= 1e-15 * np.abs(h[:-1]))
    assert fit.objective < fit.initial_objective


def test_fit_is_deterministic_across_threads():
    ds = cal.reference_dataset()
    a = cal.calibrate(ds, restarts=4, seed=7, threads=1)
    b = cal.calibrate(ds, restarts=4, seed=7, threads=4)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_premium_rescaling():
    ds = cal.reference_dataset()
    res = cal.calibrate(ds, lambda_mode="direct", Lambda=reference.LAMBDA_DIAG, weighting="absolute", restarts=4)
    assert res.premium(1.0) == 0.0
    assert res.premium(2.0) == pytest.approx(res.premium_ref, rel=1e-15)
    for k in (1.5, 3.0, 10.0):
        want = res.premium_ref * asy.scaling_factor(k) / asy.scaling_factor(2.0)
        assert abs(res.premium(k) - want) <= 1e-12 * abs(want)
    scan = cal.liquidity_premium_scan(res, [1, 2, 4, 8], target=0.02)
    assert res.premium(scan.k_target) == pytest.approx(0.02, rel=1e-10)
    with pytest.raises(OutOfDomain):
        cal.solve_k_for_premium(res, -0.02)


def test_premium_definition():
    assert cal.premium_from_adjustments([-0.01, 0.0, 0.002]) == pytest.approx(0.012)


def test_panel_roundtrip(tmp_path):
    panel = make_panel([10.0, 10.5, 10.2], [1e5, 2e5, 3e5], name="A")
    cal.write_panel(tmp_path / "A.csv", panel)
    back = cal.read_panel(tmp_path / "A.csv")
    assert back.name == "A" and back.dates == panel.dates
    assert np.array_equal(back.price, panel.price) and np.array_equal(back.dollar_volume, panel.dollar_volume)
    (tmp_path / "bad.csv").write_text("date,price\n2020-01-01,3\n")
    with pytest.raises(ValidationError):
        cal.read_panel(tmp_path / "bad.csv")


def test_moments_roundtrip(tmp_path):
    tab = cal.moment_table([1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3)
    cal.write_moments(tmp_path / "m.csv", tab)
    assert np.array_equal(cal.read_moments(tmp_path / "m.csv"), tab)
    (tmp_path / "short.csv").write_text("i,j,moment\n1,1,2.0\n")
    with pytest.raises(InsufficientData):
        cal.read_moments(tmp_path / "short.csv", size=2)


def test_dataset_from_panels():
    rng = np.random.default_rng(2)
    n = 60
    pa = 30 + np.cumsum(rng.normal(0, 0.3, n))
    pb = 50 + np.cumsum(rng.normal(0, 0.5, n))
    A = make_panel(pa, rng.uniform(1e5, 2e5, n), "A")
    B = make_panel(pb, rng.uniform(1e5, 2e5, n), "B")
    ds = cal.CalibrationDataset.from_panels([A, B])
    dP = np.diff(np.column_stack([pa, pb]), axis=0)
    assert np.allclose(ds.mu_hat, dP.mean(axis=0) * 252)
    assert np.allclose(ds.Sigma_hat, np.cov(dP.T) * 252)
    V = np.column_stack([A.volume, B.volume])
    assert np.allclose(ds.volume_moments, V.T @ V / n)
    assert ds.n_days == n
    with pytest.raises(ValidationError):
        cal.CalibrationDataset.from_panels([A, make_panel(pb[:-1], 1e5, "C")])


def test_bundled_dataset_loads():
    ds = bundled_dataset()
    assert ds.names == reference.NAMES and ds.n_days == 2520
    assert np.all(ds.illiq > 0)
    model = cal.read_moments(bundled_dir() / "model_moments.csv")
    assert np.allclose(model, model.T) and np.all(model > 0)


def test_synthetic_volume_sampler_is_stationary():
    """On a fast-reverting instance the sampled E|v_i v_j| approach the closed-form table."""
    inst = default_instance()
    p = inst.params.replace(lambda_bar=inst.params.lambda_bar * 1e-4)
    fast = SyntheticInstance(p, inst.mu_daily, inst.start_prices * 100)
    k1, k2 = asy.ou_parameters(p)
    tab = asy.volume_second_moments(asy.stationary_covariance(k1, k2))
    V = np.column_stack([q.volume for q in generate(fast, n_days=40_000, seed=0)])
    assert np.allclose(V.T @ V / len(V), tab, rtol=0.06)


def test_bundled_calibration_runs():
    res = cal.calibrate(bundled_dataset(), restarts=2)
    assert np.isfinite(res.premium_ref)
    assert res.fit_diagnostics["objective"] <= res.fit_diagnostics["initial_objective"]
