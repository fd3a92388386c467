"""Acceptance criteria 1 to 8.

Every test records its outcome (and wall time against the budget) before
asserting, and the terminal summary prints one PASS/FAIL line per
criterion with the measured numbers underneath.
"""

import math
import time

import numpy as np
import pytest

from artifact import asymptotics as asy
from artifact import calibration as cal
from artifact import equilibrium as eq
from artifact import matrix_kit as mk
from artifact import reference
from artifact import riccati as ric
from artifact.market import ModelParams

from conftest import random_params


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def record(acceptance, crit, part, ok, detail, seconds, budget=None):
    if budget is not None and seconds > budget:
        ok = False
        detail = f"{detail}; over budget {seconds:.1f} s > {budget} s"
    acceptance.setdefault(crit, []).append((part, bool(ok), detail, seconds))
    print(f"criterion {crit} [{part}]: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


# --- 1 ------------------------------------------------------------------------

def test_c1_frictionless_calibration(acceptance):
    with Timer() as t:
        ds = cal.reference_dataset()
        gb = cal.estimate_gamma_bar(ds.mu_hat, ds.Sigma_hat, ds.supply)
        ret = cal.frictionless_returns(gb, ds.Sigma_hat, ds.supply, ds.average_prices)
        literal = cal.reference_dataset("e10")
        gb_literal = cal.estimate_gamma_bar(literal.mu_hat, literal.Sigma_hat, literal.supply)
    gb_ok = abs(gb / 2.97e-13 - 1) <= 0.02
    ret_gap = np.max(np.abs(ret - np.array([0.0776, 0.0755, 0.0756])))
    ok = gb_ok and ret_gap <= 5e-4
    detail = (f"gamma_bar={gb:.4e} (target 2.97e-13 +-2%), returns={np.round(ret * 100, 3).tolist()}% "
              f"max gap {ret_gap * 100:.4f} pp; literal 1e10 supply gives gamma_bar={gb_literal:.3e}")
    assert record(acceptance, 1, "gamma_bar and returns", ok, detail, t.seconds, 1.0), detail


# --- 2 ------------------------------------------------------------------------

def _scalar(xi=0.0):
    return ModelParams(gammas=[1.0, 3.0], alpha=[[1.2]], beta=[0.0], xi=[[xi]], lambda_bar=[[0.3]],
                       supply=[1.0], horizon=1.0)


def _tanh_F(p, tau):
    G = 0.5 * sum(p.gammas)
    a, lam = p.alpha[0, 0], p.Lambda[0, 0]
    return math.sqrt(G * lam) * a * np.tanh(a * math.sqrt(G / lam) * tau)


def _order(p, coarse=40):
    vals = []
    for m in (coarse, 2 * coarse, 4 * coarse):
        sol = ric.solve_riccati(p, steps=m)
        vals.append(np.concatenate([sol.F[-1].ravel(), sol.H[-1].ravel()]))
    return math.log2(np.linalg.norm(vals[0] - vals[1]) / np.linalg.norm(vals[1] - vals[2]))


def test_c2_riccati_correctness(acceptance, two_agent):
    with Timer() as t:
        p = _scalar()
        sol = ric.solve_riccati(p, steps=4000)
        err = float(np.max(np.abs(sol.F[:, 0, 0] - _tanh_F(p, sol.tau))))
        orders = {"scalar xi=0.4": _order(_scalar(0.4)), "two-agent": _order(two_agent)}
    ok = err <= 1e-8 and min(orders.values()) >= 3.7
    detail = f"tanh max error {err:.2e} (<=1e-8); orders {', '.join(f'{k} {v:.3f}' for k, v in orders.items())} (>=3.7)"
    assert record(acceptance, 2, "tanh and order", ok, detail, t.seconds, 5.0), detail


# --- 3 ------------------------------------------------------------------------

def test_c3_structural_invariants(acceptance):
    master = np.random.default_rng(20240611)
    seeds = master.integers(0, 2**31, 50)
    failures = []
    worst = {"psd": 0, "psi": 0.0, "gronwall": 0.0, "integral": 0.0}
    shapes = set()
    with Timer() as t:
        for s in seeds:
            p = random_params(np.random.default_rng(int(s)))
            shapes.add((p.n_agents, p.n_assets, p.n_brownians))
            sol = ric.solve_riccati(p, steps=1200)
            psd = ric.psd_profile(sol, 1e-8)
            psi = float(np.max(ric.psi_F_norms(sol, stride=3)))
            lhs, rhs = ric.gronwall_envelope(sol)
            gr = float(np.max(lhs / rhs))
            integ = ric.integral_representation_check(sol, tol=1e-5)
            dev = max(integ.deviation_F, integ.deviation_H)
            worst["psd"] += int(np.sum(~psd))
            worst["psi"] = max(worst["psi"], psi)
            worst["gronwall"] = max(worst["gronwall"], gr)
            worst["integral"] = max(worst["integral"], dev)
            if not (psd.all() and psi <= 1 + 1e-8 and gr <= 1 + 1e-12 and integ.passed):
                failures.append(int(s))
    ok = not failures
    detail = (f"50 instances over {len(shapes)} (N,K,D) shapes; non-PSD nodes {worst['psd']}, "
              f"max |Psi_F| {worst['psi']:.12f}, max |A|/envelope {worst['gronwall']:.3f}, "
              f"max integral deviation {worst['integral']:.2e}; failing seeds {failures}")
    assert record(acceptance, 3, "50 random instances", ok, detail, t.seconds, 120.0), detail


# --- 4 ------------------------------------------------------------------------

N_PATHS = 10_000


def _verify_instance(p, seed):
    sol = ric.solve_riccati(p, steps=4000)
    dt = p.horizon / 250
    paths = eq.simulate(p, sol, N_PATHS, dt, seed, threads=4)
    rep = eq.verify_equilibrium(p, sol, paths)
    ref = eq.terminal_error_refinement(p, sol, N_PATHS, dt, seed, threads=4)
    return rep, ref


@pytest.mark.parametrize("name", ["two_agent", "three_agent"])
def test_c4_equilibrium_verification(acceptance, request, name):
    p = request.getfixturevalue(name)
    with Timer() as t:
        rep, ref = _verify_instance(p, seed=404)
    worst_gap = min(r["gap"] / r["se"] if r["se"] > 0 else 0.0 for r in rep.optimality)
    ok = (rep.clearing_violation <= 1e-15 and rep.rate_clearing_violation == 0.0 and rep.terminal_rate_max == 0.0
          and 1.8 <= ref["ratio"] <= 2.2 and rep.optimality_ok)
    detail = (f"clearing {rep.clearing_violation:.1e} (rel), rate clearing {rep.rate_clearing_violation}, "
              f"terminal rate {rep.terminal_rate_max}; RMS {ref['coarse']:.3e} -> {ref['fine']:.3e} "
              f"ratio {ref['ratio']:.3f} (1.8..2.2); {len(rep.optimality)} gaps, min gap/SE {worst_gap:.2f} (>=-3)")
    assert record(acceptance, 4, name, ok, detail, t.seconds, 80.0), detail


def test_c4_equal_gamma_frictionless(acceptance):
    p = ModelParams(gammas=[1.5, 1.5], alpha=[[1.0, 0.2], [0.3, 0.7]], beta=[0.1, 0.0],
                    xi=[[0.4, 0.1], [-0.2, 0.3]], lambda_bar=[[1.0, 0.1], [0.1, 0.6]], supply=[1.0, 2.0],
                    lambda_scale=0.05)
    with Timer() as t:
        sol = ric.solve_riccati(p, steps=1000)
        paths = eq.simulate(p, sol, N_PATHS, p.horizon / 250, seed=7, threads=4)
        gap = float(np.max(np.abs(paths.S - paths.S_bar)))
    ok = gap <= 1e-10
    detail = f"max node-wise |S - S_bar| {gap:.2e} over {N_PATHS} paths (<=1e-10)"
    assert record(acceptance, 4, "equal gamma", ok, detail, t.seconds, 20.0), detail


# --- 5 ------------------------------------------------------------------------

def test_c5_asymptotic_rates(acceptance, two_agent):
    with Timer() as t:
        rep = asy.asymptotic_convergence_check(two_agent, lambdas=(1e-1, 1e-2, 1e-3), steps=4000, threads=3)
    ok = all(v < 3.0 for v in rep.spreads.values())
    rows = "; ".join(f"lam={r.lam:g}: " + ", ".join(f"{x:.3e}" for x in r.ratios()) for r in rep.rows)
    detail = (f"spreads e_sigma/lam {rep.spreads['e_sigma']:.2f}, e_S0/lam {rep.spreads['e_s0']:.2f}, "
              f"e0/lam^1/2 {rep.spreads['e0']:.2f} (<3); {rows}")
    assert record(acceptance, 5, "K=N=D=2", ok, detail, t.seconds, 60.0), detail


# --- 6 ------------------------------------------------------------------------

def _mc_abs_moments(rng, om, draws, chunk=1_000_000):
    k = om.shape[0]
    L = np.linalg.cholesky(om)
    s1 = np.zeros((k, k))
    s2 = np.zeros((k, k))
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        v = rng.standard_normal((m, k)) @ L.T
        a = np.abs(v)
        s1 += a.T @ a
        s2 += (a * a).T @ (a * a)
        done += m
    mean = s1 / draws
    se = np.sqrt(np.maximum(s2 / draws - mean**2, 0.0) / draws)
    return mean, se


def test_c6_volume_moment_formula(acceptance):
    rng = np.random.default_rng(606)
    worst = 0.0
    with Timer() as t:
        for _ in range(20):
            k = int(rng.integers(2, 4))
            B = rng.normal(size=(k, k))
            om = B @ B.T + 0.05 * np.eye(k)
            tab = asy.volume_second_moments(om)
            mean, se = _mc_abs_moments(rng, om, 10_000_000)
            iu = np.triu_indices(k)
            worst = max(worst, float(np.max(np.abs(mean[iu] - tab[iu]) / se[iu])))
        end = mk.gauss_2f1_abs_moment(1.0)
    ok = worst <= 3.0 and abs(end - math.pi / 2) <= 1e-10
    detail = f"max |MC - formula|/SE {worst:.2f} over 20 Omegas (<=3); 2F1 at 1 minus pi/2 = {end - math.pi / 2:.1e}"
    assert record(acceptance, 6, "MC oracle and endpoint", ok, detail, t.seconds, 120.0), detail


# --- 7 ------------------------------------------------------------------------

def _golden_check(res):
    fitted = res.model_volume_moments
    mom_dev = np.abs(fitted / reference.FITTED_VOLUME_MOMENTS - 1)
    adj_dev = np.abs(res.return_adjustments / reference.RETURN_ADJUSTMENTS - 1)
    prem = res.premium(2.0)
    prem_dev = abs(prem / reference.PREMIUM_K2 - 1)
    ok = mom_dev.max() <= 0.10 and adj_dev.max() <= 0.50 and prem_dev <= 0.50
    detail = (f"moment dev max {mom_dev.max() * 100:.1f}% (<=10%), adjustments "
              f"{np.round(res.return_adjustments * 100, 4).tolist()}% dev max {adj_dev.max() * 100:.0f}% (<=50%), "
              f"premium(k=2) {prem * 100:.3f}% dev {prem_dev * 100:.0f}% (<=50%)")
    return ok, detail


@pytest.fixture(scope="module")
def formula_result():
    return cal.calibrate(cal.reference_dataset(), k=2.0, gamma_mode="formula", weighting="absolute", threads=4)


def test_c7_synthetic_roundtrip(acceptance):
    with Timer() as t:
        ds = cal.reference_dataset()
        p = cal.calibration_params(ds, cal.two_agent_gammas(reference.GAMMA_BAR, 2.0),
                                   np.diag(reference.LAMBDA_DIAG))
        xi_star = np.array([[-1.5, 0.8, 0.2], [0.8, -1.0, -0.4], [0.2, -0.4, -0.6]]) * 1e9
        target = cal.MomentModel(p).moments_checked(xi_star)
        ds.volume_moments = cal.moment_table(target, 3)
        fit = cal.fit_xi(ds, p, threads=4, seed=1)
        dev = np.abs(fit.model_moments / target - 1)
    ok = dev.max() <= 5e-3
    detail = f"six moments recovered, max relative deviation {dev.max():.1e} (<=0.5%)"
    assert record(acceptance, 7, "synthetic roundtrip", ok, detail, t.seconds, 100.0), detail


def test_c7_golden_formula_gammas(acceptance, formula_result):
    with Timer() as t:
        res = formula_result
        ok, detail = _golden_check(res)
        rel = cal.calibrate(cal.reference_dataset(), k=2.0, gamma_mode="formula", weighting="relative", threads=4)
        _, rel_detail = _golden_check(rel)
    detail = (f"gammas {np.array2string(res.gammas, precision=3)}: {detail}. "
              f"Diagnostic, relative weighting: {rel_detail}")
    assert record(acceptance, 7, "golden numbers, formula gammas", ok, detail, t.seconds, 100.0), detail


def test_c7_golden_given_gammas(acceptance):
    with Timer() as t:
        res = cal.calibrate(cal.reference_dataset(), gamma_mode="given", gammas=reference.PRINTED_GAMMAS,
                            weighting="absolute", threads=4)
        ok, detail = _golden_check(res)
    detail = (f"gammas {np.array2string(res.gammas, precision=3)} (harmonic aggregate {res.gamma_bar:.3e}, "
              f"k={res.k_ref:.3f}), premium at own k {res.premium_ref * 100:.2f}%: {detail}. Note: this gamma pair "
              f"is inconsistent with gamma_bar and k=2, so the adjustments scale by about 7x")
    assert record(acceptance, 7, "golden numbers, given gammas", ok, detail, t.seconds, 100.0), detail


# --- 8 ------------------------------------------------------------------------

def test_c8_scaling_law(acceptance, formula_result):
    res = formula_result
    with Timer() as t:
        ks = np.concatenate([np.linspace(1.05, 3, 20), np.geomspace(3, 200, 20)])
        consts = np.array([res.premium(k) / asy.scaling_factor(k) for k in ks])
        spread = float(np.max(np.abs(consts / consts[0] - 1)))
        p1 = res.premium(1.0)
        k_star = cal.solve_k_for_premium(res, reference.EMPIRICAL_PREMIUM)
        hit = res.premium(k_star)
    ok = spread <= 1e-12 and p1 == 0.0 and abs(hit / reference.EMPIRICAL_PREMIUM - 1) <= 1e-10
    detail = (f"premium/f(k) relative spread {spread:.1e} (<=1e-12), premium(1)={p1}, "
              f"k for 2.69% = {k_star:.4f} giving {hit * 100:.6f}%")
    assert record(acceptance, 8, "scaling law and bisection", ok, detail, t.seconds, 10.0), detail
