"""Compare the full solver with the small-cost expansion as costs shrink.

    python demos/asymptotics_sweep.py

For each lambda the table shows the volatility and initial-price errors
of the leading-order corrections divided by lambda, and the size of the
volatility correction itself divided by lambda^(1/2).  Flat columns mean
the predicted rates hold.
"""

import numpy as np

from artifact import asymptotics as asy
from artifact.market import ModelParams


def main():
    params = ModelParams(
        gammas=[1.0, 2.0],
        alpha=[[1.0, 0.3], [0.2, 0.8]],
        beta=[0.0, 0.0],
        xi=[[0.5, 0.2], [-0.1, 0.4]],
        lambda_bar=[[1.0, 0.2], [0.2, 0.5]],
        supply=[1.0, 0.5],
    )
    lams = np.geomspace(1e-1, 1e-4, 7)
    rep = asy.asymptotic_convergence_check(params, lams, steps=4000, threads=4)
    print(f"{'lambda':>10} {'e_sigma/lam':>12} {'e_S0/lam':>10} {'e0/sqrt(lam)':>13}")
    for row in rep.rows:
        r = row.ratios()
        print(f"{row.lam:10.2e} {r[0]:12.4f} {r[1]:10.4f} {r[2]:13.4f}")
    print("max/min per column:", {k: round(v, 3) for k, v in rep.spreads.items()})

    small = params.replace(lambda_scale=1e-3)
    report = asy.asymptotic_report(small, prices=[10.0, 8.0])
    print("stationary trading-rate covariance\n", np.round(report.Omega, 5))
    print("E|v_i v_j|\n", np.round(report.volume_moments, 5))


if __name__ == "__main__":
    main()
