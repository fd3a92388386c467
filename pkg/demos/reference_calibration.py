"""Calibrate the two-agent model to the three-portfolio summary statistics.

    python demos/reference_calibration.py [--weighting absolute|relative]

Runs the frictionless regression, fits xi to the volume moments and prints
the return adjustments, the premium at k = 2 and the k that matches a
2.69% premium.
"""

import argparse

import numpy as np

from artifact import calibration as cal
from artifact import reference


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--weighting", default="absolute", choices=["absolute", "relative"])
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args()

    ds = cal.reference_dataset()
    res = cal.calibrate(ds, k=2.0, weighting=args.weighting, threads=args.threads)
    np.set_printoptions(precision=4, suppress=False)
    print(f"gamma_bar {res.gamma_bar:.4e}, gammas {res.gammas}")
    print("frictionless returns (%)", np.round(res.frictionless_returns * 100, 3))
    print("xi (1e9)\n", np.round(res.xi / 1e9, 3))
    print("volume moments (1e17)")
    print("  fitted   ", np.round(res.model_volume_moments / 1e17, 3))
    print("  empirical", np.round(res.empirical_volume_moments / 1e17, 3))
    print("return adjustments (%)", np.round(res.return_adjustments * 100, 4))
    print(f"premium at k=2: {res.premium(2.0) * 100:.3f}%")
    scan = cal.liquidity_premium_scan(res, [1, 2, 5, 10, 20, 50], target=reference.EMPIRICAL_PREMIUM)
    for k, f, prem in scan.rows:
        print(f"  k={k:5.1f}  factor {f:.4f}  premium {prem * 100:.3f}%")
    print(f"k matching {reference.EMPIRICAL_PREMIUM * 100:.2f}%: {scan.k_target:.3f}")


if __name__ == "__main__":
    main()
