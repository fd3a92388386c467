"""Summary statistics of three liquidity-sorted CRSP portfolios.

Portfolios are ordered from most liquid (H) to least liquid (L).  Prices
are in dollars, returns are annualized dollar changes, volumes are daily
share counts.  Only aggregates are kept here; the underlying daily data
are licensed and not redistributed.
"""

import numpy as np

NAMES = ("H", "M", "L")

AVERAGE_PRICES = np.array([45.41, 49.23, 38.30])

# 1e11 is the scale consistent with gamma_bar = 2.97e-13 from the regression
# below; a 1e10 scale would make the fitted gamma_bar ten times larger.
SUPPLY = np.array([1.15, 0.32, 0.23]) * 1e11
SUPPLY_E10 = np.array([1.15, 0.32, 0.23]) * 1e10

MU_HAT = np.array([2.99, 3.71, 3.55])

SIGMA_HAT = np.array([
    [72.00, 71.49, 54.80],
    [71.49, 85.42, 65.86],
    [54.80, 65.86, 56.84],
])

# 9 * ILLIQ per portfolio (dollars per squared daily share flow)
LAMBDA_DIAG = np.array([0.1269, 0.3354, 0.8595]) * 1e-8

# Daily volume second moments E|v_i v_j|, upper triangle row by row:
# (11, 12, 13, 22, 23, 33).
VOLUME_MOMENTS = np.array([5.63, 1.92, 1.28, 0.71, 0.46, 0.32]) * 1e17
FITTED_VOLUME_MOMENTS = np.array([5.64, 1.89, 1.26, 0.75, 0.49, 0.33]) * 1e17

# Symmetric endowment loading matched to VOLUME_MOMENTS, daily units.
XI = np.array([
    [-2.07, 1.91, 0.64],
    [1.91, -1.77, -0.59],
    [0.64, -0.59, -0.20],
]) * 1e9

GAMMA_BAR = 2.97e-13
# Two-agent risk aversions quoted for k = 2 next to the formula values;
# their harmonic aggregate is 7.42e-13, not GAMMA_BAR.
PRINTED_GAMMAS = np.array([8.91e-13, 4.45e-12])

FRICTIONLESS_RETURNS = np.array([7.76, 7.55, 7.56]) / 100
RETURN_ADJUSTMENTS = np.array([-0.5374, -0.0150, 0.1979]) / 100
ABSOLUTE_ADJUSTMENTS = np.array([-0.2440, -0.0074, 0.0758])
PREMIUM_K2 = 0.74 / 100
EMPIRICAL_PREMIUM = 2.69 / 100
