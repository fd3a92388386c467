"""Rebuild the bundled synthetic calibration panels.

    python scripts/make_synthetic_dataset.py [OUTDIR]

Writes H.csv, M.csv, L.csv (date,price,volume,dollar_volume,
shares_outstanding), model_moments.csv with the stationary volume moments of
the generating instance, and instance.json with its parameters and seed.
The default OUTDIR is the package data directory.
"""

import sys

from artifact.synthetic import bundled_dir, write_dataset


def main() -> None:
    out = sys.argv[1] if len(sys.argv) > 1 else bundled_dir()
    for path in write_dataset(out):
        print(path)


if __name__ == "__main__":
    main()
