"""Label a grid of (alpha, eta) gain pairs on the three-bus system with stability regions."""
import argparse
import csv
import os
from collections import Counter
from pathlib import Path

import numpy as np

from gridvoc.cases import default_gains, threebus_case, threebus_profile
from gridvoc.linstab import GainSweepSettings, sweep_gains


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=20, help="grid points per axis (40 for the full map)")
    ap.add_argument("--horizon", type=float, default=5.0)
    ap.add_argument("--workers", type=int, default=os.cpu_count())
    ap.add_argument("--out", default="results/gain_regions")
    args = ap.parse_args()

    case = threebus_case()
    prof = threebus_profile(case)
    alphas, etas = np.logspace(-1, 2, args.n), np.logspace(-4, -1, args.n)
    res = sweep_gains(case, prof, default_gains(case), alphas, etas, GainSweepSettings(horizon=args.horizon),
                      workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "regions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "eta", "region", "zeta_min"])
        for a, alpha in enumerate(alphas):
            for e, eta in enumerate(etas):
                w.writerow([alpha, eta, res.labels[a, e], res.zeta_min[a, e]])
    print("counts", {str(k): v for k, v in sorted(Counter(res.labels.ravel()).items())})
    # coarse text map: rows alpha (top = largest), columns eta (left = smallest)
    for a in range(len(alphas) - 1, -1, -1):
        print(f"{alphas[a]:8.3g} " + "".join(res.labels[a]))


if __name__ == "__main__":
    main()
