"""Minimum damping ratio of the three-bus system as each line's admittance is swept."""
import argparse
import csv
from pathlib import Path

import numpy as np

from gridvoc.cases import default_gains, threebus_case, threebus_profile
from gridvoc.linstab import line_admittance_si, linearize, sweep_admittance


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lo", type=float, default=0.02)
    ap.add_argument("--hi", type=float, default=0.4)
    ap.add_argument("--points", type=int, default=50)
    ap.add_argument("--eta", type=float, help="gain on the per-unit time base (default 3e-3)")
    ap.add_argument("--out", default="results/admittance_sweep")
    args = ap.parse_args()

    case = threebus_case()
    prof = threebus_profile(case)
    gains = default_gains(case, eta=args.eta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    values = np.linspace(args.lo, args.hi, args.points)
    print(f"nominal zeta_min {linearize(case, prof, gains).zeta_min:.4f}")
    for l, br in enumerate(case.branches):
        name = f"{case.buses[br.from_bus].id}-{case.buses[br.to_bus].id}"
        res = sweep_admittance(case, prof, gains, l, values)
        with open(out / f"line_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["value", "zeta_min"])
            w.writerows(zip(values, res.zeta_min))
        print(f"line {name}: nominal {line_admittance_si(case, l):.4f} S, crossing {res.crossing()}, "
              f"zeta_min range {np.nanmin(res.zeta_min):.4f} .. {np.nanmax(res.zeta_min):.4f}, "
              f"gaps {len(res.meta['gaps'])}")


if __name__ == "__main__":
    main()
